import numpy as np
import pytest

from audiostyle import autodiff as ad
from audiostyle import dsp, network, transfer
from audiostyle.config import AdamConfig, InitConfig, LossWeights, TransferConfig
from audiostyle.dsp import EnvelopePair, LogSpectrogram
from audiostyle.errors import ConfigError, InvalidInputError, ShapeError

from conftest import TOY_STFT, tone_spectrogram

FLOOR = np.log(1e-6)


def random_log(seed, shape=(65, 64)):
    v = np.random.default_rng(seed).normal(-3, 2, size=shape)
    return LogSpectrogram(np.maximum(v, FLOOR), TOY_STFT)


def acts(seed, shapes):
    rng = np.random.default_rng(seed)
    return {k: rng.normal(size=s) for k, s in shapes.items()}


class TestContentLoss:
    def test_identity_is_zero(self):
        a = acts(0, {"block1": (3, 4, 5)})
        assert float(transfer.content_loss(a, a, ["block1"]).data) == 0.0

    def test_all_ones_difference(self):
        x = {"block1": np.ones((2, 2, 2))}
        c = {"block1": np.zeros((2, 2, 2))}
        assert float(transfer.content_loss(x, c, ["block1"]).data) == 1.0

    def test_loop_oracle(self):
        shapes = {"block1": (3, 6, 5), "block2": (4, 3, 3)}
        x, c = acts(1, shapes), acts(2, shapes)
        ref = 0.0
        for k, (ch, h, w) in shapes.items():
            s = 0.0
            for i in range(ch):
                for j in range(h):
                    for m in range(w):
                        s += (x[k][i, j, m] - c[k][i, j, m]) ** 2
            ref += s / (ch * h * w)
        assert float(transfer.content_loss(x, c, list(shapes)).data) == pytest.approx(ref, rel=1e-12)

    def test_unknown_layer(self):
        a = acts(0, {"block1": (3, 4, 5)})
        with pytest.raises(ConfigError):
            transfer.content_loss(a, a, ["block9"])


class TestStyleLoss:
    def test_identity_is_zero(self):
        a = acts(0, {"block1": (3, 4, 5)})
        assert float(transfer.style_loss(a, a, ["block1"]).data) == 0.0

    def test_hand_example(self):
        x = {"block1": np.ones((1, 2, 2))}
        s = {"block1": np.zeros((1, 2, 2))}
        assert float(transfer.style_loss(x, s, ["block1"]).data) == 0.25

    def test_permutation_invariance(self):
        rng = np.random.default_rng(3)
        x, s = {"block2": rng.normal(size=(4, 6, 7))}, {"block2": rng.normal(size=(4, 6, 7))}
        base = float(transfer.style_loss(x, s, ["block2"]).data)
        for seed in range(5):
            perm = np.random.default_rng(seed).permutation(42)
            xp = {"block2": x["block2"].reshape(4, 42)[:, perm].reshape(4, 6, 7)}
            assert float(transfer.style_loss(xp, s, ["block2"]).data) == pytest.approx(base, rel=1e-12)

    def test_spatial_sizes_may_differ(self):
        x, s = {"block1": np.ones((2, 3, 3))}, {"block1": np.ones((2, 5, 4))}
        g_x, g_s = 9.0, 20.0
        expected = 4 * (g_x - g_s) ** 2 / (4 * 4 * 81)
        assert float(transfer.style_loss(x, s, ["block1"]).data) == pytest.approx(expected, rel=1e-12)

    def test_channel_mismatch(self):
        with pytest.raises(ShapeError):
            transfer.style_loss({"block1": np.ones((2, 3, 3))}, {"block1": np.ones((3, 3, 3))}, ["block1"])


class TestEnvelopeLoss:
    def test_equal_envelopes_zero(self):
        x = random_log(0)
        l_e, l_t = transfer.envelope_loss(x, dsp.envelopes(x))
        assert float(l_e.data) == 0.0 and float(l_t.data) == 0.0

    def test_zero_style_example(self):
        x = LogSpectrogram(np.array([[np.log(1 + 1e-6)] * 2]), TOY_STFT)  # temporal = [1, 1]
        l_e, _ = transfer.envelope_loss(x, EnvelopePair(np.zeros(2), np.zeros(1)))
        assert float(l_e.data) == pytest.approx(1.0, rel=1e-12)

    def test_loop_oracle(self):
        x, s = random_log(1, (9, 7)), random_log(2, (9, 7))
        m = dsp.linear_magnitude(x)
        e_s, t_s = dsp.envelopes(s).temporal, dsp.envelopes(s).spectral
        temporal = [sum(m[f, t] ** 2 for f in range(9)) for t in range(7)]
        spectral = [sum(m[f, t] for t in range(7)) / 7 for f in range(9)]
        le = sum((temporal[t] - e_s[t]) ** 2 for t in range(7)) / 7 / (1 + sum(e * e for e in e_s) / 7)
        lt = sum((spectral[f] - t_s[f]) ** 2 for f in range(9)) / 9 / (1 + sum(e * e for e in t_s) / 9)
        l_e, l_t = transfer.envelope_loss(x, dsp.envelopes(s))
        assert float(l_e.data) == pytest.approx(le, rel=1e-12)
        assert float(l_t.data) == pytest.approx(lt, rel=1e-12)

    def test_length_mismatch(self):
        with pytest.raises(ShapeError):
            transfer.envelope_loss(random_log(0, (5, 4)), EnvelopePair(np.zeros(3), np.zeros(5)))

    def test_differentiable_envelopes_match_dsp(self):
        x = random_log(4)
        tape = ad.Tape()
        temporal, spectral = transfer.log_to_envelopes(tape.constant(x.values), x.epsilon)
        env = dsp.envelopes(x)
        np.testing.assert_allclose(temporal.data, env.temporal, rtol=1e-12)
        np.testing.assert_allclose(spectral.data, env.spectral, rtol=1e-12)


class TestTotalLoss:
    def test_identical_inputs_zero(self, small_net):
        x = random_log(0)
        total, comps = transfer.total_loss(small_net, x, x, x, TransferConfig(content_layers=("block2",),
                                                                             style_layers=("block1", "block3")))
        assert total == 0.0 and all(v == 0.0 for v in comps.values())

    def test_content_only_weights(self, small_net):
        x, c, s = random_log(0), random_log(1), random_log(2)
        cfg = TransferConfig(weights=LossWeights(alpha=1, beta=0, gamma=0, delta=0))
        total, comps = transfer.total_loss(small_net, x, c, s, cfg)
        ax, ac = network.forward(small_net, x).per_layer, network.forward(small_net, c).per_layer
        assert total == float(transfer.content_loss(ax, ac, ["block3"]).data) == comps["Lc"]

    def test_weighted_sum_of_independent_components(self, small_net):
        x, c, s = random_log(0), random_log(1), random_log(2)
        cfg = TransferConfig(weights=LossWeights(alpha=1, beta=2, gamma=3, delta=4))
        total, _ = transfer.total_loss(small_net, x, c, s, cfg)
        ax, ac, as_ = (network.forward(small_net, v).per_layer for v in (x, c, s))
        lc = float(transfer.content_loss(ax, ac, cfg.content_layers).data)
        ls = float(transfer.style_loss(ax, as_, cfg.style_layers).data)
        le, lt = (float(t.data) for t in transfer.envelope_loss(x, dsp.envelopes(s)))
        assert total == pytest.approx(lc + 2 * ls + 3 * le + 4 * lt, rel=1e-12)

    def test_components_nonnegative(self, small_net):
        _, comps = transfer.total_loss(small_net, random_log(5), random_log(6), random_log(7))
        assert all(v >= 0 for v in comps.values())

    def test_shape_mismatch(self, small_net):
        with pytest.raises(ShapeError):
            transfer.total_loss(small_net, random_log(0, (65, 63)), random_log(1), random_log(2))

    def test_unknown_layer(self, small_net):
        with pytest.raises(ConfigError):
            transfer.Objective(small_net, random_log(1), random_log(2), TransferConfig(content_layers=("block4",)))

    def test_full_objective_gradient(self, small_net):
        c, s = tone_spectrogram(0, 440, 1), tone_spectrogram(1, 440, 2)
        obj = transfer.Objective(small_net, c, s, TransferConfig())
        # keep every coordinate well above the floor so the floor mask never switches inside a difference
        x = np.random.default_rng(0).normal(-2.0, 1.5, size=c.shape)
        rep = ad.grad_check(lambda tape, v: obj.build(tape, v)[0], x, step=1e-3, tolerance=1e-3, max_full=1000,
                            sample_size=100)
        assert len(rep.indices) == 100 and rep.passed, rep.max_rel_err


class TestInit:
    def test_same_seed_same_init(self):
        src = random_log(0)
        a, b = transfer.init_input(src.shape, src, 4), transfer.init_input(src.shape, src, 4)
        assert a.values.tobytes() == b.values.tobytes()

    def test_entries_above_floor(self):
        src = tone_spectrogram(1, 440, 0)
        assert np.all(transfer.init_input(src.shape, src, 0).values >= FLOOR)

    def test_unclamped_mean_within_three_sigma(self):
        src = random_log(3)
        for seed in range(5):
            draw = np.random.default_rng(seed).normal(src.values.mean(), src.values.std(), size=src.shape)
            x = transfer.init_input(src.shape, src, seed)
            assert np.array_equal(x.values, np.maximum(draw, FLOOR))
            assert abs(draw.mean() - src.values.mean()) < 3 * src.values.std() / np.sqrt(draw.size)


class TestRunTransfer:
    def test_single_step_trace(self, small_net):
        x, trace = transfer.run_transfer(small_net, random_log(0), random_log(1), TransferConfig(steps=1),
                                         allow_untrained=True)
        assert len(trace) == 1 and all(len(v) == 1 for v in trace.components.values())
        assert np.array_equal(x.values, transfer.init_input(x.shape, random_log(0), 0).values)

    def test_zero_steps_invalid(self):
        with pytest.raises(ValueError):
            TransferConfig(steps=0)

    def test_untrained_network_refused(self, small_net):
        with pytest.raises(ConfigError, match="untrained"):
            transfer.run_transfer(small_net, random_log(0), random_log(1), TransferConfig(steps=1))

    def test_best_iterate_attains_trace_minimum(self, small_net):
        c, s = random_log(0), random_log(1)
        cfg = TransferConfig(steps=25)
        x, trace = transfer.run_transfer(small_net, c, s, cfg, allow_untrained=True)
        assert trace.best_step == int(np.argmin(trace.total))
        total, _ = transfer.total_loss(small_net, x, c, s, cfg)
        assert total == trace.total[trace.best_step]
        assert np.all(x.values >= c.floor)

    def test_deterministic(self, small_net):
        c, s = random_log(0), random_log(1)
        a, ta = transfer.run_transfer(small_net, c, s, TransferConfig(steps=5), allow_untrained=True)
        b, tb = transfer.run_transfer(small_net, c, s, TransferConfig(steps=5), allow_untrained=True)
        assert a.values.tobytes() == b.values.tobytes() and ta.total == tb.total

    def test_init_seed_matters(self, small_net):
        c, s = random_log(0), random_log(1)
        a, _ = transfer.run_transfer(small_net, c, s, TransferConfig(steps=2), allow_untrained=True)
        b, _ = transfer.run_transfer(small_net, c, s, TransferConfig(steps=2, init=InitConfig(seed=1)),
                                     allow_untrained=True)
        assert not np.array_equal(a.values, b.values)

    def test_snapshots(self, small_net):
        _, trace = transfer.run_transfer(small_net, random_log(0), random_log(1), TransferConfig(steps=7),
                                         allow_untrained=True, snapshot_every=3)
        assert trace.snapshot_steps == [0, 3, 6] and len(trace.snapshots) == 3

    def test_content_only_block1(self, trained_net):
        c, s = tone_spectrogram(1, 440, 0), tone_spectrogram(2, 330, 9)
        cfg = TransferConfig(steps=1000, content_layers=("block1",), weights=LossWeights(alpha=1, beta=0, gamma=0, delta=0))
        _, trace = transfer.run_transfer(trained_net, c, s, cfg)
        lc = trace.components["Lc"]
        assert lc[trace.best_step] <= 0.01 * lc[0]

    def test_self_transfer_equal_weights(self, trained_net):
        x = tone_spectrogram(3, 440, 3)
        cfg = TransferConfig(steps=500, weights=LossWeights(alpha=1, beta=1, gamma=1, delta=1))
        _, trace = transfer.run_transfer(trained_net, x, x, cfg)
        assert min(trace.total) <= 0.05 * trace.total[0]


class TestTraceCsv:
    def test_round_trip(self, small_net, tmp_path):
        _, trace = transfer.run_transfer(small_net, random_log(0), random_log(1), TransferConfig(steps=4),
                                         allow_untrained=True)
        transfer.write_trace_csv(trace, tmp_path / "t.csv")
        assert (tmp_path / "t.csv").read_text().splitlines()[0] == "step,total,Lc,Ls,Le,Lt"
        back = transfer.read_trace_csv(tmp_path / "t.csv")
        assert back.total == trace.total and back.components == trace.components


class TestRender:
    def test_floor_renders_silence(self):
        x = LogSpectrogram(np.full((65, 64), FLOOR), TOY_STFT)
        w = transfer.render(x, TransferConfig(griffin_lim_iters=3))
        assert len(w) == TOY_STFT.clip_len and np.all(w.samples == 0)

    def test_deterministic(self):
        x = random_log(0)
        cfg = TransferConfig(griffin_lim_iters=3)
        assert np.array_equal(transfer.render(x, cfg).samples, transfer.render(x, cfg).samples)
