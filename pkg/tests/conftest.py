import time

import numpy as np
import pytest

from audiostyle import dsp, network, training
from audiostyle.config import AdamConfig, NetworkSpec, StftConfig, SynthCorpusConfig

TOY_STFT = StftConfig(frame_len=120, hop=40, fft_size=128, clip_len=2640)  # 65 x 64 spectrograms


def tone_spectrogram(archetype_index: int, f0: float, seed: int, cfg: StftConfig = TOY_STFT) -> dsp.LogSpectrogram:
    arch = SynthCorpusConfig().archetypes[archetype_index]
    return dsp.log_magnitude(dsp.stft(training.synth_tone(arch, f0, cfg, seed=seed), cfg))


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture(scope="session")
def small_net():
    spec = NetworkSpec.model_validate_json(
        '{"conv_blocks": [{"out_channels": 3}, {"out_channels": 4}, {"out_channels": 5}],'
        ' "head": {"hidden_units": 6, "num_classes": 3}}')
    return network.build(spec, seed=7)


@pytest.fixture(scope="session")
def trained_default(tmp_path_factory):
    """Default network trained on the default corpus until 95% train accuracy (at most 30 epochs)."""
    t0 = time.perf_counter()
    corpus = training.synth_corpus(SynthCorpusConfig(), StftConfig())
    net = network.build(NetworkSpec(), seed=0)
    names = [a.name for a in SynthCorpusConfig().archetypes]
    ckpt, report = training.train(net, corpus, AdamConfig(target_accuracy=0.95), seed=0, class_names=names)
    report.meta["train_seconds"] = time.perf_counter() - t0
    path = tmp_path_factory.mktemp("ckpt") / "default.astc"
    network.save(ckpt, path)
    return ckpt.network(), report, path


@pytest.fixture(scope="session")
def trained_net(trained_default):
    return trained_default[0]


def pytest_terminal_summary(terminalreporter):
    """One pass/fail line per acceptance criterion, combining its clauses."""
    by_criterion: dict[int, list[tuple[str, bool, str]]] = {}
    for outcome in ("passed", "failed"):
        for rep in terminalreporter.stats.get(outcome, []):
            if rep.when != "call":
                continue
            props = dict(rep.user_properties)
            if "criterion" in props:
                by_criterion.setdefault(props["criterion"], []).append(
                    (props.get("clause", rep.nodeid), outcome == "passed", props.get("measured", "")))
    if not by_criterion:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(by_criterion):
        clauses = by_criterion[n]
        status = "PASS" if all(ok for _, ok, _ in clauses) else "FAIL"
        detail = "; ".join(f"{name} {'ok' if ok else 'FAILED'} ({m})" for name, ok, m in clauses)
        terminalreporter.write_line(f"criterion {n}: {status} | {detail}")
