"""Spectrogram style transfer: optimize a log-spectrogram from Gaussian noise.

The objective is

    total = alpha * content + beta * style + gamma * temporal_env + delta * timbral_env

where content compares conv activations with those of the content clip,
style compares their Gram matrices with the style clip's, and the two
envelope terms compare per-frame energy and time-averaged per-bin magnitude
with the style clip's.  The optimization variable is the log-magnitude
spectrogram itself; Adam steps are followed by a projection onto the log
floor so every iterate stays a valid spectrogram.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .config import TransferConfig
from .dsp import EnvelopePair, LogSpectrogram, Waveform, envelopes, griffin_lim, linear_magnitude
from .errors import ConfigError, InvalidInputError, NumericError, ShapeError
from .network import Network, forward, forward_on_tape, params_on_tape
from .training import AdamState, adam_step

COMPONENTS = ("Lc", "Ls", "Le", "Lt")


def _scalar_tape(*maps) -> ad.Tape:
    for m in maps:
        for v in (m.values() if isinstance(m, dict) else [m]):
            if isinstance(v, ad.Tensor):
                return v.tape
    return ad.Tape()


def _chw(t: ad.Tensor) -> ad.Tensor:
    if t.ndim == 4 and t.shape[0] == 1:
        return ad.reshape(t, t.shape[1:])
    return t


def _lift(v, tape: ad.Tape) -> ad.Tensor:
    return v if isinstance(v, ad.Tensor) else tape.constant(np.asarray(v))


def _check_layers(layers, *acts) -> None:
    for name in layers:
        for a in acts:
            if name not in a:
                raise ConfigError(f"unknown layer id {name!r}; have {sorted(a)}")


def content_loss(acts_x: dict, acts_c: dict, layers) -> ad.Tensor:
    """Sum over layers of the mean squared activation difference."""
    _check_layers(layers, acts_x, acts_c)
    tape = _scalar_tape(acts_x, acts_c)
    total = tape.constant(0.0)
    for name in layers:
        a = _chw(_lift(acts_x[name], tape))
        c = _chw(_lift(acts_c[name], tape))
        total = total + ad.sse(a, c) * (1.0 / a.data.size)
    return total


def gram_target(features) -> np.ndarray:
    f = np.asarray(features)
    f = f[0] if f.ndim == 4 else f
    flat = f.reshape(f.shape[0], -1)
    return flat @ flat.T


def style_loss(acts_x: dict, acts_s: dict, layers, style_grams: dict | None = None) -> ad.Tensor:
    """Sum over layers of ||G(x) - G(s)||_F^2 / (4 C^2 M^2), M = H*W of x.

    ``style_grams`` may carry precomputed Gram matrices of the style
    activations, in which case ``acts_s`` is not consulted.
    """
    _check_layers(layers, acts_x)
    if style_grams is None:
        _check_layers(layers, acts_s)
    tape = _scalar_tape(acts_x, acts_s or {})
    total = tape.constant(0.0)
    for name in layers:
        a = _chw(_lift(acts_x[name], tape))
        c, h, w = a.shape
        target = style_grams[name] if style_grams is not None else gram_target(
            acts_s[name].data if isinstance(acts_s[name], ad.Tensor) else acts_s[name])
        if target.shape != (c, c):
            raise ShapeError(f"style_loss: layer {name} has {c} channels but style Gram is {target.shape}")
        m = h * w
        total = total + ad.sse(ad.gram(a), target) * (1.0 / (4.0 * c * c * m * m))
    return total


def log_to_envelopes(x: ad.Tensor, epsilon: float) -> tuple[ad.Tensor, ad.Tensor]:
    """Differentiable counterpart of :func:`dsp.envelopes` for an F x T tensor."""
    above = (x.data > np.log(epsilon)).astype(x.data.dtype)
    mag = ad.mul(ad.relu(ad.add_scalar(ad.exp(x), -epsilon)), above)
    return ad.sum(ad.square(mag), axis=0), ad.mean(mag, axis=1)


def envelope_loss(x, style_env: EnvelopePair, epsilon: float = 1e-6) -> tuple[ad.Tensor, ad.Tensor]:
    """(temporal, timbral) envelope mismatch, each scale-normalized by the style envelope."""
    if isinstance(x, LogSpectrogram):
        epsilon = x.epsilon
        x = ad.Tape().constant(x.values)
    elif not isinstance(x, ad.Tensor):
        x = ad.Tape().constant(np.asarray(x, dtype=np.float64))
    n_bins, n_frames = x.shape
    e_s = np.asarray(style_env.temporal, dtype=np.float64)
    t_s = np.asarray(style_env.spectral, dtype=np.float64)
    if e_s.shape != (n_frames,) or t_s.shape != (n_bins,):
        raise ShapeError(f"envelope_loss: x is {x.shape} but style envelopes are {e_s.shape}, {t_s.shape}")
    temporal, spectral = log_to_envelopes(x, epsilon)
    l_e = ad.sse(temporal, e_s) * (1.0 / (n_frames * (1.0 + float(e_s @ e_s) / n_frames)))
    l_t = ad.sse(spectral, t_s) * (1.0 / (n_bins * (1.0 + float(t_s @ t_s) / n_bins)))
    return l_e, l_t


class Objective:
    """The four-term transfer loss with content/style targets cached."""

    def __init__(self, net: Network, content: LogSpectrogram, style: LogSpectrogram,
                 cfg: TransferConfig | None = None):
        self.cfg = cfg = cfg or TransferConfig()
        if content.shape != style.shape:
            raise ShapeError(f"content {content.shape} and style {style.shape} spectrograms differ in shape")
        known = set(net.layer_ids)
        for name in cfg.content_layers + cfg.style_layers:
            if name not in known:
                raise ConfigError(f"unknown layer id {name!r}; network has {sorted(known)}")
        self.net = net
        self.shape = content.shape
        self.epsilon = content.epsilon
        acts_c = forward(net, content).per_layer
        acts_s = forward(net, style).per_layer
        self.content_targets = {k: acts_c[k] for k in cfg.content_layers}
        self.style_grams = {k: gram_target(acts_s[k]) for k in cfg.style_layers}
        self.style_env = envelopes(style)

    def build(self, tape: ad.Tape, x: ad.Tensor) -> tuple[ad.Tensor, dict[str, ad.Tensor]]:
        w = self.cfg.weights
        params = params_on_tape(self.net, tape, trainable=False, dtype=np.float64)
        acts = forward_on_tape(self.net.spec, params, x).per_layer
        comps = {
            "Lc": content_loss(acts, self.content_targets, self.cfg.content_layers),
            "Ls": style_loss(acts, None, self.cfg.style_layers, self.style_grams),
        }
        comps["Le"], comps["Lt"] = envelope_loss(x, self.style_env, self.epsilon)
        total = (comps["Lc"] * w.alpha + comps["Ls"] * w.beta
                 + comps["Le"] * w.gamma + comps["Lt"] * w.delta)
        return total, comps

    def evaluate(self, values: np.ndarray, with_grad: bool = True):
        """(total, components, gradient-or-None) at log-spectrogram ``values``."""
        if values.shape != self.shape:
            raise ShapeError(f"iterate has shape {values.shape}, objective expects {self.shape}")
        tape = ad.Tape()
        x = tape.variable(values.astype(np.float64)) if with_grad else tape.constant(values.astype(np.float64))
        try:
            total, comps = self.build(tape, x)
            grad = tape.backward(total)[x] if with_grad else None
            return float(total.data), {k: float(v.data) for k, v in comps.items()}, grad
        finally:
            tape.release()


def total_loss(net: Network, x: LogSpectrogram, x_c: LogSpectrogram, x_s: LogSpectrogram,
               cfg: TransferConfig | None = None) -> tuple[float, dict[str, float]]:
    if x.shape != x_c.shape:
        raise ShapeError(f"iterate {x.shape} and content {x_c.shape} differ in shape")
    total, comps, _ = Objective(net, x_c, x_s, cfg).evaluate(x.values, with_grad=False)
    return total, comps


def init_input(shape: tuple[int, int], stats_source: LogSpectrogram, seed: int = 0) -> LogSpectrogram:
    """Gaussian noise with the source's mean and std, clamped at the log floor."""
    rng = np.random.default_rng(seed)
    v = stats_source.values
    x = rng.normal(float(v.mean()), float(v.std()), size=shape)
    return LogSpectrogram(np.maximum(x, stats_source.floor), stats_source.config, stats_source.epsilon)


@dataclass
class TransferTrace:
    total: list[float] = field(default_factory=list)
    components: dict[str, list[float]] = field(default_factory=lambda: {k: [] for k in COMPONENTS})
    best_step: int = 0
    snapshot_steps: list[int] = field(default_factory=list)
    snapshots: list[np.ndarray] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.total)

    def rows(self):
        for i, tot in enumerate(self.total):
            yield (i, tot) + tuple(self.components[k][i] for k in COMPONENTS)


def write_trace_csv(trace: TransferTrace, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(["step", "total", "Lc", "Ls", "Le", "Lt"])
        for row in trace.rows():
            out.writerow([row[0]] + [repr(float(v)) for v in row[1:]])


def read_trace_csv(path) -> TransferTrace:
    trace = TransferTrace()
    with open(path, newline="", encoding="utf-8") as fh:
        for rec in csv.DictReader(fh):
            trace.total.append(float(rec["total"]))
            for k in COMPONENTS:
                trace.components[k].append(float(rec[k]))
    trace.best_step = int(np.argmin(trace.total)) if trace.total else 0
    return trace


def run_transfer(net: Network, content: LogSpectrogram, style: LogSpectrogram,
                 cfg: TransferConfig | None = None, allow_untrained: bool = False,
                 snapshot_every: int = 0) -> tuple[LogSpectrogram, TransferTrace]:
    """Adam on the input spectrogram; returns the best iterate seen and the trace.

    Step i of the trace holds the losses of the iterate before update i.
    """
    cfg = cfg or TransferConfig()
    if not net.trained and not allow_untrained:
        raise ConfigError("network is untrained; pass allow_untrained=True to use random weights")
    if cfg.steps < 1:
        raise InvalidInputError("steps must be >= 1")
    objective = Objective(net, content, style, cfg)
    x = init_input(content.shape, content, cfg.init.seed).values
    floor = content.floor
    state = AdamState()
    trace = TransferTrace()
    best_val, best_x = np.inf, x
    for step in range(cfg.steps):
        try:
            total, comps, grad = objective.evaluate(x)
        except NumericError as e:
            raise NumericError(f"transfer failed at step {step}: {e}") from None
        if not np.isfinite(total):
            raise NumericError(f"transfer loss is not finite at step {step}")
        trace.total.append(total)
        for k in COMPONENTS:
            trace.components[k].append(comps[k])
        if snapshot_every and step % snapshot_every == 0:
            trace.snapshot_steps.append(step)
            trace.snapshots.append(x.copy())
        if total < best_val:
            best_val, best_x, trace.best_step = total, x, step
        updated, state = adam_step({"x": x}, {"x": grad}, state, cfg.adam, step + 1)
        x = np.maximum(updated["x"], floor)
    return LogSpectrogram(best_x, content.config, content.epsilon), trace


def render(x: LogSpectrogram, cfg: TransferConfig | None = None) -> Waveform:
    """Griffin-Lim reconstruction of a log-magnitude spectrogram."""
    cfg = cfg or TransferConfig()
    return griffin_lim(linear_magnitude(x), x.config, cfg.griffin_lim_iters, cfg.phase_seed).waveform
