"""Synthetic instrument corpus and the Adam/cross-entropy training loop."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .config import AdamConfig, Archetype, StftConfig, SynthCorpusConfig
from .dsp import LogSpectrogram, Waveform, log_magnitude, stft
from .errors import InvalidInputError, NumericError, ShapeError
from .network import Checkpoint, Network, forward_on_tape

log = logging.getLogger(__name__)

VIBRATO_RATE_HZ = 5.5
FORMANT_WIDTH_HZ = 200.0


def synth_tone(arch: Archetype, f0: float, cfg: StftConfig | None = None, seed: int = 0) -> Waveform:
    """One additive-synthesis note of ``cfg.clip_len`` samples.

    Partial k has amplitude k**-decay_exponent (times a formant gain when the
    archetype defines formants); partials near Nyquist are dropped.
    """
    cfg = cfg or StftConfig()
    rng = np.random.default_rng(seed)
    sr = cfg.sample_rate
    t = np.arange(cfg.clip_len) / sr
    inst_freq = 1.0 + arch.vibrato_depth * np.sin(2 * np.pi * VIBRATO_RATE_HZ * t)
    base_phase = 2 * np.pi * f0 * np.cumsum(inst_freq) / sr

    tone = np.zeros(cfg.clip_len)
    for k in range(1, arch.num_partials + 1):
        if k * f0 * (1 + arch.vibrato_depth) >= 0.95 * sr / 2:
            break
        amp = k ** -arch.partial_decay_exponent
        if arch.formants_hz:
            amp *= 0.1 + sum(1.0 / (1.0 + ((k * f0 - fc) / FORMANT_WIDTH_HZ) ** 2) for fc in arch.formants_hz)
        tone += amp * np.sin(k * base_phase + rng.uniform(0, 2 * np.pi))

    attack = max(arch.attack_ms * 1e-3, 1.0 / sr)
    env = np.where(t < attack, t / attack, np.exp(-(t - attack) / arch.decay_s))
    tone *= env
    peak = np.max(np.abs(tone))
    if peak > 0:
        tone *= 0.5 / peak
    tone += arch.noise_floor * rng.standard_normal(cfg.clip_len)
    return Waveform(np.clip(tone, -1.0, 1.0), sr)


def clip_params(cfg: SynthCorpusConfig, label: int, index: int) -> dict:
    """Generator parameters of one corpus clip (deterministic in the seeds)."""
    rng = np.random.default_rng([cfg.seed, label, index])
    lo, hi = cfg.f0_range_hz
    f0 = float(np.exp(rng.uniform(np.log(lo), np.log(hi))))
    return {
        "archetype": cfg.archetypes[label].name,
        "f0_hz": f0,
        "tone_seed": int(rng.integers(2**31)),
    }


def synth_corpus(cfg: SynthCorpusConfig | None = None,
                 stft_cfg: StftConfig | None = None) -> list[tuple[LogSpectrogram, int]]:
    """Labeled log spectrograms, class-major order."""
    cfg = cfg or SynthCorpusConfig()
    stft_cfg = stft_cfg or StftConfig()
    items = []
    for label in range(cfg.num_classes):
        arch = cfg.archetypes[label]
        for i in range(cfg.clips_per_class):
            p = clip_params(cfg, label, i)
            w = synth_tone(arch, p["f0_hz"], stft_cfg, p["tone_seed"])
            items.append((log_magnitude(stft(w, stft_cfg)), label))
    return items


def write_manifest(cfg: SynthCorpusConfig, path) -> None:
    """JSON lines, one record per clip."""
    with open(path, "w", encoding="utf-8") as fh:
        for label in range(cfg.num_classes):
            for i in range(cfg.clips_per_class):
                rec = {"generator": clip_params(cfg, label, i), "label": label, "seed": cfg.seed, "index": i}
                fh.write(json.dumps(rec, sort_keys=True) + "\n")


# optimizer


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdamState,
              cfg: AdamConfig, t: int) -> tuple[dict[str, np.ndarray], AdamState]:
    """One bias-corrected Adam update; ``t`` counts from 1."""
    if t < 1:
        raise InvalidInputError(f"step index must be >= 1, got {t}")
    new_params, new_m, new_v = {}, {}, {}
    bc1 = 1.0 - cfg.beta1**t
    bc2 = 1.0 - cfg.beta2**t
    for name, theta in params.items():
        g = grads[name]
        if g.shape != theta.shape:
            raise ShapeError(f"adam_step: gradient for {name} has shape {g.shape}, parameter {theta.shape}")
        m = state.m.get(name, np.zeros_like(theta))
        v = state.v.get(name, np.zeros_like(theta))
        if m.shape != theta.shape or v.shape != theta.shape:
            raise ShapeError(f"adam_step: optimizer state for {name} does not match {theta.shape}")
        m = cfg.beta1 * m + (1.0 - cfg.beta1) * g
        v = cfg.beta2 * v + (1.0 - cfg.beta2) * (g * g)
        m_hat = m / bc1
        v_hat = v / bc2
        new_params[name] = (theta - cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.eps)).astype(theta.dtype)
        new_m[name], new_v[name] = m, v
    return new_params, AdamState(new_m, new_v)


def clip_by_global_norm(grads: dict[str, np.ndarray], max_norm: float | None) -> dict[str, np.ndarray]:
    if max_norm is None:
        return grads
    total = float(np.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads.values())))
    if total <= max_norm:
        return grads
    scale = max_norm / total
    return {k: (g * scale).astype(g.dtype) for k, g in grads.items()}


# training loop


@dataclass
class EpochMetrics:
    mean_cross_entropy: float
    train_accuracy: float


@dataclass
class TrainReport:
    epochs: list[EpochMetrics]
    step_losses: list[float]
    meta: dict


def train(net: Network, corpus: list[tuple[LogSpectrogram, int]], cfg: AdamConfig | None = None,
          seed: int = 0, class_names: list[str] | None = None,
          dtype=np.float32) -> tuple[Checkpoint, TrainReport]:
    """Minibatch Adam on mean cross-entropy; ``net`` itself is not modified.

    Accuracy is the running accuracy of the minibatch predictions made
    during the epoch.  With ``cfg.target_accuracy`` set, training stops after
    the first epoch that reaches it.
    """
    cfg = cfg or AdamConfig()
    if not corpus:
        raise InvalidInputError("corpus is empty")
    num_classes = net.spec.head.num_classes
    labels = np.array([y for _, y in corpus])
    if labels.min() < 0 or labels.max() >= num_classes:
        raise InvalidInputError(f"labels must lie in [0, {num_classes})")
    inputs = np.stack([x.values for x, _ in corpus]).astype(dtype)

    params = {k: v.copy() for k, v in net.params.items()}
    state = AdamState()
    rng = np.random.default_rng(seed)
    epochs: list[EpochMetrics] = []
    step_losses: list[float] = []
    step = 0
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(corpus))
        loss_sum, correct = 0.0, 0
        for start in range(0, len(order), cfg.batch_size):
            batch = order[start : start + cfg.batch_size]
            step += 1
            tape = ad.Tape()
            p = {k: tape.variable(v.astype(dtype)) for k, v in params.items()}
            try:
                out = forward_on_tape(net.spec, p, tape.constant(inputs[batch]), want_activations=False)
                loss = ad.softmax_cross_entropy(out.logits, labels[batch])
                g = tape.backward(loss)
            except NumericError as e:
                raise NumericError(f"training diverged at epoch {epoch + 1}, step {step}: {e}") from None
            finally:
                tape.release()
            value = float(loss.data)
            step_losses.append(value)
            loss_sum += value * len(batch)
            correct += int(np.sum(np.argmax(out.logits.data, axis=1) == labels[batch]))
            grads = clip_by_global_norm({k: g[t] for k, t in p.items()}, cfg.clip_norm)
            params, state = adam_step(params, grads, state, cfg, step)
        metrics = EpochMetrics(loss_sum / len(order), correct / len(order))
        epochs.append(metrics)
        log.info("epoch %d: loss %.4f acc %.3f", epoch + 1, metrics.mean_cross_entropy, metrics.train_accuracy)
        if cfg.target_accuracy is not None and metrics.train_accuracy >= cfg.target_accuracy:
            break

    meta = {
        "epochs": len(epochs),
        "final_loss": epochs[-1].mean_cross_entropy,
        "class_names": list(class_names) if class_names else [str(i) for i in range(num_classes)],
        "seed": seed,
    }
    trained = Network(net.spec, params, trained=True)
    return Checkpoint.from_network(trained, meta), TrainReport(epochs, step_losses, meta)
