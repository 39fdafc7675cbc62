"""STFT analysis/synthesis, log-magnitude mapping, Griffin-Lim and envelopes.

Everything here is a pure function of its inputs.  Spectrograms are stored
frequency-major: ``bins[f, t]`` with row 0 at 0 Hz.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .config import StftConfig
from .errors import ConfigError, InvalidInputError

DEFAULT_EPSILON = 1e-6


@dataclass(frozen=True)
class Waveform:
    samples: np.ndarray
    sample_rate: int = 16000

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise InvalidInputError(f"waveform must be mono 1-D, got shape {samples.shape}")
        if self.sample_rate <= 0:
            raise InvalidInputError(f"sample_rate must be positive, got {self.sample_rate}")
        if not np.all(np.isfinite(samples)):
            raise InvalidInputError("waveform contains non-finite samples")
        object.__setattr__(self, "samples", samples)

    def __len__(self) -> int:
        return len(self.samples)


@dataclass(frozen=True)
class ComplexSpectrogram:
    bins: np.ndarray
    config: StftConfig = field(default_factory=StftConfig)

    @property
    def shape(self) -> tuple[int, int]:
        return self.bins.shape


@dataclass(frozen=True)
class LogSpectrogram:
    values: np.ndarray
    config: StftConfig = field(default_factory=StftConfig)
    epsilon: float = DEFAULT_EPSILON

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise InvalidInputError(f"log spectrogram must be F x T, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise InvalidInputError("log spectrogram contains non-finite values")
        if self.epsilon <= 0:
            raise InvalidInputError(f"epsilon must be positive, got {self.epsilon}")
        object.__setattr__(self, "values", values)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    @property
    def floor(self) -> float:
        return float(np.log(self.epsilon))


@dataclass(frozen=True)
class EnvelopePair:
    temporal: np.ndarray  # per-frame energy, length T
    spectral: np.ndarray  # per-bin mean magnitude, length F


def periodic_hann(n: int) -> np.ndarray:
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def fit_to_clip(w: Waveform, cfg: StftConfig) -> Waveform:
    """Zero-pad at the tail or truncate to ``cfg.clip_len`` samples."""
    x = w.samples[: cfg.clip_len]
    if len(x) < cfg.clip_len:
        x = np.concatenate([x, np.zeros(cfg.clip_len - len(x))])
    return Waveform(x, w.sample_rate)


def stft(w: Waveform, cfg: StftConfig | None = None) -> ComplexSpectrogram:
    cfg = cfg or StftConfig()
    x = w.samples
    if len(x) < cfg.frame_len:
        raise InvalidInputError(f"need at least {cfg.frame_len} samples for one frame, got {len(x)}")
    n_frames = 1 + (len(x) - cfg.frame_len) // cfg.hop
    frames = np.lib.stride_tricks.sliding_window_view(x, cfg.frame_len)[:: cfg.hop][:n_frames]
    spec = np.fft.rfft(frames * periodic_hann(cfg.frame_len), n=cfg.fft_size, axis=1)
    return ComplexSpectrogram(spec.T.copy(), cfg)


def _ola_denominator(cfg: StftConfig, n_frames: int) -> np.ndarray:
    win_sq = periodic_hann(cfg.frame_len) ** 2
    out = np.zeros(cfg.frame_len + (n_frames - 1) * cfg.hop)
    for t in range(n_frames):
        out[t * cfg.hop : t * cfg.hop + cfg.frame_len] += win_sq
    return out


def istft(s: ComplexSpectrogram) -> Waveform:
    """Weighted overlap-add inverse with window-square normalization.

    This is the least-squares signal estimate for an arbitrary (possibly
    inconsistent) spectrogram.  Samples with no window support come out as 0.
    """
    cfg = s.config
    n_bins, n_frames = s.bins.shape
    if n_bins != cfg.num_bins:
        raise InvalidInputError(f"expected {cfg.num_bins} bins, got {n_bins}")
    win = periodic_hann(cfg.frame_len)
    frames = np.fft.irfft(s.bins.T, n=cfg.fft_size, axis=1)[:, : cfg.frame_len] * win
    out = np.zeros(cfg.frame_len + (n_frames - 1) * cfg.hop)
    for t in range(n_frames):
        out[t * cfg.hop : t * cfg.hop + cfg.frame_len] += frames[t]
    denom = _ola_denominator(cfg, n_frames)
    interior = denom[cfg.frame_len : len(out) - cfg.frame_len]
    if interior.size and np.min(interior) <= 1e-12:
        raise ConfigError(
            f"window/hop (frame_len={cfg.frame_len}, hop={cfg.hop}) leaves zero overlap-add weight"
        )
    support = denom > 1e-12 * max(float(denom.max()), 1e-300)
    out[support] /= denom[support]
    out[~support] = 0.0
    return Waveform(out, cfg.sample_rate)


def log_magnitude(s: ComplexSpectrogram, epsilon: float = DEFAULT_EPSILON) -> LogSpectrogram:
    if not epsilon > 0:
        raise InvalidInputError(f"epsilon must be positive, got {epsilon}")
    return LogSpectrogram(np.log(np.abs(s.bins) + epsilon), s.config, epsilon)


def linear_magnitude(x: LogSpectrogram) -> np.ndarray:
    # exp(log eps) - eps is not exactly 0 in floating point; entries on the floor are
    return np.where(x.values <= x.floor, 0.0, np.maximum(np.exp(x.values) - x.epsilon, 0.0))


def consistency_error(w: Waveform, mag: np.ndarray, cfg: StftConfig) -> float:
    norm = np.linalg.norm(mag)
    if norm == 0:
        return 0.0
    return float(np.linalg.norm(np.abs(stft(w, cfg).bins) - mag) / norm)


@dataclass(frozen=True)
class GriffinLimResult:
    waveform: Waveform
    errors: np.ndarray  # consistency error after each round

    @property
    def final_error(self) -> float:
        return float(self.errors[-1])


def griffin_lim(mag: np.ndarray, cfg: StftConfig | None = None, iters: int = 100,
                seed: int = 0) -> GriffinLimResult:
    cfg = cfg or StftConfig()
    mag = np.asarray(mag, dtype=np.float64)
    if iters < 1:
        raise InvalidInputError(f"iters must be >= 1, got {iters}")
    if mag.ndim != 2 or mag.shape[0] != cfg.num_bins:
        raise InvalidInputError(f"magnitude must be {cfg.num_bins} x T, got {mag.shape}")
    if not np.all(np.isfinite(mag)):
        raise InvalidInputError("magnitude contains non-finite values")
    if np.any(mag < 0):
        raise InvalidInputError("magnitude has negative entries")

    norm = np.linalg.norm(mag)
    rng = np.random.default_rng(seed)
    phase = np.exp(1j * rng.uniform(0.0, 2.0 * np.pi, size=mag.shape))
    errors = np.empty(iters)
    for k in range(iters):
        w = istft(ComplexSpectrogram(mag * phase, cfg))
        rebuilt = stft(w, cfg).bins
        errors[k] = np.linalg.norm(np.abs(rebuilt) - mag) / norm if norm > 0 else 0.0
        phase = np.exp(1j * np.angle(rebuilt))
    return GriffinLimResult(w, errors)


def envelopes(x: LogSpectrogram) -> EnvelopePair:
    m = linear_magnitude(x)
    return EnvelopePair(temporal=np.sum(m * m, axis=0), spectral=np.mean(m, axis=1))


def high_band_fraction(x: LogSpectrogram, cutoff_hz: float = 2000.0) -> float:
    """Fraction of spectrogram energy at or above ``cutoff_hz``."""
    m2 = linear_magnitude(x) ** 2
    freqs = np.arange(x.shape[0]) * x.config.sample_rate / x.config.fft_size
    total = m2.sum()
    return float(m2[freqs >= cutoff_hz].sum() / total) if total > 0 else 0.0
