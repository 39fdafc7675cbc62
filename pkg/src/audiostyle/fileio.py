"""WAV, spectrogram, graymap and matrix file formats used by the CLI."""

from __future__ import annotations

import json
import wave
from pathlib import Path

import numpy as np

from . import blobs
from .config import StftConfig
from .dsp import LogSpectrogram, Waveform
from .errors import (
    InvalidInputError,
    MalformedWavError,
    UnsupportedBitDepthError,
    UnsupportedChannelsError,
    UnsupportedRateError,
)

SPECTROGRAM_MAGIC = b"ASTX"
WAV_RATE = 16000
_FULL_SCALE = 32768.0


def read_wav(path) -> Waveform:
    """Read 16-bit PCM mono 16 kHz WAV; anything else is rejected."""
    try:
        with wave.open(str(path), "rb") as fh:
            channels, width, rate, n = fh.getnchannels(), fh.getsampwidth(), fh.getframerate(), fh.getnframes()
            if channels != 1:
                raise UnsupportedChannelsError(f"{path}: {channels} channels, only mono is supported")
            if width != 2:
                raise UnsupportedBitDepthError(f"{path}: {8 * width}-bit samples, only 16-bit PCM is supported")
            if rate != WAV_RATE:
                raise UnsupportedRateError(f"{path}: sample rate {rate} Hz, only {WAV_RATE} Hz is supported")
            raw = fh.readframes(n)
    except (wave.Error, EOFError) as e:
        raise MalformedWavError(f"{path}: {e}") from None
    if len(raw) != 2 * n:
        raise MalformedWavError(f"{path}: data chunk holds {len(raw)} bytes, header promises {2 * n}")
    return Waveform(np.frombuffer(raw, dtype="<i2").astype(np.float64) / _FULL_SCALE, WAV_RATE)


def write_wav(path, w: Waveform) -> None:
    if w.sample_rate != WAV_RATE:
        raise UnsupportedRateError(f"cannot write {w.sample_rate} Hz audio, only {WAV_RATE} Hz is supported")
    q = np.clip(np.round(np.clip(w.samples, -1.0, 1.0) * _FULL_SCALE), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(WAV_RATE)
        fh.writeframes(q.tobytes())


def write_spectrogram(path, x: LogSpectrogram) -> None:
    header = {"kind": "log-spectrogram", "stft": x.config.model_dump(mode="json"), "epsilon": x.epsilon}
    with open(path, "wb") as fh:
        blobs.write(fh, SPECTROGRAM_MAGIC, header, [x.values])


def read_spectrogram(path) -> LogSpectrogram:
    header, tensors = blobs.read(Path(path).read_bytes(), SPECTROGRAM_MAGIC, str(path))
    if len(tensors) != 1 or tensors[0].ndim != 2:
        raise InvalidInputError(f"{path}: expected one F x T tensor")
    cfg = StftConfig.model_validate_json(json.dumps(header["stft"]))
    return LogSpectrogram(tensors[0].astype(np.float64), cfg, float(header["epsilon"]))


def to_gray(values: np.ndarray, lo: float, hi: float) -> np.ndarray:
    """Map [lo, hi] linearly onto 0..255."""
    span = hi - lo
    if span <= 0:
        return np.zeros(values.shape, dtype=np.uint8)
    return np.clip(np.round((values - lo) / span * 255.0), 0, 255).astype(np.uint8)


def write_pgm(path, pixels: np.ndarray) -> None:
    """Binary P5 graymap; array row 0 is the top image row."""
    pixels = np.asarray(pixels, dtype=np.uint8)
    h, w = pixels.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(pixels.tobytes())


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    fields, pos = [], 0
    while len(fields) < 4:
        while data[pos : pos + 1].isspace():
            pos += 1
        start = pos
        while not data[pos : pos + 1].isspace():
            pos += 1
        fields.append(data[start:pos])
    if fields[0] != b"P5" or int(fields[3]) != 255:
        raise InvalidInputError(f"{path}: not an 8-bit P5 graymap")
    w, h = int(fields[1]), int(fields[2])
    pixels = np.frombuffer(data[pos + 1 : pos + 1 + w * h], dtype=np.uint8)
    if pixels.size != w * h:
        raise InvalidInputError(f"{path}: truncated pixel data")
    return pixels.reshape(h, w)


def write_matrix_csv(path, values: np.ndarray) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for row in np.asarray(values, dtype=np.float64):
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def read_matrix_csv(path) -> np.ndarray:
    return np.loadtxt(path, delimiter=",", ndmin=2)
