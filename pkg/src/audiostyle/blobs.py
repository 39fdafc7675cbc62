"""Versioned binary container shared by checkpoints and spectrogram files.

Layout (all integers little-endian u32)::

    magic (4 bytes) | version | header length | JSON header (utf-8)
    then per tensor: ndim | dims... | float32 LE data
"""

from __future__ import annotations

import json
import struct
from typing import BinaryIO

import numpy as np

from .errors import MagicMismatchError, TruncatedFileError, VersionMismatchError

FORMAT_VERSION = 1
_U32 = struct.Struct("<I")


def write(fh: BinaryIO, magic: bytes, header: dict, tensors: list[np.ndarray]) -> None:
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    fh.write(magic)
    fh.write(_U32.pack(FORMAT_VERSION))
    fh.write(_U32.pack(len(head)))
    fh.write(head)
    for t in tensors:
        t = np.asarray(t)
        fh.write(_U32.pack(t.ndim))
        for d in t.shape:
            fh.write(_U32.pack(d))
        fh.write(np.ascontiguousarray(t, dtype="<f4").tobytes())


class _Reader:
    def __init__(self, buf: bytes, source: str):
        self.buf = buf
        self.pos = 0
        self.source = source

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise TruncatedFileError(f"{self.source}: file truncated at byte {len(self.buf)}, needed {self.pos + n}")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return _U32.unpack(self.take(4))[0]


def read(buf: bytes, magic: bytes, source: str = "<bytes>") -> tuple[dict, list[np.ndarray]]:
    r = _Reader(buf, source)
    found = r.take(len(magic))
    if found != magic:
        raise MagicMismatchError(f"{source}: expected magic {magic!r}, found {found!r}")
    version = r.u32()
    if version != FORMAT_VERSION:
        raise VersionMismatchError(f"{source}: format version {version}, this build reads {FORMAT_VERSION}")
    header = json.loads(r.take(r.u32()).decode("utf-8"))
    tensors = []
    while r.pos < len(buf):
        ndim = r.u32()
        shape = tuple(r.u32() for _ in range(ndim))
        count = int(np.prod(shape, dtype=np.int64))
        data = np.frombuffer(r.take(4 * count), dtype="<f4").reshape(shape)
        tensors.append(data.astype(np.float32))
    return header, tensors
