"""Little-endian binary readers/writers shared by every on-disk format."""
from __future__ import annotations

import struct
from typing import BinaryIO

import numpy as np


class FormatError(ValueError):
    """Raised when a binary artifact has the wrong magic or is truncated."""


class BinWriter:
    def __init__(self, fh: BinaryIO):
        self.fh = fh

    def magic(self, tag: bytes) -> None:
        self.fh.write(tag)

    def pack(self, fmt: str, *values) -> None:
        self.fh.write(struct.pack("<" + fmt, *values))

    def array(self, arr: np.ndarray, dtype: str) -> None:
        self.fh.write(np.ascontiguousarray(arr, dtype=np.dtype(dtype)).tobytes())


class BinReader:
    def __init__(self, fh: BinaryIO, name: str = "<stream>"):
        self.fh = fh
        self.name = name

    def _read(self, n: int) -> bytes:
        buf = self.fh.read(n)
        if len(buf) != n:
            raise FormatError(f"{self.name}: truncated file (wanted {n} bytes, got {len(buf)})")
        return buf

    def expect_magic(self, tag: bytes) -> None:
        got = self.fh.read(len(tag))
        if got != tag:
            raise FormatError(f"{self.name}: bad magic {got!r}, expected {tag!r}")

    def unpack(self, fmt: str):
        fmt = "<" + fmt
        values = struct.unpack(fmt, self._read(struct.calcsize(fmt)))
        return values[0] if len(values) == 1 else values

    def array(self, dtype: str, count: int, shape=None) -> np.ndarray:
        dt = np.dtype(dtype)
        arr = np.frombuffer(self._read(dt.itemsize * count), dtype=dt).astype(dt.newbyteorder("="))
        return arr.reshape(shape) if shape is not None else arr

    def expect_eof(self) -> None:
        if self.fh.read(1):
            raise FormatError(f"{self.name}: trailing bytes after payload")
