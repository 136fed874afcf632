"""LSW1 binary weight file: bit-exact load/save of conv kernels and biases.

Layout (all integers little-endian):

    magic  b"LSW1"
    u32    entry count
    per entry, sorted by name in the canonical encoding:
        u16    name length
        bytes  UTF-8 name
        u32 x4 kernel dims (out_c, in_c, kh, kw)
        f32[]  kernel values, row-major
        u32    bias length (== out_c)
        f32[]  bias values

save(load(path)) reproduces a canonical file byte for byte.
"""

from __future__ import annotations

import struct
from typing import NamedTuple

import numpy as np

MAGIC = b"LSW1"


class WeightsError(Exception):
    """Base class for weight file problems."""


class BadMagicError(WeightsError):
    pass


class TruncatedError(WeightsError):
    pass


class NonFiniteError(WeightsError):
    pass


class DuplicateNameError(WeightsError):
    pass


class WeightEntry(NamedTuple):
    kernel: np.ndarray  # (out_c, in_c, kh, kw) float32
    bias: np.ndarray    # (out_c,) float32


WeightStore = dict[str, WeightEntry]


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise TruncatedError(
                f"file truncated: need {n} bytes at offset {self.pos}, "
                f"have {len(self.data) - self.pos}")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def u16(self) -> int:
        return struct.unpack("<H", self.take(2))[0]

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def f32s(self, count: int) -> np.ndarray:
        raw = self.take(4 * count)
        return np.frombuffer(raw, dtype="<f4", count=count).astype(np.float32)


def load(path) -> WeightStore:
    with open(path, "rb") as fh:
        data = fh.read()
    r = _Reader(data)
    if r.take(4) != MAGIC:
        raise BadMagicError(f"{path}: bad magic {data[:4]!r}, expected {MAGIC!r}")
    count = r.u32()
    store: WeightStore = {}
    for _ in range(count):
        name = r.take(r.u16()).decode("utf-8")
        out_c, in_c, kh, kw = (r.u32() for _ in range(4))
        kernel = r.f32s(out_c * in_c * kh * kw).reshape(out_c, in_c, kh, kw)
        bias_len = r.u32()
        if bias_len != out_c:
            raise WeightsError(
                f"entry {name!r}: bias length {bias_len} != out_c {out_c}")
        bias = r.f32s(bias_len)
        if name in store:
            raise DuplicateNameError(f"duplicate entry name {name!r}")
        if not (np.all(np.isfinite(kernel)) and np.all(np.isfinite(bias))):
            raise NonFiniteError(f"entry {name!r} contains NaN or Inf values")
        store[name] = WeightEntry(kernel, bias)
    if r.pos != len(data):
        raise WeightsError(f"{len(data) - r.pos} trailing bytes after last entry")
    return store


def serialize(store: WeightStore) -> bytes:
    """Canonical bytes for a store: entries sorted by name, deterministic."""
    out = bytearray()
    out += MAGIC
    out += struct.pack("<I", len(store))
    for name in sorted(store):
        kernel, bias = store[name]
        kernel = np.ascontiguousarray(kernel, dtype=np.float32)
        bias = np.ascontiguousarray(bias, dtype=np.float32)
        if kernel.ndim != 4:
            raise WeightsError(f"entry {name!r}: kernel must be 4-D, got {kernel.shape}")
        if bias.shape != (kernel.shape[0],):
            raise WeightsError(
                f"entry {name!r}: bias shape {bias.shape} != ({kernel.shape[0]},)")
        if not (np.all(np.isfinite(kernel)) and np.all(np.isfinite(bias))):
            raise NonFiniteError(f"entry {name!r} contains NaN or Inf values")
        raw_name = name.encode("utf-8")
        if len(raw_name) > 0xFFFF:
            raise WeightsError(f"entry name too long ({len(raw_name)} bytes)")
        out += struct.pack("<H", len(raw_name))
        out += raw_name
        out += struct.pack("<IIII", *kernel.shape)
        out += kernel.astype("<f4").tobytes()
        out += struct.pack("<I", bias.shape[0])
        out += bias.astype("<f4").tobytes()
    return bytes(out)


def save(store: WeightStore, path) -> None:
    data = serialize(store)
    with open(path, "wb") as fh:
        fh.write(data)
