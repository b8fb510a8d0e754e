"""Binary checkpoints.

Layout (little-endian throughout)::

    magic      4 bytes  b"VLDK"
    version    u32
    digest     u64      config digest of the producing run
    count      u32      number of tensors
    per tensor:
        name_len u32, name (utf-8), dtype u8 (1 = f32, 2 = f64),
        rank u8, dims u32 * rank, values
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from tokendrive.errors import CheckpointError

MAGIC = b"VLDK"
VERSION = 1
DTYPES = {1: np.dtype("<f4"), 2: np.dtype("<f8")}
DTYPE_CODES = {v: k for k, v in DTYPES.items()}


@dataclass
class Checkpoint:
    digest: int
    tensors: dict[str, np.ndarray] = field(default_factory=dict)
    version: int = VERSION


def encode_checkpoint(ckpt: Checkpoint, dtype: str = "<f4") -> bytes:
    dt = np.dtype(dtype)
    if dt not in DTYPE_CODES:
        raise CheckpointError(f"unsupported storage dtype {dtype}")
    parts = [MAGIC, struct.pack("<IQI", ckpt.version, ckpt.digest, len(ckpt.tensors))]
    for name, arr in ckpt.tensors.items():
        raw = name.encode("utf-8")
        a = np.ascontiguousarray(arr, dtype=dt)
        parts.append(struct.pack("<I", len(raw)) + raw + struct.pack("<BB", DTYPE_CODES[dt], a.ndim))
        parts.append(struct.pack(f"<{a.ndim}I", *a.shape))
        parts.append(a.tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, data: bytes):
        self.data, self.pos = data, 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError(f"truncated checkpoint while reading {what} at byte {self.pos}")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def decode_checkpoint(data: bytes, expect_digest: int | None = None) -> Checkpoint:
    r = _Reader(data)
    magic = r.take(4, "magic")
    if magic != MAGIC:
        raise CheckpointError(f"bad magic {magic!r}, expected {MAGIC!r}")
    (version,) = r.unpack("<I", "version")
    if version != VERSION:
        raise CheckpointError(f"unsupported version {version}, expected {VERSION}")
    (digest,) = r.unpack("<Q", "digest")
    if expect_digest is not None and digest != expect_digest:
        raise CheckpointError(f"digest mismatch: checkpoint {digest:016x}, config {expect_digest:016x}")
    (count,) = r.unpack("<I", "tensor count")
    tensors: dict[str, np.ndarray] = {}
    for i in range(count):
        (name_len,) = r.unpack("<I", f"name length of tensor {i}")
        try:
            name = r.take(name_len, f"name of tensor {i}").decode("utf-8")
        except UnicodeDecodeError:
            raise CheckpointError(f"name of tensor {i} is not valid utf-8") from None
        code, rank = r.unpack("<BB", f"dtype/rank of '{name}'")
        if code not in DTYPES:
            raise CheckpointError(f"unknown dtype code {code} for '{name}'")
        dims = r.unpack(f"<{rank}I", f"dims of '{name}'")
        dt = DTYPES[code]
        n = int(np.prod(dims, dtype=np.int64))
        values = np.frombuffer(r.take(n * dt.itemsize, f"values of '{name}'"), dtype=dt)
        if name in tensors:
            raise CheckpointError(f"duplicate tensor name '{name}'")
        tensors[name] = values.reshape(dims).copy()
    if r.pos != len(data):
        raise CheckpointError(f"{len(data) - r.pos} trailing bytes after {count} tensors")
    return Checkpoint(digest, tensors, version)


def save_checkpoint(path, ckpt: Checkpoint, dtype: str = "<f4") -> None:
    Path(path).write_bytes(encode_checkpoint(ckpt, dtype))


def load_checkpoint(path, expect_digest: int | None = None) -> Checkpoint:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint '{path}': {exc}") from None
    return decode_checkpoint(data, expect_digest)
