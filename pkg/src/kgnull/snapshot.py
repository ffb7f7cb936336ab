"""Binary snapshot files.

Layout (little-endian): magic ``KGMS``, u32 format version, u32 species
count, u32 grid size ``n``, f64 box length, f64 t, f64 m, then every species'
``v`` followed by every species' ``w`` as ``n^3`` row-major f64 values.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .spectral import GridSpec
from .system import FieldState

__all__ = ["SnapshotFormatError", "write_snapshot", "read_snapshot", "encode_snapshot", "decode_snapshot"]

MAGIC = b"KGMS"
VERSION = 1
_HEADER = struct.Struct("<4sIIIddd")


class SnapshotFormatError(ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


def encode_snapshot(state: FieldState) -> bytes:
    g = state.grid
    head = _HEADER.pack(MAGIC, VERSION, state.n_species, g.n, g.box_length, state.t, state.m)
    body = np.concatenate([state.v.ravel(), state.w.ravel()]).astype("<f8").tobytes()
    return head + body


def decode_snapshot(data: bytes) -> FieldState:
    if len(data) < 4:
        raise SnapshotFormatError("truncated magic", len(data))
    if data[:4] != MAGIC:
        raise SnapshotFormatError(f"bad magic {data[:4]!r}", 0)
    if len(data) < _HEADER.size:
        raise SnapshotFormatError("truncated header", len(data))
    _, version, n0, n, box, t, m = _HEADER.unpack_from(data)
    if version != VERSION:
        raise SnapshotFormatError(f"unsupported format version {version}", 4)
    try:
        grid = GridSpec(n, box)
    except ValueError as exc:
        raise SnapshotFormatError(f"invalid grid: {exc}", 12) from exc
    count = 2 * n0 * n**3
    need = _HEADER.size + 8 * count
    if len(data) < need:
        # report the start of the first incomplete value
        offset = _HEADER.size + 8 * ((len(data) - _HEADER.size) // 8)
        raise SnapshotFormatError(f"truncated field data: expected {need} bytes, got {len(data)}", offset)
    if len(data) > need:
        raise SnapshotFormatError(f"{len(data) - need} trailing bytes", need)
    flat = np.frombuffer(data, dtype="<f8", count=count, offset=_HEADER.size).astype(float)
    shape = (n0, n, n, n)
    half = n0 * n**3
    return FieldState(grid, t, m, flat[:half].reshape(shape), flat[half:].reshape(shape))


def write_snapshot(state: FieldState, path: str | Path) -> None:
    Path(path).write_bytes(encode_snapshot(state))


def read_snapshot(path: str | Path) -> FieldState:
    return decode_snapshot(Path(path).read_bytes())
