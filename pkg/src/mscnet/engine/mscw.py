"""MSCW1 weight container.

Layout: the 5-byte magic ``MSCW1`` followed by records until EOF. Each record is
``name_len:u64 | name:utf-8 | rank:u64 | extents:u64[rank] | payload:f32[prod(extents)]``,
all little-endian.
"""
from __future__ import annotations

import io
import os
import struct
from typing import Iterable, Mapping

import numpy as np

MAGIC = b"MSCW1"
_U64 = struct.Struct("<Q")
_MAX_NAME = 1 << 16
_MAX_RANK = 8


class FormatError(ValueError):
    """Raised for a malformed or truncated MSCW1 stream."""


def dumps(entries: Iterable[tuple[str, np.ndarray]] | Mapping[str, np.ndarray]) -> bytes:
    if isinstance(entries, Mapping):
        entries = entries.items()
    buf = io.BytesIO()
    buf.write(MAGIC)
    for name, arr in entries:
        raw = name.encode("utf-8")
        arr = np.asarray(arr)
        buf.write(_U64.pack(len(raw)))
        buf.write(raw)
        buf.write(_U64.pack(arr.ndim))
        for e in arr.shape:
            buf.write(_U64.pack(e))
        buf.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return buf.getvalue()


def loads(blob: bytes) -> dict[str, np.ndarray]:
    if blob[:len(MAGIC)] != MAGIC:
        raise FormatError("bad magic: not an MSCW1 file")
    pos = len(MAGIC)
    out: dict[str, np.ndarray] = {}

    def take(n: int, what: str) -> bytes:
        nonlocal pos
        if pos + n > len(blob):
            raise FormatError(f"truncated while reading {what} at byte {pos}")
        chunk = blob[pos:pos + n]
        pos += n
        return chunk

    while pos < len(blob):
        (nlen,) = _U64.unpack(take(8, "name length"))
        if nlen > _MAX_NAME:
            raise FormatError(f"implausible name length {nlen}")
        try:
            name = take(nlen, "name").decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError(f"name is not UTF-8 at byte {pos}") from exc
        (rank,) = _U64.unpack(take(8, f"rank of {name!r}"))
        if rank > _MAX_RANK:
            raise FormatError(f"implausible rank {rank} for {name!r}")
        shape = tuple(_U64.unpack(take(8, f"extents of {name!r}"))[0] for _ in range(rank))
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        payload = take(4 * count, f"payload of {name!r}")
        if name in out:
            raise FormatError(f"duplicate entry {name!r}")
        out[name] = np.frombuffer(payload, dtype="<f4").reshape(shape).astype(np.float32)
    return out


def save(path: str | os.PathLike, entries) -> None:
    with open(path, "wb") as fh:
        fh.write(dumps(entries))


def load(path: str | os.PathLike) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        return loads(fh.read())
