"""Binary trajectory container plus JSON sidecar.

Layout (all little-endian)::

    magic   4s   b"OTRJ"
    version u32  1
    k, T, d, b   u32 x 4
    per run:  seed u64, stream u64, split_id u64
              W  float64[T+1, d]
              g  float64[T, d]
              B  int64[T, b]
    crc32   u32  over everything before it

The sidecar ``<name>.json`` holds the split plan, configuration and any
caller metadata, serialized with sorted keys.
"""
from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path

import numpy as np

from .data import SplitPlan
from .trainer import TrajectoryRecord

MAGIC = b"OTRJ"
VERSION = 1
_HEAD = struct.Struct("<4sIIIII")
_RUN = struct.Struct("<QQQ")


class ContainerError(ValueError):
    pass


def encode_records(records) -> bytes:
    records = list(records)
    if not records:
        raise ValueError("nothing to encode")
    T, d = records[0].updates.shape
    b = records[0].batches.shape[1]
    parts = [_HEAD.pack(MAGIC, VERSION, len(records), T, d, b)]
    for r in records:
        if r.updates.shape != (T, d) or r.batches.shape != (T, b):
            raise ValueError("records in one container must share T, d and batch size")
        parts.append(_RUN.pack(r.seed, r.stream, r.split_id))
        parts.append(np.ascontiguousarray(r.weights, dtype="<f8").tobytes())
        parts.append(np.ascontiguousarray(r.updates, dtype="<f8").tobytes())
        parts.append(np.ascontiguousarray(r.batches, dtype="<i8").tobytes())
    blob = b"".join(parts)
    return blob + struct.pack("<I", zlib.crc32(blob))


def decode_records(blob: bytes) -> list:
    if len(blob) < _HEAD.size + 4:
        raise ContainerError("container truncated")
    magic, version, k, T, d, b = _HEAD.unpack_from(blob, 0)
    if magic != MAGIC:
        raise ContainerError(f"bad container magic {magic!r}")
    if version != VERSION:
        raise ContainerError(f"unsupported container version {version}")
    per_run = _RUN.size + 8 * ((T + 1) * d + T * d + T * b)
    expected = _HEAD.size + k * per_run + 4
    if len(blob) != expected:
        raise ContainerError(f"container size {len(blob)} does not match header ({expected})")
    (crc,) = struct.unpack_from("<I", blob, expected - 4)
    if zlib.crc32(blob[:expected - 4]) != crc:
        raise ContainerError("container checksum mismatch")
    out = []
    off = _HEAD.size
    for _ in range(k):
        seed, stream, split_id = _RUN.unpack_from(blob, off)
        off += _RUN.size
        W = np.frombuffer(blob, "<f8", (T + 1) * d, off).reshape(T + 1, d).astype(np.float64)
        off += 8 * (T + 1) * d
        g = np.frombuffer(blob, "<f8", T * d, off).reshape(T, d).astype(np.float64)
        off += 8 * T * d
        B = np.frombuffer(blob, "<i8", T * b, off).reshape(T, b).astype(np.int64)
        off += 8 * T * b
        out.append(TrajectoryRecord(W, g, B, seed, stream, split_id))
    return out


def plan_to_json(plan: SplitPlan) -> dict:
    return {
        "splits": [s.tolist() for s in plan.splits],
        "test": plan.test.tolist(),
        "validation": plan.validation.tolist(),
        "seed": plan.seed,
        "pool_size": plan.pool_size,
    }


def plan_from_json(obj: dict) -> SplitPlan:
    arr = lambda xs: np.asarray(xs, dtype=np.int64)
    return SplitPlan(tuple(arr(s) for s in obj["splits"]), arr(obj["test"]),
                     arr(obj["validation"]), int(obj["seed"]), int(obj["pool_size"]))


def dumps_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=1) + "\n"


def save_container(path, records, meta: dict) -> None:
    path = Path(path)
    path.write_bytes(encode_records(records))
    path.with_suffix(".json").write_text(dumps_json(meta))


def load_container(path):
    """Return ``(records, meta)``; raises :class:`ContainerError` on corruption."""
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise ContainerError(f"{path}: {exc}") from exc
    records = decode_records(blob)
    sidecar = path.with_suffix(".json")
    meta = json.loads(sidecar.read_text()) if sidecar.exists() else {}
    return records, meta
