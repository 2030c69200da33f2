"""Binary serialization of sampled instances.

Layout (little-endian throughout):
  magic "GHCM" | version u16 | spec JSON length u32 | spec JSON (UTF-8)
  | seed u64 | vertex count u64 | positions f64 (N*d) | labels i64 (N)
  | pair count u64 | pairs u32 (M*2) | values f64 (M)
"""
from __future__ import annotations

import json
import struct
from typing import BinaryIO

import numpy as np

from .errors import DomainError
from .geometry import Instance
from .model import ModelSpec

MAGIC = b"GHCM"
VERSION = 1


def write_instance(fh: BinaryIO, instance: Instance) -> None:
    spec_json = json.dumps(instance.spec.to_json()).encode("utf-8")
    fh.write(MAGIC)
    fh.write(struct.pack("<H", VERSION))
    fh.write(struct.pack("<I", len(spec_json)))
    fh.write(spec_json)
    fh.write(struct.pack("<Q", instance.seed))
    n = instance.num_vertices
    fh.write(struct.pack("<Q", n))
    fh.write(np.ascontiguousarray(instance.positions, dtype="<f8").tobytes())
    fh.write(np.ascontiguousarray(instance.truth, dtype="<i8").tobytes())
    m = instance.pairs.shape[0]
    fh.write(struct.pack("<Q", m))
    fh.write(np.ascontiguousarray(instance.pairs, dtype="<u4").tobytes())
    fh.write(np.ascontiguousarray(instance.values, dtype="<f8").tobytes())


def save_instance(path: str, instance: Instance) -> None:
    with open(path, "wb") as fh:
        write_instance(fh, instance)


def _read_exact(fh: BinaryIO, count: int) -> bytes:
    data = fh.read(count)
    if len(data) != count:
        raise DomainError("truncated instance file")
    return data


def read_instance(fh: BinaryIO) -> Instance:
    if _read_exact(fh, 4) != MAGIC:
        raise DomainError("bad magic: not an instance file")
    (version,) = struct.unpack("<H", _read_exact(fh, 2))
    if version != VERSION:
        raise DomainError(f"unsupported instance format version {version}")
    (spec_len,) = struct.unpack("<I", _read_exact(fh, 4))
    spec = ModelSpec.from_json(json.loads(_read_exact(fh, spec_len).decode("utf-8")))
    (seed,) = struct.unpack("<Q", _read_exact(fh, 8))
    (n,) = struct.unpack("<Q", _read_exact(fh, 8))
    d = spec.d
    positions = np.frombuffer(_read_exact(fh, 8 * n * d), dtype="<f8").reshape(n, d)
    truth = np.frombuffer(_read_exact(fh, 8 * n), dtype="<i8").copy()
    (m,) = struct.unpack("<Q", _read_exact(fh, 8))
    pairs = (
        np.frombuffer(_read_exact(fh, 4 * m * 2), dtype="<u4")
        .reshape(m, 2)
        .astype(np.int64)
    )
    values = np.frombuffer(_read_exact(fh, 8 * m), dtype="<f8").copy()
    return Instance(
        spec=spec,
        positions=positions.copy(),
        truth=truth,
        pairs=pairs,
        values=values,
        seed=int(seed),
    )


def load_instance(path: str) -> Instance:
    with open(path, "rb") as fh:
        return read_instance(fh)


def instance_to_json(instance: Instance) -> dict:
    """JSON form of an instance; intended for small n."""
    return {
        "spec": instance.spec.to_json(),
        "seed": instance.seed,
        "positions": instance.positions.tolist(),
        "labels": instance.truth.tolist(),
        "pairs": instance.pairs.tolist(),
        "values": instance.values.tolist(),
    }


def instance_from_json(doc: dict) -> Instance:
    spec = ModelSpec.from_json(doc["spec"])
    return Instance(
        spec=spec,
        positions=np.asarray(doc["positions"], dtype=np.float64).reshape(-1, spec.d),
        truth=np.asarray(doc["labels"], dtype=np.int64),
        pairs=np.asarray(doc["pairs"], dtype=np.int64).reshape(-1, 2),
        values=np.asarray(doc["values"], dtype=np.float64),
        seed=int(doc["seed"]),
    )
