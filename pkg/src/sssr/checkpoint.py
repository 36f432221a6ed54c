"""Versioned binary checkpoints.

Layout (little-endian):

  magic "JSSU" | version u32
  meta blob:   u32 length | UTF-8 JSON {"config": ..., "epoch": ..., "phase": ...,
                                        "adam_t": ...}
  records:     u32 count | per record: u16 path length, UTF-8 path,
               u8 ndim, ndim x u32 dims, float32 payload
  rng blob:    u32 length | UTF-8 JSON bit-generator state ("" when absent)

Model parameters are stored under their canonical paths; optimizer moments,
when present, under "optim.m/<path>" and "optim.v/<path>".  Loading a saved
state and resuming reproduces uninterrupted training bit-exactly.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"JSSU"
VERSION = 1


class CheckpointError(ValueError):
    """Malformed checkpoint payload."""


@dataclass
class CheckpointData:
    params: dict
    config: dict
    epoch: int
    phase: int
    rng_state: dict | None = None
    adam_t: int | None = None
    adam_m: dict = field(default_factory=dict)
    adam_v: dict = field(default_factory=dict)


def _write_record(fh, path: str, arr: np.ndarray):
    encoded = path.encode("utf-8")
    fh.write(struct.pack("<H", len(encoded)))
    fh.write(encoded)
    arr = np.ascontiguousarray(arr, dtype="<f4")
    fh.write(struct.pack("<B", arr.ndim))
    for dim in arr.shape:
        fh.write(struct.pack("<I", dim))
    fh.write(arr.tobytes())


def save_checkpoint(path, model, config: dict, epoch: int, phase: int = 1,
                    rng: np.random.Generator | None = None,
                    adam=None, params: dict | None = None):
    """Serialize model (or an explicit parameter snapshot), optimizer moments,
    and the data-order RNG state."""
    if params is None:
        params = {p: t.data for p, t in model.named_params()}
    meta = {"config": config, "epoch": epoch, "phase": phase,
            "adam_t": None if adam is None else adam.t}
    records = list(params.items())
    if adam is not None:
        records += [(f"optim.m/{p}", a) for p, a in adam.m.items()]
        records += [(f"optim.v/{p}", a) for p, a in adam.v.items()]

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        blob = json.dumps(meta).encode("utf-8")
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(struct.pack("<I", len(records)))
        for name, arr in records:
            _write_record(fh, name, np.asarray(arr))
        rng_blob = b""
        if rng is not None:
            rng_blob = json.dumps(rng.bit_generator.state).encode("utf-8")
        fh.write(struct.pack("<I", len(rng_blob)))
        fh.write(rng_blob)


class _Reader:
    def __init__(self, raw: bytes, path):
        self.raw = raw
        self.off = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.off + n > len(self.raw):
            raise CheckpointError(f"{self.path}: truncated payload")
        chunk = self.raw[self.off:self.off + n]
        self.off += n
        return chunk

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]


def load_checkpoint(path) -> CheckpointData:
    raw = Path(path).read_bytes()
    if len(raw) < 4 or raw[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic")
    reader = _Reader(raw, path)
    reader.take(4)
    version = reader.u32()
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    meta = json.loads(reader.take(reader.u32()).decode("utf-8"))

    count = reader.u32()
    params, adam_m, adam_v = {}, {}, {}
    for _ in range(count):
        (plen,) = struct.unpack("<H", reader.take(2))
        name = reader.take(plen).decode("utf-8")
        (ndim,) = struct.unpack("<B", reader.take(1))
        shape = tuple(reader.u32() for _ in range(ndim))
        size = int(np.prod(shape, dtype=np.int64)) if shape else 1
        arr = np.frombuffer(reader.take(4 * size), dtype="<f4").reshape(shape).copy()
        if name.startswith("optim.m/"):
            adam_m[name[len("optim.m/"):]] = arr
        elif name.startswith("optim.v/"):
            adam_v[name[len("optim.v/"):]] = arr
        else:
            params[name] = arr

    rng_blob = reader.take(reader.u32())
    rng_state = json.loads(rng_blob.decode("utf-8")) if rng_blob else None
    return CheckpointData(params=params, config=meta["config"],
                          epoch=int(meta["epoch"]), phase=int(meta.get("phase", 1)),
                          rng_state=rng_state, adam_t=meta.get("adam_t"),
                          adam_m=adam_m, adam_v=adam_v)


def apply_params(model, params: dict):
    """Load a parameter dict into a model; paths and shapes must match."""
    model_paths = dict(model.named_params())
    missing = set(model_paths) - set(params)
    extra = set(params) - set(model_paths)
    if missing or extra:
        raise CheckpointError(
            f"parameter mismatch: missing {sorted(missing)[:3]}, extra {sorted(extra)[:3]}")
    for path, tensor in model_paths.items():
        arr = params[path]
        if tuple(arr.shape) != tuple(tensor.data.shape):
            raise CheckpointError(f"{path}: shape {arr.shape} != {tensor.data.shape}")
        tensor.data = np.asarray(arr, dtype=np.float32).copy()


def restore_rng(state: dict) -> np.random.Generator:
    gen = np.random.default_rng()
    gen.bit_generator.state = state
    return gen
