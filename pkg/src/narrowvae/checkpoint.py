"""Binary checkpoints.

Layout (all integers little-endian)::

    8 bytes   magic b"NVAECKPT"
    u32       format version
    u32       record count
    records:  u32 name length, name (utf-8), u32 rank, u32 extent * rank,
              float32 payload (little-endian, C order)
    u32       metadata length, metadata (utf-8 JSON: GECO scalars, config)

Parameters are always stored as float32; float64 models lose precision.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import TrainConfig
from .gating import GateVector
from .geco import GecoState, make_lambda
from .vae import VaeModel

MAGIC = b"NVAECKPT"
VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    params: dict[str, np.ndarray]
    geco: dict
    config: TrainConfig
    version: int = VERSION


def save_checkpoint(path, model: VaeModel, gates: GateVector, state: GecoState, config: TrainConfig) -> None:
    records = [(p.name, p.data) for p in model.parameters()]
    records.append(("gamma", gates.gamma.data))
    records.append(("lambda", state.lambda_raw.data))

    out = bytearray(MAGIC)
    out += struct.pack("<II", VERSION, len(records))
    for name, arr in records:
        encoded = name.encode("utf-8")
        out += struct.pack("<I", len(encoded)) + encoded
        out += struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape)
        out += np.ascontiguousarray(arr, dtype="<f4").tobytes()
    meta = {
        "geco": {
            "tau": state.tau,
            "alpha": state.alpha,
            "lambda_min": state.lambda_min,
            "lambda_max": state.lambda_max,
            "c_ma": state.c_ma,
            "hit": state.hit,
            "batch_index": state.batch_index,
        },
        "k": gates.k,
        "config": config.to_dict(),
    }
    blob = json.dumps(meta).encode("utf-8")
    out += struct.pack("<I", len(blob)) + blob

    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(bytes(out))
    tmp.replace(path)


def load_checkpoint(path) -> Checkpoint:
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    pos = 8

    def take(fmt: str):
        nonlocal pos
        size = struct.calcsize(fmt)
        if pos + size > len(raw):
            raise CheckpointError(f"{path}: truncated at byte {pos}")
        vals = struct.unpack_from(fmt, raw, pos)
        pos += size
        return vals

    version, count = take("<II")
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    params = {}
    for _ in range(count):
        (name_len,) = take("<I")
        name = raw[pos : pos + name_len].decode("utf-8")
        pos += name_len
        (rank,) = take("<I")
        shape = take(f"<{rank}I")
        size = int(np.prod(shape)) if rank else 1
        if pos + 4 * size > len(raw):
            raise CheckpointError(f"{path}: record {name!r} truncated at byte {pos}")
        params[name] = np.frombuffer(raw, dtype="<f4", count=size, offset=pos).reshape(shape).astype(np.float32)
        pos += 4 * size
    (meta_len,) = take("<I")
    meta = json.loads(raw[pos : pos + meta_len].decode("utf-8"))
    meta["geco"]["k"] = meta.get("k")
    return Checkpoint(params=params, geco=meta["geco"], config=TrainConfig.from_dict(meta["config"]), version=version)


def restore(ckpt: Checkpoint) -> tuple[VaeModel, GateVector, GecoState]:
    """Rebuild model, gates and GECO state from a checkpoint."""
    cfg = ckpt.config
    dtype = np.dtype(cfg.dtype)
    input_dim = ckpt.params["encoder.0.weight"].shape[0]
    model = VaeModel(input_dim, cfg.latent_dim, cfg.hidden_layout, rng=None, dtype=dtype)
    for p in model.parameters():
        if p.name not in ckpt.params:
            raise CheckpointError(f"checkpoint lacks parameter {p.name!r}")
        stored = ckpt.params[p.name]
        if stored.shape != p.shape:
            raise CheckpointError(f"parameter {p.name!r}: stored shape {stored.shape} != model shape {p.shape}")
        p.data = stored.astype(dtype)
    gates = GateVector.create(cfg.latent_dim, k=ckpt.geco.get("k") or cfg.k, dtype=dtype)
    gates.gamma.data = ckpt.params["gamma"].astype(dtype)
    g = ckpt.geco
    state = GecoState(
        tau=g["tau"],
        alpha=g["alpha"],
        lambda_min=g["lambda_min"],
        lambda_max=g["lambda_max"],
        lambda_raw=make_lambda(0.0, dtype),
        c_ma=g["c_ma"],
        hit=g["hit"],
        batch_index=g["batch_index"],
    )
    state.lambda_raw.data = ckpt.params["lambda"].astype(dtype)
    return model, gates, state
