"""Binary checkpoint container.

Layout (all integers little-endian)::

    8 bytes   magic  b"IGCRNCK\\0"
    4 bytes   uint32 format version
    8 bytes   uint64 header length H
    H bytes   UTF-8 JSON header (sorted keys, no whitespace)
    ...       raw array blobs, concatenated in header order

The header holds the model config, step/epoch counters, optimizer
hyper-parameters, batch-norm flags, free-form ``extra`` metadata and one
entry ``{"name", "dtype", "shape", "offset", "nbytes"}`` per blob; offsets
are relative to the start of the blob section. Blob names are
``param/<name>``, ``adam_m/<name>``, ``adam_v/<name>``,
``bn_mean/<name>`` and ``bn_var/<name>``.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .model import IGCRN, ModelConfig
from .nn import ConfigError
from .optim import Adam

MAGIC = b"IGCRNCK\0"
VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    config: ModelConfig
    arrays: dict[str, np.ndarray]
    step: int = 0
    epoch: int = 0
    optimizer: dict | None = None
    bn_flags: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)


def _le(a: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(a, dtype=a.dtype.newbyteorder("<"))


def save_checkpoint(path: str | os.PathLike, model: IGCRN, optimizer: Adam | None = None, epoch: int = 0,
                    extra: dict | None = None) -> None:
    arrays: dict[str, np.ndarray] = {}
    for name, t in model.params.items():
        arrays[f"param/{name}"] = t.data
    bn_flags = {}
    for name, st in model.params.bn_items():
        arrays[f"bn_mean/{name}"] = st.running_mean
        arrays[f"bn_var/{name}"] = st.running_var
        bn_flags[name] = {"initialized": bool(st.initialized), "momentum": st.momentum, "eps": st.eps}
    opt_state = None
    if optimizer is not None:
        opt_state = optimizer.state()
        for name in optimizer.m:
            arrays[f"adam_m/{name}"] = optimizer.m[name]
            arrays[f"adam_v/{name}"] = optimizer.v[name]
    entries, blobs, offset = [], [], 0
    for name, a in arrays.items():
        le = _le(a)
        raw = le.tobytes()
        entries.append({"name": name, "dtype": le.dtype.str, "shape": list(le.shape),
                        "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    header = {
        "config": model.cfg.to_dict(),
        "step": optimizer.step_count if optimizer is not None else 0,
        "epoch": int(epoch),
        "optimizer": opt_state,
        "bn": bn_flags,
        "extra": extra or {},
        "entries": entries,
    }
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    tmp = f"{os.fspath(path)}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQ", VERSION, len(hbytes)))
        fh.write(hbytes)
        for raw in blobs:
            fh.write(raw)
    os.replace(tmp, path)


def read_checkpoint(path: str | os.PathLike) -> Checkpoint:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    version, hlen = struct.unpack("<IQ", data[8:20])
    if version != VERSION:
        raise CheckpointError(f"{path}: format version {version}, this build reads {VERSION}")
    header = json.loads(data[20:20 + hlen].decode("utf-8"))
    base = 20 + hlen
    arrays = {}
    for e in header["entries"]:
        start = base + e["offset"]
        if start + e["nbytes"] > len(data):
            raise CheckpointError(f"{path}: truncated blob {e['name']}")
        buf = data[start:start + e["nbytes"]]
        arrays[e["name"]] = np.frombuffer(buf, dtype=np.dtype(e["dtype"])).reshape(e["shape"]).copy()
    return Checkpoint(ModelConfig.from_dict(header["config"]), arrays, header["step"], header["epoch"],
                      header["optimizer"], header["bn"], header["extra"])


def restore(ckpt: Checkpoint, model: IGCRN, optimizer: Adam | None = None) -> None:
    """Copy checkpoint state into an existing model (and optimizer)."""
    if ckpt.config != model.cfg:
        raise ConfigError(f"checkpoint config {ckpt.config.to_dict()} does not match model {model.cfg.to_dict()}")
    for name, t in model.params.items():
        a = ckpt.arrays.get(f"param/{name}")
        if a is None or a.shape != t.shape:
            raise CheckpointError(f"checkpoint lacks parameter {name} with shape {t.shape}")
        t.data = a.astype(t.dtype)
    for name, st in model.params.bn_items():
        st.running_mean = ckpt.arrays[f"bn_mean/{name}"].astype(st.running_mean.dtype)
        st.running_var = ckpt.arrays[f"bn_var/{name}"].astype(st.running_var.dtype)
        flags = ckpt.bn_flags[name]
        st.initialized = bool(flags["initialized"])
        st.momentum = float(flags["momentum"])
        st.eps = float(flags["eps"])
    if optimizer is not None:
        if ckpt.optimizer is None:
            raise CheckpointError("checkpoint carries no optimizer state")
        m = {n: ckpt.arrays[f"adam_m/{n}"] for n in optimizer.m}
        v = {n: ckpt.arrays[f"adam_v/{n}"] for n in optimizer.v}
        optimizer.load_state(ckpt.optimizer, m, v)


def load_model(path: str | os.PathLike, expected: ModelConfig | None = None) -> tuple[IGCRN, Checkpoint]:
    ckpt = read_checkpoint(path)
    if expected is not None and expected != ckpt.config:
        raise ConfigError(f"checkpoint config {ckpt.config.to_dict()} does not match {expected.to_dict()}")
    dtype = ckpt.arrays[next(k for k in ckpt.arrays if k.startswith("param/"))].dtype
    model = IGCRN(ckpt.config, seed=0, dtype=dtype.newbyteorder("="))
    restore(ckpt, model)
    return model, ckpt
