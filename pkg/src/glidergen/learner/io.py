"""Checkpoint ("VSL1") and loss-history persistence."""

from __future__ import annotations

import csv
import struct
from pathlib import Path

import numpy as np

from .model import LearnerConfig, LearnerParams, param_shapes

MAGIC = b"VSL1"
_OPTIMIZERS = ("adam", "sgd")

# (name, struct code) in file order; tuples are written as three ints
_INT_FIELDS = ("global_dim", "local_count", "local_dim", "fc_width", "batch_size", "epochs",
               "checkpoint_every")
_FLOAT_FIELDS = ("learning_rate", "kl_weight", "kl_warmup", "bn_momentum", "d_max_cells")
_TRIPLES = ("resolution", "channels", "kernels", "strides")


class CheckpointError(ValueError):
    pass


def save_checkpoint(params: LearnerParams, path) -> None:
    cfg = params.config
    out = bytearray(MAGIC)
    for name in _TRIPLES:
        out += struct.pack("<3I", *getattr(cfg, name))
    for name in _INT_FIELDS:
        out += struct.pack("<I", getattr(cfg, name))
    for name in _FLOAT_FIELDS:
        out += struct.pack("<d", getattr(cfg, name))
    out += struct.pack("<IIQ", _OPTIMIZERS.index(cfg.optimizer), int(cfg.decoder_batchnorm), cfg.seed)
    wshapes, sshapes = param_shapes(cfg)
    for name in list(wshapes) + list(sshapes):
        arr = params.weights[name] if name in wshapes else params.state[name]
        out += struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
        out += np.asarray(arr, dtype="<f4").tobytes(order="C")
    Path(path).write_bytes(bytes(out))


def load_checkpoint(path) -> LearnerParams:
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a VSL1 checkpoint")
    pos = 4

    def take(fmt):
        nonlocal pos
        size = struct.calcsize(fmt)
        if pos + size > len(data):
            raise CheckpointError(f"{path}: truncated checkpoint")
        vals = struct.unpack_from(fmt, data, pos)
        pos += size
        return vals

    kw = {name: take("<3I") for name in _TRIPLES}
    kw.update({name: take("<I")[0] for name in _INT_FIELDS})
    kw.update({name: take("<d")[0] for name in _FLOAT_FIELDS})
    opt, dec_bn, seed = take("<IIQ")
    if opt >= len(_OPTIMIZERS):
        raise CheckpointError(f"{path}: unknown optimizer code {opt}")
    cfg = LearnerConfig(optimizer=_OPTIMIZERS[opt], decoder_batchnorm=bool(dec_bn), seed=seed, **kw)
    wshapes, sshapes = param_shapes(cfg)
    weights, state = {}, {}
    for name, shape in list(wshapes.items()) + list(sshapes.items()):
        (rank,) = take("<I")
        dims = take(f"<{rank}I")
        if tuple(dims) != tuple(shape):
            raise CheckpointError(f"{path}: tensor {name} has shape {dims}, expected {shape}")
        count = int(np.prod(dims))
        if pos + 4 * count > len(data):
            raise CheckpointError(f"{path}: truncated checkpoint")
        arr = np.frombuffer(data, dtype="<f4", count=count, offset=pos).reshape(dims).astype(np.float64)
        pos += 4 * count
        (weights if name in wshapes else state)[name] = arr
    if pos != len(data):
        raise CheckpointError(f"{path}: {len(data) - pos} trailing bytes")
    return LearnerParams(cfg, weights, state)


def write_loss_csv(history, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "reconstruction", "kl", "total"])
        for rec in history:
            w.writerow([rec.epoch] + [repr(float(v)) for v in (rec.reconstruction, rec.kl, rec.total)])


def read_loss_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return [{k: (int(v) if k == "epoch" else float(v)) for k, v in row.items()} for row in csv.DictReader(fh)]
