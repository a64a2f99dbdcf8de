"""Checkpoint snapshots and the binary checkpoint file.

Layout (little-endian)::

    b"SPCK"  u32 version
    u32 len, fingerprint (utf-8)
    u32 len, model config JSON (utf-8)
    u32 epoch, f64 validation loss
    u32 n_params, then per parameter:
        u32 name_len, name, u32 ndim, ndim x u32 dims, <f4 values

Parameters are rounded to float32 when the snapshot is taken, so a
loaded checkpoint reproduces the snapshot's forward pass exactly.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from ..errors import ValidationError
from .layers import ModelConfig, ModelGraph

MAGIC = b"SPCK"
VERSION = 1


class CheckpointError(ValidationError):
    pass


@dataclass
class Checkpoint:
    config: ModelConfig
    params: dict
    epoch: int = 0
    val_loss: float = float("nan")
    grl_lambda: float = 0.0

    @property
    def fingerprint(self) -> str:
        return self.config.fingerprint()

    @classmethod
    def from_model(cls, g: ModelGraph, epoch: int = 0, val_loss: float = float("nan")) -> "Checkpoint":
        params = {k: v.astype(np.float32).astype(np.float64) for k, v in g.state_dict().items()}
        return cls(g.cfg, params, epoch, float(val_loss), g.grl_lambda)

    def to_model(self) -> ModelGraph:
        g = ModelGraph(self.config, seed=0, grl_lambda=self.grl_lambda)
        g.load_state_dict(self.params)
        return g

    def save(self, path) -> None:
        def blob(s: str) -> bytes:
            b = s.encode("utf-8")
            return struct.pack("<I", len(b)) + b

        out = [MAGIC, struct.pack("<I", VERSION), blob(self.fingerprint), blob(self.config.to_json()),
               struct.pack("<Id", int(self.epoch), float(self.val_loss)),
               struct.pack("<I", len(self.params))]
        for name, arr in self.params.items():
            arr = np.asarray(arr, dtype="<f4")
            out.append(blob(name))
            out.append(struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
            out.append(np.ascontiguousarray(arr).tobytes())
        with open(path, "wb") as fh:
            fh.write(b"".join(out))

    @classmethod
    def load(cls, path) -> "Checkpoint":
        with open(path, "rb") as fh:
            data = fh.read()
        pos = 0

        def take(n):
            nonlocal pos
            if pos + n > len(data):
                raise CheckpointError(f"{path}: truncated checkpoint")
            chunk = data[pos : pos + n]
            pos += n
            return chunk

        def u32():
            return struct.unpack("<I", take(4))[0]

        def text():
            return take(u32()).decode("utf-8")

        if take(4) != MAGIC:
            raise CheckpointError(f"{path}: not a checkpoint file")
        version = u32()
        if version != VERSION:
            raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
        fingerprint = text()
        config = ModelConfig.from_json(text())
        if config.fingerprint() != fingerprint:
            raise CheckpointError(f"{path}: config fingerprint mismatch")
        epoch, val_loss = struct.unpack("<Id", take(12))
        params = {}
        for _ in range(u32()):
            name = text()
            ndim = u32()
            shape = struct.unpack(f"<{ndim}I", take(4 * ndim))
            n = int(np.prod(shape)) if ndim else 1
            params[name] = np.frombuffer(take(4 * n), dtype="<f4").reshape(shape).astype(np.float64)
        return cls(config, params, epoch, val_loss)
