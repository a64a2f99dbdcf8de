"""Layers of the countermeasure network and the ModelGraph that ties them together.

The embedding network is a small residual network over time (1-d
convolutions, the 60 LFCC dims as input channels) followed by attentive
pooling and a linear projection. Normalisation is per item, so an
utterance's embedding never depends on what else is in the batch.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from ..errors import ShapeMismatch, ValidationError
from . import autograd as ag
from .autograd import Tensor


def _uniform(rng, shape, fan_in, gain=1.0):
    bound = gain * np.sqrt(3.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Layer:
    """Holds named parameters and sub-layers; subclasses implement __call__."""

    def __init__(self):
        self._params = {}
        self._children = {}

    def param(self, name, value) -> Tensor:
        t = Tensor(value, requires_grad=True, name=name)
        self._params[name] = t
        return t

    def child(self, name, layer):
        self._children[name] = layer
        return layer

    def named_parameters(self, prefix=""):
        out = {}
        for name, t in self._params.items():
            out[prefix + name] = t
        for name, layer in self._children.items():
            out.update(layer.named_parameters(f"{prefix}{name}."))
        return out


class Linear(Layer):
    def __init__(self, n_in, n_out, rng, gain=1.0):
        super().__init__()
        self.weight = self.param("weight", _uniform(rng, (n_in, n_out), n_in, gain))
        self.bias = self.param("bias", np.zeros(n_out))

    def __call__(self, x):
        return ag.matmul(x, self.weight) + self.bias


class Conv1d(Layer):
    def __init__(self, c_in, c_out, kernel, rng, stride=1, bias=False):
        super().__init__()
        self.stride = stride
        self.padding = kernel // 2
        self.weight = self.param("weight", _uniform(rng, (c_out, c_in, kernel), c_in * kernel, np.sqrt(2.0)))
        self.bias = self.param("bias", np.zeros(c_out)) if bias else None

    def __call__(self, x):
        return ag.conv1d(x, self.weight, self.bias, self.stride, self.padding)


class ItemNorm(Layer):
    def __init__(self, channels, eps=1e-5):
        super().__init__()
        self.eps = eps
        self.gamma = self.param("gamma", np.ones(channels))
        self.beta = self.param("beta", np.zeros(channels))

    def __call__(self, x):
        return ag.item_norm(x, self.gamma, self.beta, self.eps)


class ResBlock(Layer):
    def __init__(self, c_in, c_out, kernel, stride, rng):
        super().__init__()
        self.conv1 = self.child("conv1", Conv1d(c_in, c_out, kernel, rng, stride))
        self.norm1 = self.child("norm1", ItemNorm(c_out))
        self.conv2 = self.child("conv2", Conv1d(c_out, c_out, kernel, rng))
        self.norm2 = self.child("norm2", ItemNorm(c_out))
        self.shortcut = None
        if stride != 1 or c_in != c_out:
            self.shortcut = self.child("short", Conv1d(c_in, c_out, 1, rng, stride))
            self.short_norm = self.child("short_norm", ItemNorm(c_out))

    def __call__(self, x):
        h = ag.relu(self.norm1(self.conv1(x)))
        h = self.norm2(self.conv2(h))
        skip = x if self.shortcut is None else self.short_norm(self.shortcut(x))
        return ag.relu(h + skip)


class AttentivePool(Layer):
    """Softmax-over-time weighted average of frame vectors.

    score_t = v . tanh(W h_t + b); input (B, C, T), output (B, C).
    """

    def __init__(self, channels, attn_dim, rng):
        super().__init__()
        self.W = self.param("W", _uniform(rng, (channels, attn_dim), channels))
        self.b = self.param("b", np.zeros(attn_dim))
        self.v = self.param("v", _uniform(rng, (attn_dim,), attn_dim))

    def weights(self, h):
        ht = ag.transpose(h, (0, 2, 1))
        scores = ag.matmul(ag.tanh(ag.matmul(ht, self.W) + self.b), self.v)
        return ht, ag.softmax(scores, axis=1)

    def __call__(self, h):
        ht, w = self.weights(h)
        bsz, t = w.shape
        return ag.tsum(ht * ag.reshape(w, (bsz, t, 1)), axis=1)


def attentive_pool(h, W, b, v):
    """Functional form on a single (T, C) map with plain arrays."""
    h = np.asarray(h, dtype=np.float64)
    scores = np.tanh(h @ W + b) @ v
    e = np.exp(scores - scores.max())
    w = e / e.sum()
    return w @ h


@dataclass(frozen=True)
class ModelConfig:
    in_dims: int = 60
    widths: tuple = (16, 32, 64)
    kernel: int = 3
    embedding_dim: int = 64
    attn_dim: int | None = None
    n_channels: int = 0
    ch_hidden: int = 64

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        if self.embedding_dim < 2:
            raise ValidationError("embedding_dim must be >= 2")
        if self.n_channels == 1 or self.n_channels < 0:
            raise ValidationError("n_channels must be 0 (no channel head) or >= 2")
        if not self.widths:
            raise ValidationError("need at least one residual block")

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ModelConfig":
        d = json.loads(text)
        d["widths"] = tuple(d["widths"])
        return cls(**d)

    def fingerprint(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()[:16]


class Embedder(Layer):
    def __init__(self, cfg: ModelConfig, rng):
        super().__init__()
        w0 = cfg.widths[0]
        self.stem = self.child("stem", Conv1d(cfg.in_dims, w0, cfg.kernel, rng))
        self.stem_norm = self.child("stem_norm", ItemNorm(w0))
        self.blocks = []
        c = w0
        for i, w in enumerate(cfg.widths):
            stride = 1 if i == 0 else 2
            self.blocks.append(self.child(f"block{i}", ResBlock(c, w, cfg.kernel, stride, rng)))
            c = w
        self.pool = self.child("pool", AttentivePool(c, cfg.attn_dim or c, rng))
        self.proj = self.child("proj", Linear(c, cfg.embedding_dim, rng))

    def __call__(self, x):
        h = ag.relu(self.stem_norm(self.stem(x)))
        for blk in self.blocks:
            h = blk(h)
        return self.proj(self.pool(h))


class ChannelHead(Layer):
    """Two fully connected layers mapping embeddings to channel logits."""

    def __init__(self, embedding_dim, hidden, n_channels, rng):
        super().__init__()
        self.fc1 = self.child("fc1", Linear(embedding_dim, hidden, rng, np.sqrt(2.0)))
        self.fc2 = self.child("fc2", Linear(hidden, n_channels, rng))

    def __call__(self, e):
        return self.fc2(ag.relu(self.fc1(e)))


class ModelGraph:
    """Embedding network (theta_e), CM direction (theta_cm), channel head (theta_ch).

    Parameters are seeded per group so that adding a channel head never
    changes the initial embedder or CM weights for a given seed.
    """

    def __init__(self, cfg: ModelConfig = ModelConfig(), seed: int = 0, grl_lambda: float = 0.0):
        self.cfg = cfg
        self.seed = seed
        self.grl_lambda = grl_lambda
        self.embedder = Embedder(cfg, np.random.default_rng([seed, 0]))
        rng_cm = np.random.default_rng([seed, 1])
        self.cm_w = Tensor(rng_cm.standard_normal(cfg.embedding_dim), requires_grad=True, name="cm.w")
        self.ch_head = None
        if cfg.n_channels:
            self.ch_head = ChannelHead(cfg.embedding_dim, cfg.ch_hidden, cfg.n_channels,
                                       np.random.default_rng([seed, 2]))

    def named_parameters(self) -> dict:
        out = self.embedder.named_parameters("embedder.")
        out["cm.w"] = self.cm_w
        if self.ch_head is not None:
            out.update(self.ch_head.named_parameters("ch."))
        return out

    def group(self, name: str) -> dict:
        """Parameters of one group: 'embedder', 'cm' or 'ch'."""
        return {k: v for k, v in self.named_parameters().items() if k.startswith(name + ".")}

    def zero_grad(self):
        for p in self.named_parameters().values():
            p.grad = None

    def _as_input(self, batch) -> Tensor:
        if isinstance(batch, Tensor):
            if batch.ndim != 3 or batch.shape[2] != self.cfg.in_dims:
                raise ShapeMismatch(f"expected (batch, frames, {self.cfg.in_dims}) features, got {batch.shape}")
            return ag.transpose(batch, (0, 2, 1))
        x = np.asarray(batch, dtype=np.float64)
        if x.ndim == 2:
            x = x[None]
        if x.ndim != 3 or x.shape[2] != self.cfg.in_dims:
            raise ShapeMismatch(f"expected (batch, frames, {self.cfg.in_dims}) features, got {x.shape}")
        return Tensor(np.ascontiguousarray(x.transpose(0, 2, 1)))

    def embed(self, batch) -> Tensor:
        """Embeddings for a (B, frames, dims) feature batch."""
        return self.embedder(self._as_input(batch))

    def cm_scores(self, emb: Tensor) -> Tensor:
        return ag.matmul(ag.l2_normalize(emb, axis=1), ag.l2_normalize(self.cm_w, axis=0))

    def channel_logits(self, emb: Tensor, reverse: bool = False, lam: float | None = None) -> Tensor:
        if self.ch_head is None:
            raise ValidationError("model has no channel head")
        if reverse:
            emb = ag.grl(emb, self.grl_lambda if lam is None else lam)
        return self.ch_head(emb)

    def state_dict(self) -> dict:
        return {k: v.data.copy() for k, v in self.named_parameters().items()}

    def load_state_dict(self, state: dict):
        params = self.named_parameters()
        missing = set(params) - set(state)
        extra = set(state) - set(params)
        if missing or extra:
            raise ShapeMismatch(f"state mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
        for k, t in params.items():
            arr = np.asarray(state[k], dtype=np.float64)
            if arr.shape != t.shape:
                raise ShapeMismatch(f"{k}: shape {arr.shape} != {t.shape}")
            t.data = arr.copy()

    def n_parameters(self) -> int:
        return sum(p.data.size for p in self.named_parameters().values())
