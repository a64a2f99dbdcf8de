"""Training of the four strategies: vanilla, aug, mt_aug and adv_aug.

- vanilla: original training data, OC-Softmax only
- aug: original plus seen channel shifts, OC-Softmax only
- mt_aug: aug data, OC-Softmax + lambda * channel cross-entropy
- adv_aug: aug data, channel cross-entropy through a gradient reversal layer

Learning rate is lr0 * 0.5 ** (epoch // 10). After every epoch the CM
loss on the dev view is measured and the checkpoint with the lowest value
is kept (earliest epoch wins ties).
"""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from .audio_io import ORIG_CHANNEL, Manifest
from .dsp import fix_length
from .errors import (
    EmptyDev,
    InsufficientData,
    MissingChannel,
    MissingFeature,
    NonFiniteLoss,
    ValidationError,
)
from .losses import (
    CompositeWeights,
    OcSoftmaxParams,
    adv_objective,
    cross_entropy,
    mt_objective,
    oc_softmax,
)
from .neuro import Adam, SGD, Checkpoint, ModelConfig, ModelGraph
from .neuro import autograd as ag
from .neuro.layers import Linear

log = logging.getLogger(__name__)

STRATEGIES = ("vanilla", "aug", "mt_aug", "adv_aug")
DEFAULT_SEEN = tuple(f"CH{i:02d}" for i in range(1, 11))
DEFAULT_UNSEEN = ("CH11", "CH12")


@dataclass
class TrainConfig:
    strategy: str = "vanilla"
    epochs: int = 100
    lr0: float = 0.0003
    decay_every: int = 10
    decay_factor: float = 0.5
    batch_size: int = 32
    target_frames: int = 750
    lam: float = 0.05
    seed: int = 0
    n_channels: int = 11
    optimizer: str = "adam"
    dev_mode: str = "both"  # "both": orig + seen-channel dev data; "orig": original dev only
    grl_ramp: bool = False
    widths: tuple = (16, 32, 64)
    embedding_dim: int = 64
    ch_hidden: int = 64
    alpha: float = 20.0
    m_bonafide: float = 0.9
    m_spoof: float = 0.2

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValidationError(f"strategy must be one of {STRATEGIES}, got {self.strategy!r}")
        if self.epochs < 1 or self.batch_size < 1 or self.target_frames < 1:
            raise ValidationError("epochs, batch_size and target_frames must be >= 1")
        if not self.lr0 > 0:
            raise ValidationError("lr0 must be positive")
        if self.lam < 0:
            raise ValidationError("lambda must be nonnegative")
        if self.optimizer not in ("adam", "sgd"):
            raise ValidationError("optimizer must be adam or sgd")
        if self.dev_mode not in ("both", "orig"):
            raise ValidationError("dev_mode must be 'both' or 'orig'")
        self.widths = tuple(int(w) for w in self.widths)

    @property
    def uses_channels(self) -> bool:
        return self.strategy in ("mt_aug", "adv_aug")

    @property
    def uses_sim(self) -> bool:
        return self.strategy != "vanilla"

    def model_config(self) -> ModelConfig:
        return ModelConfig(widths=self.widths, embedding_dim=self.embedding_dim,
                           n_channels=self.n_channels if self.uses_channels else 0,
                           ch_hidden=self.ch_hidden)

    def oc_params(self) -> OcSoftmaxParams:
        return OcSoftmaxParams(self.alpha, self.m_bonafide, self.m_spoof)

    def replace(self, **kw) -> "TrainConfig":
        d = asdict(self)
        d.update(kw)
        return TrainConfig(**d)

    @classmethod
    def from_mapping(cls, values: dict) -> "TrainConfig":
        return cls(**coerce_fields(cls, values))


def coerce_fields(cls, values: dict) -> dict:
    """Convert ``key = value`` strings to the field types of a dataclass."""
    types = {f.name: f.default for f in fields(cls)}
    out = {}
    for k, v in values.items():
        if k not in types:
            raise ValidationError(f"unknown config key {k!r}")
        default = types[k]
        if not isinstance(v, str):
            out[k] = v
            continue
        try:
            if isinstance(default, bool):
                if v.lower() not in ("true", "false", "1", "0", "yes", "no"):
                    raise ValueError("expected a boolean")
                out[k] = v.lower() in ("true", "1", "yes")
            elif isinstance(default, (int, float)):
                out[k] = type(default)(v)
            elif isinstance(default, tuple):
                cast = type(default[0]) if default else str
                out[k] = tuple(cast(x) for x in v.replace(",", " ").split())
            else:
                out[k] = v
        except ValueError as e:
            raise ValidationError(f"{k} = {v!r}: {e}") from None
    return out


@dataclass
class TrainHistory:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    lr: list = field(default_factory=list)
    best_epoch: int = -1

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("epoch,train_loss,val_loss,lr\n")
            for e, (t, v, lr) in enumerate(zip(self.train_loss, self.val_loss, self.lr)):
                fh.write(f"{e},{t:.8f},{v:.8f},{lr:.10g}\n")


def lr_schedule(epoch: int, cfg: TrainConfig) -> float:
    if epoch < 0:
        raise ValidationError("epoch must be >= 0")
    return cfg.lr0 * cfg.decay_factor ** (epoch // cfg.decay_every)


def channel_label_map(seen: Sequence[str]) -> dict:
    """``orig`` -> 0, seen channels -> 1..len(seen) in the given order."""
    labels = {ORIG_CHANNEL: 0}
    for i, c in enumerate(seen, start=1):
        labels[c] = i
    return labels


def validate_view(view: Manifest, seen: Sequence[str]) -> None:
    allowed = {ORIG_CHANNEL, *seen}
    leaked = sorted({r.channel_id for r in view} - allowed)
    if leaked:
        raise MissingChannel(f"channels {leaked} are not seen channels and must not be used for training")


def build_training_view(orig: Manifest, sim: Manifest | None, strategy: str,
                        seen: Sequence[str] = DEFAULT_SEEN) -> tuple:
    """Return (view manifest, channel label map)."""
    if strategy not in STRATEGIES:
        raise ValidationError(f"unknown strategy {strategy!r}")
    labels = channel_label_map(seen)
    if strategy == "vanilla":
        view = Manifest([r for r in orig if r.channel_id == ORIG_CHANNEL], orig.split)
        return view, labels
    if sim is None:
        raise MissingChannel(f"strategy {strategy} needs channel-simulated data")
    available = set(sim.channels)
    missing = [c for c in seen if c not in available]
    if missing:
        raise MissingChannel(f"simulated data lacks seen channels {missing}")
    seen_set = set(seen)
    view = Manifest(list(orig.records) + [r for r in sim if r.channel_id in seen_set], orig.split)
    validate_view(view, seen)
    return view, labels


def build_dev_view(orig_dev: Manifest, sim_dev: Manifest | None, cfg: TrainConfig,
                   seen: Sequence[str] = DEFAULT_SEEN) -> Manifest:
    if not cfg.uses_sim or cfg.dev_mode == "orig" or sim_dev is None:
        return Manifest([r for r in orig_dev if r.channel_id == ORIG_CHANNEL], orig_dev.split)
    view, _ = build_training_view(orig_dev, sim_dev, "aug", seen)
    return view


def _feature(features, tid):
    try:
        return features[tid]
    except KeyError:
        raise MissingFeature(f"no features for trial {tid}") from None


class BatchSampler:
    """Yields batches of view indices.

    One epoch visits every record of the view once in a seeded random
    order, so the channel of each draw is uniform over the view.
    """

    def __init__(self, n_records: int, batch_size: int, rng: np.random.Generator):
        self.n = n_records
        self.batch_size = batch_size
        self.rng = rng

    def epoch(self):
        order = self.rng.permutation(self.n)
        for i in range(0, self.n, self.batch_size):
            yield order[i : i + self.batch_size]


def make_batch(records, features, target_frames, rng=None) -> np.ndarray:
    return np.stack([fix_length(_feature(features, r.trial_id), target_frames, rng) for r in records])


def cm_loss_on(model: ModelGraph, m: Manifest, features, target_frames: int,
               oc: OcSoftmaxParams, batch_size: int = 128) -> float:
    """Mean OC-Softmax loss over a manifest with deterministic centre crops."""
    total, n = 0.0, 0
    recs = m.records
    for i in range(0, len(recs), batch_size):
        chunk = recs[i : i + batch_size]
        x = make_batch(chunk, features, target_frames)
        keys = np.array([r.is_bonafide for r in chunk])
        loss, _ = oc_softmax(model.embed(x), keys, model.cm_w.data, oc)
        total += loss.item() * len(chunk)
        n += len(chunk)
    return total / n


def _grl_coefficient(cfg: TrainConfig, epoch: int) -> float:
    if not cfg.grl_ramp:
        return cfg.lam
    p = epoch / max(cfg.epochs - 1, 1)
    return cfg.lam * (2.0 / (1.0 + math.exp(-10.0 * p)) - 1.0)


def train(view: Manifest, dev: Manifest, cfg: TrainConfig, features, labels: dict | None = None,
          on_step=None) -> tuple:
    """Train one model; return (best Checkpoint, TrainHistory).

    ``features`` maps trial ids to (frames, 60) matrices. ``on_step`` is
    called as on_step(epoch, step, model) after each update (used by
    tests to record parameter trajectories).
    """
    if view.split != "train":
        raise ValidationError(f"training view must come from the train split, got {view.split!r}")
    if len(dev) == 0:
        raise EmptyDev("empty dev manifest")
    if dev.split != "dev":
        raise ValidationError(f"validation data must come from the dev split, got {dev.split!r}")
    if len(view) == 0:
        raise InsufficientData("empty training view")
    if cfg.uses_channels:
        labels = labels or channel_label_map(DEFAULT_SEEN)
        validate_view(view, [c for c in labels if c != ORIG_CHANNEL])
        if max(labels.values()) >= cfg.n_channels:
            raise ValidationError(f"{len(labels)} channel labels but n_channels={cfg.n_channels}")

    model = ModelGraph(cfg.model_config(), seed=cfg.seed, grl_lambda=cfg.lam)
    params = model.named_parameters()
    opt = Adam(params, lr=cfg.lr0) if cfg.optimizer == "adam" else SGD(params, lr=cfg.lr0)
    sampler = BatchSampler(len(view), cfg.batch_size, np.random.default_rng([cfg.seed, 10]))
    crop_rng = np.random.default_rng([cfg.seed, 11])
    oc = cfg.oc_params()
    weights = CompositeWeights(cfg.lam)
    records = view.records
    keys_all = np.array([r.is_bonafide for r in records])
    ch_all = np.array([labels[r.channel_id] for r in records]) if cfg.uses_channels else None

    history = TrainHistory()
    best = None
    for epoch in range(cfg.epochs):
        opt.lr = lr_schedule(epoch, cfg)
        grl_lam = _grl_coefficient(cfg, epoch)
        losses = []
        for step, idx in enumerate(sampler.epoch()):
            x = make_batch([records[i] for i in idx], features, cfg.target_frames, crop_rng)
            emb = model.embed(x)
            l_cm, _ = oc_softmax(emb, keys_all[idx], model.cm_w, oc)
            if cfg.strategy == "mt_aug":
                l_ch = cross_entropy(model.channel_logits(emb), ch_all[idx])
                total = mt_objective(l_cm, l_ch, weights)
            elif cfg.strategy == "adv_aug":
                l_ch = cross_entropy(model.channel_logits(emb, reverse=True, lam=grl_lam), ch_all[idx])
                total = adv_objective(l_cm, l_ch, CompositeWeights(grl_lam)).total
            else:
                total = l_cm
            value = total.item()
            if not np.isfinite(value):
                raise NonFiniteLoss(f"non-finite loss at epoch {epoch}, step {step} "
                                    f"(cm loss {l_cm.item()}, strategy {cfg.strategy})")
            model.zero_grad()
            total.backward()
            opt.step()
            losses.append(value)
            if on_step is not None:
                on_step(epoch, step, model)
        val = cm_loss_on(model, dev, features, cfg.target_frames, oc)
        if not np.isfinite(val):
            raise NonFiniteLoss(f"non-finite validation loss at epoch {epoch}")
        history.train_loss.append(float(np.mean(losses)))
        history.val_loss.append(val)
        history.lr.append(opt.lr)
        if best is None or val < best.val_loss:
            best = Checkpoint.from_model(model, epoch, val)
            history.best_epoch = epoch
        log.info("%s seed %d epoch %d: train %.4f val %.4f lr %.3g", cfg.strategy, cfg.seed,
                 epoch, history.train_loss[-1], val, opt.lr)
    return best, history


def embed_manifest(ckpt: Checkpoint | ModelGraph, m: Manifest, features, target_frames: int | None = None,
                   batch_size: int = 128) -> np.ndarray:
    """Embeddings for every record, in manifest order.

    With ``target_frames=None`` full-length features are used (records of
    equal length are batched together); otherwise deterministic centre
    crops / repeat padding.
    """
    model = ckpt.to_model() if isinstance(ckpt, Checkpoint) else ckpt
    feats = [_feature(features, r.trial_id) for r in m]
    if target_frames is not None:
        feats = [fix_length(f, target_frames) for f in feats]
    out = np.zeros((len(feats), model.cfg.embedding_dim))
    by_len = {}
    for i, f in enumerate(feats):
        by_len.setdefault(f.shape[0], []).append(i)
    for idxs in by_len.values():
        for j in range(0, len(idxs), batch_size):
            chunk = idxs[j : j + batch_size]
            out[chunk] = model.embed(np.stack([feats[i] for i in chunk])).data
    return out


def probe_channel_accuracy(embeddings, labels, seed: int = 0, hidden: int = 32, steps: int = 300,
                           lr: float = 0.01, test_frac: float = 0.3) -> float:
    """Held-out accuracy of a fresh 2-layer classifier predicting channel labels.

    The split is stratified per class; embeddings are standardised with
    training statistics; training is full-batch Adam for a fixed budget.
    """
    x = np.asarray(embeddings, dtype=np.float64)
    y = np.asarray(labels)
    classes, y_idx = np.unique(y, return_inverse=True)
    if classes.size < 2:
        raise InsufficientData("need at least two channel classes")
    rng = np.random.default_rng([seed, 20])
    train_idx, test_idx = [], []
    for c in range(classes.size):
        members = rng.permutation(np.flatnonzero(y_idx == c))
        n_test = int(round(test_frac * members.size))
        if n_test < 1 or n_test >= members.size:
            raise InsufficientData(f"class {classes[c]!r} has too few samples for a held-out split")
        test_idx.extend(members[:n_test])
        train_idx.extend(members[n_test:])
    train_idx, test_idx = np.array(train_idx), np.array(test_idx)

    mu = x[train_idx].mean(axis=0)
    sd = x[train_idx].std(axis=0)
    sd = np.where(sd > 1e-8, sd, 1.0)
    xs = (x - mu) / sd

    fc1 = Linear(x.shape[1], hidden, rng, np.sqrt(2.0))
    fc2 = Linear(hidden, classes.size, rng)
    params = {**fc1.named_parameters("fc1."), **fc2.named_parameters("fc2.")}
    opt = Adam(params, lr=lr)
    xt = ag.Tensor(xs[train_idx])
    for _ in range(steps):
        loss = cross_entropy(fc2(ag.relu(fc1(xt))), y_idx[train_idx])
        for p in params.values():
            p.grad = None
        loss.backward()
        opt.step()
    logits = fc2(ag.relu(fc1(ag.Tensor(xs[test_idx])))).data
    return float(np.mean(np.argmax(logits, axis=1) == y_idx[test_idx]))


def save_run(ckpt: Checkpoint, history: TrainHistory, out_dir, name: str) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / f"{name}.spck"
    ckpt.save(path)
    history.to_csv(out_dir / f"{name}_history.csv")
    return path
