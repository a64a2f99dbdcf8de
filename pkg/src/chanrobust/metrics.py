"""EER, DET curves, per-channel statistics and score histograms.

EER convention: thresholds sweep the distinct score values in ascending
order, with a final point above the largest score. At threshold t,

    FAR(t) = #{spoof >= t} / N_spoof,   FRR(t) = #{bona fide < t} / N_bonafide.

Tied scores therefore form a single step. The EER is the point where the
piecewise-linear (FAR, FRR) path crosses FAR = FRR, linearly
interpolated between the two sweep points that bracket it.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.special import erfc

from .audio_io import Manifest
from .errors import DomainError, MissingChannel, MissingFeature, OneClassOnly, ValidationError
from .neuro import Checkpoint, ModelGraph


@dataclass
class ScoreSet:
    trial_ids: np.ndarray
    channel_ids: np.ndarray
    keys: np.ndarray
    scores: np.ndarray

    def __post_init__(self):
        self.trial_ids = np.asarray(self.trial_ids, dtype=object)
        self.channel_ids = np.asarray(self.channel_ids, dtype=object)
        self.keys = np.asarray(self.keys, dtype=object)
        self.scores = np.asarray(self.scores, dtype=np.float64)
        n = self.scores.size
        if not (self.trial_ids.size == self.channel_ids.size == self.keys.size == n):
            raise ValidationError("ScoreSet columns differ in length")
        if not np.all(np.isfinite(self.scores)):
            raise ValidationError("ScoreSet contains non-finite scores")
        bad = set(self.keys) - {"bonafide", "spoof"}
        if bad:
            raise ValidationError(f"unknown keys {sorted(bad)}")

    @classmethod
    def from_arrays(cls, bona, spoof, channel_id="orig") -> "ScoreSet":
        bona = np.asarray(bona, dtype=np.float64).ravel()
        spoof = np.asarray(spoof, dtype=np.float64).ravel()
        n = bona.size + spoof.size
        return cls(
            np.array([f"t{i}" for i in range(n)], dtype=object),
            np.array([channel_id] * n, dtype=object),
            np.array(["bonafide"] * bona.size + ["spoof"] * spoof.size, dtype=object),
            np.concatenate([bona, spoof]),
        )

    def __len__(self):
        return self.scores.size

    @property
    def bonafide(self) -> np.ndarray:
        return self.scores[self.keys == "bonafide"]

    @property
    def spoof(self) -> np.ndarray:
        return self.scores[self.keys == "spoof"]

    @property
    def channels(self) -> list:
        return list(dict.fromkeys(self.channel_ids.tolist()))

    def subset(self, mask) -> "ScoreSet":
        return ScoreSet(self.trial_ids[mask], self.channel_ids[mask], self.keys[mask], self.scores[mask])

    def for_channel(self, channel_id) -> "ScoreSet":
        return self.subset(self.channel_ids == channel_id)

    def transformed(self, fn) -> "ScoreSet":
        return ScoreSet(self.trial_ids, self.channel_ids, self.keys, fn(self.scores))

    def swapped(self) -> "ScoreSet":
        """Negate scores and swap keys."""
        keys = np.where(self.keys == "bonafide", "spoof", "bonafide").astype(object)
        return ScoreSet(self.trial_ids, self.channel_ids, keys, -self.scores)

    def write(self, path) -> None:
        with open(path, "w") as fh:
            for t, c, s in zip(self.trial_ids, self.channel_ids, self.scores):
                fh.write(f"{t} {c} {s:.6f}\n")

    @classmethod
    def read(cls, path, manifest: Manifest) -> "ScoreSet":
        """Read a score file, taking keys from ``manifest``."""
        key_of = {r.trial_id: r.key for r in manifest}
        tids, chans, keys, scores = [], [], [], []
        with open(path) as fh:
            for lineno, line in enumerate(fh, 1):
                parts = line.split()
                if not parts:
                    continue
                if len(parts) != 3:
                    raise ValidationError(f"{path}:{lineno}: expected 'trial_id channel_id score'")
                if parts[0] not in key_of:
                    raise MissingFeature(f"{path}:{lineno}: trial {parts[0]} not in manifest")
                tids.append(parts[0])
                chans.append(parts[1])
                keys.append(key_of[parts[0]])
                scores.append(float(parts[2]))
        return cls(tids, chans, keys, scores)


def score_trials(ckpt: Checkpoint | ModelGraph, m: Manifest, features,
                 target_frames: int | None = None) -> ScoreSet:
    """Cosine CM score of every record, in manifest order.

    Full-length features by default; with ``target_frames`` set, the
    deterministic centre crop / repeat padding of ``fix_length``.
    """
    from .trainer import embed_manifest

    model = ckpt.to_model() if isinstance(ckpt, Checkpoint) else ckpt
    emb = embed_manifest(model, m, features, target_frames)
    w = model.cm_w.data
    norms = np.maximum(np.linalg.norm(emb, axis=1), 1e-12)
    scores = (emb @ w) / (norms * np.linalg.norm(w))
    return ScoreSet([r.trial_id for r in m], [r.channel_id for r in m], [r.key for r in m], scores)


def _split(s) -> tuple:
    if isinstance(s, ScoreSet):
        bona, spoof = s.bonafide, s.spoof
    else:
        bona, spoof = (np.asarray(a, dtype=np.float64).ravel() for a in s)
    if bona.size == 0 or spoof.size == 0:
        raise OneClassOnly("EER needs at least one bona fide and one spoof score")
    return bona, spoof


def error_sweep(bona: np.ndarray, spoof: np.ndarray):
    """Thresholds and (FAR, FRR) at every distinct score, plus the final all-reject point."""
    u = np.unique(np.concatenate([bona, spoof]))
    bs, ss = np.sort(bona), np.sort(spoof)
    far = (ss.size - np.searchsorted(ss, u, side="left")) / ss.size
    frr = np.searchsorted(bs, u, side="left") / bs.size
    thresholds = np.append(u, np.nextafter(u[-1], np.inf))
    return thresholds, np.append(far, 0.0), np.append(frr, 1.0)


def _crossing(thresholds, far, frr):
    d = far - frr
    j = int(np.argmax(d <= 0))
    if d[j] == 0:
        return float(far[j]), float(thresholds[j])
    a = d[j - 1] / (d[j - 1] - d[j])
    eer = far[j - 1] + a * (far[j] - far[j - 1])
    thr = thresholds[j - 1] + a * (thresholds[j] - thresholds[j - 1])
    return float(eer), float(thr)


def compute_eer(s) -> tuple:
    """(eer, threshold) for a ScoreSet or a (bona_scores, spoof_scores) pair."""
    bona, spoof = _split(s)
    return _crossing(*error_sweep(bona, spoof))


_A = (-3.969683028665376e01, 2.209460984245205e02, -2.759285104469687e02,
      1.383577518672690e02, -3.066479806614716e01, 2.506628277459239e00)
_B = (-5.447609879822406e01, 1.615858368580409e02, -1.556989798598866e02,
      6.680131188771972e01, -1.328068155288572e01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e00,
      -2.549732539343734e00, 4.374664141464968e00, 2.938163982698783e00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e00, 3.754408661907416e00)
_P_LOW = 0.02425


def probit(p):
    """Inverse standard normal CDF.

    Rational approximation, then one Halley step against erfc.
    """
    arr = np.asarray(p, dtype=np.float64)
    if np.any(~(arr > 0)) or np.any(~(arr < 1)):
        raise DomainError("probit is defined on the open interval (0, 1)")
    x = np.empty_like(arr)
    lo = arr < _P_LOW
    hi = arr > 1 - _P_LOW
    mid = ~(lo | hi)

    q = np.sqrt(-2 * np.log(arr[lo]))
    x[lo] = (((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5]) / \
            ((((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1)
    q = np.sqrt(-2 * np.log(1 - arr[hi]))
    x[hi] = -(((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5]) / \
            ((((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1)
    q = arr[mid] - 0.5
    r = q * q
    x[mid] = (((((_A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4]) * r + _A[5]) * q / \
             (((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r + _B[4]) * r + 1)

    e = 0.5 * erfc(-x / np.sqrt(2)) - arr
    u = e * np.sqrt(2 * np.pi) * np.exp(x * x / 2)
    x = x - u / (1 + x * u / 2)
    return float(x) if np.ndim(p) == 0 else x


@dataclass
class DetCurve:
    thresholds: np.ndarray
    far: np.ndarray
    frr: np.ndarray
    n_bonafide: int
    n_spoof: int

    @property
    def far_clamped(self) -> np.ndarray:
        lo = 0.5 / self.n_spoof
        return np.clip(self.far, lo, 1 - lo)

    @property
    def frr_clamped(self) -> np.ndarray:
        lo = 0.5 / self.n_bonafide
        return np.clip(self.frr, lo, 1 - lo)

    @property
    def points(self) -> np.ndarray:
        """(probit FAR, probit FRR) rows in threshold order."""
        return np.column_stack([probit(self.far_clamped), probit(self.frr_clamped)])

    def eer(self) -> float:
        return _crossing(self.thresholds, self.far, self.frr)[0]

    def is_monotone(self) -> bool:
        return bool(np.all(np.diff(self.far) <= 0) and np.all(np.diff(self.frr) >= 0))

    def to_csv(self, path) -> None:
        pts = self.points
        with open(path, "w") as fh:
            fh.write("probit_far,probit_frr\n")
            for a, b in pts:
                fh.write(f"{a:.6f},{b:.6f}\n")

    def min_frr_at(self, far_grid) -> np.ndarray:
        """Lowest FRR reachable with FAR <= each grid value (staircase envelope)."""
        far_grid = np.asarray(far_grid, dtype=np.float64)
        order = np.argsort(self.far, kind="stable")
        far_sorted = self.far[order]
        frr_running_min = np.minimum.accumulate(self.frr[order])
        idx = np.searchsorted(far_sorted, far_grid, side="right") - 1
        return frr_running_min[np.clip(idx, 0, None)]


def det_curve(s) -> DetCurve:
    bona, spoof = _split(s)
    thresholds, far, frr = error_sweep(bona, spoof)
    # the start point, below every score: everything accepted
    thresholds = np.insert(thresholds, 0, -np.inf)
    return DetCurve(thresholds, np.insert(far, 0, 1.0), np.insert(frr, 0, 0.0), bona.size, spoof.size)


@dataclass
class DetBand:
    probit_far: np.ndarray
    mean_probit_frr: np.ndarray
    std_probit_frr: np.ndarray

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("probit_far,mean_probit_frr,lower_probit_frr,upper_probit_frr\n")
            for x, m, s in zip(self.probit_far, self.mean_probit_frr, self.std_probit_frr):
                fh.write(f"{x:.6f},{m:.6f},{m - s:.6f},{m + s:.6f}\n")


def det_band(curves: Sequence[DetCurve], n_points: int = 101, p_min: float = 1e-3) -> DetBand:
    """Mean and population SD of several DET curves, averaged in probit space.

    Each curve is read as its staircase envelope on a shared FAR grid.
    """
    if not curves:
        raise ValidationError("no curves to average")
    grid_probit = np.linspace(probit(p_min), probit(1 - p_min), n_points)
    far_grid = 0.5 * erfc(-grid_probit / np.sqrt(2))
    rows = []
    for c in curves:
        frr = c.min_frr_at(far_grid)
        lo = 0.5 / c.n_bonafide
        rows.append(probit(np.clip(frr, lo, 1 - lo)))
    rows = np.array(rows)
    return DetBand(grid_probit, rows.mean(axis=0), rows.std(axis=0))


@dataclass
class ChannelStats:
    avg: float
    std: float
    unseen: dict = field(default_factory=dict)


def channel_stats(eers: Mapping[str, float], seen: Sequence[str], unseen: Sequence[str] = ()) -> ChannelStats:
    """Mean and population SD (divisor N) over the seen channels."""
    missing = [c for c in list(seen) + list(unseen) if c not in eers]
    if missing:
        raise MissingChannel(f"no EER for channels {missing}")
    if not seen:
        raise ValidationError("no seen channels")
    vals = np.array([eers[c] for c in seen], dtype=np.float64)
    return ChannelStats(float(vals.mean()), float(vals.std()), {c: float(eers[c]) for c in unseen})


def per_channel_eer(s: ScoreSet, channels: Sequence[str] | None = None) -> dict:
    channels = s.channels if channels is None else channels
    return {c: compute_eer(s.for_channel(c))[0] for c in channels}


@dataclass
class Histogram:
    edges: np.ndarray
    count_bonafide: np.ndarray
    count_spoof: np.ndarray

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("bin_left,bin_right,count_bonafide,count_spoof\n")
            for i in range(self.count_bonafide.size):
                fh.write(f"{self.edges[i]:.6f},{self.edges[i + 1]:.6f},"
                         f"{int(self.count_bonafide[i])},{int(self.count_spoof[i])}\n")


def score_histogram(s: ScoreSet, bins: int = 40, value_range=None) -> Histogram:
    """Bona fide and spoof histograms over one shared set of bins."""
    if bins < 2:
        raise ValidationError("need at least 2 bins")
    if value_range is None:
        lo, hi = float(s.scores.min()), float(s.scores.max())
        if lo == hi:
            lo, hi = lo - 0.5, hi + 0.5
        value_range = (lo, hi)
    edges = np.linspace(value_range[0], value_range[1], bins + 1)
    cb, _ = np.histogram(s.bonafide, edges)
    cs, _ = np.histogram(s.spoof, edges)
    return Histogram(edges, cb, cs)
