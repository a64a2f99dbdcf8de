"""Training objectives: OC-Softmax, channel cross-entropy and the two composites.

OC-Softmax scores a trial by the cosine between its embedding and a
learned direction w. With s = +1 for bona fide and -1 for spoof::

    loss = mean log(1 + exp(alpha * (m_key - cos) * s))

so bona fide trials are pulled above m_bonafide and spoofs pushed below
m_spoof.

The multi-task objective adds lambda * L_ch. The adversarial objective
routes the channel loss through a gradient reversal layer, so a single
backward pass of L_cm + L_ch gives theta_ch the plain channel gradient
and theta_e the channel gradient times -lambda.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import DegenerateEmbedding, LabelOutOfRange, ValidationError
from .neuro import autograd as ag
from .neuro.autograd import Tensor


@dataclass(frozen=True)
class OcSoftmaxParams:
    alpha: float = 20.0
    m_bonafide: float = 0.9
    m_spoof: float = 0.2

    def __post_init__(self):
        if not -1.0 <= self.m_spoof < self.m_bonafide <= 1.0:
            raise ValidationError("need -1 <= m_spoof < m_bonafide <= 1")
        if self.alpha <= 0:
            raise ValidationError("alpha must be positive")


@dataclass(frozen=True)
class CompositeWeights:
    lam: float = 0.05

    def __post_init__(self):
        if self.lam < 0:
            raise ValidationError("lambda must be nonnegative")


def _as_keys(keys) -> np.ndarray:
    """Bona fide indicator: accepts bools/ints (1 = bona fide) or key strings."""
    k = np.asarray(keys)
    if k.dtype.kind in "US":
        return k == "bonafide"
    return k.astype(bool)


def oc_softmax(embeddings, keys, w, p: OcSoftmaxParams = OcSoftmaxParams()):
    """Return (mean loss, cosine scores) as Tensors.

    ``embeddings`` is (B, d), ``w`` the (d,) direction; both may be plain
    arrays or Tensors.
    """
    emb = ag.as_tensor(embeddings)
    w = ag.as_tensor(w)
    norms = np.linalg.norm(emb.data, axis=1)
    if np.any(norms == 0) or np.linalg.norm(w.data) == 0:
        raise DegenerateEmbedding("zero-norm embedding or direction vector")
    bona = _as_keys(keys)
    cos = ag.matmul(ag.l2_normalize(emb, axis=1), ag.l2_normalize(w, axis=0))
    return oc_softmax_from_cos(cos, bona, p), cos


def oc_softmax_from_cos(cos, bona, p: OcSoftmaxParams = OcSoftmaxParams()) -> Tensor:
    bona = _as_keys(bona)
    margin = np.where(bona, p.m_bonafide, p.m_spoof)
    sign = np.where(bona, 1.0, -1.0)
    z = ag.mul(ag.sub(margin, cos), p.alpha * sign)
    return ag.mean(ag.softplus(z))


def cross_entropy(logits, labels) -> Tensor:
    logits = ag.as_tensor(logits)
    labels = np.asarray(labels, dtype=np.int64)
    k = logits.shape[-1]
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise LabelOutOfRange(f"labels must lie in [0, {k})")
    return ag.mul(ag.mean(ag.pick(ag.log_softmax(logits, axis=1), labels)), -1.0)


def mt_objective(l_cm, l_ch, w: CompositeWeights) -> Tensor:
    """L_cm + lambda * L_ch; both terms push theta_e with positive sign."""
    return ag.add(l_cm, ag.mul(l_ch, w.lam))


class AdvObjective(NamedTuple):
    total: Tensor  # what to call backward() on
    embedder_objective: float  # L_cm - lambda * L_ch, minimised by theta_e and theta_cm
    channel_head_objective: float  # L_ch, minimised by theta_ch


def adv_objective(l_cm, l_ch_through_grl, w: CompositeWeights) -> AdvObjective:
    """Adversarial objective realised with a gradient reversal layer.

    ``l_ch_through_grl`` must have been computed on GRL(embedding, lambda);
    the reversal supplies the -lambda on theta_e's side.
    """
    l_cm, l_ch = ag.as_tensor(l_cm), ag.as_tensor(l_ch_through_grl)
    total = ag.add(l_cm, l_ch)
    return AdvObjective(total, l_cm.item() - w.lam * l_ch.item(), l_ch.item())
