"""Central-difference verification of analytic parameter gradients."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .autograd import Tensor


@dataclass
class GradCheckReport:
    max_rel_error: float
    per_param: dict = field(default_factory=dict)
    n_checked: int = 0
    tol: float = 1e-4

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tol

    def worst(self):
        return max(self.per_param.items(), key=lambda kv: kv[1], default=(None, 0.0))


def relative_error(a, n, floor=1e-8):
    a, n = np.asarray(a), np.asarray(n)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


def grad_check(params: dict, loss_fn: Callable[[], Tensor], h: float = 1e-5, tol: float = 1e-4,
               max_per_param: int = 12, seed: int = 0, floor: float = 1e-8) -> GradCheckReport:
    """Compare backprop gradients of ``loss_fn()`` with central differences.

    ``params`` maps names to leaf Tensors that ``loss_fn`` reads. Large
    tensors are subsampled to ``max_per_param`` entries. Parameters that
    receive no gradient are treated as having gradient zero.
    """
    rng = np.random.default_rng(seed)
    for p in params.values():
        p.grad = None
    loss_fn().backward()
    analytic = {k: (np.zeros_like(p.data) if p.grad is None else p.grad.copy()) for k, p in params.items()}

    per_param = {}
    n_checked = 0
    for name, p in params.items():
        flat = p.data.reshape(-1)
        if flat.size <= max_per_param:
            idx = np.arange(flat.size)
        else:
            idx = rng.choice(flat.size, size=max_per_param, replace=False)
        worst = 0.0
        for i in idx:
            orig = flat[i]
            flat[i] = orig + h
            up = loss_fn().item()
            flat[i] = orig - h
            down = loss_fn().item()
            flat[i] = orig
            numeric = (up - down) / (2 * h)
            worst = max(worst, float(relative_error(analytic[name].reshape(-1)[i], numeric, floor)))
            n_checked += 1
        per_param[name] = worst
    for p in params.values():
        p.grad = None
    return GradCheckReport(max(per_param.values(), default=0.0), per_param, n_checked, tol)
