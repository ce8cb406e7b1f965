"""Finite-difference gradient checking.

Compares tape gradients of a scalar function against central differences
(f(x+h) - f(x-h)) / 2h, entry by entry.  The relative error of an entry is
|a - n| / max(|a|, |n|, floor); the floor keeps near-zero gradients from
blowing up the ratio.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .engine import Tensor, backward
from .errors import ContractError


@dataclass
class LeafReport:
    name: str
    max_rel_err: float
    checked: int


@dataclass
class GradCheckReport:
    tol: float
    leaves: list[LeafReport] = field(default_factory=list)

    @property
    def max_rel_err(self) -> float:
        return max((l.max_rel_err for l in self.leaves), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_rel_err < self.tol

    def __str__(self) -> str:
        lines = [f"grad check (tol {self.tol:g}): max rel err {self.max_rel_err:.3e}"]
        lines += [f"  {l.name}: {l.max_rel_err:.3e} over {l.checked} entries" for l in self.leaves]
        return "\n".join(lines)


def grad_check(f, inputs, h: float = 1e-5, tol: float = 1e-4,
               floor: float = 1e-6, sample: int | None = None,
               rng: np.random.Generator | None = None) -> GradCheckReport:
    """Check d f / d leaf for every leaf in ``inputs``.

    ``f`` must be deterministic and return a scalar Tensor when called with
    no arguments (it closes over ``inputs``).  ``inputs`` is a list of
    (name, Tensor) pairs; each tensor must require grad.  With ``sample``
    set, only that many entries per leaf are perturbed (drawn via ``rng``),
    which keeps large-parameter checks fast.
    """
    inputs = list(inputs)
    for name, t in inputs:
        if not t.requires_grad:
            raise ContractError(f"grad_check leaf {name!r} does not require grad")
        t.zero_grad()

    loss = f()
    if loss.data.size != 1:
        raise ContractError("grad_check expects a scalar-valued function")
    backward(loss)
    analytic = {name: (np.zeros_like(t.data) if t.grad is None else t.grad.copy())
                for name, t in inputs}

    if sample is not None and rng is None:
        rng = np.random.default_rng(0)

    report = GradCheckReport(tol=tol)
    for name, t in inputs:
        flat = t.data.reshape(-1)
        n_entries = flat.size
        if sample is not None and sample < n_entries:
            idx = rng.choice(n_entries, size=sample, replace=False)
        else:
            idx = np.arange(n_entries)
        worst = 0.0
        for i in idx:
            orig = flat[i]
            flat[i] = orig + h
            fp = float(f().data)
            flat[i] = orig - h
            fm = float(f().data)
            flat[i] = orig
            num = (fp - fm) / (2.0 * h)
            ana = float(analytic[name].reshape(-1)[i])
            denom = max(abs(ana), abs(num), floor)
            worst = max(worst, abs(ana - num) / denom)
        report.leaves.append(LeafReport(name=name, max_rel_err=worst, checked=len(idx)))
    return report
