"""Central finite-difference checks of analytic gradients."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from tokendrive.errors import NumericError
from tokendrive.numerics.autograd import Tensor


@dataclass
class GradReport:
    errors: dict[str, float] = field(default_factory=dict)
    tol: float = 1e-4

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_error <= self.tol

    def rows(self) -> list[tuple[str, float, bool]]:
        return [(k, v, v <= self.tol) for k, v in self.errors.items()]


def _as_named(inputs) -> dict[str, Tensor]:
    if isinstance(inputs, Mapping):
        return dict(inputs)
    return {f"input{i}": t for i, t in enumerate(inputs)}


def grad_check(fn: Callable[..., Tensor], inputs: Sequence[Tensor] | Mapping[str, Tensor],
               h: float = 1e-5, tol: float = 1e-4, max_elements: int = 64,
               n_directions: int = 4, seed: int = 0, floor: float = 1e-8,
               relative_floor: float = 1e-3) -> GradReport:
    """Compare ``fn``'s backward pass with central differences.

    ``fn`` is called with the input tensors, whose ``data`` is perturbed in
    place. A non-scalar output is reduced with fixed random weights. Inputs
    with at most ``max_elements`` entries are checked entry by entry; larger
    ones along ``n_directions`` random unit directions. The error per input
    is ``max |analytic - numeric| / scale`` over entries (or directions),
    where ``scale`` is the largest magnitude seen for that input, but at
    least ``relative_floor`` times the largest gradient magnitude of any
    input (and at least ``floor``). The relative floor keeps gradients that
    vanish by symmetry (e.g. key biases under softmax) from dividing
    round-off by round-off.
    """
    named = _as_named(inputs)
    tensors = list(named.values())
    rng = np.random.default_rng(seed)
    probe = fn(*tensors)
    weights = rng.standard_normal(probe.shape)

    def scalar() -> float:
        out = fn(*tensors).data
        val = float((out * weights).sum())
        if not np.isfinite(val):
            raise NumericError("grad_check: non-finite objective")
        return val

    for t in tensors:
        t.requires_grad = True
        t.grad = None
    out = fn(*tensors)
    out.backward(weights)

    report = GradReport(tol=tol)
    collected = {}
    for name, t in named.items():
        analytic_full = np.zeros_like(t.data) if t.grad is None else t.grad.copy()
        if not np.isfinite(analytic_full).all():
            bad = np.argwhere(~np.isfinite(analytic_full))[0]
            raise NumericError(f"grad_check: non-finite analytic gradient in '{name}' at {tuple(bad)}")
        base = t.data.copy()
        analytic, numeric = [], []
        if t.data.size <= max_elements:
            for idx in np.ndindex(*t.data.shape):
                t.data = base.copy()
                t.data[idx] += h
                fp = scalar()
                t.data = base.copy()
                t.data[idx] -= h
                fm = scalar()
                numeric.append((fp - fm) / (2 * h))
                analytic.append(analytic_full[idx])
        else:
            for _ in range(n_directions):
                v = rng.standard_normal(base.shape)
                v /= np.linalg.norm(v)
                t.data = base + h * v
                fp = scalar()
                t.data = base - h * v
                fm = scalar()
                numeric.append((fp - fm) / (2 * h))
                analytic.append(float((analytic_full * v).sum()))
        t.data = base
        collected[name] = (np.asarray(analytic), np.asarray(numeric))
    global_scale = max((np.abs(a).max(initial=0.0) for a, _ in collected.values()), default=0.0)
    for name, (a, n) in collected.items():
        scale = max(np.abs(a).max(initial=0.0), np.abs(n).max(initial=0.0),
                    relative_floor * global_scale, floor)
        report.errors[name] = float(np.abs(a - n).max(initial=0.0) / scale)
    for t in tensors:
        t.grad = None
    return report
