"""Central finite-difference gradient checks."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, grad

FD_STEP = 1e-5


def rel_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-12) -> float:
    """``||a - n|| / max(||a||, ||n||)``; falls back to the absolute error
    when both norms are below ``floor``."""
    diff = float(np.linalg.norm(analytic - numeric))
    scale = max(float(np.linalg.norm(analytic)), float(np.linalg.norm(numeric)))
    return diff if scale < floor else diff / scale


def numerical_grad(fn: Callable[[], Tensor], p: Tensor, step: float = FD_STEP,
                   coords: np.ndarray | None = None) -> np.ndarray:
    """Central differences of scalar ``fn`` w.r.t. ``p`` at ``coords``
    (flat indices; all entries by default).  Unprobed entries are NaN."""
    flat = p.data.reshape(-1)
    out = np.full(flat.shape, np.nan)
    if coords is None:
        coords = np.arange(flat.size)
    for i in coords:
        orig = flat[i]
        flat[i] = orig + step
        fp = fn().item()
        flat[i] = orig - step
        fm = fn().item()
        flat[i] = orig
        out[i] = (fp - fm) / (2 * step)
    return out.reshape(p.shape)


@dataclass
class GradcheckReport:
    name: str
    errors: dict[str, float] = field(default_factory=dict)
    tol: float = 1e-5

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_error <= self.tol


def gradcheck(fn: Callable[[], Tensor], params: Sequence[Tensor], names: Sequence[str] | None = None,
              step: float = FD_STEP, tol: float = 1e-5, max_coords: int | None = None,
              seed: int = 0, name: str = "fn") -> GradcheckReport:
    """Compare tape gradients of ``fn`` with central differences.

    With ``max_coords`` set, at most that many seeded random entries per
    parameter are probed and compared.
    """
    params = list(params)
    names = list(names) if names is not None else [p.name or f"p{i}" for i, p in enumerate(params)]
    analytic = grad(fn, params)
    rng = np.random.default_rng(seed)
    report = GradcheckReport(name=name, tol=tol)
    for nm, p, ga in zip(names, params, analytic):
        coords = None
        if max_coords is not None and p.size > max_coords:
            coords = np.sort(rng.choice(p.size, size=max_coords, replace=False))
        gn = numerical_grad(fn, p, step, coords)
        sel = np.isfinite(gn)
        report.errors[nm] = rel_error(ga[sel], gn[sel])
    return report
