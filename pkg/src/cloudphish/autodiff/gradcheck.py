"""Central finite-difference gradient checking."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .tensor import NonFiniteError, Tensor


@dataclass
class GradCheckReport:
    analytic: np.ndarray
    numeric: np.ndarray
    rel_error: np.ndarray
    tolerance: float
    worst_index: tuple = field(default=())

    @property
    def max_error(self) -> float:
        return float(self.rel_error.max()) if self.rel_error.size else 0.0

    @property
    def passed(self) -> bool:
        return self.max_error < self.tolerance


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-3) -> np.ndarray:
    """|a - n| / max(|a|, |n|, floor).

    The floor keeps coordinates whose true gradient is ~0 from reporting
    huge relative errors on rounding noise.
    """
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / denom


def gradient_check(
    f: Callable[[Tensor], Tensor],
    point,
    step: float = 1e-3,
    tolerance: float = 1e-4,
    floor: float = 1e-3,
) -> GradCheckReport:
    """Compare backprop gradients of scalar ``f`` at ``point`` with central differences."""
    if step <= 0:
        raise ValueError("step must be positive")
    x0 = np.array(point.data if isinstance(point, Tensor) else point, dtype=np.float64)

    x = Tensor(x0, requires_grad=True)
    out = f(x)
    if out.size != 1:
        raise ValueError(f"gradient_check needs a scalar function, got shape {out.shape}")
    out.backward()
    analytic = np.zeros_like(x0) if x.grad is None else x.grad.copy()

    numeric = np.zeros_like(x0)
    flat = numeric.reshape(-1)
    for k in range(x0.size):
        xp = x0.copy().reshape(-1)
        xp[k] += step
        fp = f(Tensor(xp.reshape(x0.shape))).item()
        xp[k] -= 2 * step
        fm = f(Tensor(xp.reshape(x0.shape))).item()
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NonFiniteError(f"non-finite function value at perturbed coordinate {k}")
        flat[k] = (fp - fm) / (2 * step)

    err = relative_error(analytic, numeric, floor)
    worst = np.unravel_index(int(err.argmax()), err.shape) if err.size else ()
    return GradCheckReport(analytic, numeric, err, tolerance, tuple(int(i) for i in worst))
