"""Least-squares log-log slope fits used by every convergence study."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class SlopeFit:
    slope: float
    intercept: float
    residual: float
    n_used: int
    degenerate: bool

    def as_dict(self) -> dict:
        return {"slope": self.slope, "intercept": self.intercept,
                "residual": self.residual, "n_used": self.n_used,
                "degenerate": self.degenerate}


def fit_loglog(x, y, min_points: int = 3, floor: float = 0.0) -> SlopeFit:
    """Fit ``log y = p log x + b``; entries with ``y <= floor`` are dropped.

    The fit is flagged degenerate when fewer than ``min_points`` usable pairs
    remain, in which case slope and intercept are NaN.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    keep = np.isfinite(x) & np.isfinite(y) & (x > 0) & (y > floor)
    n = int(keep.sum())
    if n < max(min_points, 2):
        return SlopeFit(float("nan"), float("nan"), float("nan"), n, True)
    lx, ly = np.log(x[keep]), np.log(y[keep])
    A = np.vstack([lx, np.ones_like(lx)]).T
    coef, *_ = np.linalg.lstsq(A, ly, rcond=None)
    resid = float(np.sqrt(np.mean((A @ coef - ly) ** 2)))
    return SlopeFit(float(coef[0]), float(coef[1]), resid, n, False)


def observed_orders(h, err) -> np.ndarray:
    """Pairwise orders ``log(e_k/e_{k+1}) / log(h_k/h_{k+1})``."""
    h = np.asarray(h, dtype=float)
    err = np.asarray(err, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.log(err[:-1] / err[1:]) / np.log(h[:-1] / h[1:])
