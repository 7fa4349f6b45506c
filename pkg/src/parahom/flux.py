"""Flux field B^lambda and its skew-symmetric flux correctors.

Index ``d`` (0-based) stands for the time direction s.  The potentials solve
``(Laplace_y + d_s^2) f = B`` on T^d x (0, lambda) by Fourier inversion and
the correctors are ``Bc[a, b, k] = D_a f[b, k] - D_b f[a, k]``.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .cell import CorrectorSet, EffectiveTensor, TorusGrid, effective_tensor, solve_cell_lambda
from .coefficients import CoefficientField
from .errors import GridError
from .torus import derivative_symbol

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class FluxField:
    """``B[a, j]`` for ``a`` in 0..d (row d is the time row), shape (d+1, d, n_s, *y)."""

    B: np.ndarray
    grid: TorusGrid
    xt: tuple
    recentred: float = 0.0

    @property
    def d(self) -> int:
        return self.grid.d


@dataclass(frozen=True, eq=False)
class FluxCorrectorSet:
    """Potentials ``f[a, k]`` and correctors ``Bc[a, b, k]``."""

    f: np.ndarray
    Bc: np.ndarray
    grid: TorusGrid

    @property
    def d(self) -> int:
        return self.grid.d


class SpaceTimeSpectral:
    """Fourier calculus on T^d x (0, lambda); array layout (..., n_s, *y)."""

    def __init__(self, grid: TorusGrid):
        if grid.lam is None:
            raise GridError("space-time operators need a finite period lambda")
        self.grid = grid
        d = grid.d
        self.axes = tuple(range(-(d + 1), 0))
        shape = (grid.n_s,) + (grid.n_y,) * d
        syms = []
        sym_s = derivative_symbol(grid.n_s, grid.lam).reshape((grid.n_s,) + (1,) * d)
        sym_y = derivative_symbol(grid.n_y)
        for i in range(d):
            shp = [1] * (d + 1)
            shp[i + 1] = grid.n_y
            syms.append(np.broadcast_to(sym_y.reshape(shp), shape))
        syms.append(np.broadcast_to(sym_s, shape))
        self.sym = syms  # y_1..y_d, then s
        lap = np.zeros(shape)
        for s in syms:
            lap = lap + (s * s).real
        self.lap = lap

    def fft(self, u):
        return np.fft.fftn(u, axes=self.axes)

    def ifft(self, uh):
        return np.fft.ifftn(uh, axes=self.axes).real

    def deriv(self, u, a: int):
        return self.ifft(self.sym[a] * self.fft(u))

    def inverse_laplacian(self, u):
        uh = self.fft(u)
        with np.errstate(divide="ignore", invalid="ignore"):
            fh = np.where(self.lap != 0.0, uh / np.where(self.lap != 0.0, self.lap, 1.0), 0.0)
        return self.ifft(fh)


def build_flux_field(f: CoefficientField, xt, corr: CorrectorSet,
                     tensor: EffectiveTensor | None = None) -> FluxField:
    """B_ij = A_ij + A_ik d_k chi_j - Ahat_ij;  B_(d+1)j = -chi_j."""
    if corr.kind != "lambda":
        raise GridError(f"flux field needs a lambda-kind corrector, got {corr.kind!r}")
    if tensor is None:
        tensor = effective_tensor(f, xt, corr)
    if tensor.kind not in ("lambda", "selected") or (tensor.lam is not None and
                                                   not math.isclose(tensor.lam, corr.lam)):
        raise GridError("effective tensor kind does not match the corrector")
    d = corr.grid.d
    a, g = corr.coeff, corr.grad
    B = np.empty((d + 1, d) + a.shape[2:])
    flux = a + np.einsum("ik...,kj...->ij...", a, g)
    expand = (slice(None), slice(None)) + (None,) * (a.ndim - 2)
    B[:d] = flux - np.asarray(tensor.matrix)[expand]
    B[d] = -corr.chi
    axes = tuple(range(2, B.ndim))
    means = B.mean(axis=axes, keepdims=True)
    worst = float(np.max(np.abs(means)))
    if worst > 0:
        log.debug("flux field re-centred by %.3e", worst)
    B = B - means
    return FluxField(B, corr.grid, xt, recentred=worst)


def build_flux_correctors(B: FluxField, mean_tol: float = 1e-8) -> FluxCorrectorSet:
    """Fourier potentials and the assembled skew-symmetric correctors."""
    d = B.d
    axes = tuple(range(2, B.B.ndim))
    mean = float(np.max(np.abs(B.B.mean(axis=axes))))
    scale = max(float(np.max(np.abs(B.B))), 1.0)
    if mean > mean_tol * scale:
        raise GridError(f"flux field has nonzero mean {mean:.3e}; the zero mode is not invertible")
    ops = SpaceTimeSpectral(B.grid)
    fpot = ops.inverse_laplacian(B.B)
    Bc = np.zeros((d + 1, d + 1, d) + B.B.shape[2:])
    df = np.stack([ops.deriv(fpot, a) for a in range(d + 1)])  # df[c, a, k] = D_c f[a, k]
    for a in range(d + 1):
        for b in range(a + 1, d + 1):
            val = df[a, b] - df[b, a]
            Bc[a, b] = val
            Bc[b, a] = -val
    return FluxCorrectorSet(fpot, Bc, B.grid)


def divergence(fc: FluxCorrectorSet) -> np.ndarray:
    """``sum_a D_a Bc[a, b, k]`` for every (b, k)."""
    ops = SpaceTimeSpectral(fc.grid)
    out = np.zeros(fc.Bc.shape[1:])
    for a in range(fc.d + 1):
        out += ops.deriv(fc.Bc[a], a)
    return out


def _rms(u) -> float:
    return float(np.sqrt(np.mean(u ** 2)))


@dataclass
class IdentityReport:
    antisymmetry: float
    residual: float
    residual_rel: float
    divergence_B: float
    norm_space: float
    norm_time: float
    lam: float

    @property
    def time_ratio(self) -> float:
        return self.norm_time / (1.0 + self.lam) ** 2

    def as_dict(self) -> dict:
        return {"antisymmetry": self.antisymmetry, "residual": self.residual,
                "residual_rel": self.residual_rel, "divergence_B": self.divergence_B,
                "norm_space": self.norm_space, "norm_time": self.norm_time,
                "time_ratio": self.time_ratio, "lambda": self.lam}


def verify_flux_identities(fc: FluxCorrectorSet, B: FluxField) -> IdentityReport:
    """Antisymmetry, representation residual and the two energy norms."""
    if fc.grid != B.grid:
        raise GridError("flux correctors and flux field live on different grids")
    d = fc.d
    Bc = fc.Bc
    anti = float(np.max(np.abs(Bc + np.swapaxes(Bc, 0, 1)))) if Bc.size else 0.0
    # rows b <= d of the identity are checked against B[b]; row d+1 against B[d]
    res = divergence(fc) - B.B
    ops = SpaceTimeSpectral(B.grid)
    divB = sum(ops.deriv(B.B[a], a) for a in range(d + 1))
    bn = _rms(B.B)
    n_space = float(np.mean(np.sum(Bc[:d, :d] ** 2, axis=(0, 1, 2)))) if d > 1 else 0.0
    n_time = float(np.mean(np.sum(Bc[:d, d] ** 2, axis=(0, 1))))
    return IdentityReport(anti, _rms(res), _rms(res) / bn if bn > 0 else 0.0, _rms(divB),
                          n_space, n_time, float(fc.grid.lam))


def flux_check(f: CoefficientField, xt, grid: TorusGrid, **kw) -> IdentityReport:
    corr = solve_cell_lambda(f, xt, grid, **kw)
    B = build_flux_field(f, xt, corr)
    return verify_flux_identities(build_flux_correctors(B), B)


def flux_lambda_scaling(f: CoefficientField, xt, lambdas, grid: TorusGrid, **kw) -> dict:
    """Time-row norm over (1 + lambda)^2 for each lambda, plus the spread."""
    rows = []
    for lam in lambdas:
        rep = flux_check(f, xt, grid.with_lambda(float(lam)), **kw)
        rows.append(rep.as_dict())
    ratios = np.array([r["time_ratio"] for r in rows])
    spread = float(ratios.max() / ratios.min()) if np.all(ratios > 0) else float("inf")
    return {"rows": rows, "spread": spread}
