"""Cell problems on the (1, lambda)-torus and the effective tensors they define.

Three kinds of corrector are supported at a fixed macro point (x, t):

* ``lambda``: the time-periodic parabolic problem
  ``d_s chi - div_y(A^lam grad chi) = div_y(A^lam e_j)`` with period ``lam``;
* ``infinity``: one elliptic problem per s-slice;
* ``zero``: one elliptic problem for the s-averaged coefficient.

All three share the s-sampling ``s_n = n / n_s`` of A in its own unit period
(for the lambda kind this is ``s = n lam / n_s`` in the stretched variable),
so the tensors they produce differ only through the cell problem.
"""
from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .coefficients import CoefficientField
from .errors import GridError, SolverError
from .fitting import SlopeFit, fit_loglog
from .torus import SliceSolver, SpectralTorus

log = logging.getLogger(__name__)

KINDS = ("lambda", "infinity", "zero")


@dataclass(frozen=True)
class TorusGrid:
    d: int
    n_y: int
    n_s: int
    lam: Optional[float] = None

    def __post_init__(self):
        if self.d not in (1, 2):
            raise GridError(f"d must be 1 or 2, got {self.d}")
        if self.n_y < 8 or self.n_y & (self.n_y - 1):
            raise GridError(f"n_y must be a power of two >= 8, got {self.n_y}")
        if self.n_s < 8:
            raise GridError(f"n_s must be >= 8, got {self.n_s}")
        if self.lam is not None and not (0.0 < self.lam < math.inf):
            raise GridError(f"time period must be finite and positive, got {self.lam}")

    @property
    def h_y(self) -> float:
        return 1.0 / self.n_y

    @property
    def h_s(self) -> float:
        return (self.lam if self.lam is not None else 1.0) / self.n_s

    @property
    def s_unit(self) -> np.ndarray:
        """Sample times in the coefficient's own unit period."""
        return np.arange(self.n_s) / self.n_s

    def with_lambda(self, lam: Optional[float]) -> "TorusGrid":
        return TorusGrid(self.d, self.n_y, self.n_s, lam)

    def torus(self) -> SpectralTorus:
        return SpectralTorus(self.d, self.n_y)


def _macro(xt, d: int):
    x, t = xt
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.shape != (d,):
        raise GridError(f"macro point x must have {d} components, got shape {x.shape}")
    return x, float(t)


def sample_coefficient(f: CoefficientField, xt, grid: TorusGrid) -> np.ndarray:
    """A(x, t, y, s_n) on the grid, shape ``(d, d, n_s, *y_shape)``."""
    if f.dim != grid.d:
        raise GridError(f"coefficient has d={f.dim} but grid has d={grid.d}")
    x, t = _macro(xt, grid.d)
    ys = SpectralTorus(grid.d, grid.n_y).points
    s = grid.s_unit.reshape((-1,) + (1,) * grid.d)
    ys = tuple(y[None, ...] for y in ys)
    xs = tuple(np.asarray(v) for v in x)
    a = f.entries(xs, t, ys, s)
    return np.ascontiguousarray(np.broadcast_to(a, (grid.d, grid.d, grid.n_s) + (grid.n_y,) * grid.d))


@dataclass(frozen=True, eq=False)
class CorrectorSet:
    """Grid samples of chi_j and grad_y chi_j.

    ``chi`` has shape ``(d, n_slices, *y_shape)`` and ``grad[k, j]`` holds
    d chi_j / d y_k.  Slice ``n`` sits at ``s_n`` (for the zero kind there is a
    single slice).  ``coeff`` holds the samples of A used by the solve (the
    averaged coefficient for the zero kind).
    """

    kind: str
    grid: TorusGrid
    xt: tuple
    chi: np.ndarray
    grad: np.ndarray
    coeff: np.ndarray
    sweeps: int = 0
    gap_history: tuple = ()
    scheme: str = ""

    @property
    def lam(self) -> Optional[float]:
        return self.grid.lam

    def mean_violation(self) -> float:
        torus_axes = tuple(range(2, self.chi.ndim))
        scale = max(float(np.max(np.abs(self.chi))), 1.0)
        if self.kind == "lambda":
            m = np.abs(self.chi.mean(axis=(1,) + torus_axes))
        else:
            m = np.abs(self.chi.mean(axis=torus_axes))
        return float(np.max(m)) / scale

    def energy(self) -> float:
        """Average of |grad chi|^2 + |chi|^2 summed over j."""
        return float(np.mean(np.sum(self.grad ** 2, axis=(0, 1))) +
                     np.mean(np.sum(self.chi ** 2, axis=0)))


@dataclass(frozen=True)
class EffectiveTensor:
    matrix: np.ndarray
    kind: str
    xt: tuple
    lam: Optional[float] = None

    def min_eig_sym(self) -> float:
        return float(np.linalg.eigvalsh(0.5 * (self.matrix + self.matrix.T)).min())

    def as_dict(self) -> dict:
        x, t = self.xt
        return {"kind": self.kind, "lambda": self.lam,
                "x": np.atleast_1d(x).tolist(), "t": float(t),
                "matrix": np.asarray(self.matrix).tolist()}


def _rhs(torus: SpectralTorus, a_slice: np.ndarray, j: int) -> np.ndarray:
    return torus.div(a_slice[:, j])


def _finish(kind, grid, xt, torus, chi, coeff, **kw) -> CorrectorSet:
    d = grid.d
    for j in range(d):
        chi[j] -= chi[j].mean()
    grad = np.stack([torus.grad(chi[j]) for j in range(d)], axis=1)
    return CorrectorSet(kind=kind, grid=grid, xt=xt, chi=chi, grad=grad, coeff=coeff, **kw)


def _elliptic_slices(torus: SpectralTorus, a: np.ndarray, rtol: float) -> np.ndarray:
    """Elliptic correctors for every slice of ``a`` (d, d, n, *y)."""
    d, n = a.shape[0], a.shape[2]
    chi = np.zeros((d, n) + torus.shape)
    for m in range(n):
        am = a[:, :, m]
        flat = am.reshape(d, d, -1)
        if np.all(flat == flat[..., :1]):
            continue
        solver = SliceSolver(torus, am, 0.0, rtol=rtol)
        prev = chi[:, m - 1] if m > 0 else [None] * d
        for j in range(d):
            chi[j, m] = solver.solve(_rhs(torus, am, j), x0=prev[j])
    return chi


def solve_cell_infinity(f: CoefficientField, xt, grid: TorusGrid, rtol: float = 1e-10) -> CorrectorSet:
    """Per-slice elliptic correctors chi^inf(., s_n)."""
    g = grid.with_lambda(None)
    torus = g.torus()
    a = sample_coefficient(f, xt, g)
    chi = _elliptic_slices(torus, a, rtol)
    for j in range(g.d):
        for m in range(g.n_s):
            chi[j, m] -= chi[j, m].mean()
    grad = np.stack([torus.grad(chi[j]) for j in range(g.d)], axis=1)
    return CorrectorSet("infinity", g, xt, chi, grad, a, scheme="spectral-elliptic")


def solve_cell_zero(f: CoefficientField, xt, grid: TorusGrid, rtol: float = 1e-10) -> CorrectorSet:
    """Elliptic corrector for the s-averaged coefficient."""
    g = grid.with_lambda(None)
    torus = g.torus()
    a_bar = sample_coefficient(f, xt, g).mean(axis=2, keepdims=True)
    chi = _elliptic_slices(torus, a_bar, rtol)
    return _finish("zero", g, xt, torus, chi, a_bar, scheme="spectral-elliptic")


def solve_cell_lambda(f: CoefficientField, xt, grid: TorusGrid, *, scheme: str = "bdf2",
                      tol_periodic: float = 1e-10, max_sweeps: int = 400,
                      init: str = "elliptic", rtol: float = 1e-10) -> CorrectorSet:
    """Time-periodic corrector by sweeping one period to the fixed point.

    ``scheme`` is ``"bdf2"`` (default) or ``"euler"``.  Each sweep marches
    ``n = 1..n_s`` and feeds the end state back as the start state; the loop
    stops once the relative period gap falls below ``tol_periodic``.
    """
    lam = grid.lam
    if lam is None or not (0.0 < lam < math.inf):
        raise GridError("the lambda-cell needs 0 < lambda < inf; use the zero or infinity kinds")
    if scheme not in ("bdf2", "euler"):
        raise GridError(f"unknown time scheme {scheme!r}")
    d, n_s = grid.d, grid.n_s
    torus = grid.torus()
    a = sample_coefficient(f, xt, grid)
    shape = torus.shape
    chi = np.zeros((d, n_s) + shape)

    if not f.depends_on_y:
        return _finish("lambda", grid, xt, torus, chi, a, scheme=scheme)

    ds = lam / n_s
    shift = 1.5 / ds if scheme == "bdf2" else 1.0 / ds
    solvers = [SliceSolver(torus, a[:, :, m], shift, rtol=rtol) for m in range(n_s)]
    rhs = np.stack([np.stack([_rhs(torus, a[:, :, m], j) for m in range(n_s)]) for j in range(d)])

    if init == "elliptic":
        start = _elliptic_slices(torus, a[:, :, :1], rtol)[:, 0]
    elif init == "zero":
        start = np.zeros((d,) + shape)
    else:
        raise GridError(f"unknown initialisation {init!r}")
    cur = start.copy()       # chi at slice 0 (== slice n_s)
    prev = start.copy()      # chi at slice -1 (== slice n_s - 1)
    history = []
    for sweep in range(1, max_sweeps + 1):
        p2, p1 = prev, cur
        new = np.empty_like(chi)
        for step in range(1, n_s + 1):
            m = step % n_s
            for j in range(d):
                if scheme == "bdf2":
                    r = rhs[j, m] + (4.0 * p1[j] - p2[j]) / (2.0 * ds)
                else:
                    r = rhs[j, m] + p1[j] / ds
                new[j, m] = solvers[m].solve(r, x0=p1[j])
            p2, p1 = p1, new[:, m]
        norm = max(float(np.linalg.norm(new[:, 0])), 1e-300)
        gap = float(max(np.linalg.norm(new[:, 0] - cur), np.linalg.norm(new[:, n_s - 1] - prev))) / norm
        history.append(gap)
        chi = new
        cur, prev = new[:, 0].copy(), new[:, n_s - 1].copy()
        if gap <= tol_periodic or norm <= 1e-300:
            break
    else:
        raise SolverError(f"lambda-cell fixed point did not converge in {max_sweeps} sweeps "
                          f"(last period gap {history[-1]:.3e})", residual=history[-1])
    log.debug("lambda-cell lam=%g converged in %d sweeps", lam, len(history))
    return _finish("lambda", grid, xt, torus, chi, a, sweeps=len(history),
                   gap_history=tuple(history), scheme=scheme)


def cell_residual(corr: CorrectorSet) -> float:
    """Relative L2 residual of the discrete cell equation.

    For the lambda kind the time derivative is the one of the stepping
    scheme, so this measures the linear-solve accuracy only.
    """
    grid = corr.grid
    torus = grid.torus()
    d = grid.d
    num = den = 0.0
    n_sl = corr.chi.shape[1]
    for j in range(d):
        for m in range(n_sl):
            am = corr.coeff[:, :, m]
            r = _rhs(torus, am, j)
            res = torus.apply_L(am, corr.chi[j, m]) - r
            if corr.kind == "lambda":
                ds = grid.h_s
                c = corr.chi[j]
                if corr.scheme == "bdf2":
                    dt = (3 * c[m] - 4 * c[m - 1] + c[m - 2]) / (2 * ds)
                else:
                    dt = (c[m] - c[m - 1]) / ds
                res = res + dt
            num += float(np.sum(torus.project(res) ** 2))
            den += float(np.sum(r ** 2))
    return math.sqrt(num / den) if den > 0 else math.sqrt(num)


def effective_tensor(f: CoefficientField, xt, corr: CorrectorSet) -> EffectiveTensor:
    """Torus average of A (I + grad chi)."""
    if f.dim != corr.grid.d:
        raise GridError("coefficient and corrector grids disagree in dimension")
    x0, t0 = _macro(xt, f.dim)
    x1, t1 = _macro(corr.xt, f.dim)
    if not (np.allclose(x0, x1) and abs(t0 - t1) < 1e-14):
        raise GridError("corrector was computed at a different macro point")
    d = f.dim
    a, g = corr.coeff, corr.grad
    axes = tuple(range(2, a.ndim))
    # A_ik (delta_kj + d_k chi_j)
    mat = a.mean(axis=axes) + np.einsum("ik...,kj...->ij...", a, g).reshape(d, d, -1).sum(axis=-1) / np.prod(a.shape[2:])
    kind = corr.kind
    return EffectiveTensor(np.asarray(mat).reshape(d, d), kind, xt, corr.lam)


def select_effective(f: CoefficientField, xt, rho: float, grid: TorusGrid, **kw) -> EffectiveTensor:
    """A-hat^0 for rho = 0, A-hat^rho for finite rho, A-hat^inf for rho = inf."""
    rho = float(rho)
    if rho < 0 or math.isnan(rho):
        raise GridError(f"rho must lie in [0, inf], got {rho}")
    if rho == 0.0:
        corr = solve_cell_zero(f, xt, grid)
    elif math.isinf(rho):
        corr = solve_cell_infinity(f, xt, grid)
    else:
        corr = solve_cell_lambda(f, xt, grid.with_lambda(rho), **kw)
    t = effective_tensor(f, xt, corr)
    return EffectiveTensor(t.matrix, "selected", xt, rho)


def corrector(f: CoefficientField, xt, grid: TorusGrid, kind: str, **kw) -> CorrectorSet:
    if kind == "lambda":
        return solve_cell_lambda(f, xt, grid, **kw)
    if kind == "infinity":
        return solve_cell_infinity(f, xt, grid)
    if kind == "zero":
        return solve_cell_zero(f, xt, grid)
    raise GridError(f"unknown corrector kind {kind!r}; expected one of {KINDS}")


@dataclass
class ComparisonReport:
    lambdas: list
    tensors: list
    a_inf: np.ndarray
    a_zero: np.ndarray
    dev_inf: list
    dev_zero: list
    fit_inf: SlopeFit
    fit_zero: SlopeFit
    pair_ratios: list = field(default_factory=list)
    flags: list = field(default_factory=list)

    def rows(self) -> list:
        return [{"lambda": lam, "dev_inf": di, "dev_zero": dz,
                 "a_lambda": np.asarray(t).ravel().tolist()}
                for lam, t, di, dz in zip(self.lambdas, self.tensors, self.dev_inf, self.dev_zero)]

    def summary(self) -> dict:
        return {"slope_inf": self.fit_inf.slope, "slope_zero": self.fit_zero.slope,
                "fit_inf": self.fit_inf.as_dict(), "fit_zero": self.fit_zero.as_dict(),
                "pair_ratios": self.pair_ratios, "flags": self.flags,
                "a_inf": self.a_inf.tolist(), "a_zero": self.a_zero.tolist()}


def lambda_comparison_sweep(f: CoefficientField, xt, lambdas: Sequence[float], grid: TorusGrid,
                            workers: int = 1, zero_floor: float = 1e-13, **kw) -> ComparisonReport:
    """Compare A-hat^lam with A-hat^inf and A-hat^0 across a list of periods."""
    lambdas = [float(v) for v in lambdas]
    if len(lambdas) < 4:
        raise GridError("a lambda sweep needs at least 4 values")
    a_inf = effective_tensor(f, xt, solve_cell_infinity(f, xt, grid)).matrix
    a_zero = effective_tensor(f, xt, solve_cell_zero(f, xt, grid)).matrix

    def one(lam):
        corr = solve_cell_lambda(f, xt, grid.with_lambda(lam), **kw)
        return effective_tensor(f, xt, corr).matrix

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            tensors = list(pool.map(one, lambdas))
    else:
        tensors = [one(lam) for lam in lambdas]
    dev_inf = [float(np.linalg.norm(t - a_inf)) for t in tensors]
    dev_zero = [float(np.linalg.norm(t - a_zero)) for t in tensors]
    fit_inf = fit_loglog(lambdas, dev_inf, floor=zero_floor)
    fit_zero = fit_loglog(lambdas, dev_zero, floor=zero_floor)
    flags = []
    if fit_inf.degenerate:
        flags.append("degenerate fit: fewer than 3 nonzero deviations from A-hat^inf")
    if fit_zero.degenerate:
        flags.append("degenerate fit: fewer than 3 nonzero deviations from A-hat^0")
    ratios = []
    for (l1, t1), (l2, t2) in zip(zip(lambdas, tensors), zip(lambdas[1:], tensors[1:])):
        ratios.append({"lambda1": l1, "lambda2": l2,
                       "ratio": float(np.linalg.norm(t1 - t2)) / abs(1.0 - l2 / l1)})
    return ComparisonReport(lambdas, [np.asarray(t) for t in tensors], a_inf, a_zero,
                            dev_inf, dev_zero, fit_inf, fit_zero, ratios, flags)
