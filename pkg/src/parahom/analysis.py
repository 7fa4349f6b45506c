"""Two-scale expansion, cylinder statistics and convergence-rate studies.

All studies are 1D in space unless stated; cylinder averages and the excess
functional also accept 2D fields.
"""
from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .cell import CorrectorSet, TorusGrid, effective_tensor, solve_cell_lambda
from .coefficients import CoefficientField
from .errors import DegenerateFitError, GridError, RegimeError, SolverError
from .fitting import SlopeFit, fit_loglog
from .flux import FluxCorrectorSet, build_flux_correctors, build_flux_field
from .pde import (FineScale, PdeProblem, Resolution, SolutionField, TensorField,
                  _refine_axis, _ratio, l2_error, solve_homogenized, solve_parabolic)
from .smoothing import Mollifier, smooth, torus_interp

log = logging.getLogger(__name__)

Source = Union[float, Callable]


# -- cutoff -----------------------------------------------------------------

def smoothstep(z):
    """Quintic step 10z^3 - 15z^4 + 6z^5 clipped to [0, 1], with two derivatives."""
    z = np.clip(np.asarray(z, dtype=float), 0.0, 1.0)
    v = np.minimum(z ** 3 * (10.0 - 15.0 * z + 6.0 * z ** 2), 1.0)
    d1 = 30.0 * z ** 2 * (1.0 - z) ** 2
    d2 = 60.0 * z * (1.0 - z) * (1.0 - 2.0 * z)
    return v, d1, d2


STEP_D1 = 15.0 / 8.0                 # max |sigma'|
STEP_D2 = 10.0 / math.sqrt(3.0)      # max |sigma''|


@dataclass(frozen=True, eq=False)
class Cutoff:
    """Grid values of eta_delta on a uniform 1D grid.

    ``region="domain"``: eta = 1 off the parabolic layer of width 4 delta and
    0 on the layer of width 2 delta.  ``region="cylinder"``: eta = 1 on
    Q_{1-4delta}(x0, t0) and 0 outside Q_{1-3delta}.
    """

    delta: float
    region: str
    x: np.ndarray
    t: np.ndarray
    eta: np.ndarray
    eta_x: np.ndarray
    eta_t: np.ndarray
    eta_xx: np.ndarray
    c1: float
    c2: float

    @classmethod
    def build(cls, delta: float, x, t, region: str = "domain",
              center: Optional[tuple] = None) -> "Cutoff":
        x = np.asarray(x, dtype=float)
        t = np.asarray(t, dtype=float)
        if not 0.0 < delta < 0.25:
            raise GridError(f"cutoff width delta={delta} must lie in (0, 1/4)")
        if region == "domain":
            w = 2.0 * delta
            lo = 2.0 * delta
            dist = np.minimum(x - x[0], x[-1] - x)
            sx, dsx, d2sx = smoothstep((dist - lo) / w)
            sign = np.where(x - x[0] <= x[-1] - x, 1.0, -1.0)
            fx, fxx = dsx * sign / w, d2sx / w ** 2
            tw = 12.0 * delta ** 2
            st, dst, _ = smoothstep((t - t[0] - 4.0 * delta ** 2) / tw)
            ft = dst / tw
            c1 = STEP_D1 / 2.0
            c2 = STEP_D1 / 12.0 + STEP_D2 / 4.0
        elif region == "cylinder":
            if center is None:
                raise GridError("a cylinder cutoff needs its centre (x0, t0)")
            x0, t0 = float(center[0]), float(center[1])
            outer, inner = 1.0 - 3.0 * delta, 1.0 - 4.0 * delta
            r = np.abs(x - x0)
            sx, dsx, d2sx = smoothstep((outer - r) / delta)
            sign = -np.sign(x - x0)
            fx, fxx = dsx * sign / delta, d2sx / delta ** 2
            tw = outer ** 2 - inner ** 2
            st, dst, _ = smoothstep((t - (t0 - outer ** 2)) / tw)
            st = np.where(t <= t0, st, 0.0)
            ft = np.where(t <= t0, dst / tw, 0.0)
            c1 = STEP_D1
            c2 = STEP_D1 * delta / tw + STEP_D2
        else:
            raise GridError(f"unknown cutoff region {region!r}")
        eta = st[:, None] * sx[None, :]
        eta_x = st[:, None] * fx[None, :]
        eta_xx = st[:, None] * fxx[None, :]
        eta_t = ft[:, None] * sx[None, :]
        cut = cls(float(delta), region, x, t, eta, eta_x, eta_t, eta_xx, c1, c2)
        cut.check_bounds()
        return cut

    def check_bounds(self) -> None:
        d = self.delta
        tol = 1.0 + 1e-12
        if self.eta.min() < 0.0 or self.eta.max() > 1.0 * tol:
            raise GridError("cutoff leaves [0, 1]")
        if np.max(np.abs(self.eta_x)) * d > self.c1 * tol:
            raise GridError("cutoff gradient exceeds C / delta")
        if np.max(np.abs(self.eta_t) + np.abs(self.eta_xx)) * d * d > self.c2 * tol:
            raise GridError("cutoff second derivatives exceed C / delta^2")


# -- parabolic cylinders ------------------------------------------------------

@dataclass(frozen=True)
class ParabolicCylinder:
    """B(x0, r) x (t0 - r^2, t0); ``boundary`` intersects it with the domain."""

    x0: tuple
    t0: float
    r: float
    flavor: str = "interior"

    def __post_init__(self):
        if self.flavor not in ("interior", "boundary"):
            raise GridError(f"unknown cylinder flavor {self.flavor!r}")
        if not self.r > 0:
            raise GridError(f"cylinder radius must be positive, got {self.r}")

    @classmethod
    def at(cls, x0, t0: float, r: float, flavor: str = "interior") -> "ParabolicCylinder":
        return cls(tuple(np.atleast_1d(np.asarray(x0, dtype=float)).tolist()), float(t0), float(r), flavor)

    def weights(self, sol: SolutionField) -> np.ndarray:
        """Quadrature weights of the cylinder on the grid of ``sol`` (zero outside)."""
        d = sol.d
        if len(self.x0) != d:
            raise GridError("cylinder centre has the wrong dimension")
        tol = 1e-12
        if self.flavor == "interior":
            if any(c - self.r < -tol or c + self.r > 1.0 + tol for c in self.x0):
                raise GridError(f"interior cylinder of radius {self.r} at {self.x0} exits the domain")
            if self.t0 - self.r ** 2 < sol.t[0] - tol or self.t0 > sol.t[-1] + tol:
                raise GridError("interior cylinder exits the solved time interval")
        t = sol.t
        tin = (t >= self.t0 - self.r ** 2 - tol) & (t <= self.t0 + tol)
        wt = _segment_weights(t, tin)
        h = sol.h
        x = sol.x
        if d == 1:
            xin = np.abs(x - self.x0[0]) <= self.r + tol
            wx = _segment_weights(x, xin)
            w = wt[:, None] * wx[None, :]
        else:
            X1, X2 = np.meshgrid(x, x, indexing="ij")
            disk = (X1 - self.x0[0]) ** 2 + (X2 - self.x0[1]) ** 2 <= (self.r + tol) ** 2
            edge = np.ones_like(x)
            edge[0] = edge[-1] = 0.5
            w = wt[:, None, None] * (disk * np.outer(edge, edge) * h * h)[None]
        n_nodes = int(np.count_nonzero(w))
        if w.sum() <= 0.0 or n_nodes < d + 1:
            raise GridError(f"cylinder of radius {self.r} holds too few grid nodes ({n_nodes})")
        return w


def _segment_weights(z: np.ndarray, inside: np.ndarray) -> np.ndarray:
    """Trapezoid weights on the contiguous run of ``inside`` nodes."""
    w = np.zeros_like(z, dtype=float)
    idx = np.flatnonzero(inside)
    if idx.size == 0:
        return w
    a, b = idx[0], idx[-1]
    if b == a:
        w[a] = 1.0
        return w
    dz = np.diff(z[a:b + 1])
    w[a:b] += 0.5 * dz
    w[a + 1:b + 1] += 0.5 * dz
    return w


def gradient_average(u: SolutionField, cyl: ParabolicCylinder) -> float:
    """(avg_{Q_r} |grad u|^2)^{1/2} with central differences."""
    if cyl.r < 2.0 * u.h:
        raise GridError(f"cylinder radius {cyl.r} is below two grid spacings ({2 * u.h:.3e})")
    w = cyl.weights(u)
    g2 = np.sum(u.gradient() ** 2, axis=0)
    return math.sqrt(float(np.sum(w * g2) / np.sum(w)))


def _source_values(F, sol: SolutionField) -> np.ndarray:
    if F is None:
        return np.zeros_like(sol.u)
    if isinstance(F, np.ndarray):
        return np.broadcast_to(F, sol.u.shape)
    if callable(F):
        if sol.d == 1:
            return np.broadcast_to(F(sol.x[None, :], sol.t[:, None]), sol.u.shape)
        return np.broadcast_to(F(sol.x[None, :, None], sol.x[None, None, :], sol.t[:, None, None]),
                               sol.u.shape)
    return np.full(sol.u.shape, float(F))


def source_average(F, sol: SolutionField, cyl: ParabolicCylinder, p: float) -> float:
    """(avg_{Q_r} |F|^p)^{1/p}."""
    w = cyl.weights(sol)
    v = np.abs(_source_values(F, sol))
    if math.isinf(p):
        return float(np.max(v[w > 0])) if np.any(w > 0) else 0.0
    return float((np.sum(w * v ** p) / np.sum(w)) ** (1.0 / p))


# -- excess decay ----------------------------------------------------------------

@dataclass
class ExcessResult:
    G: float
    r: float
    nu: float
    residual: float
    slope: np.ndarray
    offset: float
    source_term: float
    orthogonality: float

    def as_dict(self) -> dict:
        return {"r": self.r, "G": self.G, "nu": self.nu, "residual": self.residual,
                "grad_P": float(np.linalg.norm(self.slope)), "offset": self.offset,
                "source_term": self.source_term, "orthogonality": self.orthogonality}


def holder_exponent(theta: float, p: float, d: int) -> float:
    """nu = min(theta, 1 - (d + 2)/p); needs p > d + 2."""
    if not p > d + 2:
        raise GridError(f"source exponent p={p} must exceed d + 2 = {d + 2}")
    return min(float(theta), 1.0 - (d + 2) / p)


def excess_decay(u: SolutionField, cyl: ParabolicCylinder, F: Optional[Source] = None,
                 p: float = math.inf, theta: float = 1.0) -> ExcessResult:
    """G(r; u) with the infimum over affine P(x) realised by weighted least squares on Q_r."""
    d = u.d
    nu = holder_exponent(theta, p, d)
    w = cyl.weights(u)
    mask = w > 0
    if np.count_nonzero(mask) < d + 1:
        raise GridError("cylinder has fewer nodes than affine unknowns")
    grids = np.meshgrid(*([u.x] * d), indexing="ij")
    cols = [np.ones(int(mask.sum()))]
    for g in grids:
        cols.append(np.broadcast_to(g[None], u.u.shape)[mask])
    B = np.stack(cols, axis=1)
    sw = np.sqrt(w[mask])
    vals = u.u[mask]
    coef, *_ = np.linalg.lstsq(B * sw[:, None], vals * sw, rcond=None)
    res = vals - B @ coef
    wm = w[mask]
    tot = wm.sum()
    # least-squares optimality: residual orthogonal to every basis function
    mag = float(np.max(np.abs(vals))) or 1.0
    inner = np.abs((wm * res / mag) @ B)
    scale = np.sqrt((wm * (vals / mag) ** 2).sum() * (wm[:, None] * B ** 2).sum(axis=0))
    orth = float(np.max(inner / scale)) if np.all(scale > 0) else 0.0
    if orth > 1e-8:
        raise SolverError(f"affine projection is not orthogonal (relative {orth:.2e})", orth)
    resid = math.sqrt(float((wm * res ** 2).sum() / tot))
    src = source_average(F, u, cyl, p) if F is not None else 0.0
    r = cyl.r
    slope = coef[1:]
    G = (resid + r ** (1.0 + nu) * float(np.linalg.norm(slope)) + r * r * src) / r
    return ExcessResult(G, r, nu, resid, slope, float(coef[0]), src, orth)


def excess_series(u: SolutionField, x0, t0: float, radii: Sequence[float], F=None,
                  p: float = math.inf, theta: float = 1.0, flavor: str = "interior") -> list:
    """G at each radius (largest first) with the decay factor G(r_k)/G(r_{k-1})."""
    rows = []
    prev = None
    for r in sorted((float(v) for v in radii), reverse=True):
        res = excess_decay(u, ParabolicCylinder.at(x0, t0, r, flavor), F, p, theta)
        row = res.as_dict()
        row["decay"] = res.G / prev if prev else float("nan")
        prev = res.G
        rows.append(row)
    return rows


# -- study configuration ----------------------------------------------------------

@dataclass(frozen=True)
class StudySetup:
    """Template for the fine-scale / homogenized comparison studies.

    The homogenized reference is stored on ``nx0`` intervals and ``nt0``
    steps; every fine solve stores ``nt0`` levels on a grid refined from it so
    the two can be compared by injection.  ``nt0`` is odd and not a power of
    two so stored levels do not phase-lock with the period kappa^2.
    """

    field: CoefficientField
    T: float = 1.0
    source: Source = 1.0
    boundary: Source = 0.0
    nx0: int = 256
    nt0: int = 3125
    cell_n: int = 64
    macro_n: int = 17
    space_factor: float = 16.0
    time_factor: float = 16.0
    scheme: str = "euler"

    def __post_init__(self):
        if self.field.dim != 1:
            raise GridError("rate studies run on the unit interval (d = 1)")

    def cell_grid(self, lam: Optional[float] = None) -> TorusGrid:
        return TorusGrid(1, self.cell_n, self.cell_n, lam)

    def fine_resolution(self, eps: float, kappa: float) -> Resolution:
        nx = self.nx0
        while nx < self.space_factor / eps * (1 - 1e-12):
            nx *= 2
        per = math.ceil(self.time_factor * self.T / (kappa ** 2 * self.nt0) * (1 - 1e-12))
        return Resolution(nx, self.nt0 * max(per, 1), self.nt0, self.scheme,
                          self.space_factor, self.time_factor)

    def coarse_resolution(self) -> Resolution:
        return Resolution(self.nx0, self.nt0, self.nt0, self.scheme,
                          self.space_factor, self.time_factor)

    def fine_problem(self, eps: float, kappa: float) -> PdeProblem:
        return PdeProblem(1, self.T, FineScale(self.field, eps, kappa), self.source, self.boundary)

    def homogenized_problem(self, rho: float) -> PdeProblem:
        tensor = TensorField.from_effective(self.field, rho, self.cell_grid(), self.T,
                                            self.macro_n, self.macro_n)
        return PdeProblem(1, self.T, tensor, self.source, self.boundary)

    def describe(self) -> dict:
        fam = self.field.family.to_dict() if self.field.family is not None else {"family": "custom"}
        return {"family": fam, "T": self.T, "nx0": self.nx0, "nt0": self.nt0,
                "cell_n": self.cell_n, "macro_n": self.macro_n,
                "space_factor": self.space_factor, "time_factor": self.time_factor,
                "scheme": self.scheme}


def kappa_of(eps: float, ell: float) -> float:
    return float(eps) ** (float(ell) / 2.0)


# -- Lipschitz probe ----------------------------------------------------------

@dataclass
class ProbeReport:
    eps: list
    kappa: list
    radii: list
    N: list
    averages: list
    reference: list
    source_term: float
    growth: list = field(default_factory=list)

    @property
    def max_growth(self) -> float:
        return max(self.growth) if self.growth else float("nan")

    def rows(self) -> list:
        out = []
        for k, e in enumerate(self.eps):
            row = {"eps": e, "kappa": self.kappa[k], "N": self.N[k], "reference": self.reference[k],
                   "growth": self.growth[k - 1] if k else float("nan")}
            for r, a in zip(self.radii, self.averages[k]):
                row[f"avg_r{r:g}"] = a
            out.append(row)
        return out

    def as_dict(self) -> dict:
        return {"eps": self.eps, "kappa": self.kappa, "radii": self.radii, "N": self.N,
                "growth": self.growth, "max_growth": self.max_growth,
                "source_term": self.source_term}


def _probe_one(setup: StudySetup, eps: float, kappa: float, radii, x0, t0, p) -> tuple:
    sol = solve_parabolic(setup.fine_problem(eps, kappa), setup.fine_resolution(eps, kappa))
    avgs = [gradient_average(sol, ParabolicCylinder.at(x0, t0, r)) for r in radii]
    big = ParabolicCylinder.at(x0, t0, 1.0, "boundary")
    ref = gradient_average(sol, big)
    src = source_average(setup.source, sol, big, p)
    return avgs, ref, src


def lipschitz_probe(setup: StudySetup, eps_list: Sequence[float], ell: float,
                    radii: Sequence[float], x0: float = 0.5, t0: Optional[float] = None,
                    p: float = math.inf, workers: int = 1) -> ProbeReport:
    """N(eps) = max_r avg_{Q_r}|grad u| / (avg_{Q_1}|grad u| + avg_{Q_1}(|F|^p)^{1/p})."""
    eps_list = sorted((float(e) for e in eps_list), reverse=True)
    radii = sorted(float(r) for r in radii)
    t0 = setup.T if t0 is None else float(t0)
    if not radii:
        raise GridError("need at least one probe radius")
    kappas = [kappa_of(e, ell) for e in eps_list]
    for e, k in zip(eps_list, kappas):
        if radii[0] < e + k - 1e-12:
            raise GridError(f"radius {radii[0]} is below eps + kappa = {e + k:.4g} at eps = {e:g}")
    if radii[-1] >= 1.0:
        raise GridError("probe radii must be below 1")
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        results = list(pool.map(lambda ek: _probe_one(setup, ek[0], ek[1], radii, x0, t0, p),
                                zip(eps_list, kappas)))
    N, avgs, refs = [], [], []
    src = results[0][2]
    for a, ref, s in results:
        avgs.append(a)
        refs.append(ref)
        N.append(max(a) / (ref + s))
    growth = [N[k + 1] / N[k] for k in range(len(N) - 1)]
    return ProbeReport(eps_list, kappas, radii, N, avgs, refs, src, growth)


# -- rate study -----------------------------------------------------------------

def predicted_exponent(ell: float) -> float:
    """Exponent of the dominant term: eps^{l/2} + eps^{2-l}, eps, or eps + eps^{l-2}."""
    ell = float(ell)
    if not ell > 0 or math.isinf(ell) or math.isnan(ell):
        raise GridError(f"regime exponent must be a positive finite number, got {ell}")
    if ell < 2.0:
        return min(ell / 2.0, 2.0 - ell)
    if ell == 2.0:
        return 1.0
    return min(1.0, ell - 2.0)


def select_rho(ell: float) -> float:
    """rho = lim kappa/eps for kappa = eps^{l/2}."""
    predicted_exponent(ell)
    if ell < 2.0:
        return math.inf
    if ell == 2.0:
        return 1.0
    return 0.0


def check_regime(f: CoefficientField, rho: float) -> None:
    """Reject a family lacking the smoothness its regime needs."""
    s = f.smooth
    if rho == 0.0 and (s.d2y is None or not math.isfinite(s.d2y)):
        raise RegimeError("the rho = 0 regime needs a bounded second y-derivative of A")
    if math.isinf(rho) and (s.ds is None or not math.isfinite(s.ds)):
        raise RegimeError("the rho = inf regime needs a bounded s-derivative of A")


def h2_norm(sol: SolutionField) -> tuple:
    """(||u||_{L2 H2}, ||d_t u||_{L2}) by finite differences (1D)."""
    if sol.d != 1:
        raise GridError("h2_norm is implemented for d = 1")
    ux = np.gradient(sol.u, sol.h, axis=1, edge_order=2)
    uxx = np.gradient(ux, sol.h, axis=1, edge_order=2)
    h2 = math.sqrt(sol.norm_l2() ** 2 + sol.norm_l2(ux) ** 2 + sol.norm_l2(uxx) ** 2)
    return h2, sol.norm_l2(sol.time_derivative())


@dataclass
class RateReport:
    ell: float
    eps: list
    kappa: list
    errors: list
    normalized: list
    fit: SlopeFit
    predicted: float
    rho: float
    meta: dict = field(default_factory=dict)

    def rows(self) -> list:
        return [{"eps": e, "kappa": k, "error": err, "log_eps": math.log(e),
                 "log_err": math.log(err) if err > 0 else float("-inf"), "normalized": n}
                for e, k, err, n in zip(self.eps, self.kappa, self.errors, self.normalized)]

    def as_dict(self) -> dict:
        return {"ell": self.ell, "slope": self.fit.slope, "residual": self.fit.residual,
                "predicted": self.predicted, "rho": self.rho, "fit": self.fit.as_dict(),
                "meta": self.meta}


def _check_dyadic(eps_list) -> list:
    eps = sorted((float(e) for e in eps_list), reverse=True)
    if len(eps) < 4:
        raise DegenerateFitError(f"a rate sweep needs at least 4 eps values, got {len(eps)}")
    for e in eps:
        k = math.log2(e)
        if not (0 < e <= 1) or abs(k - round(k)) > 1e-9:
            raise GridError(f"eps values must be dyadic (2^-k), got {e}")
    if len(set(eps)) != len(eps):
        raise GridError("eps values must be distinct")
    return eps


def rate_sweep(setup: StudySetup, ell: float, eps_list: Sequence[float], workers: int = 1) -> RateReport:
    """L2(Omega_T) error ||u_eps - u_0|| for kappa = eps^{l/2} with the regime-selected tensor."""
    eps = _check_dyadic(eps_list)
    rho = select_rho(ell)
    check_regime(setup.field, rho)
    u0 = solve_parabolic(setup.homogenized_problem(rho), setup.coarse_resolution())
    h2, ut = h2_norm(u0)
    norm = h2 + ut
    kappas = [kappa_of(e, ell) for e in eps]

    def one(ek):
        e, k = ek
        sol = solve_parabolic(setup.fine_problem(e, k), setup.fine_resolution(e, k))
        err = l2_error(sol, u0)
        log.info("eps=%g kappa=%g error=%.4e", e, k, err)
        return err

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        errors = list(pool.map(one, zip(eps, kappas)))
    fit = fit_loglog(eps, errors, min_points=4)
    if fit.degenerate:
        raise DegenerateFitError("rate fit is degenerate (non-positive errors)")
    meta = {"rho": rho, "selected_kind": "zero" if rho == 0 else ("infinity" if math.isinf(rho) else "lambda"),
            "u0_h2": h2, "u0_dt": ut, "normaliser": norm, "setup": setup.describe()}
    return RateReport(float(ell), eps, kappas, errors, [e / norm for e in errors], fit,
                      predicted_exponent(ell), rho, meta)


# -- two-scale expansion ---------------------------------------------------------

def _on_grid(values: np.ndarray, src: SolutionField, dst: SolutionField) -> np.ndarray:
    """Linear injection of a field on ``src``'s grid onto ``dst``'s (commensurate) grid."""
    _ratio(len(dst.x), len(src.x))
    if len(dst.t) > 1:
        _ratio(len(dst.t), len(src.t))
    out = _refine_axis(values, src.t, dst.t, 0)
    return _refine_axis(out, src.x, dst.x, 1)


def build_two_scale_expansion(u_eps: SolutionField, u_0: SolutionField, corr: CorrectorSet,
                              fc: FluxCorrectorSet, m: Mollifier, cut: Cutoff, eps: float,
                              max_delta: float = 1.0 / 20.0) -> SolutionField:
    """w = u_eps - u_0 - eps S(chi^eps u0_x) eta + eps^2 S(Bc^eps u0_xx) eta + eps^2 S(Bc^eps u0_x) eta_x.

    ``Bc`` is the time-row flux corrector; correctors are frozen at their
    macro point, so the x-derivative flux term is zero.
    """
    if u_eps.d != 1 or u_0.d != 1:
        raise GridError("the two-scale expansion is implemented for d = 1")
    if corr.kind != "lambda" or corr.lam is None:
        raise GridError("the expansion needs lambda-kind correctors")
    if fc.grid != corr.grid:
        raise GridError("correctors and flux correctors live on different cell grids")
    lam = float(corr.lam)
    delta = (1.0 + math.sqrt(lam)) * eps
    if not math.isclose(m.delta, delta, rel_tol=1e-9) or not math.isclose(cut.delta, delta, rel_tol=1e-9):
        raise GridError(f"mollifier and cutoff must use delta = (1 + sqrt(lambda)) eps = {delta:g}")
    if delta >= max_delta:
        raise GridError(f"delta = {delta:g} is not below {max_delta:g}")
    if cut.eta.shape != u_eps.u.shape:
        raise GridError("cutoff is not on the fine grid")
    if not math.isclose(u_eps.T, u_0.T):
        raise GridError("solutions live on different time intervals")
    ux = np.gradient(u_0.u, u_0.h, axis=1, edge_order=2)
    uxx = np.gradient(ux, u_0.h, axis=1, edge_order=2)
    base = u_0.u
    if u_0.u.shape != u_eps.u.shape:
        base = _on_grid(u_0.u, u_0, u_eps)
        ux = _on_grid(ux, u_0, u_eps)
        uxx = _on_grid(uxx, u_0, u_eps)
    x, t = u_eps.x, u_eps.t
    h = u_eps.h
    dt = float(t[1] - t[0])
    Y = x[None, :] / eps
    S = t[:, None] / eps ** 2
    chi = torus_interp(corr.chi[0], Y, S, lam)
    bt = torus_interp(fc.Bc[0, 1, 0], Y, S, lam)
    s_ux = smooth(ux, m, h, dt, space_mode="reflect", time_mode="reflect")
    s_uxx = smooth(uxx, m, h, dt, space_mode="reflect", time_mode="reflect")
    first = eps * chi * s_ux * cut.eta
    second = eps ** 2 * bt * (s_uxx * cut.eta + s_ux * cut.eta_x)
    w = u_eps.u - base - first + second
    meta = {"delta": delta, "lambda": lam, "eps": eps,
            "first_order_rms": float(np.sqrt(np.mean(first ** 2))),
            "second_order_rms": float(np.sqrt(np.mean(second ** 2)))}
    return SolutionField(1, u_eps.T, x, t, w, meta)


def face_gradient_norm(sol: SolutionField, values: Optional[np.ndarray] = None) -> float:
    """||d_x v||_{L2(Omega_T)} with forward differences on faces (1D)."""
    v = sol.u if values is None else values
    g = np.diff(v, axis=1) / sol.h
    inner = np.sum(g ** 2, axis=1) * sol.h
    return math.sqrt(float(np.trapezoid(inner, sol.t)))


@dataclass
class ExpansionReport:
    eps: float
    delta: float
    grad_w: float
    grad_diff: float
    normaliser: float
    meta: dict = field(default_factory=dict)

    @property
    def ratio(self) -> float:
        return self.grad_w / (math.sqrt(self.delta) * self.normaliser)

    @property
    def gain(self) -> bool:
        return self.grad_w < self.grad_diff

    def as_dict(self) -> dict:
        return {"eps": self.eps, "delta": self.delta, "grad_w": self.grad_w,
                "grad_diff": self.grad_diff, "normaliser": self.normaliser,
                "ratio": self.ratio, "gain": self.gain, **self.meta}


def expansion_gain(setup: StudySetup, eps: float, lam: float = 1.0, store_stride: int = 15,
                   max_delta: float = 1.0 / 20.0) -> ExpansionReport:
    """Solve both problems on one fine grid and measure the corrected gradient error."""
    f = setup.field
    if f.depends_on_macro:
        raise GridError("the expansion study freezes correctors; use a family without macro dependence")
    kappa = math.sqrt(lam) * eps
    delta = (1.0 + math.sqrt(lam)) * eps
    nx = 1
    while nx < setup.space_factor / eps * (1 - 1e-12):
        nx *= 2
    base = math.ceil(setup.time_factor * setup.T / kappa ** 2 / store_stride)
    nt = store_stride * base
    res = Resolution(nx, nt, base, setup.scheme, setup.space_factor, setup.time_factor)
    xt = (0.5, 0.0)
    grid = setup.cell_grid(lam)
    corr = solve_cell_lambda(f, xt, grid)
    B = build_flux_field(f, xt, corr)
    fc = build_flux_correctors(B)
    u_eps = solve_parabolic(PdeProblem(1, setup.T, FineScale(f, eps, kappa), setup.source, setup.boundary), res)
    tensor = TensorField.constant(effective_tensor(f, xt, corr).matrix)
    u_0 = solve_homogenized(PdeProblem(1, setup.T, tensor, setup.source, setup.boundary), res)
    cut = Cutoff.build(delta, u_eps.x, u_eps.t, "domain")
    m = Mollifier(delta, 1)
    w = build_two_scale_expansion(u_eps, u_0, corr, fc, m, cut, eps, max_delta=max_delta)
    ux = np.gradient(u_0.u, u_0.h, axis=1, edge_order=2)
    uxx = np.gradient(ux, u_0.h, axis=1, edge_order=2)
    norm = u_0.norm_l2(uxx) + u_0.norm_l2(u_0.time_derivative()) + u_0.norm_l2(ux)
    return ExpansionReport(eps, delta, face_gradient_norm(w), face_gradient_norm(u_eps, u_eps.u - u_0.u),
                           norm, {"nx": nx, "nt": nt, "n_store": base, **w.meta})
