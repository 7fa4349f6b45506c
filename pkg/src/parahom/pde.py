"""Initial-Dirichlet problems for the fine-scale and homogenized operators.

Flux-form finite differences on the unit interval or square with face
sampling of the coefficient, implicit Euler (default) or BDF2 in time.
Solutions are stored on a uniform time sub-grid of every ``stride``-th step.
"""
from __future__ import annotations

import csv
import hashlib
import json
import math
import struct
from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np
import scipy.fft as sfft
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.interpolate import RectBivariateSpline

from .cell import TorusGrid, select_effective
from .coefficients import CoefficientField
from .errors import GridError, ResolutionError, SolverError
from .kernels import march_tridiagonal

Scalar = Union[float, Callable]


# -- coefficients of the two problems ----------------------------------------

@dataclass(frozen=True, eq=False)
class FineScale:
    """A(x, t, x/eps, t/kappa^2)."""

    field: CoefficientField
    eps: float
    kappa: float

    def __post_init__(self):
        for name in ("eps", "kappa"):
            v = getattr(self, name)
            if not (0.0 < v <= 1.0):
                raise GridError(f"{name} must lie in (0, 1], got {v}")

    @property
    def dim(self) -> int:
        return self.field.dim

    def entries(self, xs, t):
        ys = tuple(x / self.eps for x in xs)
        return self.field.entries(xs, t, ys, t / self.kappa ** 2)

    def describe(self) -> dict:
        fam = self.field.family.to_dict() if self.field.family is not None else {"family": "custom"}
        return {"fine": fam, "eps": self.eps, "kappa": self.kappa}


class TensorField:
    """Macro tensor field A-hat(x, t) for the homogenized problem.

    Either constant, or sampled on a tensor macro grid and interpolated by
    bicubic splines (1D only); samples are cached on the instance.
    """

    def __init__(self, dim: int, const: Optional[np.ndarray] = None,
                 x_nodes=None, t_nodes=None, samples=None, label: str = ""):
        self.dim = dim
        self.const = None if const is None else np.asarray(const, dtype=float).reshape(dim, dim)
        self.x_nodes = x_nodes
        self.t_nodes = t_nodes
        self.samples = samples
        self.label = label
        self._splines = None
        if samples is not None:
            if dim != 1:
                raise GridError("sampled macro tensor fields are supported in d = 1 only")
            kx = min(3, len(x_nodes) - 1)
            kt = min(3, len(t_nodes) - 1)
            self._splines = RectBivariateSpline(x_nodes, t_nodes, samples[:, :, 0, 0], kx=kx, ky=kt)

    @classmethod
    def constant(cls, matrix, dim: Optional[int] = None) -> "TensorField":
        m = np.atleast_2d(np.asarray(matrix, dtype=float))
        return cls(dim or m.shape[0], const=m, label="constant")

    @classmethod
    def from_effective(cls, f: CoefficientField, rho: float, grid: TorusGrid, T: float = 1.0,
                       n_x: int = 17, n_t: int = 17, **kw) -> "TensorField":
        """Sample ``select_effective`` on a macro grid (one point if A has no macro dependence)."""
        if not f.depends_on_macro:
            xt = (np.full(f.dim, 0.5), 0.0)
            return cls.constant(select_effective(f, xt, rho, grid, **kw).matrix, f.dim)
        if f.dim != 1:
            raise GridError("macro-dependent homogenized tensors are supported in d = 1 only")
        xn = np.linspace(0.0, 1.0, n_x)
        tn = np.linspace(0.0, T, n_t)
        samples = np.empty((n_x, n_t, 1, 1))
        for i, x in enumerate(xn):
            for j, t in enumerate(tn):
                samples[i, j] = select_effective(f, (x, t), rho, grid, **kw).matrix
        return cls(1, x_nodes=xn, t_nodes=tn, samples=samples, label=f"rho={rho}")

    def entries(self, xs, t):
        """Components with shape ``(d, d, *broadcast(xs, t))``."""
        shape = np.broadcast_shapes(*(np.shape(x) for x in xs), np.shape(t))
        if self.const is not None:
            return np.broadcast_to(self.const.reshape((self.dim, self.dim) + (1,) * len(shape)),
                                   (self.dim, self.dim) + shape)
        x = np.broadcast_to(xs[0], shape)
        tt = np.broadcast_to(t, shape)
        vals = self._splines(x.ravel(), tt.ravel(), grid=False).reshape(shape)
        return vals[None, None]

    def describe(self) -> dict:
        if self.const is not None:
            return {"homogenized": "constant", "matrix": self.const.tolist()}
        return {"homogenized": self.label, "n_x": len(self.x_nodes), "n_t": len(self.t_nodes),
                "checksum": float(np.sum(self.samples))}


@dataclass(frozen=True, eq=False)
class PdeProblem:
    d: int
    T: float
    coefficient: Union[FineScale, TensorField]
    source: Scalar = 0.0
    boundary: Scalar = 0.0

    def __post_init__(self):
        if self.d not in (1, 2):
            raise GridError(f"domain dimension must be 1 or 2, got {self.d}")
        if not self.T > 0:
            raise GridError(f"final time must be positive, got {self.T}")
        if self.coefficient.dim != self.d:
            raise GridError("coefficient dimension does not match the domain")

    @property
    def fine(self) -> bool:
        return isinstance(self.coefficient, FineScale)

    def with_coefficient(self, coef) -> "PdeProblem":
        return PdeProblem(self.d, self.T, coef, self.source, self.boundary)

    def describe(self) -> dict:
        def name(v):
            return float(v) if not callable(v) else getattr(v, "__name__", "callable")
        return {"d": self.d, "T": self.T, "coefficient": self.coefficient.describe(),
                "source": name(self.source), "boundary": name(self.boundary)}

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.describe(), sort_keys=True).encode()).hexdigest()[:16]


def _eval(v: Scalar, xs, t):
    if callable(v):
        return np.asarray(v(*xs, t), dtype=float)
    return np.asarray(float(v))


@dataclass(frozen=True)
class Resolution:
    """Grid for one solve: ``nx`` intervals per axis, ``nt`` time steps.

    ``n_store`` stored time levels besides t = 0 (must divide ``nt``).
    ``space_factor`` / ``time_factor`` are the scale-resolving guards
    h <= eps / space_factor and dt <= kappa^2 / time_factor.
    """

    nx: int
    nt: int
    n_store: Optional[int] = None
    scheme: str = "euler"
    space_factor: float = 16.0
    time_factor: float = 16.0
    batch: int = 512

    def __post_init__(self):
        if self.nx < 2 or self.nt < 1:
            raise GridError("need nx >= 2 and nt >= 1")
        if self.scheme not in ("euler", "bdf2"):
            raise GridError(f"unknown time scheme {self.scheme!r}")
        n = self.n_store if self.n_store is not None else self.nt
        if n < 1 or self.nt % n:
            raise GridError(f"n_store={n} must divide nt={self.nt}")

    @property
    def stride(self) -> int:
        return self.nt // (self.n_store if self.n_store is not None else self.nt)


@dataclass(frozen=True, eq=False)
class SolutionField:
    """Nodal values ``u[k, i(, j)]`` at times ``t[k]`` on the uniform grid ``x``."""

    d: int
    T: float
    x: np.ndarray
    t: np.ndarray
    u: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def h(self) -> float:
        return float(self.x[1] - self.x[0])

    def gradient(self) -> np.ndarray:
        """Central differences in space, shape ``(d, *u.shape)``."""
        return np.stack([np.gradient(self.u, self.h, axis=1 + i, edge_order=2) for i in range(self.d)])

    def time_derivative(self) -> np.ndarray:
        return np.gradient(self.u, self.t, axis=0, edge_order=2)

    def norm_l2(self, values: Optional[np.ndarray] = None) -> float:
        v = self.u if values is None else values
        return math.sqrt(integrate(v ** 2, self.t, self.x, self.d))

    def save_binary(self, path) -> None:
        write_binary(path, self)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            if self.d == 1:
                w.writerow(["t", "x", "u"])
                for k, tk in enumerate(self.t):
                    for i, xi in enumerate(self.x):
                        w.writerow([repr(float(tk)), repr(float(xi)), repr(float(self.u[k, i]))])
            else:
                w.writerow(["t", "x1", "x2", "u"])
                for k, tk in enumerate(self.t):
                    for i, xi in enumerate(self.x):
                        for j, xj in enumerate(self.x):
                            w.writerow([repr(float(tk)), repr(float(xi)), repr(float(xj)),
                                        repr(float(self.u[k, i, j]))])


def integrate(values: np.ndarray, t: np.ndarray, x: np.ndarray, d: int) -> float:
    """Trapezoid rule over time and every space axis."""
    acc = values
    for _ in range(d):
        acc = np.trapezoid(acc, x, axis=-1)
    if len(t) == 1:
        return float(acc[0])
    return float(np.trapezoid(acc, t, axis=0))


# -- binary layout ----------------------------------------------------------
#
#   bytes 0-3   magic b"PHSF"
#   u32         format version (1)
#   u32         d
#   u32         N_x  (nodes per space axis)
#   u32         N_t  (stored time levels)
#   f64         T
#   f64 * N_t * N_x^d   nodal values, row-major with time slowest
# all little-endian.  The grid is x_i = i / (N_x - 1), t_k = k T / (N_t - 1).

_MAGIC = b"PHSF"
_HEADER = struct.Struct("<4sIIIId")


def write_binary(path, sol: SolutionField) -> None:
    nt, nx = sol.u.shape[0], sol.u.shape[1]
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, 1, sol.d, nx, nt, float(sol.T)))
        fh.write(np.ascontiguousarray(sol.u, dtype="<f8").tobytes())


def read_binary(path) -> SolutionField:
    with open(path, "rb") as fh:
        raw = fh.read()
    magic, ver, d, nx, nt, T = _HEADER.unpack_from(raw, 0)
    if magic != _MAGIC or ver != 1:
        raise GridError(f"{path}: not a solution field file")
    u = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size).reshape((nt,) + (nx,) * d).copy()
    x = np.linspace(0.0, 1.0, nx)
    t = np.linspace(0.0, T, nt) if nt > 1 else np.array([T])
    return SolutionField(d, T, x, t, u, {"source": str(path)})


# -- solvers ---------------------------------------------------------------

def _check_resolution(p: PdeProblem, res: Resolution) -> None:
    if not p.fine:
        return
    c = p.coefficient
    h = 1.0 / res.nx
    dt = p.T / res.nt
    if h > c.eps / res.space_factor * (1 + 1e-12):
        raise ResolutionError(f"h = {h:.3e} does not resolve eps = {c.eps:.3e} "
                              f"(need h <= eps/{res.space_factor:g}, i.e. nx >= "
                              f"{math.ceil(res.space_factor / c.eps)})")
    if dt > c.kappa ** 2 / res.time_factor * (1 + 1e-12):
        raise ResolutionError(f"dt = {dt:.3e} does not resolve kappa^2 = {c.kappa ** 2:.3e} "
                              f"(need nt >= {math.ceil(res.time_factor * p.T / c.kappa ** 2)})")


def solve_parabolic(p: PdeProblem, res: Resolution) -> SolutionField:
    """Fine-scale or homogenized solve on the unit interval or square."""
    _check_resolution(p, res)
    if p.d == 1:
        return _solve_1d(p, res)
    return _solve_2d(p, res)


def solve_homogenized(p: PdeProblem, res: Resolution) -> SolutionField:
    if p.fine:
        raise GridError("solve_homogenized needs a TensorField coefficient")
    return solve_parabolic(p, res)


def _solve_1d(p: PdeProblem, res: Resolution) -> SolutionField:
    nx, nt = res.nx, res.nt
    h = 1.0 / nx
    dt = p.T / nt
    x = np.linspace(0.0, 1.0, nx + 1)
    xf = (np.arange(nx) + 0.5) * h
    stride = res.stride
    n_out = nt // stride + 1
    out = np.empty((n_out, nx + 1))
    u = np.asarray(np.broadcast_to(_eval(p.boundary, (x,), 0.0), x.shape), dtype=float).copy()
    out[0] = u
    u_old = u.copy()
    out_n = np.zeros(1, dtype=np.int64)
    order = 2 if res.scheme == "bdf2" else 1
    src_const = not callable(p.source)
    bnd_const = not callable(p.boundary)
    amin = math.inf
    step = 0
    while step < nt:
        nb = min(res.batch, nt - step)
        tb = (step + 1 + np.arange(nb)) * dt
        a = p.coefficient.entries((xf[None, :],), tb[:, None])[0, 0]
        a = np.broadcast_to(a, (nb, nx))
        amin = min(amin, float(a.min()))
        if amin <= 0.0:
            raise GridError(f"sampled coefficient is not elliptic (min {amin:.3e})")
        if src_const:
            src = np.full((nb, nx - 1), float(p.source))
        else:
            src = np.broadcast_to(_eval(p.source, (x[None, 1:-1],), tb[:, None]), (nb, nx - 1))
        if bnd_const:
            bnd = np.full((nb, 2), float(p.boundary))
        else:
            bnd = np.stack([np.broadcast_to(_eval(p.boundary, (np.zeros(1),), tb[:, None])[..., 0], (nb,)),
                            np.broadcast_to(_eval(p.boundary, (np.ones(1),), tb[:, None])[..., 0], (nb,))], axis=1)
        march_tridiagonal(u, u_old, a, src, bnd, dt, h, order, step, stride, out, out_n)
        step += nb
    t = np.arange(n_out) * stride * dt
    meta = {"scheme": res.scheme, "nx": nx, "nt": nt, "stride": stride,
            "problem": p.digest(), "min_coefficient": amin}
    return SolutionField(1, p.T, x, t, out, meta)


def _dst_preconditioner(n: int, h: float, c: float, a_ref: float):
    k = np.arange(1, n)
    lam = (2.0 - 2.0 * np.cos(np.pi * k / n)) / h ** 2
    denom = c + a_ref * (lam[:, None] + lam[None, :])

    def apply(v):
        r = v.reshape(n - 1, n - 1)
        return sfft.idstn(sfft.dstn(r, type=1) / denom, type=1).ravel()

    return apply


def _solve_2d(p: PdeProblem, res: Resolution, rtol: float = 1e-10) -> SolutionField:
    nx, nt = res.nx, res.nt
    h = 1.0 / nx
    dt = p.T / nt
    if res.scheme != "euler":
        raise GridError("the 2D solver supports implicit Euler only")
    x = np.linspace(0.0, 1.0, nx + 1)
    X1, X2 = np.meshgrid(x, x, indexing="ij")
    xc = (np.arange(nx) + 0.5) * h
    # faces normal to x1: (xc, x) ; faces normal to x2: (x, xc)
    F1 = (xc[:, None], x[None, 1:-1])
    F2 = (x[1:-1, None], xc[None, :])
    m = nx - 1
    N = m * m
    stride = res.stride
    n_out = nt // stride + 1
    out = np.empty((n_out, nx + 1, nx + 1))
    u = np.array(np.broadcast_to(_eval(p.boundary, (X1, X2), 0.0), X1.shape), dtype=float)
    out[0] = u
    idx = np.arange(N).reshape(m, m)
    amin = math.inf
    c = 1.0 / dt
    for step in range(1, nt + 1):
        tn = step * dt
        a1 = p.coefficient.entries(F1, tn)
        a2 = p.coefficient.entries(F2, tn)
        if np.max(np.abs(a1[0, 1])) > 0 or np.max(np.abs(a2[1, 0])) > 0:
            raise GridError("the 2D solver supports diagonal coefficients only")
        aw = np.broadcast_to(a1[0, 0], (nx, m))  # faces i+1/2, j
        an = np.broadcast_to(a2[1, 1], (m, nx))  # faces i, j+1/2
        amin = min(amin, float(aw.min()), float(an.min()))
        if amin <= 0.0:
            raise GridError(f"sampled coefficient is not elliptic (min {amin:.3e})")
        ih2 = 1.0 / h ** 2
        diag = c + (aw[:-1] + aw[1:] + an[:, :-1] + an[:, 1:]) * ih2
        rows = [idx.ravel()]
        cols = [idx.ravel()]
        vals = [diag.ravel()]
        for sl_a, sl_b, coef in ((np.s_[1:, :], np.s_[:-1, :], aw[1:-1]),
                                 (np.s_[:, 1:], np.s_[:, :-1], an[:, 1:-1])):
            ia, ib = idx[sl_a].ravel(), idx[sl_b].ravel()
            v = -coef.ravel() * ih2
            rows += [ia, ib]
            cols += [ib, ia]
            vals += [v, v]
        M = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(N, N))
        g = np.broadcast_to(_eval(p.boundary, (X1, X2), tn), X1.shape)
        rhs = c * u[1:-1, 1:-1] + np.broadcast_to(_eval(p.source, (X1[1:-1, 1:-1], X2[1:-1, 1:-1]), tn), (m, m))
        rhs = rhs.copy()
        rhs[0, :] += aw[0] * ih2 * g[0, 1:-1]
        rhs[-1, :] += aw[-1] * ih2 * g[-1, 1:-1]
        rhs[:, 0] += an[:, 0] * ih2 * g[1:-1, 0]
        rhs[:, -1] += an[:, -1] * ih2 * g[1:-1, -1]
        a_ref = 0.5 * float(aw.mean() + an.mean())
        prec = spla.LinearOperator((N, N), matvec=_dst_preconditioner(nx, h, c, a_ref))
        b = rhs.ravel()
        sol, info = spla.cg(M, b, x0=u[1:-1, 1:-1].ravel(), rtol=rtol, atol=0.0, M=prec, maxiter=500)
        if info != 0:
            r = np.linalg.norm(b - M @ sol) / max(np.linalg.norm(b), 1e-300)
            if r > 10 * rtol:
                raise SolverError(f"2D step {step} did not converge (relative residual {r:.3e})", r)
        u = g.copy()
        u[1:-1, 1:-1] = sol.reshape(m, m)
        if step % stride == 0:
            out[step // stride] = u
    t = np.arange(n_out) * stride * dt
    meta = {"scheme": res.scheme, "nx": nx, "nt": nt, "stride": stride,
            "problem": p.digest(), "min_coefficient": amin}
    return SolutionField(2, p.T, x, t, out, meta)


# -- comparison ---------------------------------------------------------------

def _ratio(n_fine: int, n_coarse: int) -> int:
    if (n_fine - 1) % (n_coarse - 1):
        raise GridError(f"grids with {n_fine} and {n_coarse} nodes are not commensurate")
    return (n_fine - 1) // (n_coarse - 1)


def _refine_axis(values: np.ndarray, coarse: np.ndarray, fine: np.ndarray, axis: int) -> np.ndarray:
    if len(coarse) == len(fine):
        return values
    moved = np.moveaxis(values, axis, -1)
    flat = moved.reshape(-1, moved.shape[-1])
    res = np.empty((flat.shape[0], len(fine)))
    for r in range(flat.shape[0]):
        res[r] = np.interp(fine, coarse, flat[r])
    return np.moveaxis(res.reshape(moved.shape[:-1] + (len(fine),)), -1, axis)


def l2_error(u: SolutionField, v: SolutionField) -> float:
    """L2(Omega_T) distance after multilinear injection onto the finer grid."""
    if u.d != v.d or not math.isclose(u.T, v.T):
        raise GridError("solution fields live on different domains")
    vals = []
    xs_f = u.x if len(u.x) >= len(v.x) else v.x
    ts_f = u.t if len(u.t) >= len(v.t) else v.t
    for w in (u, v):
        _ratio(len(xs_f), len(w.x))
        if len(ts_f) > 1 or len(w.t) > 1:
            _ratio(len(ts_f), len(w.t))
        arr = _refine_axis(w.u, w.t, ts_f, 0)
        for ax in range(w.d):
            arr = _refine_axis(arr, w.x, xs_f, 1 + ax)
        vals.append(arr)
    diff = vals[0] - vals[1]
    return math.sqrt(integrate(diff ** 2, ts_f, xs_f, u.d))


def heat_eigenmode(amp: float = 1.0, a: float = 1.0):
    """``amp exp(-a pi^2 t) sin(pi x)`` solving u_t = a u_xx with that boundary data."""
    def g(x, t):
        return amp * np.exp(-a * np.pi ** 2 * t) * np.sin(np.pi * x)
    g.__name__ = f"heat_eigenmode(a={a:g})"
    return g
