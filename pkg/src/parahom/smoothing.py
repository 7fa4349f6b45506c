"""Space-time mollification S_delta acting on slow variables only.

The time kernel has support |t| < delta^2 and the space kernel |x| < delta,
both built from the bump exp(-1/(1 - r^2)).  Fields are arrays ``(n_t, n_x)``
or ``(n_t, n_x, n_x)`` on uniform grids.

For a two-scale product g(x, t, x/eps, t/eps^2) h(x, t) the fast arguments
are frozen at the output point.  When g has no slow dependence this gives
``S(g^eps h) = g^eps S(h)`` exactly; otherwise g is expanded in piecewise
linear hats over a grid of fast nodes, ``g = sum_q w_q(y, s) g_q(x, t)``,
and ``S(g^eps h) = sum_q w_q(x/eps, t/eps^2) S(g_q h)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.integrate import quad

from .errors import GridError
from .fitting import SlopeFit, fit_loglog
from .kernels import correlate_axis


def bump(r):
    r = np.asarray(r, dtype=float)
    out = np.zeros_like(r)
    inside = np.abs(r) < 1.0
    out[inside] = np.exp(-1.0 / (1.0 - r[inside] ** 2))
    return out


def _bump_scalar(r: float) -> float:
    return math.exp(-1.0 / (1.0 - r * r)) if abs(r) < 1.0 else 0.0


_NORM_1D = 1.0 / quad(_bump_scalar, -1.0, 1.0, epsabs=1e-14, epsrel=1e-13)[0]
_NORM_2D = 1.0 / (2.0 * math.pi * quad(lambda r: r * _bump_scalar(r), 0.0, 1.0,
                                       epsabs=1e-14, epsrel=1e-13)[0])


@dataclass(frozen=True)
class Mollifier:
    """phi_{1,delta}(t) phi_{2,delta}(x) with unit mass."""

    delta: float
    d: int = 1
    min_points: int = 8

    def __post_init__(self):
        if not self.delta > 0:
            raise GridError(f"mollifier scale must be positive, got {self.delta}")
        if self.d not in (1, 2):
            raise GridError(f"d must be 1 or 2, got {self.d}")

    def time_kernel(self, t):
        dd = self.delta ** 2
        return _NORM_1D * bump(np.asarray(t) / dd) / dd

    def space_kernel(self, *xs):
        r2 = sum(np.asarray(x) ** 2 for x in xs)
        r = np.sqrt(r2) / self.delta
        norm = _NORM_1D if self.d == 1 else _NORM_2D
        return norm * bump(r) / self.delta ** self.d

    def check_resolution(self, h: float, dt: Optional[float]) -> None:
        need_h = 2.0 * self.delta / self.min_points
        if h > need_h * (1 + 1e-12):
            raise GridError(f"space grid h={h:.3e} under-resolves delta={self.delta:g}: "
                            f"need h <= {need_h:.3e}")
        if dt is not None:
            need_t = 2.0 * self.delta ** 2 / self.min_points
            if dt > need_t * (1 + 1e-12):
                raise GridError(f"time grid dt={dt:.3e} under-resolves delta^2={self.delta ** 2:.3e}: "
                                f"need dt <= {need_t:.3e}")

    def time_weights(self, dt: float) -> np.ndarray:
        r = int(math.floor(self.delta ** 2 / dt))
        w = self.time_kernel(np.arange(-r, r + 1) * dt) * dt
        return w / w.sum()

    def space_weights(self, h: float) -> np.ndarray:
        r = int(math.floor(self.delta / h))
        q = np.arange(-r, r + 1) * h
        if self.d == 1:
            w = self.space_kernel(q) * h
        else:
            w = self.space_kernel(q[:, None], q[None, :]) * h * h
        return w / w.sum()

    def discrete_mass(self, h: float, dt: float) -> tuple:
        """Unnormalised quadrature masses of the two kernels."""
        r = int(math.floor(self.delta ** 2 / dt))
        mt = float(np.sum(self.time_kernel(np.arange(-r, r + 1) * dt)) * dt)
        r = int(math.floor(self.delta / h))
        q = np.arange(-r, r + 1) * h
        if self.d == 1:
            mx = float(np.sum(self.space_kernel(q)) * h)
        else:
            mx = float(np.sum(self.space_kernel(q[:, None], q[None, :])) * h * h)
        return mt, mx


def _disk_correlate(field, w, mode):
    # field (..., n, n); w (2r+1, 2r+1)
    r = (w.shape[0] - 1) // 2
    n1, n2 = field.shape[-2:]
    if mode == "periodic":
        out = np.zeros_like(field)
        for a in range(-r, r + 1):
            for b in range(-r, r + 1):
                c = w[a + r, b + r]
                if c:
                    out += c * np.roll(field, (-a, -b), axis=(-2, -1))
        return out
    pad_mode = {"reflect": "reflect", "zero": "constant"}[mode]
    pad = [(0, 0)] * (field.ndim - 2) + [(r, r), (r, r)]
    big = np.pad(field, pad, mode=pad_mode)
    out = np.zeros_like(field)
    for a in range(-r, r + 1):
        for b in range(-r, r + 1):
            c = w[a + r, b + r]
            if c:
                out += c * big[..., r + a:r + a + n1, r + b:r + b + n2]
    return out


def smooth(field: np.ndarray, m: Mollifier, h: float, dt: Optional[float],
           space_mode: str = "periodic", time_mode: str = "periodic") -> np.ndarray:
    """Mollify a grid function in its slow arguments.

    ``field`` has time on axis 0 (skip time smoothing with ``dt=None``) and
    ``m.d`` space axes after it.  Boundary modes are ``periodic``,
    ``reflect`` or ``zero``.
    """
    m.check_resolution(h, dt)
    out = np.asarray(field, dtype=float)
    if dt is not None:
        out = correlate_axis(out, m.time_weights(dt), axis=0, mode=time_mode)
    w = m.space_weights(h)
    if m.d == 1:
        out = correlate_axis(out, w, axis=out.ndim - 1, mode=space_mode)
    else:
        out = _disk_correlate(out, w, space_mode)
    return out


# -- two-scale symbols ---------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class TwoScaleSymbol:
    """Scalar g(xs, t, ys, s), 1-periodic in (ys, s), with a slow-dependence flag."""

    func: Callable
    d: int = 1
    slow: bool = True
    period_s: float = 1.0
    n_nodes_y: int = 32
    n_nodes_s: int = 32

    @classmethod
    def from_coefficient(cls, f, i: int = 0, j: int = 0, **kw) -> "TwoScaleSymbol":
        def g(xs, t, ys, s):
            return f.entries(xs, t, ys, s)[i, j]
        return cls(g, f.dim, bool(f.depends_on_macro), **kw)

    @classmethod
    def from_torus(cls, values: np.ndarray, period_s: float) -> "TwoScaleSymbol":
        """Fast-only symbol from samples on a (n_s, n_y) torus grid (1D), periodic bilinear interp."""
        values = np.asarray(values, dtype=float)

        def g(xs, t, ys, s):
            return torus_interp(values, ys[0], s, period_s)
        return cls(g, 1, False, period_s)

    def fast(self, xs, t, eps: float):
        ys = tuple(x / eps for x in xs)
        return self.func(xs, t, ys, t / eps ** 2)


def torus_interp(values: np.ndarray, y, s, period_s: float = 1.0):
    """Periodic bilinear interpolation of ``values[i_s, i_y]`` at (y, s)."""
    ns, ny = values.shape
    y = np.asarray(y, dtype=float)
    s = np.asarray(s, dtype=float)
    fy = np.mod(y, 1.0) * ny
    fs = np.mod(s / period_s, 1.0) * ns
    iy = np.floor(fy).astype(int)
    is_ = np.floor(fs).astype(int)
    wy = fy - iy
    ws = fs - is_
    iy %= ny
    is_ %= ns
    iy1 = (iy + 1) % ny
    is1 = (is_ + 1) % ns
    return ((1 - ws) * ((1 - wy) * values[is_, iy] + wy * values[is_, iy1]) +
            ws * ((1 - wy) * values[is1, iy] + wy * values[is1, iy1]))


def _hat(z, n):
    """Periodic linear hat weights on n nodes of the unit circle: (n, *z.shape)."""
    f = np.mod(z, 1.0) * n
    out = np.empty((n,) + np.shape(z))
    for k in range(n):
        dist = np.abs(f - k)
        dist = np.minimum(dist, n - dist)
        out[k] = np.maximum(0.0, 1.0 - dist)
    return out


def smooth_two_scale(g: TwoScaleSymbol, hfield: np.ndarray, x: np.ndarray, t: np.ndarray,
                     eps: float, m: Mollifier, space_mode: str = "periodic",
                     time_mode: str = "periodic") -> np.ndarray:
    """S_delta(g^eps h) on the grid of ``hfield`` (1D space only for slow symbols)."""
    h = float(x[1] - x[0])
    dt = float(t[1] - t[0]) if len(t) > 1 else None
    X = [x.reshape((1,) + (-1,) + (1,) * (m.d - 1))]
    if m.d == 2:
        X = [x.reshape(1, -1, 1), x.reshape(1, 1, -1)]
    T = t.reshape((-1,) + (1,) * m.d)
    if not g.slow:
        return g.fast(X, T, eps) * smooth(hfield, m, h, dt, space_mode, time_mode)
    if m.d != 1:
        raise GridError("slow two-scale symbols are supported in d = 1 only")
    ny, ns = g.n_nodes_y, g.n_nodes_s
    wy = _hat(X[0] / eps, ny)
    ws = _hat(T / eps ** 2 / g.period_s, ns)
    out = np.zeros(np.broadcast_shapes(hfield.shape, X[0].shape, T.shape))
    for a in range(ny):
        ya = a / ny
        for b in range(ns):
            sb = b / ns * g.period_s
            gq = np.broadcast_to(g.func(X, T, (np.asarray(ya),), np.asarray(sb)), out.shape)
            sm = smooth(gq * hfield, m, h, dt, space_mode, time_mode)
            out += wy[a] * ws[b] * sm
    return out


# -- verification of the smoothing bounds --------------------------------------

@dataclass
class SmoothingReport:
    deltas: list
    eps: float
    approx_error: list
    fit: SlopeFit
    bound_ratio: list
    grad_norm: list
    rows: list

    def as_dict(self) -> dict:
        return {"deltas": self.deltas, "eps": self.eps, "approx_error": self.approx_error,
                "slope": self.fit.slope, "fit": self.fit.as_dict(),
                "bound_ratio": self.bound_ratio, "grad_norm": self.grad_norm}


@dataclass(frozen=True)
class TestFunction:
    """A smooth periodic test function with its first derivatives."""

    f: Callable
    fx: Callable
    name: str = "custom"

    __test__ = False  # not a pytest class

    @classmethod
    def sine(cls) -> "TestFunction":
        tp = 2.0 * np.pi
        return cls(lambda x, t: np.sin(tp * x) * np.cos(tp * t),
                   lambda x, t: tp * np.cos(tp * x) * np.cos(tp * t),
                   "sin(2 pi x) cos(2 pi t)")


def _l2(v, h, dt) -> float:
    return float(np.sqrt(np.sum(v ** 2) * h * dt))


def verify_smoothing_bounds(g: TwoScaleSymbol, test: TestFunction, deltas: Sequence[float],
                            eps: float, n_x: Optional[int] = None, n_t: Optional[int] = None,
                            max_points: int = 40_000_000) -> SmoothingReport:
    """Fit the approximation error of S_delta on the periodic unit square (1D space).

    Reports, per delta: ||g^eps f_x - S(g^eps f_x)||, the ratio
    ||S(g^eps f_x)|| / ||f|| and ||d_x S(g^eps f)||.
    """
    deltas = sorted(float(v) for v in deltas)
    if len(deltas) < 3:
        raise GridError("need at least 3 delta values")
    if g.d != 1:
        raise GridError("smoothing verification runs on a 1D periodic domain")
    m_min = Mollifier(deltas[0], 1)
    if n_x is None:
        n_x = 1 << int(math.ceil(math.log2(max(m_min.min_points / (2 * deltas[0]) + 1, 16 / eps))))
    if n_t is None:
        n_t = 1 << int(math.ceil(math.log2(max(m_min.min_points / (2 * deltas[0] ** 2) + 1,
                                               16 / eps ** 2))))
    if n_x * n_t > max_points:
        raise GridError(f"verification grid {n_t} x {n_x} is too large; increase eps or the smallest delta")
    h, dt = 1.0 / n_x, 1.0 / n_t
    x = np.arange(n_x) * h
    t = np.arange(n_t) * dt
    X, T = x[None, :], t[:, None]
    fx = np.broadcast_to(test.fx(X, T), (n_t, n_x))
    fv = np.broadcast_to(test.f(X, T), (n_t, n_x))
    gfx = g.fast([X], T, eps) * fx
    fnorm = _l2(fv, h, dt)
    errs, ratios, grads, rows = [], [], [], []
    for dl in deltas:
        m = Mollifier(dl, 1)
        sm = smooth_two_scale(g, fx, x, t, eps, m)
        err = _l2(gfx - sm, h, dt)
        sf = smooth_two_scale(g, fv, x, t, eps, m)
        dsf = (np.roll(sf, -1, axis=1) - np.roll(sf, 1, axis=1)) / (2 * h)
        errs.append(err)
        ratios.append(_l2(sm, h, dt) / fnorm)
        grads.append(_l2(dsf, h, dt))
        rows.append({"delta": dl, "approx_error": err, "bound_ratio": ratios[-1],
                     "grad_norm": grads[-1], "n_x": n_x, "n_t": n_t})
    fit = fit_loglog(deltas, errs)
    return SmoothingReport(deltas, eps, errs, fit, ratios, grads, rows)
