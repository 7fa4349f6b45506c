"""Locally periodic coefficient fields A(x, t, y, s).

Every field is an analytic evaluator.  Solvers sample it at their own
resolution, so discretisation error never mixes with data interpolation
error.  Built-in families are 1-periodic in the fast variables (y, s) by
construction and carry analytic ellipticity and derivative bounds.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any, Callable, Optional

import numpy as np

TWO_PI = 2.0 * np.pi

FAMILY_TAGS = ("constant", "time_only", "space_only", "trig_product",
               "laminate2d", "macro_modulated")


class CoefficientError(ValueError):
    """Raised for degenerate or inconsistent coefficient parameters."""


@dataclass(frozen=True)
class SmoothFlags:
    """Sup-norm bounds of derivatives; ``None`` means unbounded/unknown."""

    ds: Optional[float] = None
    dy: Optional[float] = None
    d2y: Optional[float] = None
    dx: Optional[float] = None
    dt: Optional[float] = None

    def as_dict(self) -> dict:
        return {"ds": self.ds, "dy": self.dy, "d2y": self.d2y,
                "dx": self.dx, "dt": self.dt}


@dataclass(frozen=True)
class CoefficientFamily:
    """Tag plus parameters of a built-in family (the JSON config payload)."""

    tag: str
    d: int = 1
    params: dict = field(default_factory=dict)
    macro: Optional[dict] = None

    def to_dict(self) -> dict:
        out = {"family": self.tag, "d": self.d}
        out.update(self.params)
        if self.macro is not None:
            out["macro"] = dict(self.macro)
        return out

    @classmethod
    def from_dict(cls, doc: dict) -> "CoefficientFamily":
        doc = dict(doc)
        try:
            tag = doc.pop("family")
        except KeyError:
            raise CoefficientError("family spec needs a 'family' key") from None
        if tag not in FAMILY_TAGS:
            raise CoefficientError(f"unknown family {tag!r}; expected one of {FAMILY_TAGS}")
        d = int(doc.pop("d", 1))
        macro = doc.pop("macro", None)
        if tag == "macro_modulated":
            # {"family": "macro_modulated", "base": {...}, "macro": {...}}
            base = cls.from_dict(doc.pop("base"))
            return cls(base.tag, base.d, base.params, macro or {})
        return cls(tag, d, doc, macro)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "CoefficientFamily":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True, eq=False)
class CoefficientField:
    """Evaluator for A(x, t, y, s) with declared structural constants.

    ``evaluate(x, t, y, s)`` takes ``x`` and ``y`` with a trailing axis of
    length ``dim`` (or no trailing axis when ``dim == 1``) and broadcastable
    ``t``, ``s``; it returns an array of shape ``(..., dim, dim)``.

    ``mu`` is the ellipticity constant of the symmetric part and ``upper``
    bounds every entry.  The single constant of the structural assumption
    that controls both is :attr:`mu_bound`.
    """

    dim: int
    scalar: Callable[..., np.ndarray]
    mu: float
    upper: float
    holder_xt: Optional[tuple] = None
    holder_full: Optional[tuple] = None
    smooth: SmoothFlags = SmoothFlags()
    family: Optional[CoefficientFamily] = None
    matrix: Optional[Callable[..., np.ndarray]] = None
    depends_on_macro: bool = False
    depends_on_s: bool = True
    depends_on_y: bool = True
    symmetric: bool = True

    @property
    def mu_bound(self) -> float:
        return min(self.mu, 1.0 / self.upper)

    def _split(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if self.dim == 1:
            if x.ndim and x.shape[-1:] == (1,):
                x = x[..., 0]
            if y.ndim and y.shape[-1:] == (1,):
                y = y[..., 0]
            return (x,), (y,)
        return tuple(x[..., i] for i in range(self.dim)), tuple(y[..., i] for i in range(self.dim))

    def evaluate(self, x, t, y, s) -> np.ndarray:
        xs, ys = self._split(x, y)
        t = np.asarray(t, dtype=float)
        s = np.asarray(s, dtype=float)
        if self.matrix is not None:
            return self.matrix(xs, t, ys, s)
        a = self._full(self.scalar(xs, t, ys, s), xs, t, ys, s)
        eye = np.eye(self.dim)
        return a[..., None, None] * eye

    def entries(self, xs, t, ys, s) -> np.ndarray:
        """Components as an array of shape ``(dim, dim, ...)``.

        ``xs`` and ``ys`` are tuples of coordinate arrays (one per axis),
        which avoids building stacked coordinate arrays on large grids.
        """
        t = np.asarray(t, dtype=float)
        s = np.asarray(s, dtype=float)
        if self.matrix is not None:
            m = self.matrix(tuple(np.asarray(v, float) for v in xs), t,
                            tuple(np.asarray(v, float) for v in ys), s)
            return np.moveaxis(np.moveaxis(m, -1, 0), -1, 0)
        xs = tuple(np.asarray(v, float) for v in xs)
        ys = tuple(np.asarray(v, float) for v in ys)
        a = self._full(self.scalar(xs, t, ys, s), xs, t, ys, s)
        out = np.zeros((self.dim, self.dim) + np.shape(a))
        for i in range(self.dim):
            out[i, i] = a
        return out

    @staticmethod
    def _full(a, xs, t, ys, s):
        shape = np.broadcast_shapes(*(np.shape(v) for v in xs), np.shape(t),
                                    *(np.shape(v) for v in ys), np.shape(s))
        return np.broadcast_to(a, shape)

    def is_diagonal(self) -> bool:
        return self.matrix is None

    def is_symmetric(self) -> bool:
        return self.symmetric

    @property
    def tag(self) -> str:
        return self.family.tag if self.family is not None else "custom"


# -- macro modulation -------------------------------------------------------

def _macro_factor(macro: Optional[dict]):
    """m(x, t) = 1 + ax sin(2 pi x_1) + at sin(2 pi t).

    Returns (callable, min, max, lipschitz_x, lipschitz_t).
    """
    if not macro:
        return None, 1.0, 1.0, 0.0, 0.0
    ax = float(macro.get("ax", 0.0))
    at = float(macro.get("at", 0.0))
    lo = 1.0 - abs(ax) - abs(at)
    if lo <= 0.0:
        raise CoefficientError(
            f"macro modulation 1 + ax sin(2 pi x) + at sin(2 pi t) degenerates: "
            f"1 - |ax| - |at| = {lo:g} <= 0")

    def m(xs, t):
        return 1.0 + ax * np.sin(TWO_PI * xs[0]) + at * np.sin(TWO_PI * t)

    return m, lo, 1.0 + abs(ax) + abs(at), TWO_PI * abs(ax), TWO_PI * abs(at)


def _require(cond: bool, msg: str):
    if not cond:
        raise CoefficientError(msg)


def make_family(spec) -> CoefficientField:
    """Build a :class:`CoefficientField` from a family spec (dataclass or dict)."""
    if isinstance(spec, dict):
        spec = CoefficientFamily.from_dict(spec)
    p = dict(spec.params)
    d = spec.d
    _require(d in (1, 2), f"dimension d must be 1 or 2, got {d}")
    tag = spec.tag
    depends_s = True
    depends_y = True

    if tag == "constant":
        value = float(p.get("value", 1.0))
        _require(value > 0, f"constant coefficient must be positive, got {value}")

        def base(xs, t, ys, s):
            return np.full(np.broadcast_shapes(np.shape(ys[0]), np.shape(s),
                                               np.shape(xs[0]), np.shape(t)), value)

        lo, hi = value, value
        flags = dict(ds=0.0, dy=0.0, d2y=0.0)
        depends_s = depends_y = False

    elif tag == "time_only":
        a0, c = float(p.get("a0", 2.0)), float(p.get("c", 1.0))
        lo, hi = a0 - abs(c), a0 + abs(c)
        _require(lo > 0, f"time_only needs a0 - |c| > 0, got {lo:g}")

        def base(xs, t, ys, s):
            return a0 + c * np.cos(TWO_PI * s) + 0.0 * ys[0]

        flags = dict(ds=TWO_PI * abs(c), dy=0.0, d2y=0.0)
        depends_y = False

    elif tag == "space_only":
        a0, c = float(p.get("a0", 2.0)), float(p.get("c", 1.0))
        lo, hi = a0 - abs(c), a0 + abs(c)
        _require(lo > 0, f"space_only needs a0 - |c| > 0, got {lo:g}")

        def base(xs, t, ys, s):
            return a0 + c * np.sin(TWO_PI * ys[0]) + 0.0 * s

        flags = dict(ds=0.0, dy=TWO_PI * abs(c), d2y=TWO_PI ** 2 * abs(c))
        depends_s = False

    elif tag == "trig_product":
        # a0 + b prod sin(2 pi y_i) + c prod sin(2 pi y_i) cos(2 pi s)
        # + e sin(2 pi (y_1 - s)) ; the last term is a travelling wave.
        a0 = float(p.get("a0", 2.0))
        b = float(p.get("b", 0.0))
        c = float(p.get("c", 1.0))
        e = float(p.get("e", 0.0))
        amp = abs(b) + abs(c) + abs(e)
        lo, hi = a0 - amp, a0 + amp
        _require(lo > 0, f"trig_product needs a0 - |b| - |c| - |e| > 0, got {lo:g} "
                         f"(a0={a0}, b={b}, c={c}, e={e})")

        def base(xs, t, ys, s):
            prod = np.sin(TWO_PI * ys[0])
            for yi in ys[1:]:
                prod = prod * np.sin(TWO_PI * yi)
            return a0 + (b + c * np.cos(TWO_PI * s)) * prod + e * np.sin(TWO_PI * (ys[0] - s))

        flags = dict(ds=TWO_PI * (abs(c) + abs(e)), dy=TWO_PI * np.sqrt(d) * amp,
                     d2y=TWO_PI ** 2 * d * amp)
        depends_s = (c != 0.0) or (e != 0.0)

    elif tag == "laminate2d":
        _require(d == 2, "laminate2d is two-dimensional")
        a0, c = float(p.get("a0", 2.0)), float(p.get("c", 1.0))
        lo, hi = a0 - abs(c), a0 + abs(c)
        _require(lo > 0, f"laminate2d needs a0 - |c| > 0, got {lo:g}")

        def base(xs, t, ys, s):
            return a0 + c * np.sin(TWO_PI * ys[0]) + 0.0 * s

        flags = dict(ds=0.0, dy=TWO_PI * abs(c), d2y=TWO_PI ** 2 * abs(c))
        depends_s = False

    else:
        raise CoefficientError(f"family {tag!r} cannot be built directly")

    m, mlo, mhi, lx, lt = _macro_factor(spec.macro)
    if m is None:
        scalar = base
        flags.update(dx=0.0, dt=0.0)
        holder_xt = (1.0, 0.0)
    else:
        def scalar(xs, t, ys, s, _b=base, _m=m):
            return _m(xs, t) * _b(xs, t, ys, s)

        hi_base = hi
        lo, hi = lo * mlo, hi * mhi
        flags = {k: v * mhi for k, v in flags.items()}
        flags.update(dx=lx * hi_base, dt=lt * hi_base)
        holder_xt = (1.0, max(lx, lt) * hi_base)

    # joint Lipschitz bound in (x, y, |t|^1/2, |s|^1/2); unit shifts are
    # capped by the oscillation 2 * upper
    full_M = max(flags["dx"], flags["dy"], flags["dt"], flags["ds"], 2.0 * hi)
    return CoefficientField(
        dim=d, scalar=scalar, mu=float(lo), upper=float(hi),
        holder_xt=holder_xt, holder_full=(1.0, float(full_M)),
        smooth=SmoothFlags(**flags), family=spec,
        depends_on_macro=m is not None, depends_on_s=depends_s,
        depends_on_y=depends_y)


def from_callable(dim: int, func: Callable, mu: float, upper: float,
                  **kwargs: Any) -> CoefficientField:
    """Wrap a user matrix evaluator ``func(xs, t, ys, s) -> (..., d, d)``."""
    if mu <= 0:
        raise CoefficientError(f"declared ellipticity must be positive, got {mu}")
    return CoefficientField(dim=dim, scalar=None, mu=mu, upper=upper, matrix=func,
                            depends_on_macro=kwargs.pop("depends_on_macro", True),
                            symmetric=kwargs.pop("symmetric", False),
                            **kwargs)


# -- sampled structural checks ------------------------------------------------

@dataclass
class AssumptionCheck:
    name: str
    passed: bool
    margin: float
    detail: str = ""


@dataclass
class AssumptionReport:
    checks: list

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def __getitem__(self, name: str) -> AssumptionCheck:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def as_dict(self) -> dict:
        return {c.name: {"passed": c.passed, "margin": c.margin, "detail": c.detail}
                for c in self.checks}


def check_assumptions(f: CoefficientField, n_samples: int = 1000,
                      rng_seed: int = 0, tol: float = 1e-12) -> AssumptionReport:
    """Sample ellipticity, boundedness, periodicity and macro Hölder continuity."""
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    rng = np.random.default_rng(rng_seed)
    d = f.dim
    x = rng.uniform(-2.0, 2.0, (n_samples, d))
    y = rng.uniform(-2.0, 2.0, (n_samples, d))
    t = rng.uniform(-2.0, 2.0, n_samples)
    s = rng.uniform(-2.0, 2.0, n_samples)
    A = f.evaluate(x, t, y, s)
    sym = 0.5 * (A + np.swapaxes(A, -1, -2))
    eig_min = float(np.linalg.eigvalsh(sym)[:, 0].min())
    checks = [AssumptionCheck("ellipticity", eig_min >= f.mu - tol, eig_min,
                              f"min sampled eigenvalue of sym(A) vs mu={f.mu:g}")]
    amax = float(np.abs(A).max())
    checks.append(AssumptionCheck("boundedness", amax <= 1.0 / f.mu_bound + tol,
                                  1.0 / f.mu_bound - amax,
                                  f"max |A_ij|={amax:g} vs 1/mu={1.0 / f.mu_bound:g}"))

    per = 0.0
    shifts = [np.eye(d)[i] for i in range(d)] + [np.ones(d)]
    for shift in shifts:
        per = max(per, float(np.abs(f.evaluate(x, t, y + shift, s + 1.0) - A).max()))
        per = max(per, float(np.abs(f.evaluate(x, t, y + shift, s) - A).max()))
    per = max(per, float(np.abs(f.evaluate(x, t, y, s + 1.0) - A).max()))
    checks.append(AssumptionCheck("periodicity", per <= 1e-10 * max(1.0, amax), -per,
                                  "max |A(y+z, s+tau) - A(y, s)| over unit shifts"))

    if f.holder_xt is not None:
        theta, L = f.holder_xt
        dx = rng.uniform(-0.1, 0.1, (n_samples, d))
        dt = rng.uniform(-0.1, 0.1, n_samples)
        B = f.evaluate(x + dx, t + dt, y, s)
        dist = (np.linalg.norm(dx, axis=-1) + np.sqrt(np.abs(dt))) ** theta
        diff = np.linalg.norm(B - A, axis=(-2, -1), ord=2)
        ratio = float(np.max(diff / np.maximum(dist, 1e-300)))
        checks.append(AssumptionCheck("holder_xt", ratio <= L * (1 + 1e-9) + tol,
                                      L - ratio, f"sampled ratio {ratio:g} vs L={L:g}"))
    if f.holder_full is not None:
        theta, M = f.holder_full
        dx = rng.uniform(-0.1, 0.1, (n_samples, d))
        dy = rng.uniform(-0.1, 0.1, (n_samples, d))
        dt = rng.uniform(-0.1, 0.1, n_samples)
        ds = rng.uniform(-0.1, 0.1, n_samples)
        B = f.evaluate(x + dx, t + dt, y + dy, s + ds)
        dist = (np.linalg.norm(dx, axis=-1) + np.linalg.norm(dy, axis=-1)
                + np.sqrt(np.abs(dt)) + np.sqrt(np.abs(ds))) ** theta
        diff = np.linalg.norm(B - A, axis=(-2, -1), ord=2)
        ratio = float(np.max(diff / np.maximum(dist, 1e-300)))
        checks.append(AssumptionCheck("holder_full", ratio <= M * (1 + 1e-9) + tol,
                                      M - ratio, f"sampled ratio {ratio:g} vs M={M:g}"))
    return AssumptionReport(checks)
