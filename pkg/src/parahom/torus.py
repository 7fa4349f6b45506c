"""Pseudo-spectral operators on the unit torus T^d and per-slice solvers.

Derivatives are Fourier multipliers with the Nyquist mode removed, so the
discrete gradient maps into the space V of band-limited mean-zero functions
(all |k_i| < N/2, k != 0).  Every linear solve below is posed on V.
"""
from __future__ import annotations

import math

import numpy as np
import scipy.linalg as sla
import scipy.sparse.linalg as spla

from .errors import GridError, SolverError

TWO_PI = 2.0 * np.pi


def wavenumbers(n: int) -> np.ndarray:
    """Integer wavenumbers in FFT order."""
    return np.fft.fftfreq(n, 1.0 / n)


def derivative_symbol(n: int, period: float = 1.0) -> np.ndarray:
    """``i * 2*pi*k / period`` with the Nyquist entry zeroed."""
    k = wavenumbers(n)
    sym = 1j * TWO_PI * k / period
    if n % 2 == 0:
        sym[n // 2] = 0.0
    return sym


class SpectralTorus:
    """Uniform grid on T^d with ``n`` points per axis."""

    def __init__(self, d: int, n: int):
        if d not in (1, 2):
            raise GridError(f"torus dimension must be 1 or 2, got {d}")
        if n < 8 or n & (n - 1):
            raise GridError(f"points per axis must be a power of two >= 8, got {n}")
        self.d = d
        self.n = n
        self.shape = (n,) * d
        sym = derivative_symbol(n)
        self._sym = []
        for i in range(d):
            shp = [1] * d
            shp[i] = n
            self._sym.append(sym.reshape(shp))
        k = wavenumbers(n)
        inside = np.abs(k) < n / 2
        mask = np.ones(self.shape, dtype=bool)
        ksq = np.zeros(self.shape)
        for i in range(d):
            shp = [1] * d
            shp[i] = n
            mask = mask & inside.reshape(shp)
            ksq = ksq + (TWO_PI * k.reshape(shp)) ** 2
        mask[(0,) * d] = False
        self.mask = mask
        self.ksq = ksq

    @property
    def points(self) -> tuple:
        """Coordinate arrays ``(y_1, ..., y_d)`` broadcastable to the grid."""
        y = np.arange(self.n) / self.n
        out = []
        for i in range(self.d):
            shp = [1] * self.d
            shp[i] = self.n
            out.append(y.reshape(shp))
        return tuple(out)

    def _axes(self, u):
        return tuple(range(u.ndim - self.d, u.ndim))

    def fft(self, u):
        return np.fft.fftn(u, axes=self._axes(u))

    def ifft(self, uh):
        return np.fft.ifftn(uh, axes=self._axes(uh)).real

    def deriv(self, u, i: int):
        return self.ifft(self._sym[i] * self.fft(u))

    def grad(self, u) -> np.ndarray:
        uh = self.fft(u)
        return np.stack([self.ifft(self._sym[i] * uh) for i in range(self.d)])

    def div(self, v) -> np.ndarray:
        acc = 0.0
        for i in range(self.d):
            acc = acc + self._sym[i] * self.fft(v[i])
        return self.ifft(acc)

    def project(self, u):
        return self.ifft(self.mask * self.fft(u))

    def apply_L(self, a, u):
        """``-div(a grad u)`` for coefficient entries ``a`` of shape (d, d, *grid)."""
        g = self.grad(u)
        flux = np.einsum("ik...,k...->i...", a, g)
        return -self.div(flux)

    def derivative_matrix(self, i: int = 0) -> np.ndarray:
        """Dense matrix of the spectral derivative (1D only)."""
        if self.d != 1:
            raise GridError("dense derivative matrix is only built for d = 1")
        eye = np.eye(self.n)
        return np.fft.ifft(self._sym[0][:, None] * np.fft.fft(eye, axis=0), axis=0).real


class SliceSolver:
    """Solve ``(c + L_a) x = r`` on V for one frozen coefficient slice.

    ``c >= 0`` is the time-stepping shift (0 for elliptic cells).  In 1D the
    operator is assembled densely and LU-factored once; in 2D it is applied
    matrix-free with CG (GMRES when ``a`` is not symmetric) preconditioned by
    the Fourier-diagonal inverse of ``c + a_ref |k|^2``.
    """

    def __init__(self, torus: SpectralTorus, a: np.ndarray, shift: float = 0.0,
                 rtol: float = 1e-10, maxiter: int = 500):
        self.torus = torus
        self.a = a
        self.c = float(shift)
        self.rtol = rtol
        self.maxiter = maxiter
        self.symmetric = bool(np.allclose(a, np.swapaxes(a, 0, 1), rtol=0, atol=1e-14))
        self.iterations = 0
        if torus.d == 1:
            n = torus.n
            D = torus.derivative_matrix()
            P = np.fft.ifft(torus.mask[:, None] * np.fft.fft(np.eye(n), axis=0), axis=0).real
            L = -D @ (a[0, 0][:, None] * D)
            M = self.c * P + L + (np.eye(n) - P)
            self._lu = sla.lu_factor(M)
        else:
            self._lu = None
            tr = np.trace(a, axis1=0, axis2=1)
            a_ref = float(np.mean(tr)) / torus.d
            denom = self.c + a_ref * torus.ksq
            denom[~torus.mask] = 1.0
            self._pinv = np.where(torus.mask, 1.0 / denom, 0.0)
            size = int(np.prod(torus.shape))
            shape = torus.shape

            def matvec(v):
                u = v.reshape(shape)
                w = self.c * u + torus.apply_L(a, u)
                return torus.project(w).ravel()

            def prec(v):
                return torus.ifft(self._pinv * torus.fft(v.reshape(shape))).ravel()

            self._op = spla.LinearOperator((size, size), matvec=matvec, dtype=float)
            self._prec = spla.LinearOperator((size, size), matvec=prec, dtype=float)

    def solve(self, rhs: np.ndarray, x0: np.ndarray | None = None) -> np.ndarray:
        torus = self.torus
        r = torus.project(rhs)
        if self._lu is not None:
            return torus.project(sla.lu_solve(self._lu, r))
        bnorm = np.linalg.norm(r)
        # roundoff-level data (e.g. a slice where A is constant) has the zero solution
        floor = 1e-13 * math.sqrt(r.size) * max(float(np.max(np.abs(self.a))), 1.0)
        if not bnorm > floor:
            return np.zeros(torus.shape)
        guess = None if x0 is None else torus.project(x0).ravel()
        count = [0]

        def cb(_):
            count[0] += 1

        if self.symmetric:
            x, info = spla.cg(self._op, r.ravel(), x0=guess, rtol=self.rtol, atol=0.0,
                              maxiter=self.maxiter, M=self._prec, callback=cb)
        else:
            x, info = spla.gmres(self._op, r.ravel(), x0=guess, rtol=self.rtol, atol=0.0,
                                 restart=60, maxiter=self.maxiter, M=self._prec,
                                 callback=cb, callback_type="pr_norm")
        self.iterations += count[0]
        res = np.linalg.norm(r.ravel() - self._op.matvec(x)) / bnorm
        if not np.isfinite(res) or (info != 0 and res > 10 * self.rtol):
            raise SolverError(f"slice solve did not converge (relative residual {res:.3e})",
                              residual=float(res))
        return torus.project(x.reshape(torus.shape))
