"""Hot loops with a numba implementation and a numpy/scipy fallback.

Each public function dispatches on :func:`parahom._accel.numba_enabled`;
both paths compute the same quantities and are compared in the tests and in
``benchmarks/bench_kernels.py``.
"""
from __future__ import annotations

import numpy as np
import scipy.linalg as sla

from ._accel import njit, numba_enabled


# -- tridiagonal implicit time march ----------------------------------------

@njit(nogil=True)
def _march_numba(u, u_old, a_faces, src, bnd, dt, h, order, step0, stride, out, out_n):
    nx = u.shape[0] - 1
    m = nx - 1
    inv_h2 = 1.0 / (h * h)
    lower = np.empty(m)
    diag = np.empty(m)
    upper = np.empty(m)
    rhs = np.empty(m)
    cp = np.empty(m)
    dp = np.empty(m)
    for b in range(a_faces.shape[0]):
        step = step0 + b + 1
        use2 = order == 2 and step > 1
        if use2:
            c = 1.5 / dt
        else:
            c = 1.0 / dt
        for i in range(m):
            aw = a_faces[b, i] * inv_h2
            ae = a_faces[b, i + 1] * inv_h2
            diag[i] = c + aw + ae
            lower[i] = -aw
            upper[i] = -ae
            if use2:
                rhs[i] = src[b, i] + (4.0 * u[i + 1] - u_old[i + 1]) / (2.0 * dt)
            else:
                rhs[i] = src[b, i] + u[i + 1] / dt
        rhs[0] -= lower[0] * bnd[b, 0]
        rhs[m - 1] -= upper[m - 1] * bnd[b, 1]
        cp[0] = upper[0] / diag[0]
        dp[0] = rhs[0] / diag[0]
        for i in range(1, m):
            den = diag[i] - lower[i] * cp[i - 1]
            cp[i] = upper[i] / den
            dp[i] = (rhs[i] - lower[i] * dp[i - 1]) / den
        for i in range(nx + 1):
            u_old[i] = u[i]
        u[m] = dp[m - 1]
        for i in range(m - 2, -1, -1):
            u[i + 1] = dp[i] - cp[i] * u[i + 2]
        u[0] = bnd[b, 0]
        u[nx] = bnd[b, 1]
        if step % stride == 0:
            k = step // stride
            if k < out.shape[0]:
                for i in range(nx + 1):
                    out[k, i] = u[i]
                out_n[0] = k + 1
    return 0


def _march_numpy(u, u_old, a_faces, src, bnd, dt, h, order, step0, stride, out, out_n):
    nx = u.shape[0] - 1
    m = nx - 1
    inv_h2 = 1.0 / (h * h)
    ab = np.zeros((3, m))
    for b in range(a_faces.shape[0]):
        step = step0 + b + 1
        use2 = order == 2 and step > 1
        c = 1.5 / dt if use2 else 1.0 / dt
        aw = a_faces[b, :m] * inv_h2
        ae = a_faces[b, 1:m + 1] * inv_h2
        ab[0, 1:] = -ae[:-1]
        ab[1] = c + aw + ae
        ab[2, :-1] = -aw[1:]
        if use2:
            rhs = src[b] + (4.0 * u[1:nx] - u_old[1:nx]) / (2.0 * dt)
        else:
            rhs = src[b] + u[1:nx] / dt
        rhs[0] += aw[0] * bnd[b, 0]
        rhs[-1] += ae[-1] * bnd[b, 1]
        u_old[:] = u
        u[1:nx] = sla.solve_banded((1, 1), ab, rhs, check_finite=False)
        u[0] = bnd[b, 0]
        u[nx] = bnd[b, 1]
        if step % stride == 0:
            k = step // stride
            if k < out.shape[0]:
                out[k] = u
                out_n[0] = k + 1
    return 0


def march_tridiagonal(u, u_old, a_faces, src, bnd, dt, h, order, step0, stride, out, out_n):
    """Advance the 1D flux-form scheme over one batch of steps in place.

    ``a_faces[b, i]`` is the coefficient on face ``i + 1/2`` at step
    ``step0 + b + 1``; ``src`` holds interior source values and ``bnd`` the two
    Dirichlet values.  Every ``stride``-th global step is copied to ``out``.
    """
    fn = _march_numba if numba_enabled() else _march_numpy
    return fn(u, u_old, np.ascontiguousarray(a_faces), np.ascontiguousarray(src),
              np.ascontiguousarray(bnd), float(dt), float(h), int(order), int(step0),
              int(stride), out, out_n)


# -- separable direct-summation convolution ---------------------------------

@njit(nogil=True)
def _correlate_numba(field, w, axis_len, mode):
    # field (n0, n1) convolved along axis 1 with symmetric weights w (2r+1)
    n0, n1 = field.shape
    r = (w.shape[0] - 1) // 2
    out = np.zeros((n0, n1))
    for i in range(n0):
        for j in range(n1):
            acc = 0.0
            for q in range(-r, r + 1):
                jj = j + q
                if mode == 0:
                    jj = jj % n1
                elif mode == 1:
                    if jj < 0:
                        jj = -jj
                    if jj > n1 - 1:
                        jj = 2 * (n1 - 1) - jj
                    if jj < 0 or jj > n1 - 1:
                        continue
                else:
                    if jj < 0 or jj > n1 - 1:
                        continue
                acc += w[q + r] * field[i, jj]
            out[i, j] = acc
    return out


def _correlate_numpy(field, w, axis_len, mode):
    n0, n1 = field.shape
    r = (w.shape[0] - 1) // 2
    idx = np.arange(n1)
    out = np.zeros((n0, n1))
    for q in range(-r, r + 1):
        jj = idx + q
        if mode == 0:
            jj = jj % n1
            out += w[q + r] * field[:, jj]
            continue
        if mode == 1:
            jj = np.abs(jj)
            jj = np.where(jj > n1 - 1, 2 * (n1 - 1) - jj, jj)
        ok = (jj >= 0) & (jj <= n1 - 1)
        out[:, ok] += w[q + r] * field[:, jj[ok]]
    return out


_MODES = {"periodic": 0, "reflect": 1, "zero": 2}


def correlate_axis(field: np.ndarray, weights: np.ndarray, axis: int, mode: str = "periodic") -> np.ndarray:
    """Direct-summation correlation of ``field`` with odd-length ``weights``.

    ``mode`` is ``periodic``, ``reflect`` (mirror about the end nodes) or
    ``zero`` (outside values are zero).
    """
    if mode not in _MODES:
        raise ValueError(f"unknown boundary mode {mode!r}")
    w = np.ascontiguousarray(weights, dtype=float)
    if w.ndim != 1 or w.shape[0] % 2 != 1:
        raise ValueError("weights must be a 1D array of odd length")
    moved = np.moveaxis(np.asarray(field, dtype=float), axis, -1)
    shape = moved.shape
    flat = np.ascontiguousarray(moved.reshape(-1, shape[-1]))
    fn = _correlate_numba if numba_enabled() else _correlate_numpy
    res = fn(flat, w, shape[-1], _MODES[mode])
    return np.moveaxis(res.reshape(shape), -1, axis)
