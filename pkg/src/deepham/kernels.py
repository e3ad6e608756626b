"""Hot numeric kernels with a numba path and a pure-numpy fallback.

The numba path is used when numba imports cleanly and the environment
variable ``DEEPHAM_DISABLE_JIT`` is unset or ``0``.  Both implementations
are always importable (``*_numba`` / ``*_numpy``) so they can be compared in
tests and benchmarks; the unsuffixed names dispatch to the active one.
"""
from __future__ import annotations

import os

import numpy as np

_TWO_PI = 2.0 * np.pi


def _jit_requested() -> bool:
    return os.environ.get("DEEPHAM_DISABLE_JIT", "0").strip().lower() in ("", "0", "false", "no")


try:
    if not _jit_requested():
        raise ImportError("jit disabled by DEEPHAM_DISABLE_JIT")
    from numba import njit

    HAVE_NUMBA = True
except ImportError:
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]
        return lambda fn: fn


BACKEND = "numba" if HAVE_NUMBA else "numpy"


# ---------------------------------------------------------------------------
# cyclic tridiagonal solve (Gram matrix of periodic hat functions)
# ---------------------------------------------------------------------------

class CyclicFactor:
    """Sherman-Morrison/Thomas factorization of a constant cyclic tridiagonal matrix.

    The matrix has ``diag`` on the main diagonal and ``off`` on both adjacent
    diagonals, including the two wrap-around corners.
    """

    def __init__(self, n: int, diag: float, off: float):
        if n < 3:
            raise ValueError(f"cyclic tridiagonal solve needs n >= 3, got {n}")
        gamma = -diag
        b = np.full(n, diag, dtype=np.float64)
        b[0] = diag - gamma
        b[-1] = diag - off * off / gamma
        piv = np.empty(n)
        cp = np.empty(n)
        piv[0] = b[0]
        cp[0] = off / piv[0]
        for i in range(1, n):
            piv[i] = b[i] - off * cp[i - 1]
            cp[i] = off / piv[i]
        if not np.all(piv > 0.0):
            raise np.linalg.LinAlgError("cyclic tridiagonal factorization hit a non-positive pivot")
        self.n = n
        self.diag = float(diag)
        self.off = float(off)
        self.piv = piv
        self.cp = cp
        self.v0 = 1.0
        self.vn = off / gamma
        u = np.zeros((1, n))
        u[0, 0] = gamma
        u[0, -1] = off
        self.z = _thomas_numpy(u, self.off, piv, cp)[0]
        self.denom = 1.0 + self.v0 * self.z[0] + self.vn * self.z[-1]
        if self.denom == 0.0:
            raise np.linalg.LinAlgError("cyclic tridiagonal matrix is singular")


def _thomas_numpy(rhs, off, piv, cp):
    n = rhs.shape[1]
    y = np.empty_like(rhs)
    y[:, 0] = rhs[:, 0] / piv[0]
    for i in range(1, n):
        y[:, i] = (rhs[:, i] - off * y[:, i - 1]) / piv[i]
    for i in range(n - 2, -1, -1):
        y[:, i] -= cp[i] * y[:, i + 1]
    return y


def _cyclic_solve_rows_numpy(rhs, off, piv, cp, z, v0, vn, denom):
    y = _thomas_numpy(rhs, off, piv, cp)
    s = (v0 * y[:, 0] + vn * y[:, -1]) / denom
    y -= s[:, None] * z[None, :]
    return y


@njit(cache=True)
def _cyclic_solve_rows_jit(rhs, off, piv, cp, z, v0, vn, denom):
    rows, n = rhs.shape
    out = np.empty_like(rhs)
    for r in range(rows):
        out[r, 0] = rhs[r, 0] / piv[0]
        for i in range(1, n):
            out[r, i] = (rhs[r, i] - off * out[r, i - 1]) / piv[i]
        for i in range(n - 2, -1, -1):
            out[r, i] -= cp[i] * out[r, i + 1]
        s = (v0 * out[r, 0] + vn * out[r, n - 1]) / denom
        for i in range(n):
            out[r, i] -= s * z[i]
    return out


def _solve_with(impl, factor: CyclicFactor, rhs):
    rhs = np.asarray(rhs, dtype=np.float64)
    if rhs.shape[-1] != factor.n:
        raise ValueError(f"cyclic solve: rhs last axis {rhs.shape[-1]} != {factor.n}")
    flat = np.ascontiguousarray(rhs.reshape(-1, factor.n))
    out = impl(flat, factor.off, factor.piv, factor.cp, factor.z, factor.v0, factor.vn, factor.denom)
    return out.reshape(rhs.shape)


def cyclic_solve_numpy(factor: CyclicFactor, rhs):
    return _solve_with(_cyclic_solve_rows_numpy, factor, rhs)


def cyclic_solve_numba(factor: CyclicFactor, rhs):
    return _solve_with(_cyclic_solve_rows_jit, factor, rhs)


# ---------------------------------------------------------------------------
# d'Alembert lattice evaluation for truncated Fourier initial data
# ---------------------------------------------------------------------------

def _dalembert_lattice_numpy(a, b, t, x):
    k = np.arange(1, a.shape[0] + 1, dtype=np.float64)[:, None, None]
    wk = _TWO_PI * k
    plus = wk * (x[None, None, :] + t[None, :, None])
    minus = wk * (x[None, None, :] - t[None, :, None])
    ak = a[:, None, None]
    bk = b[:, None, None]
    f_plus = ak * np.sin(plus) + bk * np.cos(plus)
    f_minus = ak * np.sin(minus) + bk * np.cos(minus)
    df_plus = wk * (ak * np.cos(plus) - bk * np.sin(plus))
    df_minus = wk * (ak * np.cos(minus) - bk * np.sin(minus))
    u = 0.5 * (f_plus + f_minus).sum(axis=0)
    ut = 0.5 * (df_plus - df_minus).sum(axis=0)
    ux = 0.5 * (df_plus + df_minus).sum(axis=0)
    return u, ut, ux


@njit(cache=True)
def _dalembert_lattice_jit(a, b, t, x):
    nt = t.shape[0]
    nx = x.shape[0]
    u = np.zeros((nt, nx))
    ut = np.zeros((nt, nx))
    ux = np.zeros((nt, nx))
    for j in range(nt):
        for i in range(nx):
            su = 0.0
            sut = 0.0
            sux = 0.0
            for m in range(a.shape[0]):
                wk = 2.0 * np.pi * (m + 1)
                p = wk * (x[i] + t[j])
                q = wk * (x[i] - t[j])
                fp = a[m] * np.sin(p) + b[m] * np.cos(p)
                fq = a[m] * np.sin(q) + b[m] * np.cos(q)
                dp = wk * (a[m] * np.cos(p) - b[m] * np.sin(p))
                dq = wk * (a[m] * np.cos(q) - b[m] * np.sin(q))
                su += fp + fq
                sut += dp - dq
                sux += dp + dq
            u[j, i] = 0.5 * su
            ut[j, i] = 0.5 * sut
            ux[j, i] = 0.5 * sux
    return u, ut, ux


def _lattice_args(a, b, t, x):
    a = np.ascontiguousarray(a, dtype=np.float64)
    b = np.ascontiguousarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("Fourier coefficient arrays must be 1-D and of equal length")
    return a, b, np.atleast_1d(np.asarray(t, dtype=np.float64)), np.atleast_1d(np.asarray(x, dtype=np.float64))


def dalembert_lattice_numpy(a, b, t, x):
    """Return ``(u, u_t, u_x)`` on the ``len(t) x len(x)`` lattice."""
    return _dalembert_lattice_numpy(*_lattice_args(a, b, t, x))


def dalembert_lattice_numba(a, b, t, x):
    return _dalembert_lattice_jit(*_lattice_args(a, b, t, x))


if HAVE_NUMBA:
    cyclic_solve = cyclic_solve_numba
    dalembert_lattice = dalembert_lattice_numba
else:
    cyclic_solve = cyclic_solve_numpy
    dalembert_lattice = dalembert_lattice_numpy
