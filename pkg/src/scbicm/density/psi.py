"""Entropy functional of consistent Gaussian LLRs.

``psi(m)`` is the average binary entropy (in bits) of a bit whose LLR is
Gaussian with mean ``m`` and variance ``2m``.  The functional and its inverse
are evaluated from a cubic spline of ``log psi`` built once per process from
Gauss-Hermite quadrature (small ``m``) and a fine trapezoid rule (large
``m``).  :func:`psi_quad` is the slow adaptive-quadrature reference.
"""

from __future__ import annotations

import functools

import numba
import numpy as np
from scipy import integrate, special
from scipy.interpolate import CubicSpline

#: Largest LLR mean represented; ``psi_inv(0)`` returns this value.
M_MAX = 400.0

_LN2 = np.log(2.0)
_GH_SWITCH = 2.0


def llr_entropy(llr):
    """Binary entropy ``S(e^{L/2} / (e^{L/2} + e^{-L/2}))`` in bits, overflow safe."""
    a = np.abs(np.asarray(llr, dtype=float))
    e = np.exp(-a)
    return (np.log1p(e) + a * e / (1.0 + e)) / _LN2


def psi_quad(m: float) -> float:
    """Reference value of ``psi(m)`` by adaptive quadrature (slow)."""
    m = float(m)
    if m <= 0.0:
        return 1.0
    s = np.sqrt(2.0 * m)

    def f(x):
        return llr_entropy(x) * np.exp(-((x - m) ** 2) / (4.0 * m)) / np.sqrt(4.0 * np.pi * m)

    lo = min(-60.0, m - 40.0 * s)
    hi = m + 40.0 * s + 60.0
    total = 0.0
    for a, b in ((lo, 0.0), (0.0, m), (m, hi)):
        val, _ = integrate.quad(f, a, b, epsabs=0.0, epsrel=1e-12, limit=500)
        total += val
    return total


def _psi_direct(m: np.ndarray) -> np.ndarray:
    out = np.empty_like(m)
    small = m <= _GH_SWITCH
    if np.any(small):
        x, w = special.roots_hermitenorm(240)
        w = w / np.sqrt(2.0 * np.pi)
        ms = m[small][:, None]
        out[small] = (llr_entropy(ms + np.sqrt(2.0 * ms) * x) * w).sum(axis=1)
    big = ~small
    if np.any(big):
        grid = np.arange(-150.0, 200.0 + 1e-9, 0.05)
        ent = llr_entropy(grid)
        vals = []
        for chunk in np.array_split(m[big], max(1, int(big.sum()) // 200)):
            c = chunk[:, None]
            dens = np.exp(-((grid - c) ** 2) / (4.0 * c)) / np.sqrt(4.0 * np.pi * c)
            vals.append(integrate.trapezoid(ent * dens, grid, axis=1))
        out[big] = np.concatenate(vals)
    return out


class _PsiTable:
    def __init__(self, n: int = 3001):
        u = np.linspace(0.0, np.sqrt(M_MAX), n)
        m = u * u
        logv = np.log(_psi_direct(m))
        logv[0] = 0.0
        self.m = m
        self.logv = logv
        self.spline = CubicSpline(m, logv)
        self.dspline = self.spline.derivative()
        self.end_slope = float(self.dspline(M_MAX))

    def log_psi(self, m: np.ndarray) -> np.ndarray:
        out = np.empty_like(m)
        inside = m <= M_MAX
        out[inside] = self.spline(m[inside])
        out[~inside] = self.logv[-1] + self.end_slope * (m[~inside] - M_MAX)
        return out


@functools.lru_cache(maxsize=1)
def _table() -> _PsiTable:
    return _PsiTable()


def psi(m):
    """Entropy of a consistent Gaussian LLR with mean ``m`` (vectorised)."""
    arr = np.asarray(m, dtype=float)
    flat = np.clip(arr.ravel(), 0.0, None)
    out = np.exp(_table().log_psi(flat))
    out[flat == 0.0] = 1.0
    out = out.reshape(arr.shape)
    return out if out.ndim else float(out)


def psi_inv(h):
    """Inverse of :func:`psi`; ``h >= 1`` maps to 0 and ``h = 0`` to :data:`M_MAX`."""
    tab = _table()
    arr = np.asarray(h, dtype=float)
    flat = arr.ravel()
    out = np.empty_like(flat)
    floor = np.exp(tab.logv[-1])
    top = flat >= 1.0
    bottom = flat <= floor
    mid = ~(top | bottom)
    out[top] = 0.0
    out[bottom] = M_MAX
    if np.any(mid):
        target = np.log(flat[mid])
        # logv is decreasing; interpolate on the reversed table for a start point
        m = np.interp(-target, -tab.logv, tab.m)
        for _ in range(6):
            f = tab.spline(m) - target
            d = tab.dspline(m)
            m = np.clip(m - f / d, 0.0, M_MAX)
        out[mid] = m
    out = out.reshape(arr.shape)
    return out if out.ndim else float(out)


def ber_from_entropy(h):
    """Bit error rate ``Q(sqrt(psi_inv(h) / 2))`` of a consistent Gaussian LLR."""
    m = psi_inv(h)
    return 0.5 * special.erfc(np.sqrt(np.asarray(m) / 2.0) / np.sqrt(2.0))


# -- compiled scalar kernels ---------------------------------------------------------
#
# Loops in the decoder density evolution call psi and its inverse many times
# on scalars.  They use a cubic Hermite interpolant of ``log psi`` on a
# uniform grid in ``m``, sampled from the spline above, so both paths agree to
# well below the table accuracy.

_FAST_STEP = 0.01


@functools.lru_cache(maxsize=1)
def fast_tables() -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """``(logv, dlogv, start)`` arrays consumed by :func:`psi_nb` / :func:`psi_inv_nb`.

    ``start[k]`` is a starting guess for the inverse at ``-log h = k * 0.01``.
    """
    tab = _table()
    m = np.arange(0.0, M_MAX + 0.5 * _FAST_STEP, _FAST_STEP)
    logv = tab.spline(m)
    logv[0] = 0.0
    dlogv = tab.dspline(m)
    t = np.arange(0.0, -logv[-1] + 0.02, 0.01)
    start = np.interp(t, -logv, m)
    return logv, dlogv, start


@numba.njit(cache=True)
def _log_psi_nb(m, logv, dlogv):
    n = logv.size - 1
    x = m / _FAST_STEP
    if x >= n:
        return logv[n] + dlogv[n] * (m - n * _FAST_STEP)
    k = int(x)
    t = x - k
    h = _FAST_STEP
    t2 = t * t
    t3 = t2 * t
    return ((2 * t3 - 3 * t2 + 1) * logv[k] + (t3 - 2 * t2 + t) * h * dlogv[k]
            + (-2 * t3 + 3 * t2) * logv[k + 1] + (t3 - t2) * h * dlogv[k + 1])


@numba.njit(cache=True)
def _dlog_psi_nb(m, logv, dlogv):
    n = logv.size - 1
    x = m / _FAST_STEP
    if x >= n:
        return dlogv[n]
    k = int(x)
    t = x - k
    h = _FAST_STEP
    t2 = t * t
    return ((6 * t2 - 6 * t) * logv[k] / h + (3 * t2 - 4 * t + 1) * dlogv[k]
            + (-6 * t2 + 6 * t) * logv[k + 1] / h + (3 * t2 - 2 * t) * dlogv[k + 1])


@numba.njit(cache=True)
def psi_nb(m, logv, dlogv):
    """Scalar :func:`psi` for compiled code."""
    if m <= 0.0:
        return 1.0
    return np.exp(_log_psi_nb(m, logv, dlogv))


@numba.njit(cache=True)
def one_minus_psi_nb(m, logv, dlogv):
    """``1 - psi(m)`` without cancellation for small ``m``."""
    if m <= 0.0:
        return 0.0
    return -np.expm1(_log_psi_nb(m, logv, dlogv))


@numba.njit(cache=True)
def _psi_inv_log_nb(target, logv, dlogv, start):
    # solve log psi(m) = target for target in (log psi(M_MAX), 0)
    if target >= 0.0:
        return 0.0
    if target <= logv[logv.size - 1]:
        return M_MAX
    x = -target / 0.01
    k = int(x)
    if k >= start.size - 1:
        m = start[start.size - 1]
    else:
        m = start[k] + (x - k) * (start[k + 1] - start[k])
    for _ in range(4):
        f = _log_psi_nb(m, logv, dlogv) - target
        d = _dlog_psi_nb(m, logv, dlogv)
        if d >= 0.0:
            break
        m = m - f / d
        if m < 0.0:
            m = 0.0
        elif m > M_MAX:
            m = M_MAX
    return m


@numba.njit(cache=True)
def psi_inv_nb(h, logv, dlogv, start):
    """Scalar :func:`psi_inv` for compiled code."""
    if h >= 1.0:
        return 0.0
    if h <= 0.0:
        return M_MAX
    return _psi_inv_log_nb(np.log(h), logv, dlogv, start)


@numba.njit(cache=True)
def psi_inv_one_minus_nb(h, logv, dlogv, start):
    """``psi_inv(1 - h)`` accurate for small ``h``."""
    if h <= 0.0:
        return 0.0
    if h >= 1.0:
        return M_MAX
    return _psi_inv_log_nb(np.log1p(-h), logv, dlogv, start)
