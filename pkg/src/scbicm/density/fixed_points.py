"""Large-system fixed points of the channel estimator and the demodulator.

Both fixed points are solved by a vectorised bracketed root search.  Each
right-hand side is monotone in its unknown, so a sign-changing bracket is
available in closed form and the root is unique.
"""

from __future__ import annotations

import numpy as np


def bracketed_root(f, lo, hi, *, rtol: float = 1e-15, max_iter: int = 200):
    """Vectorised Illinois (modified regula falsi) root search.

    ``f`` maps an array of abscissae to residuals; ``f(lo) >= 0 >= f(hi)`` or
    the reverse must hold elementwise.  Returns the roots as an array.
    """
    lo = np.array(lo, dtype=float, copy=True)
    hi = np.array(hi, dtype=float, copy=True)
    flo = f(lo)
    fhi = f(hi)
    done = (flo == 0.0) | (fhi == 0.0) | (hi - lo <= rtol * np.abs(hi))
    x = np.where(flo == 0.0, lo, hi)
    side = np.zeros(lo.shape, dtype=int)
    for _ in range(max_iter):
        if np.all(done):
            break
        denom = fhi - flo
        with np.errstate(invalid="ignore", divide="ignore"):
            xn = np.where(denom != 0.0, (lo * fhi - hi * flo) / denom, 0.5 * (lo + hi))
        bad = ~((xn > np.minimum(lo, hi)) & (xn < np.maximum(lo, hi)))
        xn = np.where(bad, 0.5 * (lo + hi), xn)
        fn = f(xn)
        same_lo = np.sign(fn) == np.sign(flo)
        # replace the endpoint with the same sign; halve the stale one (Illinois)
        new_lo = np.where(same_lo, xn, lo)
        new_flo = np.where(same_lo, fn, np.where(side == -1, flo / 2, flo))
        new_hi = np.where(same_lo, hi, xn)
        new_fhi = np.where(same_lo, np.where(side == 1, fhi / 2, fhi), fn)
        side = np.where(same_lo, 1, -1)
        upd = ~done
        lo = np.where(upd, new_lo, lo)
        hi = np.where(upd, new_hi, hi)
        flo = np.where(upd, new_flo, flo)
        fhi = np.where(upd, new_fhi, fhi)
        x = np.where(upd, xn, x)
        done |= (fn == 0.0) | (np.abs(hi - lo) <= rtol * np.maximum(np.abs(x), 1e-300))
    return x


def asymptotic_mse(sigma_tr2, sigma_c2, x2, K: float, T: int, T_tr: int):
    """Channel-estimation MSE for given effective noise levels.

    Parameters
    ----------
    sigma_tr2 : array_like
        Effective noise variance seen on pilot symbols.
    sigma_c2 : array_like
        Effective noise variance seen on data symbols after soft cancellation.
    x2 : array_like
        Average squared soft decision of the data symbols.
    K : float
        Number of transmit antennas; channel gains have variance ``1/K``.
    T, T_tr : int
        Coherence time and number of pilot symbols.
    """
    sigma_tr2 = np.asarray(sigma_tr2, dtype=float)
    sigma_c2 = np.asarray(sigma_c2, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    with np.errstate(divide="ignore"):
        pilot = np.where(T_tr > 0, T_tr / (K * sigma_tr2), 0.0)
        data = (T - T_tr - 1) * x2 / (K * sigma_c2)
    return 1.0 / (1.0 + pilot + data)


def solve_channel_fp(N0: float, x2, K: float, T: int, T_tr: int) -> np.ndarray:
    """Channel-estimation MSE ``xi`` solving the self-consistent estimator equation.

    The effective noise levels are ``N0 + xi`` on pilots and
    ``N0 + 1 - x2 + x2 xi`` on data symbols.  ``xi * (1 / mse(xi))`` is
    strictly increasing on ``[0, 1]``, so the root is bracketed by ``[0, 1]``.
    With no pilots and no data feedback there is no information: ``xi = 1``.
    """
    x2 = np.atleast_1d(np.asarray(x2, dtype=float))
    if T_tr < 0 or T_tr > T - 1:
        raise ValueError("need 0 <= T_tr <= T - 1")

    def g(xi):
        return xi - asymptotic_mse(N0 + xi, N0 + 1.0 - x2 + x2 * xi, x2, K, T, T_tr)

    xi = bracketed_root(g, np.zeros_like(x2), np.ones_like(x2))
    return np.clip(xi, 0.0, 1.0)


def solve_demod_fp(N0: float, xi, mse_fn, K: float, N: float) -> np.ndarray:
    """Effective noise variance ``sigma2`` after soft interference cancellation.

    Solves ``sigma2 = (K/N) (N0 + xi + (1 - xi) mean_w mse_fn(w, sigma2 / (1 - xi)))``.

    Parameters
    ----------
    N0 : float
    xi : array_like, shape (n,)
        Channel-estimation MSE per section.
    mse_fn : callable
        ``mse_fn(s)`` with ``s`` of shape ``(n,)`` returns the average LMMSE
        error (over the interfering symbol classes of each section) at
        per-symbol noise level ``s``; shape ``(n,)``.
    K, N : float
        Transmit and receive antennas.
    """
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    alpha = K / N
    one = np.maximum(1.0 - xi, 0.0)

    def rhs(sig):
        with np.errstate(divide="ignore", invalid="ignore"):
            s = np.where(one > 0, sig / np.where(one > 0, one, 1.0), np.inf)
        term = np.where(one > 0, one * mse_fn(s), 0.0)
        return alpha * (N0 + xi + term)

    lo = alpha * (N0 + xi)
    hi = alpha * (N0 + 1.0)
    if N0 == 0.0:
        lo = np.maximum(lo, 1e-300)
    with np.errstate(invalid="ignore", divide="ignore"):
        return bracketed_root(lambda s: rhs(s) - s, lo, hi)
