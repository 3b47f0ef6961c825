"""Statistics of decoder feedback and demapper output under Gaussian LLRs.

Decoder feedback for one section is described by a single entropy ``h``:
every bit's LLR is Gaussian with mean ``+-psi_inv(h)`` and variance
``2 psi_inv(h)``, independently across bits.  The density evolution needs
three functionals of that law, which this module tabulates once per
modulation order:

* ``x2(h)``: average squared soft decision ``E|xhat|^2``;
* ``mse(h, s)``: ``E[v s / (v + s)]`` where ``v`` is the prior symbol
  variance, i.e. the LMMSE error of a symbol observed at noise level ``s``;
* ``demapper_entropy(snr, h_prior)``: average extrinsic-LLR entropy of a
  Gray QAM demapper on ``z = x + n``, ``n ~ CN(0, 1/snr)``, with the other
  bits' priors drawn from the feedback law.

QPSK uses exact Gauss-Hermite quadrature (and the closed form
``psi(2 snr)`` for the demapper).  Higher orders use Monte Carlo samples
drawn once from a fixed seed, so every table entry shares the same random
numbers.  Tables are cached per process and, when possible, on disk.
"""

from __future__ import annotations

import functools
import hashlib
import logging
import os
from pathlib import Path

import numba
import numpy as np
from scipy import special
from scipy.interpolate import CubicSpline, RectBivariateSpline

from ..modem import axis_labels
from .psi import M_MAX, llr_entropy, psi, psi_inv

log = logging.getLogger(__name__)

H_GRID = np.linspace(0.0, 1.0, 201)
LOGS_GRID = np.linspace(np.log(1e-7), np.log(1e7), 281)
SNR_DB_GRID = np.arange(-20.0, 45.0 + 1e-9, 0.5)
PRIOR_H_GRID = np.linspace(0.0, 1.0, 21)

_TABLE_VERSION = 3


def _cache_dir() -> Path | None:
    root = os.environ.get("SCBICM_CACHE")
    if root == "":
        return None
    path = Path(root) if root else Path.home() / ".cache" / "scbicm"
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError:
        return None
    return path


def _gh(n: int) -> tuple[np.ndarray, np.ndarray]:
    x, w = special.roots_hermitenorm(n)
    return x, w / np.sqrt(2.0 * np.pi)


# -- per-axis soft mapping -------------------------------------------------------------


def _axis_moments(levels: np.ndarray, labels: np.ndarray, llrs: np.ndarray):
    """Mean and second moment of one PAM axis under bit priors ``llrs`` (..., B)."""
    lp0 = -np.logaddexp(0.0, -llrs)
    lp1 = -np.logaddexp(0.0, llrs)
    c = labels.astype(bool)
    logp = np.where(c, lp1[..., None, :], lp0[..., None, :]).sum(-1)  # (..., 2^B)
    p = np.exp(logp)
    return p @ levels, p @ (levels**2)


def feedback_llrs(m: float, bits: np.ndarray, normals: np.ndarray) -> np.ndarray:
    """Consistent Gaussian LLRs ``(1 - 2c) m + sqrt(2m) z`` for given bits and normals."""
    return (1.0 - 2.0 * bits) * m + np.sqrt(2.0 * m) * normals


def _variance_law(Q: int, h: float, n_samples: int, seed: int):
    """Samples (values, weights) of the prior symbol variance and ``E|xhat|^2``."""
    m = float(psi_inv(h))
    if Q == 2:
        x, w = _gh(64)
        t2 = np.tanh((m + np.sqrt(2.0 * m) * x) / 2.0) ** 2
        x2 = float(w @ t2)
        v = 1.0 - 0.5 * (t2[:, None] + t2[None, :])
        return v.ravel(), np.outer(w, w).ravel(), x2
    b = Q // 2
    levels, labels = axis_labels(b)
    scale2 = 1.5 / ((1 << Q) - 1)
    rng = np.random.default_rng(seed)
    bits = rng.integers(0, 2, size=(n_samples, 2, b))
    z = rng.standard_normal((n_samples, 2, b))
    mean, second = _axis_moments(levels, labels, feedback_llrs(m, bits, z))
    xhat2 = scale2 * (mean**2).sum(-1)
    v = scale2 * (second - mean**2).sum(-1)
    v = np.clip(v, 0.0, None)
    # compress to equal-weight quantile groups; the MSE integrand is smooth in v
    v = np.sort(v).reshape(1024, -1).mean(axis=1)
    return v, np.full(v.size, 1.0 / v.size), float(xhat2.mean())


@numba.njit(cache=True)
def _axis_extrinsic_entropy(amp, labels, idx, noise, priors, snr):
    """Mean extrinsic entropy per bit for each entry of ``snr`` (common draws)."""
    n, b = priors.shape
    size = amp.size
    out = np.zeros(snr.size)
    excl = np.empty((size, b))
    ln2 = np.log(2.0)
    for s in range(n):
        # log prior of every label with bit q's own prior removed
        for j in range(size):
            total = 0.0
            for q in range(b):
                L = priors[s, q]
                if labels[j, q] == 0:
                    v = -np.log1p(np.exp(-L)) if L > -30 else L
                else:
                    v = -np.log1p(np.exp(L)) if L < 30 else -L
                excl[j, q] = v
                total += v
            for q in range(b):
                excl[j, q] = total - excl[j, q]
        for k in range(snr.size):
            g = snr[k]
            z = amp[idx[s]] + noise[s] / np.sqrt(2.0 * g)
            for q in range(b):
                m0 = -np.inf
                m1 = -np.inf
                for j in range(size):
                    d = z - amp[j]
                    v = excl[j, q] - g * d * d
                    if labels[j, q] == 0:
                        m0 = max(m0, v)
                    else:
                        m1 = max(m1, v)
                s0 = 0.0
                s1 = 0.0
                for j in range(size):
                    d = z - amp[j]
                    v = excl[j, q] - g * d * d
                    if labels[j, q] == 0:
                        s0 += np.exp(v - m0)
                    else:
                        s1 += np.exp(v - m1)
                a = abs(m0 + np.log(s0) - m1 - np.log(s1))
                e = np.exp(-a)
                out[k] += (np.log1p(e) + a * e / (1.0 + e)) / ln2
    return out / (n * b)


def _demapper_entropy_axis(Q: int, snr: np.ndarray, h_prior: float, n_samples: int, seed: int):
    """Average extrinsic entropy per bit of a Gray PAM axis, sampled with fixed draws."""
    b = Q // 2
    levels, labels = axis_labels(b)
    amp = levels * np.sqrt(1.5 / ((1 << Q) - 1))
    m = float(psi_inv(h_prior))
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, 1 << b, size=n_samples)
    noise = rng.standard_normal(n_samples)
    priors = feedback_llrs(m, labels[idx], rng.standard_normal((n_samples, b)))
    return _axis_extrinsic_entropy(amp, labels.astype(np.int64), idx, noise,
                                   np.ascontiguousarray(priors), np.asarray(snr, dtype=float))


class FeedbackModel:
    """Interpolated feedback functionals for one modulation order ``Q``."""

    def __init__(self, Q: int, n_samples: int = 1 << 16, seed: int = 20140101):
        if Q < 2 or Q % 2:
            raise ValueError(f"Q must be a positive even integer, got {Q}")
        self.Q = Q
        self.n_samples = n_samples
        self.seed = seed
        data = self._load_or_build()
        self._x2 = CubicSpline(H_GRID, data["x2"])
        self._ratio = RectBivariateSpline(H_GRID, LOGS_GRID, data["ratio"], kx=3, ky=3)
        self._eff = None
        if Q > 2:
            self._eff = RectBivariateSpline(SNR_DB_GRID, PRIOR_H_GRID, data["eff"], kx=3, ky=3)

    # -- table construction ----------------------------------------------------------

    def _key(self) -> str:
        raw = f"{_TABLE_VERSION}-{self.Q}-{self.n_samples}-{self.seed}-{M_MAX}"
        return hashlib.sha1(raw.encode()).hexdigest()[:16]

    def _load_or_build(self) -> dict:
        cache = _cache_dir()
        path = cache / f"feedback-Q{self.Q}-{self._key()}.npz" if cache else None
        if path is not None and path.exists():
            with np.load(path) as f:
                return {k: f[k] for k in f.files}
        log.info("building feedback tables for Q=%d", self.Q)
        data = self._build()
        if path is not None:
            tmp = path.with_suffix(f".{os.getpid()}.tmp.npz")
            np.savez(tmp, **data)
            os.replace(tmp, path)
        return data

    def _build(self) -> dict:
        s = np.exp(LOGS_GRID)
        x2 = np.empty(H_GRID.size)
        ratio = np.ones((H_GRID.size, LOGS_GRID.size))
        for i, h in enumerate(H_GRID):
            v, w, x2[i] = _variance_law(self.Q, h, self.n_samples, self.seed + i)
            ev = float(w @ v)
            if ev > 1e-14:
                g = (w[:, None] * v[:, None] * s / (v[:, None] + s)).sum(0)
                ratio[i] = g / (ev * s / (ev + s))
        x2[0], x2[-1] = 1.0, 0.0
        data = {"x2": x2, "ratio": ratio}
        if self.Q > 2:
            snr = 10.0 ** (SNR_DB_GRID / 10.0)
            eff = np.empty((SNR_DB_GRID.size, PRIOR_H_GRID.size))
            for j, hp in enumerate(PRIOR_H_GRID):
                h = _demapper_entropy_axis(self.Q, snr, hp, self.n_samples, self.seed + 1000 + j)
                eff[:, j] = psi_inv(h) / snr
            data["eff"] = eff
        return data

    # -- evaluation --------------------------------------------------------------------

    def x2(self, h):
        """Average squared soft decision for feedback entropy ``h``."""
        h = np.clip(np.asarray(h, dtype=float), 0.0, 1.0)
        out = np.clip(self._x2(h), 0.0, 1.0)
        out = np.where(h >= 1.0, 0.0, np.where(h <= 0.0, 1.0, out))
        return out if out.ndim else float(out)

    def mse(self, h, s):
        """``E[v s / (v + s)]`` for feedback entropy ``h`` and noise level ``s``."""
        h, s = np.broadcast_arrays(np.clip(np.asarray(h, dtype=float), 0.0, 1.0),
                                   np.asarray(s, dtype=float))
        ev = 1.0 - self.x2(h)
        logs = np.clip(np.log(np.maximum(s, 1e-300)), LOGS_GRID[0], LOGS_GRID[-1])
        r = self._ratio.ev(h.ravel(), logs.ravel()).reshape(h.shape)
        r = np.clip(r, 0.0, 1.0)
        with np.errstate(invalid="ignore", divide="ignore"):
            out = np.where(np.isinf(s), ev, r * ev * s / (ev + s))
        out = np.where(ev <= 0.0, 0.0, out)
        return out if out.ndim else float(out)

    def demapper_mean(self, snr, h_prior):
        """Consistent-Gaussian mean ``psi_inv`` of the demapper output entropy."""
        snr = np.clip(np.asarray(snr, dtype=float), 0.0, None)
        if self.Q == 2:
            return np.minimum(2.0 * snr, M_MAX)
        snr_b, hp = np.broadcast_arrays(snr, np.clip(np.asarray(h_prior, dtype=float), 0.0, 1.0))
        db = 10.0 * np.log10(np.maximum(snr_b, 1e-300))
        db = np.clip(db, SNR_DB_GRID[0], SNR_DB_GRID[-1])
        eff = self._eff.ev(db.ravel(), hp.ravel()).reshape(snr_b.shape)
        return np.minimum(np.clip(eff, 0.0, None) * snr_b, M_MAX)

    def demapper_entropy(self, snr, h_prior):
        """Average extrinsic entropy of the demapper at ``snr`` with priors of entropy ``h_prior``."""
        return psi(self.demapper_mean(snr, h_prior))


@functools.lru_cache(maxsize=None)
def feedback_model(Q: int) -> FeedbackModel:
    """Shared :class:`FeedbackModel` for modulation order ``Q``."""
    return FeedbackModel(Q)
