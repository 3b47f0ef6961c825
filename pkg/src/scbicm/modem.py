"""Gray-labelled square QAM, soft mapping and extrinsic soft demapping.

Labels use ``Q`` bits per symbol: the first ``Q/2`` bits select the in-phase
level and the last ``Q/2`` bits the quadrature level.  Within one axis the
last bit is the sign (0 for positive) and the remaining bits carry a reflected
Gray code of the magnitude index, so 16-QAM maps ``(1,1),(0,1),(0,0),(1,0)``
to ``{-3,-1,1,3}/sqrt(10)`` on each axis.

LLRs follow the convention ``L = ln P(c=0) / P(c=1)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import functools

import numba
import numpy as np

#: LLR magnitude treated as certainty.
LLR_CLIP = 30.0


def _gray(j: int) -> int:
    return j ^ (j >> 1)


def axis_labels(bits_per_axis: int) -> tuple[np.ndarray, np.ndarray]:
    """Unnormalised PAM levels and their ``bits_per_axis``-bit labels.

    Returns ``(levels, labels)`` with levels ``-(2^B-1), ..., 2^B-1`` in
    ascending order and ``labels[i]`` the bit tuple of ``levels[i]``.
    """
    b = bits_per_axis
    n = 1 << b
    levels = np.arange(n) * 2 - (n - 1)
    labels = np.zeros((n, b), dtype=np.int8)
    half = n // 2
    for i, a in enumerate(levels):
        j = i - half if a > 0 else half - 1 - i
        g = _gray(j)
        for q in range(b - 1):
            labels[i, q] = (g >> (b - 2 - q)) & 1
        labels[i, b - 1] = 0 if a > 0 else 1
    return levels.astype(float), labels


@dataclass(frozen=True)
class Constellation:
    """Unit-energy square ``2^Q``-QAM with per-axis Gray labelling."""

    Q: int
    points: np.ndarray = field(repr=False)
    bits: np.ndarray = field(repr=False)
    axis_levels: np.ndarray = field(repr=False)
    axis_bits: np.ndarray = field(repr=False)

    @property
    def size(self) -> int:
        return 1 << self.Q

    @property
    def scale(self) -> float:
        """Normalisation so that ``axis_levels * scale`` are the per-axis amplitudes."""
        return float(np.sqrt(1.5 / ((1 << self.Q) - 1)))

    def modulate(self, bits: np.ndarray) -> np.ndarray:
        """Map ``(..., Q)`` bits to complex symbols."""
        bits = np.asarray(bits, dtype=np.int64)
        weights = 1 << np.arange(self.Q - 1, -1, -1)
        return self.points[bits @ weights]

    def label_index(self, bits: np.ndarray) -> np.ndarray:
        weights = 1 << np.arange(self.Q - 1, -1, -1)
        return np.asarray(bits, dtype=np.int64) @ weights


@functools.lru_cache(maxsize=None)
def qam(Q: int) -> Constellation:
    """Square Gray QAM with ``Q`` (even, >= 2) bits per symbol."""
    if Q < 2 or Q % 2:
        raise ValueError(f"Q must be a positive even integer, got {Q}")
    b = Q // 2
    levels, labels = axis_labels(b)
    scale = np.sqrt(1.5 / ((1 << Q) - 1))
    n = 1 << Q
    bits = ((np.arange(n)[:, None] >> np.arange(Q - 1, -1, -1)) & 1).astype(np.int8)
    # look up each half-label in the axis table
    lookup = {tuple(lab): levels[i] for i, lab in enumerate(labels)}
    re = np.array([lookup[tuple(row[:b])] for row in bits])
    im = np.array([lookup[tuple(row[b:])] for row in bits])
    points = scale * (re + 1j * im)
    for arr in (points, bits, levels, labels):
        arr.setflags(write=False)
    return Constellation(Q=Q, points=points, bits=bits, axis_levels=levels, axis_bits=labels)


def _log_bit_probs(llrs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """``(log P(c=0), log P(c=1))`` for LLRs, numerically stable."""
    lp0 = -np.logaddexp(0.0, -llrs)
    lp1 = -np.logaddexp(0.0, llrs)
    return lp0, lp1


def label_log_prior(const: Constellation, llrs: np.ndarray) -> np.ndarray:
    """Log prior of every label under independent bit priors; shape ``(..., 2^Q)``."""
    llrs = np.asarray(llrs, dtype=float)
    lp0, lp1 = _log_bit_probs(llrs)
    c = const.bits.astype(bool)  # (2^Q, Q)
    # sum_q log P(c_q = label bit)
    return np.where(c, lp1[..., None, :], lp0[..., None, :]).sum(axis=-1)


def soft_map(const: Constellation, llrs) -> tuple[np.ndarray, np.ndarray]:
    """Mean and variance of the symbol under the product prior of ``llrs``.

    Parameters
    ----------
    const : Constellation
    llrs : array_like, shape (..., Q)
        Decoder LLRs of the symbol's bits.

    Returns
    -------
    mean : complex ndarray, shape (...)
    var : ndarray, shape (...)
        ``E|x|^2 - |mean|^2``, never negative.
    """
    prob = np.exp(label_log_prior(const, llrs))
    mean = prob @ const.points
    power = prob @ (np.abs(const.points) ** 2)
    var = np.clip(power - np.abs(mean) ** 2, 0.0, None)
    return mean, var


@numba.njit(cache=True)
def _extrinsic_kernel(log_lik, llrs, bits, out):
    n, size = log_lik.shape
    Q = bits.shape[1]
    metric = np.empty(size)
    for i in range(n):
        # log prior of every label: sum_q log P(c_q = label bit)
        for a in range(size):
            acc = log_lik[i, a]
            for q in range(Q):
                x = llrs[i, q]
                if bits[a, q]:
                    acc -= np.logaddexp(0.0, x)
                else:
                    acc -= np.logaddexp(0.0, -x)
            metric[a] = acc
        for q in range(Q):
            x = llrs[i, q]
            lp0 = -np.logaddexp(0.0, -x)
            lp1 = -np.logaddexp(0.0, x)
            m0 = -np.inf
            m1 = -np.inf
            for a in range(size):
                if bits[a, q]:
                    m1 = max(m1, metric[a] - lp1)
                else:
                    m0 = max(m0, metric[a] - lp0)
            s0 = 0.0
            s1 = 0.0
            for a in range(size):
                if bits[a, q]:
                    s1 += np.exp(metric[a] - lp1 - m1)
                else:
                    s0 += np.exp(metric[a] - lp0 - m0)
            out[i, q] = (m0 + np.log(s0)) - (m1 + np.log(s1))


def _extrinsic(const: Constellation, log_lik: np.ndarray, llrs: np.ndarray) -> np.ndarray:
    """Extrinsic bit LLRs from per-label log-likelihoods and bit priors.

    The prior of bit ``q`` is removed from every label metric before the
    marginalisation, so it never enters its own output.
    """
    lead = log_lik.shape[:-1]
    llrs = np.broadcast_to(np.asarray(llrs, dtype=float), lead + (const.Q,))
    flat_lik = np.ascontiguousarray(log_lik.reshape(-1, const.size), dtype=float)
    flat_llr = np.ascontiguousarray(llrs.reshape(-1, const.Q))
    out = np.empty(flat_llr.shape)
    _extrinsic_kernel(flat_lik, flat_llr, np.ascontiguousarray(const.bits), out)
    return out.reshape(lead + (const.Q,))


def demap(const: Constellation, xbar, xi, prior_llrs=None) -> np.ndarray:
    """Extrinsic LLRs of a Gaussian posterior ``CN(xbar, xi)`` for each bit.

    Parameters
    ----------
    xbar : complex array_like, shape (...)
    xi : array_like, broadcastable to ``xbar``; must be positive.
    prior_llrs : array_like, shape (..., Q), optional
        Decoder feedback; the prior of bit ``q`` never enters its own output.

    Returns
    -------
    ndarray, shape (..., Q)
    """
    xbar = np.asarray(xbar)
    xi = np.asarray(xi, dtype=float)
    if np.any(xi <= 0):
        raise ValueError("posterior variance must be positive")
    log_lik = -np.abs(xbar[..., None] - const.points) ** 2 / xi[..., None]
    if prior_llrs is None:
        prior_llrs = np.zeros(xbar.shape + (const.Q,))
    return _extrinsic(const, log_lik, prior_llrs)


def demap_awgn_sample(const: Constellation, snr_amp: float, noise_var: float, prior_llrs,
                      rng: np.random.Generator, labels=None) -> tuple[np.ndarray, np.ndarray]:
    """Draw ``z = snr_amp * x + n`` and return ``(bits, extrinsic LLRs)``.

    ``prior_llrs`` has shape ``(n, Q)``; one symbol is drawn per row.  The
    transmitted labels are uniform unless ``labels`` (shape ``(n,)``) is given.
    """
    prior_llrs = np.asarray(prior_llrs, dtype=float)
    n = prior_llrs.shape[0]
    if labels is None:
        labels = rng.integers(0, const.size, size=n)
    x = const.points[labels]
    noise = np.sqrt(noise_var / 2.0) * (rng.standard_normal(n) + 1j * rng.standard_normal(n))
    z = snr_amp * x + noise
    log_lik = -np.abs(z[:, None] - snr_amp * const.points) ** 2 / noise_var
    return const.bits[labels], _extrinsic(const, log_lik, prior_llrs)
