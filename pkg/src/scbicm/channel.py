"""Rayleigh block-fading MIMO channel with QPSK pilots.

A fading block spans ``T`` symbol periods.  The first ``T_tr`` columns of the
``K x T`` transmit matrix are pilots, the rest carry data, and
``Y = H X + W`` with ``H`` i.i.d. ``CN(0, 1/K)`` and ``W`` i.i.d. ``CN(0, N0)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import hadamard


@dataclass(frozen=True)
class SystemConfig:
    """MIMO link parameters.

    ``N0_est`` is the noise variance assumed by the channel estimator; ``None``
    means the true ``N0``.
    """

    K: int
    N: int
    T: int
    T_tr: int
    N0: float
    N0_est: float | None = None

    def __post_init__(self):
        if self.K < 1 or self.N < 1:
            raise ValueError("K and N must be positive")
        if not 0 <= self.T_tr < self.T:
            raise ValueError(f"need 0 <= T_tr < T, got T_tr={self.T_tr}, T={self.T}")
        if self.N0 <= 0 or (self.N0_est is not None and self.N0_est <= 0):
            raise ValueError("noise variances must be positive")

    @property
    def N0_tilde(self) -> float:
        return self.N0 if self.N0_est is None else self.N0_est

    @classmethod
    def from_db(cls, K, N, T, T_tr, snr_db, est_snr_db=None) -> "SystemConfig":
        """Build from ``1/N0`` (and optionally ``1/N0_est``) in dB."""
        est = None if est_snr_db is None else 10.0 ** (-est_snr_db / 10.0)
        return cls(K, N, T, T_tr, 10.0 ** (-snr_db / 10.0), est)


def _cn(rng: np.random.Generator, shape, var: float) -> np.ndarray:
    return np.sqrt(var / 2.0) * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def draw_channel(cfg: SystemConfig, rng: np.random.Generator, n_blocks: int | None = None) -> np.ndarray:
    """``N x K`` channel matrix (or ``n_blocks`` of them) with ``CN(0, 1/K)`` entries."""
    shape = (cfg.N, cfg.K) if n_blocks is None else (n_blocks, cfg.N, cfg.K)
    return _cn(rng, shape, 1.0 / cfg.K)


def pilot_matrix(cfg: SystemConfig, rng: np.random.Generator | None = None,
                 structured: bool = False) -> np.ndarray:
    """``K x T_tr`` unit-power QPSK pilots.

    ``structured`` returns rows of a Hadamard matrix rotated by ``pi/4``
    (orthogonal rows, ``X X^H = T_tr I``) when ``T_tr >= K`` is a power of
    two; otherwise random pilots are drawn from ``rng``.
    """
    K, T_tr = cfg.K, cfg.T_tr
    if T_tr == 0:
        return np.zeros((K, 0), dtype=complex)
    rot = (1 + 1j) / np.sqrt(2)
    if structured and T_tr >= K and T_tr & (T_tr - 1) == 0:
        return rot * hadamard(T_tr)[:K].astype(complex)
    if rng is None:
        raise ValueError("random pilots need an rng")
    re = 1 - 2 * rng.integers(0, 2, size=(K, T_tr))
    im = 1 - 2 * rng.integers(0, 2, size=(K, T_tr))
    return (re + 1j * im) / np.sqrt(2)


def transmit(cfg: SystemConfig, H: np.ndarray, X: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """``Y = H X + W`` for one block (``H`` ``N x K``) or a batch (leading block axis)."""
    H = np.asarray(H)
    X = np.asarray(X)
    if H.shape[-1] != X.shape[-2] or H.shape[-2] != cfg.N:
        raise ValueError(f"shape mismatch: H {H.shape}, X {X.shape}")
    HX = H @ X
    return HX + _cn(rng, HX.shape, cfg.N0)


def substream(seed: int, *key: int) -> np.random.Generator:
    """Independent generator for ``(seed, *key)``; the same key always gives the same stream."""
    return np.random.default_rng([int(seed), *[int(k) for k in key]])
