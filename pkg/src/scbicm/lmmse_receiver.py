"""LMMSE channel estimation, LMMSE demodulation and the windowed CE-MUDD loop.

Within a fading block the estimator uses every period except the one being
demodulated: pilots exactly, data through their soft decisions ``xhat`` with
per-period variance ``sigma_t`` (the antenna average of the symbol
variances).  All leave-one-out covariances follow from one ``K x K``
inverse per block through rank-one downdates.

All functions accept leading batch axes.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from .channel import SystemConfig, draw_channel, pilot_matrix, substream, transmit
from .coupled_interleaver import CoupledInterleaver, assign_symbols
from .modem import Constellation, demap, soft_map
from .sc_ldpc import LLR_MAX, BpDecoder
from .schedule import window_stages

log = logging.getLogger(__name__)

#: Number of dense ``K x K`` inversions performed by the estimator (for cost audits).
inverse_count = 0

_DEGENERATE = 1e-12


def _herm(A: np.ndarray) -> np.ndarray:
    return A.conj().swapaxes(-1, -2)


def _inverse(A: np.ndarray) -> np.ndarray:
    global inverse_count
    inverse_count += int(np.prod(A.shape[:-2], dtype=np.int64))
    return np.linalg.inv(A)


# -- channel estimator -----------------------------------------------------------------


@dataclass
class ChannelEstimate:
    """Leave-one-out estimates for a set of periods.

    Attributes
    ----------
    Hhat : complex ndarray, shape (..., P, N, K)
    Xi : complex ndarray, shape (..., P, K, K)
        A-posteriori covariance of each row of ``H``.
    sigma : ndarray, shape (..., T)
        Per-period averaged feedback variances.
    zeta : ndarray, shape (..., P)
        Residual interference power caused by the estimation error.
    periods : ndarray, shape (P,)
    """

    Hhat: np.ndarray
    Xi: np.ndarray
    sigma: np.ndarray
    zeta: np.ndarray
    periods: np.ndarray


def full_covariance(Xhat: np.ndarray, sigma: np.ndarray, N0_est: float, K: int | None = None) -> np.ndarray:
    """``{K I + Xhat (diag(sigma) + N0_est I)^-1 Xhat^H}^-1`` over all periods.

    Parameters
    ----------
    Xhat : complex ndarray, shape (..., K, T)
    sigma : ndarray, shape (..., T)
    """
    Xhat = np.asarray(Xhat, dtype=complex)
    K = Xhat.shape[-2] if K is None else K
    if N0_est <= 0:
        raise ValueError("N0_est must be positive")
    d = 1.0 / (np.asarray(sigma, dtype=float) + N0_est)
    G = (Xhat * d[..., None, :]) @ _herm(Xhat) + K * np.eye(Xhat.shape[-2])
    Xi = _inverse(G)
    return 0.5 * (Xi + _herm(Xi))


def downdate_covariance(Xi: np.ndarray, x_t: np.ndarray, sigma_t, N0_est: float) -> np.ndarray:
    """Remove period ``t`` (soft decision ``x_t``, variance ``sigma_t``) from ``Xi``.

    Raises
    ------
    FloatingPointError
        The rank-one denominator is numerically zero.
    """
    x_t = np.asarray(x_t, dtype=complex)
    u = Xi @ x_t[..., None]
    den = np.real(x_t.conj()[..., None, :] @ u)[..., 0, 0] - (np.asarray(sigma_t) + N0_est)
    if np.any(np.abs(den) < _DEGENERATE):
        raise FloatingPointError("degenerate rank-one downdate")
    return Xi - (u @ _herm(u)) / den[..., None, None]


def _direct_loo(Xhat, sigma, N0_est, t):
    keep = np.ones(Xhat.shape[-1], dtype=bool)
    keep[t] = False
    return full_covariance(Xhat[..., keep], sigma[..., keep], N0_est)


def estimate_channel(Y: np.ndarray, Xhat: np.ndarray, var: np.ndarray, N0_est: float,
                     periods=None) -> ChannelEstimate:
    """Leave-one-out LMMSE channel estimates for the requested periods.

    Parameters
    ----------
    Y : complex ndarray, shape (..., N, T)
    Xhat : complex ndarray, shape (..., K, T)
        Pilots in their columns, soft decisions elsewhere.
    var : ndarray, shape (..., K, T)
        Per-symbol feedback variances (0 for pilots).
    N0_est : float
        Noise variance assumed by the estimator.
    periods : array_like of int, optional
        Periods ``t`` to leave out; default all.
    """
    Y = np.asarray(Y, dtype=complex)
    Xhat = np.asarray(Xhat, dtype=complex)
    var = np.asarray(var, dtype=float)
    T = Xhat.shape[-1]
    periods = np.arange(T) if periods is None else np.asarray(periods, dtype=np.int64)
    sigma = var.mean(axis=-2)
    d = 1.0 / (sigma + N0_est)
    Xi = full_covariance(Xhat, sigma, N0_est)
    A = (Y * d[..., None, :]) @ _herm(Xhat)  # (..., N, K)
    x = np.moveaxis(Xhat[..., periods], -1, -2)  # (..., P, K)
    y = np.moveaxis(Y[..., periods], -1, -2)  # (..., P, N)
    dp = d[..., periods]
    u = Xi[..., None, :, :] @ x[..., None]  # (..., P, K, 1)
    den = np.real(x.conj()[..., None, :] @ u)[..., 0, 0] - 1.0 / dp
    bad = np.abs(den) < _DEGENERATE
    den = np.where(bad, -1.0, den)
    Xi_t = Xi[..., None, :, :] - (u @ _herm(u)) / den[..., None, None]
    if np.any(bad):
        for idx in zip(*np.nonzero(bad)):
            *batch, p = idx
            b = tuple(batch)
            Xi_t[idx] = _direct_loo(Xhat[b], sigma[b], N0_est, periods[p])
    A_t = A[..., None, :, :] - dp[..., None, None] * y[..., :, None] * x.conj()[..., None, :]
    Hhat = A_t @ Xi_t
    power = np.moveaxis(var[..., periods], -1, -2) + np.abs(x) ** 2  # (..., P, K)
    zeta = residual_power(Xi_t, power)
    return ChannelEstimate(Hhat, Xi_t, sigma, zeta, periods)


def residual_power(Xi: np.ndarray, power: np.ndarray) -> np.ndarray:
    """``Tr(Xi diag(power))`` with ``power = sigma^2 + |xhat|^2`` per antenna."""
    return np.real(np.einsum("...kk,...k->...", Xi, power))


# -- demodulator -----------------------------------------------------------------------


def lmmse_demodulate(y: np.ndarray, Hhat: np.ndarray, zeta, N0: float, xhat: np.ndarray,
                     var: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """LMMSE estimate ``xbar`` and its MSE ``xi`` for every antenna of one period.

    Symbol ``k`` is given a unit-variance zero-mean prior while the others keep
    their soft decisions; the estimation error acts as extra white noise of
    power ``zeta``.  ``zeta`` may carry a trailing ``K`` axis to give each
    antenna its own value.

    Parameters
    ----------
    y : complex ndarray, shape (..., N)
    Hhat : complex ndarray, shape (..., N, K)
    zeta : array_like, shape (...) or (..., K)
    N0 : float
        True noise variance.
    xhat, var : ndarray, shape (..., K)

    Returns
    -------
    xbar : complex ndarray, shape (..., K)
    xi : ndarray, shape (..., K)
    """
    y = np.asarray(y, dtype=complex)
    Hhat = np.asarray(Hhat, dtype=complex)
    xhat = np.asarray(xhat, dtype=complex)
    var = np.asarray(var, dtype=float)
    zeta = np.asarray(zeta, dtype=float)
    N, K = Hhat.shape[-2:]
    if zeta.ndim == y.ndim:  # one value per antenna
        out = [lmmse_demodulate(y, Hhat, zeta[..., k], N0, xhat, var) for k in range(K)]
        xbar = np.stack([o[0][..., k] for k, o in enumerate(out)], axis=-1)
        xi = np.stack([o[1][..., k] for k, o in enumerate(out)], axis=-1)
        return xbar, xi
    C = (Hhat * var[..., None, :]) @ _herm(Hhat) + (N0 + zeta)[..., None, None] * np.eye(N)
    r = y - (Hhat @ xhat[..., None])[..., 0]
    S = np.linalg.solve(C, np.concatenate([Hhat, r[..., None]], axis=-1))
    a = np.real(np.sum(Hhat.conj() * S[..., :K], axis=-2))
    c = np.sum(Hhat.conj() * S[..., K:], axis=-2)
    b = c + a * xhat
    one_minus = 1.0 - var * a
    den = one_minus + a
    return b / den, one_minus / den


# -- windowed CE-MUDD simulation -------------------------------------------------------


@dataclass(frozen=True)
class ScheduleConfig:
    """``W_SW=None`` decodes all sections at once; ``I`` outer and ``J`` inner iterations per stage.

    With ``early_stop`` a stage ends as soon as the hard decisions satisfy
    every check whose bits all lie left of the window's right edge.
    """

    W_SW: int | None = 9
    I: int = 20
    J: int = 4
    early_stop: bool = False

    def __post_init__(self):
        if self.W_SW is not None and self.W_SW < 1:
            raise ValueError("W_SW must be at least 1")
        if self.I < 1 or self.J < 1:
            raise ValueError("I and J must be at least 1")


@dataclass
class Frame:
    """One transmitted frame: code bits, channel matrices and received blocks.

    Arrays with a section axis cover sections ``[-W, end)`` in order.
    """

    info: np.ndarray
    bits: np.ndarray  # (n_sections, M) code bits, known sections all zero
    X: np.ndarray  # (n_sections, n_blocks, K, T)
    H: np.ndarray  # (n_sections, n_blocks, N, K)
    Y: np.ndarray  # (n_sections, n_blocks, N, T)


@dataclass
class DecodeResult:
    """Decisions of one received frame."""

    errors: np.ndarray  # information-bit errors per code section
    n_info: np.ndarray  # information bits per code section
    trace: list = field(default_factory=list)

    @property
    def ber(self) -> np.ndarray:
        return self.errors / np.maximum(self.n_info, 1)


class CeMudd:
    """Transmitter and iterative receiver for one coded system.

    Parameters
    ----------
    code : ScLdpcCode or BlockLdpcCode
        ``code.L`` sections of ``code.M`` bits.
    interleaver : CoupledInterleaver
        Sizes must agree with ``code``.
    const : Constellation
    K, N, T, T_tr : int
    schedule : ScheduleConfig
    structured_pilots : bool
        Orthogonal pilots when available, random QPSK otherwise.
    own_feedback : bool
        Keep each symbol's own soft decision in the residual-power term
        (cheaper); ``False`` replaces it by zero mean and unit variance.
    frozen : {"posterior", "extrinsic"}
        LLRs kept as feedback for sections that have left the window.
    """

    def __init__(self, code, interleaver: CoupledInterleaver, const: Constellation, K: int, N: int,
                 T: int, T_tr: int, schedule: ScheduleConfig = ScheduleConfig(),
                 structured_pilots: bool = False, own_feedback: bool = True, frozen: str = "posterior"):
        p = interleaver.params
        if p.M != code.M or p.L != code.L or p.Q != const.Q:
            raise ValueError("code, interleaver and constellation sizes disagree")
        if frozen not in ("posterior", "extrinsic"):
            raise ValueError("frozen must be 'posterior' or 'extrinsic'")
        self.code = code
        self.itl = interleaver
        self.params = p
        self.const = const
        self.K, self.N, self.T, self.T_tr = K, N, T, T_tr
        self.schedule = schedule
        self.structured_pilots = structured_pilots
        self.own_feedback = own_feedback
        self.frozen = frozen
        self.assign = assign_symbols(p, K, T, T_tr)
        a = self.assign
        # data slot (b, t, k) -> symbol index, flattened over the section's slots
        self._slot_sym = a.symbol.reshape(a.n_blocks, -1)
        self._used = self._slot_sym >= 0
        self._info_pos = np.asarray(code.info_positions())
        H = code.H.tocsr()
        sec = H.indices // p.M
        self._H = H
        self._row_lo = np.minimum.reduceat(sec, H.indptr[:-1]) if H.nnz else np.zeros(0, int)
        self._row_hi = np.maximum.reduceat(sec, H.indptr[:-1]) if H.nnz else np.zeros(0, int)

    # -- transmitter -------------------------------------------------------------------

    def _system(self, N0: float, N0_est: float | None = None) -> SystemConfig:
        return SystemConfig(self.K, self.N, self.T, self.T_tr, N0, N0_est)

    def make_frame(self, seed: int, frame: int, N0: float) -> Frame:
        """Encode random information, interleave, modulate and pass through the channel.

        Substreams are keyed by ``(seed, frame, role)`` so the same frame at
        another SNR reuses the same bits, channels and normalised noise.
        """
        p, a = self.params, self.assign
        cfg = self._system(N0)
        rng_info = substream(seed, frame, 1)
        info = rng_info.integers(0, 2, size=self.code.k, dtype=np.uint8)
        bits = np.zeros((p.n_sections, p.M), dtype=np.int8)
        bits[p.W:p.W + p.L] = self.code.encode(info)
        out = self.itl.interleave(bits).reshape(p.n_sections, p.M)
        sym = self.const.modulate(out[:, a.bit_slots])  # (n_sections, n_sym)
        X = np.zeros((p.n_sections, a.n_blocks, self.K, self.T), dtype=complex)
        pil_rng = substream(seed, frame, 2)
        for s in range(p.n_sections):
            for b in range(a.n_blocks):
                X[s, b, :, :self.T_tr] = pilot_matrix(cfg, pil_rng, self.structured_pilots)
        data = np.zeros((p.n_sections, a.n_blocks, (self.T - self.T_tr) * self.K), dtype=complex)
        data[:, self._used] = sym[:, self._slot_sym[self._used]]
        X[..., self.T_tr:] = data.reshape(p.n_sections, a.n_blocks, self.T - self.T_tr, self.K).swapaxes(-1, -2)
        H = draw_channel(cfg, substream(seed, frame, 3), n_blocks=p.n_sections * a.n_blocks)
        H = H.reshape(p.n_sections, a.n_blocks, self.N, self.K)
        Y = transmit(cfg, H, X, substream(seed, frame, 4))
        return Frame(info, bits, X, H, Y)

    # -- receiver pieces ---------------------------------------------------------------

    def _soft_symbols(self, frame: Frame, fb_llr: np.ndarray, secs: np.ndarray):
        """Soft decisions ``(Xhat, var)`` of the blocks of output sections ``secs``."""
        p, a = self.params, self.assign
        slot_llr = fb_llr.reshape(-1)[self.itl.out_src[secs]]  # (n, M)
        mean, var = soft_map(self.const, slot_llr[:, a.bit_slots])  # (n, n_sym)
        n = len(secs)
        Xhat = np.zeros((n, a.n_blocks, self.K, self.T), dtype=complex)
        V = np.zeros((n, a.n_blocks, self.K, self.T))
        Xhat[..., :self.T_tr] = frame.X[secs, :, :, :self.T_tr]
        dm = np.zeros((n, a.n_blocks, (self.T - self.T_tr) * self.K), dtype=complex)
        dv = np.zeros((n, a.n_blocks, (self.T - self.T_tr) * self.K))
        dm[:, self._used] = mean[:, self._slot_sym[self._used]]
        dv[:, self._used] = var[:, self._slot_sym[self._used]]
        shape = (n, a.n_blocks, self.T - self.T_tr, self.K)
        Xhat[..., self.T_tr:] = dm.reshape(shape).swapaxes(-1, -2)
        V[..., self.T_tr:] = dv.reshape(shape).swapaxes(-1, -2)
        return Xhat, V, slot_llr

    def _demodulate(self, frame: Frame, fb_llr: np.ndarray, secs: np.ndarray, N0: float,
                    N0_est: float) -> np.ndarray:
        """Extrinsic demapper LLRs for every slot of the output sections ``secs``."""
        a = self.assign
        Xhat, V, slot_llr = self._soft_symbols(frame, fb_llr, secs)
        periods = np.arange(self.T_tr, self.T)
        est = estimate_channel(frame.Y[secs], Xhat, V, N0_est, periods)
        y = np.moveaxis(frame.Y[secs][..., periods], -1, -2)  # (n, B, P, N)
        xh = np.moveaxis(Xhat[..., periods], -1, -2)
        vv = np.moveaxis(V[..., periods], -1, -2)
        zeta = est.zeta
        if not self.own_feedback:
            # replace symbol k's own contribution by the uninformed one
            diag = np.real(np.diagonal(est.Xi, axis1=-2, axis2=-1))
            zeta = zeta[..., None] + diag * (1.0 - vv - np.abs(xh) ** 2)
        xbar, xi = lmmse_demodulate(y, est.Hhat, zeta, N0, xh, vv)  # (n, B, P, K)
        n = len(secs)
        xbar = xbar.reshape(n, a.n_blocks, -1)
        xi = np.clip(xi.reshape(n, a.n_blocks, -1), 1e-300, None)
        n_sym = a.bit_slots.shape[0]
        sym_bar = np.zeros((n, n_sym), dtype=complex)
        sym_xi = np.ones((n, n_sym))
        sym_bar[:, self._slot_sym[self._used]] = xbar[:, self._used]
        sym_xi[:, self._slot_sym[self._used]] = xi[:, self._used]
        ext = demap(self.const, sym_bar, sym_xi, slot_llr[:, a.bit_slots])
        out = np.zeros((n, self.params.M))
        out[:, a.bit_slots] = np.clip(ext, -LLR_MAX, LLR_MAX)
        return out

    def receive(self, frame: Frame, N0: float, N0_est: float | None = None,
                trace: bool = False) -> DecodeResult:
        """Run the windowed iterative receiver on ``frame``."""
        p, code, sch = self.params, self.code, self.schedule
        N0_est = N0 if N0_est is None else N0_est
        W, L, M = p.W, p.L, p.M
        fb_llr = np.zeros((p.n_sections, M))
        known = np.array([p.is_known(s) for s in range(p.first, p.end)])
        fb_llr[known] = LLR_MAX  # all-zero known words
        dem_llr = np.zeros((p.n_sections, M))
        dec = BpDecoder(code)
        per_sec = np.bincount(self._info_pos // M, minlength=L)
        errors = np.zeros(L, dtype=np.int64)
        rows = []
        for stage, (windows, emit) in enumerate(window_stages(L, sch.W_SW, p.both_sided)):
            lo_all = min(lo for lo, _ in windows)
            hi_all = max(hi for _, hi in windows)
            secs = []
            for lo, hi in windows:
                secs.extend(range(max(lo - W, -W) + W, min(hi + W, p.end) + W))
            secs = np.array(sorted(set(secs)))
            rows_chk = np.nonzero((self._row_hi < hi_all) & (self._row_hi >= lo_all))[0]
            for _ in range(sch.I):
                dem_slots = self._demodulate(frame, fb_llr, secs, N0, N0_est)
                # deinterleave: slot values back onto code bits
                flat = dem_llr.reshape(-1)
                flat[self.itl.out_src[secs].reshape(-1)] = dem_slots.reshape(-1)
                for lo, hi in windows:
                    dec.set_apriori(dem_llr[W + lo:W + hi], lo, hi)
                    dec.run(lo, hi, sch.J)
                    fb_llr[W + lo:W + hi] = dec.extrinsic(lo, hi)
                if sch.early_stop and self._satisfied(dec.post, rows_chk):
                    break
            post = dec.post.reshape(L, M)
            if trace:
                for lo, hi in windows:
                    for l in range(lo, hi):
                        e = self._section_errors(frame, post, l)
                        rows.append({"stage": stage, "section": l, "ber": e / max(per_sec[l], 1)})
            for l in emit:
                errors[l] = self._section_errors(frame, post, l)
                if self.frozen == "posterior":
                    fb_llr[W + l] = np.clip(post[l], -LLR_MAX, LLR_MAX)
            log.debug("stage %d window [%d, %d) done", stage, lo_all, hi_all)
        return DecodeResult(errors, per_sec, rows)

    def _satisfied(self, post: np.ndarray, rows: np.ndarray) -> bool:
        hard = (post < 0).astype(np.int64)
        return not np.any((self._H[rows] @ hard) & 1)

    def _section_errors(self, frame: Frame, post: np.ndarray, l: int) -> int:
        M = self.params.M
        pos = self._info_pos[(self._info_pos >= l * M) & (self._info_pos < (l + 1) * M)]
        hard = (post.reshape(-1)[pos] < 0).astype(np.int8)
        return int(np.count_nonzero(hard != frame.bits[self.params.W:self.params.W + self.params.L].reshape(-1)[pos]))


@dataclass
class BerPoint:
    snr_db: float
    frames: int
    errors: int
    bits: int
    section_errors: np.ndarray
    section_bits: np.ndarray
    trace: list = field(default_factory=list)

    @property
    def ber(self) -> float:
        return self.errors / max(self.bits, 1)

    def confidence(self, z: float = 1.96) -> tuple[float, float]:
        """Wilson score interval for the bit error rate."""
        n = max(self.bits, 1)
        ph = self.errors / n
        den = 1 + z * z / n
        c = (ph + z * z / (2 * n)) / den
        h = z * np.sqrt(ph * (1 - ph) / n + z * z / (4 * n * n)) / den
        return max(0.0, c - h), min(1.0, c + h)


def run_ce_mudd(system: CeMudd, snr_db: float, frames: int, seed: int, est_snr_db: float | None = None,
                trace: bool = False) -> BerPoint:
    """Average information-bit error rate over ``frames`` frames at ``1/N0 = snr_db``."""
    N0 = 10.0 ** (-snr_db / 10.0)
    N0_est = None if est_snr_db is None else 10.0 ** (-est_snr_db / 10.0)
    L = system.params.L
    sec_err = np.zeros(L, dtype=np.int64)
    sec_bits = np.zeros(L, dtype=np.int64)
    rows = []
    for f in range(frames):
        frame = system.make_frame(seed, f, N0)
        res = system.receive(frame, N0, N0_est, trace=trace)
        sec_err += res.errors
        sec_bits += res.n_info
        if trace:
            rows.extend({"frame": f, **r} for r in res.trace)
    return BerPoint(snr_db, frames, int(sec_err.sum()), int(sec_bits.sum()), sec_err, sec_bits, rows)


def write_trace_csv(rows: list, path) -> None:
    """Long-format per-stage, per-section BER trace."""
    if not rows:
        return
    with open(path, "w", newline="") as f:
        wr = csv.DictWriter(f, fieldnames=list(rows[0]))
        wr.writeheader()
        wr.writerows(rows)
