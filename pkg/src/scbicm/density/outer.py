"""Outer-iteration density evolution of iterative channel estimation and decoding.

Sections ``s`` run over ``[-W, L + W_r)`` where ``W_r = W`` when known words
are also sent after the last codeword (both-sided coupling) and 0 otherwise.
Known sections feed back entropy 0.  One outer iteration on a window of
decoder sections does the following for every demodulator section touching
the window:

1. average squared soft decision of the section's symbols;
2. channel-estimation MSE from its self-consistent equation;
3. post-cancellation noise level from its self-consistent equation;
4. demapper output entropy for every subsection;
5. inner decoder iterations on the window.
"""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass, field

import numpy as np

from ..schedule import window_stages
from .decoder import DecoderEntropy
from .feedback import feedback_model
from .fixed_points import solve_channel_fp, solve_demod_fp
from .psi import ber_from_entropy, psi_inv

#: Entropy treated as "zero" when the target BER is 0.
ENTROPY_FLOOR = 1e-10


@dataclass
class DeConfig:
    """Parameters of one density-evolution run.

    ``None`` stands for an infinite value: ``I=None`` and ``J=None`` iterate
    until the entropies stall, ``W_SW=None`` decodes all sections at once.
    ``boundary_unlimited`` lets the first and last window stages iterate until
    stall whatever ``I`` is, isolating the bulk behaviour.
    """

    snr_db: float = 5.0
    Q: int = 2
    K: int = 6
    N: int = 6
    T: int = 64
    T_tr: int = 6
    perfect_csi: bool = False
    dv: int = 3
    dc: int = 6
    L: int = 64
    coupled_code: bool = True
    W: int = 0
    both_sided: bool = False
    W_SW: int | None = None
    I: int | None = None
    J: int | None = 1
    stall_tol: float = 1e-8
    max_outer: int = 10_000
    pin_unknown: bool = True
    epsilon: float = 0.0
    boundary_unlimited: bool = False

    @property
    def N0(self) -> float:
        return 10.0 ** (-self.snr_db / 10.0)

    def validate(self) -> None:
        errors = []
        if self.Q < 2 or self.Q % 2:
            errors.append(f"Q must be a positive even integer, got {self.Q}")
        if self.dc % self.dv:
            errors.append("dc must be a multiple of dv")
        if self.L < 1:
            errors.append("L must be positive")
        if self.W < 0:
            errors.append("W must be non-negative")
        if not 0 <= self.T_tr <= self.T - 1:
            errors.append("need 0 <= T_tr <= T - 1")
        if self.W_SW is not None and not 1 <= self.W_SW <= self.L:
            errors.append("W_SW must lie in [1, L]")
        if self.I is not None and self.I < 1:
            errors.append("I must be positive")
        if self.J is not None and self.J < 1:
            errors.append("J must be positive")
        if errors:
            raise ValueError("; ".join(errors))


@dataclass
class StageRecord:
    stage: int
    iterations: int
    sections: list
    h_post: list


@dataclass
class DeResult:
    """Outcome of :func:`outer_de`.

    ``h_post[l]`` is the a-posteriori entropy of decoder section ``l`` when it
    left the window; ``ber`` the matching bit error rates.
    """

    config: DeConfig
    h_post: np.ndarray
    h_fb: np.ndarray
    ber: np.ndarray
    success: bool
    outer_iterations: int
    stages: list = field(default_factory=list)
    trace: list = field(default_factory=list)

    def to_csv(self, path) -> None:
        """Long-format per-section dump of the recorded iterations."""
        cols = ["stage", "iteration", "section", "x2", "xi", "sigma_dem2", "h_fb", "h_post", "ber"]
        with open(path, "w", newline="") as f:
            wr = csv.writer(f)
            wr.writerow(cols)
            for row in self.trace:
                wr.writerow([_fmt(row[c]) for c in cols])


def _fmt(v):
    return f"{v:.10g}" if isinstance(v, float) else v


def _success(h_post: np.ndarray, epsilon: float) -> bool:
    if epsilon <= 0.0:
        return bool(np.all(h_post <= ENTROPY_FLOOR))
    return bool(np.all(ber_from_entropy(h_post) <= epsilon))


class OuterDE:
    """State machine for the outer density evolution of one configuration."""

    def __init__(self, cfg: DeConfig):
        cfg.validate()
        self.cfg = cfg
        self.fb = feedback_model(cfg.Q)
        W = cfg.W
        self.W_r = W if cfg.both_sided else 0
        self.n_sec = cfg.L + W + self.W_r
        # sec index i <-> section s = i - W
        s = np.arange(-W, cfg.L + self.W_r)
        w = np.arange(-W, W + 1)
        target = s[:, None] + w[None, :]
        inside = (target >= -W) & (target < cfg.L + self.W_r)
        self.neighbours = np.where(inside, target, s[:, None]) + W  # f_s(w) as index
        self.known = np.zeros(self.n_sec, dtype=bool)
        self.known[:W] = True
        if self.W_r:
            self.known[W + cfg.L:] = True
        self.h_fb = np.where(self.known, 0.0, 1.0)
        self.dec = DecoderEntropy(cfg.dv, cfg.dc, cfg.L, coupled=cfg.coupled_code, n_in=2 * W + 1)
        self.m_in = np.zeros((cfg.L, 2 * W + 1))
        self.h_post = np.ones(cfg.L)
        self.last = {}

    # -- one outer iteration -----------------------------------------------------------

    def _demod(self, secs: np.ndarray):
        """x2, xi, sigma_dem2 and surrogate SNR for demodulator section indices ``secs``."""
        cfg = self.cfg
        nb = self.neighbours[secs]  # (n, 2W+1)
        x2_sec = self.fb.x2(self.h_fb)
        x2 = x2_sec[nb].mean(axis=1)
        if cfg.pin_unknown:
            x2 = np.where(self.h_fb[secs] >= 1.0, 0.0, x2)
        if cfg.perfect_csi:
            xi = np.zeros(len(secs))
        else:
            xi = solve_channel_fp(cfg.N0, x2, cfg.K, cfg.T, cfg.T_tr)
        h_nb = self.h_fb[nb]

        def mse_fn(s):
            return self.fb.mse(h_nb, s[:, None]).mean(axis=1)

        sig = solve_demod_fp(cfg.N0, xi, mse_fn, cfg.K, cfg.N)
        snr = (1.0 - xi) / sig
        return x2, xi, sig, snr

    def iterate(self, lo: int, hi: int) -> float:
        """One outer iteration on decoder sections ``[lo, hi)``; returns the largest entropy change."""
        cfg = self.cfg
        W = cfg.W
        first = max(lo - W, -W) + W
        last = min(hi + W, cfg.L + self.W_r) + W
        secs = np.arange(first, last)
        x2, xi, sig, snr = self._demod(secs)
        snr_full = np.zeros(self.n_sec)
        snr_full[secs] = snr
        # decoder l, input w': demapper of section f_l(w') with section l's own priors
        dec_idx = np.arange(lo, hi) + W
        src = self.neighbours[dec_idx]
        self.m_in[lo:hi] = self.fb.demapper_mean(snr_full[src], self.h_fb[dec_idx][:, None])
        fb, post = self.dec.run(lo, hi, self.m_in, cfg.J, tol=cfg.stall_tol * 1e-2)
        old_post = self.h_post[lo:hi].copy()
        self.h_fb[dec_idx] = fb
        self.h_post[lo:hi] = post
        self.last = {"secs": secs - W, "x2": x2, "xi": xi, "sig": sig}
        # entropies that keep shrinking geometrically are not stalled even if the
        # absolute change is tiny, so also track the relative change of psi_inv
        m_old = psi_inv(old_post)
        m_new = psi_inv(post)
        rel = np.abs(m_new - m_old) / (1.0 + np.abs(m_old))
        return float(max(np.max(np.abs(post - old_post)), np.max(rel)))

    def run(self, record: str = "stage") -> DeResult:
        """Run every stage; ``record`` is ``"none"``, ``"stage"`` or ``"iteration"``."""
        cfg = self.cfg
        final = np.ones(cfg.L)
        stages = []
        trace = []
        total_iter = 0
        stages_list = list(window_stages(cfg.L, cfg.W_SW, cfg.both_sided))
        for k, (windows, emit) in enumerate(stages_list):
            unlimited = cfg.I is None or (cfg.boundary_unlimited and k in (0, len(stages_list) - 1))
            n_iter = cfg.max_outer if unlimited else cfg.I
            done = 0
            for i in range(n_iter):
                change = 0.0
                for lo, hi in windows:
                    change = max(change, self.iterate(lo, hi))
                done = i + 1
                if record == "iteration":
                    trace.extend(self._rows(k, done))
                if unlimited:
                    window_post = np.concatenate([self.h_post[lo:hi] for lo, hi in windows])
                    if change < cfg.stall_tol or np.all(window_post <= ENTROPY_FLOOR * 1e-3):
                        break
            total_iter += done
            final[emit] = self.h_post[emit]
            stages.append(StageRecord(k, done, list(emit), [float(self.h_post[e]) for e in emit]))
            if record == "stage":
                trace.extend(self._rows(k, done))
        return DeResult(cfg, final, self.h_fb[cfg.W:cfg.W + cfg.L].copy(), ber_from_entropy(final),
                        _success(final, cfg.epsilon), total_iter, stages, trace)

    def _rows(self, stage: int, iteration: int) -> list:
        W = self.cfg.W
        rows = []
        info = self.last
        for j, s in enumerate(info.get("secs", [])):
            s = int(s)
            in_code = 0 <= s < self.cfg.L
            h_post = float(self.h_post[s]) if in_code else 0.0
            rows.append({
                "stage": stage, "iteration": iteration, "section": s,
                "x2": float(info["x2"][j]), "xi": float(info["xi"][j]),
                "sigma_dem2": float(info["sig"][j]), "h_fb": float(self.h_fb[s + W]),
                "h_post": h_post, "ber": float(ber_from_entropy(h_post)),
            })
        return rows


def outer_de(cfg: DeConfig, record: str = "none") -> DeResult:
    """Run the outer density evolution for ``cfg``."""
    return OuterDE(cfg).run(record=record)


def config_dict(cfg: DeConfig) -> dict:
    return asdict(cfg)
