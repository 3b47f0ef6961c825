"""Entropy recursions of the BP decoder under the Gaussian approximation.

Messages are tracked per section as binary entropies.  ``vc[l, w]`` is the
entropy sent by the variable nodes of section ``l`` to the checks of section
``l + w`` and ``cv[l, w]`` the entropy sent back, for ``w`` in ``[0, dv)``.
Check updates use the variable/check duality ``h <-> 1 - h``.

For the coupled code, check section ``c`` exists for ``c <= n_rows - 1`` and
collects ``dc/dv`` edges from each of the variable sections ``c - w``; edges
from sections outside ``[0, L)`` are absent, which the recursion treats as
perfectly known participants.  The uncoupled code keeps every section on its
own: the check of an edge in section ``l`` sees ``dc - 1`` other edges, all
from section ``l``.

All state lives in plain arrays so the sweeps run in compiled code.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numba
import numpy as np

from .psi import (fast_tables, one_minus_psi_nb, psi_inv_nb, psi_inv_one_minus_nb,
                  psi_nb)


@numba.njit(cache=True)
def _update_v(l, m_in, vc, cv, tabs):
    logv, dlogv, start = tabs
    dv = vc.shape[1]
    n_in = m_in.shape[1]
    total = 0.0
    mc = np.empty(dv)
    for w in range(dv):
        mc[w] = psi_inv_nb(cv[l, w], logv, dlogv, start)
        total += mc[w]
    for w in range(dv):
        other = total - mc[w]
        acc = 0.0
        for k in range(n_in):
            acc += psi_nb(m_in[l, k] + other, logv, dlogv)
        vc[l, w] = acc / n_in


@numba.njit(cache=True)
def _update_c(l, vc, cv, coupled, ratio, n_rows, tabs):
    logv, dlogv, start = tabs
    L, dv = vc.shape
    for w in range(dv):
        c = l + w
        if coupled and c >= n_rows:
            cv[l, w] = 1.0
            continue
        s = 0.0
        for wp in range(dv):
            p = c - wp if coupled else l
            if p < 0 or p >= L:
                continue
            md = psi_inv_one_minus_nb(vc[p, wp], logv, dlogv, start)
            s += (ratio - 1.0) * md if wp == w else ratio * md
        cv[l, w] = one_minus_psi_nb(s, logv, dlogv)


@numba.njit(cache=True)
def _outputs(lo, hi, m_in, cv, out_fb, out_post, tabs):
    logv, dlogv, start = tabs
    dv = cv.shape[1]
    n_in = m_in.shape[1]
    for l in range(lo, hi):
        total = 0.0
        for w in range(dv):
            total += psi_inv_nb(cv[l, w], logv, dlogv, start)
        out_fb[l] = psi_nb(total, logv, dlogv)
        acc = 0.0
        for k in range(n_in):
            acc += psi_nb(m_in[l, k] + total, logv, dlogv)
        out_post[l] = acc / n_in


@numba.njit(cache=True)
def _sweep(lo, hi, m_in, vc, cv, coupled, ratio, n_rows, rounds, tol, tabs):
    """Variable refresh, then ``rounds`` check-then-variable passes in ascending order.

    With ``tol > 0`` the passes stop early once no check message moves by
    more than ``tol``.  Returns the number of passes made.
    """
    for l in range(lo, hi):
        _update_v(l, m_in, vc, cv, tabs)
    dv = cv.shape[1]
    old = np.empty(dv)
    for j in range(rounds):
        change = 0.0
        for l in range(lo, hi):
            for w in range(dv):
                old[w] = cv[l, w]
            _update_c(l, vc, cv, coupled, ratio, n_rows, tabs)
            for w in range(dv):
                change = max(change, abs(cv[l, w] - old[w]))
            _update_v(l, m_in, vc, cv, tabs)
        if tol > 0.0 and change <= tol:
            return j + 1
    return rounds


@dataclass
class DecoderEntropy:
    """Gaussian-approximation entropy state of a ``(dv, dc)`` code with ``L`` sections.

    Parameters
    ----------
    dv, dc : int
        Variable and check degrees; ``dc`` must be a multiple of ``dv``.
    L : int
        Number of sections carrying codewords.
    coupled : bool
        Spatially coupled protograph (``L + 1`` check rows) or ``L``
        independent uncoupled codes.
    n_in : int
        Number of demapper inputs per section (``2W + 1``).
    """

    dv: int
    dc: int
    L: int
    coupled: bool = True
    n_in: int = 1
    vc: np.ndarray = field(init=False, repr=False)
    cv: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.dc % self.dv:
            raise ValueError("dc must be a multiple of dv")
        self.ratio = self.dc / self.dv
        self.n_rows = self.L + 1
        self.reset()

    def reset(self) -> None:
        """Every message back to entropy 1 (no information)."""
        self.vc = np.ones((self.L, self.dv))
        self.cv = np.ones((self.L, self.dv))

    def run(self, lo: int, hi: int, m_in: np.ndarray, rounds: int | None,
            tol: float = 1e-10, max_rounds: int = 1000) -> tuple[np.ndarray, np.ndarray]:
        """Inner iterations on sections ``[lo, hi)``.

        ``m_in[l, k]`` is the consistent-Gaussian mean of demapper input ``k``
        of section ``l``.  ``rounds=None`` iterates until the check messages
        stop changing by more than ``tol`` (at most ``max_rounds``).

        Returns
        -------
        h_fb : ndarray, shape (hi - lo,)
            Extrinsic entropy fed back to the demappers.
        h_post : ndarray, shape (hi - lo,)
            Entropy of the a-posteriori LLRs.
        """
        m_in = np.ascontiguousarray(m_in, dtype=float)
        if m_in.shape != (self.L, self.n_in):
            raise ValueError(f"m_in must have shape {(self.L, self.n_in)}")
        tabs = fast_tables()
        n = max_rounds if rounds is None else rounds
        t = tol if rounds is None else 0.0
        _sweep(lo, hi, m_in, self.vc, self.cv, self.coupled, self.ratio, self.n_rows, n, t, tabs)
        fb = np.empty(self.L)
        post = np.empty(self.L)
        _outputs(lo, hi, m_in, self.cv, fb, post, tabs)
        return fb[lo:hi].copy(), post[lo:hi].copy()
