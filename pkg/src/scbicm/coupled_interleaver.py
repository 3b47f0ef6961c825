"""Coupled bit interleaver and space-time symbol assignment.

Every section ``l`` holds ``M`` code bits.  A per-section permutation sends
bit ``m`` to position ``p = pi_l(m)``; the position picks a subsection
``w = p // Mt - W`` (``Mt = M / (2W + 1)``) and an offset ``mu = p - (w + W) Mt``.
The bit then travels to output section ``l + w`` where it occupies
subsection ``-w``.  When ``l + w`` is not a valid section the bit stays in
section ``l``, subsection ``w``.  Sections ``[-W, 0)`` (and ``[L, L + W)`` in
both-sided mode) carry known all-zero words.

An output section is sent as ``M / Q`` symbols.  Symbol ``j`` takes its ``Q``
bits from subsection ``j mod (2W+1)`` (round robin ``-W, ..., W``).  Symbols
fill fading blocks of ``K (T - T_tr)`` data slots period by period; in data
period ``t`` slot ``i`` goes to antenna ``(i + t) mod K``, so consecutive
periods differ by one cyclic shift.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np


@dataclass(frozen=True)
class CouplingParams:
    """Sizes of a coupled interleaver.

    Parameters
    ----------
    M : int
        Bits per section.
    L : int
        Number of sections carrying codewords.
    W : int
        Coupling width.
    Q : int
        Bits per symbol.
    both_sided : bool
        Also send known words in ``W`` sections after the last codeword.
    """

    M: int
    L: int
    W: int
    Q: int
    both_sided: bool = False

    def errors(self) -> list[str]:
        out = []
        if self.M < 1 or self.L < 1 or self.Q < 1:
            out.append("M, L and Q must be positive")
        if self.W < 0:
            out.append("W must be non-negative")
        if self.M % (2 * self.W + 1):
            out.append(f"M={self.M} is not divisible by 2W+1={2 * self.W + 1}")
        elif (self.M // (2 * self.W + 1)) % self.Q:
            out.append(f"subsection size M/(2W+1)={self.M // (2 * self.W + 1)} is not divisible by Q={self.Q}")
        return out

    def validate(self) -> None:
        errs = self.errors()
        if errs:
            raise ValueError("; ".join(errs))

    @property
    def n_sub(self) -> int:
        return 2 * self.W + 1

    @property
    def M_sub(self) -> int:
        """Bits per subsection."""
        return self.M // self.n_sub

    @property
    def first(self) -> int:
        return -self.W

    @property
    def end(self) -> int:
        """One past the last section (known sections included)."""
        return self.L + (self.W if self.both_sided else 0)

    @property
    def n_sections(self) -> int:
        return self.end - self.first

    def is_known(self, section: int) -> bool:
        return section < 0 or section >= self.L

    @property
    def symbols_per_section(self) -> int:
        return self.M // self.Q


@dataclass(frozen=True)
class CoupledInterleaver:
    """Bijection between code bits ``(m, l)`` and output slots ``(mu, section, subsection)``.

    Attributes
    ----------
    params : CouplingParams
    perms : ndarray, shape (n_sections, M)
        ``perms[l + W]`` is the permutation of section ``l``.
    out_src : ndarray, shape (n_sections, M)
        Flat source index ``(l + W) * M + m`` of each output slot, where slot
        ``(v + W) * Mt + mu`` of a section is offset ``mu`` of subsection ``v``.
    """

    params: CouplingParams
    perms: np.ndarray = field(repr=False)
    out_src: np.ndarray = field(repr=False)

    def permute(self, m: int, l: int) -> tuple[int, int, int]:
        """Output ``(mu, section, subsection)`` of bit ``m`` of section ``l``."""
        p = self.params
        if not (0 <= m < p.M and p.first <= l < p.end):
            raise IndexError(f"bit ({m}, {l}) out of range")
        mt = int(self.perms[l - p.first, m])
        w = mt // p.M_sub - p.W
        mu = mt - (w + p.W) * p.M_sub
        if p.first <= l + w < p.end:
            return mu, l + w, -w
        return mu, l, w

    def inverse(self, mu: int, section: int, subsection: int) -> tuple[int, int]:
        """Source ``(m, l)`` of an output slot."""
        p = self.params
        if not (0 <= mu < p.M_sub and p.first <= section < p.end and -p.W <= subsection <= p.W):
            raise IndexError(f"slot ({mu}, {section}, {subsection}) out of range")
        flat = int(self.out_src[section - p.first, (subsection + p.W) * p.M_sub + mu])
        return flat % p.M, flat // p.M + p.first

    def interleave(self, bits: np.ndarray) -> np.ndarray:
        """Code bits ``(n_sections, M)`` to output-section bits of the same shape."""
        return np.asarray(bits).reshape(-1)[self.out_src]

    def deinterleave(self, values: np.ndarray) -> np.ndarray:
        """Inverse of :meth:`interleave` for per-slot values (e.g. LLRs)."""
        values = np.asarray(values)
        out = np.empty(values.size, dtype=values.dtype)
        out[self.out_src.reshape(-1)] = values.reshape(-1)
        return out.reshape(self.out_src.shape)

    # -- persistence -------------------------------------------------------------------

    def to_json(self, path=None) -> str:
        p = self.params
        doc = {"M": p.M, "L": p.L, "W": p.W, "Q": p.Q, "both_sided": p.both_sided,
               "permutations": {str(l): self.perms[l - p.first].tolist() for l in range(p.first, p.end)}}
        text = json.dumps(doc)
        if path is not None:
            Path(path).write_text(text)
        return text


def _coupling_map(params: CouplingParams, perms: np.ndarray) -> np.ndarray:
    p = params
    n = p.n_sections
    l = np.arange(p.first, p.end)[:, None]
    w = perms // p.M_sub - p.W
    mu = perms - (w + p.W) * p.M_sub
    target = l + w
    moved = (target >= p.first) & (target < p.end)
    sec = np.where(moved, target, l)
    sub = np.where(moved, -w, w)
    out = np.full((n, p.M), -1, dtype=np.int64)
    src = (l - p.first) * p.M + np.arange(p.M)[None, :]
    out[sec - p.first, (sub + p.W) * p.M_sub + mu] = src
    if np.any(out < 0):
        raise AssertionError("coupling map is not a bijection")
    return out


def from_permutations(params: CouplingParams, perms) -> CoupledInterleaver:
    params.validate()
    perms = np.asarray(perms, dtype=np.int64)
    if perms.shape != (params.n_sections, params.M):
        raise ValueError(f"expected permutations of shape {(params.n_sections, params.M)}")
    if np.any(np.sort(perms, axis=1) != np.arange(params.M)):
        raise ValueError("rows must be permutations of range(M)")
    return CoupledInterleaver(params, perms, _coupling_map(params, perms))


def build(params: CouplingParams, rng: np.random.Generator | int) -> CoupledInterleaver:
    """Draw independent uniform permutations for every section."""
    params.validate()
    rng = np.random.default_rng(rng)
    perms = np.stack([rng.permutation(params.M) for _ in range(params.n_sections)])
    return from_permutations(params, perms)


def load_json(source) -> CoupledInterleaver:
    """Rebuild an interleaver from :meth:`CoupledInterleaver.to_json` output (text or path)."""
    text = str(source)
    if not text.lstrip().startswith("{"):
        text = Path(source).read_text()
    doc = json.loads(text)
    params = CouplingParams(doc["M"], doc["L"], doc["W"], doc["Q"], doc.get("both_sided", False))
    perms = [doc["permutations"][str(l)] for l in range(params.first, params.end)]
    return from_permutations(params, perms)


# -- symbol assignment -----------------------------------------------------------------


@dataclass(frozen=True)
class SymbolAssignment:
    """Placement of one output section's symbols in its fading blocks.

    ``symbol[b, t, k]`` is the symbol index ``j`` sent on antenna ``k`` in data
    period ``t`` of block ``b`` (``-1`` for unused slots at the end of the
    last block).  Symbol ``j`` carries output slots
    ``bit_slots[j] = (v + W) Mt + Q (j // (2W+1)) + [0, Q)`` with
    ``v = j mod (2W+1) - W``.
    """

    K: int
    T: int
    T_tr: int
    symbol: np.ndarray
    subsection: np.ndarray
    bit_slots: np.ndarray

    @property
    def n_blocks(self) -> int:
        return self.symbol.shape[0]


def assign_symbols(params: CouplingParams, K: int, T: int, T_tr: int,
                   strict: bool = False) -> SymbolAssignment:
    """Round-robin subsection order with a cyclic antenna shift per data period.

    With ``strict`` the section must fill its fading blocks exactly.
    """
    params.validate()
    if not 0 <= T_tr < T:
        raise ValueError("need 0 <= T_tr < T")
    n_sym = params.symbols_per_section
    per_block = K * (T - T_tr)
    if strict and n_sym % per_block:
        raise ValueError(f"M/Q={n_sym} symbols do not fill blocks of K(T-T_tr)={per_block} slots")
    n_blocks = math.ceil(n_sym / per_block)
    n_data = T - T_tr
    symbol = np.full((n_blocks, n_data, K), -1, dtype=np.int64)
    b = np.arange(n_blocks)[:, None, None]
    t = np.arange(n_data)[None, :, None]
    i = np.arange(K)[None, None, :]
    j = b * per_block + t * K + i
    antenna = (i + t) % K
    np.put_along_axis(symbol, np.broadcast_to(antenna, j.shape), np.where(j < n_sym, j, -1), axis=2)
    subsection = np.where(symbol >= 0, symbol % params.n_sub - params.W, params.W + 1)
    js = np.arange(n_sym)
    v = js % params.n_sub
    start = v * params.M_sub + params.Q * (js // params.n_sub)
    bit_slots = start[:, None] + np.arange(params.Q)[None, :]
    return SymbolAssignment(K, T, T_tr, symbol, subsection, bit_slots)


def overall_rate(params: CouplingParams, code_rate, K: int, T: int, T_tr: int) -> Fraction:
    """Information bits per channel use, ``(1 - T_tr/T)(1 - W/(L+W)) Q K r``.

    The second factor is unchanged in both-sided mode, where ``2W`` known
    sections accompany ``L`` codewords, so ``L/2`` codewords count per side.
    """
    r = Fraction(code_rate).limit_denominator(10**9) if isinstance(code_rate, float) else Fraction(code_rate)
    L = Fraction(params.L, 2) if params.both_sided else Fraction(params.L)
    return (1 - Fraction(T_tr, T)) * (1 - params.W / (L + params.W)) * params.Q * K * r
