"""Protograph spatially coupled LDPC codes with efficient termination.

The ``(dv, dc, L)`` base matrix has ``L + 1`` rows and ``(dc/dv) L`` columns.
Lifting replaces every one by an independent random ``Z x Z`` permutation
with ``Z = (dv/dc) M``; section ``l`` owns the ``M`` code bits of base
columns ``r l, ..., r l + r - 1`` where ``r = dc/dv``.

Encoding is section by section: check block ``l`` contains exactly one
permutation on the last base column of section ``l``, so that column's bits
are read off the syndrome of everything else.  The last ``dv - 1`` sections
face ``dv`` check blocks and are solved jointly by dense GF(2) elimination,
computed once per code.

Decoding is sum-product with the exact tanh rule, scheduled section by
section: the checks adjacent to a section are refreshed before its variables.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numba
import numpy as np
from scipy import sparse

#: LLR magnitude at which messages saturate.
LLR_MAX = 30.0


# -- base matrix and rate ----------------------------------------------------------------


def build_base_matrix(dv: int, dc: int, L: int) -> np.ndarray:
    """``(L + 1) x (dc/dv) L`` staircase base matrix with efficient termination.

    Row ``l`` has ones in columns ``[max(0, r (l - dv + 1)), min(r L, r (l + 1)))``.
    """
    if dv < 1 or dc < 1 or dc % dv:
        raise ValueError(f"dc must be a positive multiple of dv, got dv={dv}, dc={dc}")
    if L < dv:
        raise ValueError(f"need L >= dv, got L={L}, dv={dv}")
    r = dc // dv
    base = np.zeros((L + 1, r * L), dtype=np.int8)
    for l in range(L + 1):
        base[l, max(0, r * (l - dv + 1)):min(r * L, r * (l + 1))] = 1
    return base


def design_rate(dv: int, dc: int, L: int | None = None) -> Fraction:
    """Exact design rate ``1 - dv/dc - dv/(dc L)``; ``L=None`` gives the ``L -> inf`` limit."""
    if dv < 1 or dc < 1 or dc % dv:
        raise ValueError(f"dc must be a positive multiple of dv, got dv={dv}, dc={dc}")
    rate = 1 - Fraction(dv, dc)
    if L is not None:
        if L < 1:
            raise ValueError("L must be positive")
        rate -= Fraction(dv, dc * L)
    return rate


# -- GF(2) helpers ---------------------------------------------------------------------


def _pack(bits: np.ndarray) -> np.ndarray:
    """Pack a 0/1 matrix (rows, n) into uint64 words, little-endian within a word."""
    bits = np.atleast_2d(np.asarray(bits, dtype=np.uint8))
    n = bits.shape[1]
    n_words = (n + 63) // 64
    padded = np.zeros((bits.shape[0], n_words * 64), dtype=np.uint8)
    padded[:, :n] = bits
    return np.packbits(padded, axis=1, bitorder="little").view(np.uint64)


@numba.njit(cache=True)
def _rref(rows, n_cols):
    """In-place reduced row echelon form of packed rows over GF(2).

    Only the first ``n_cols`` bit columns are used for pivoting.  Returns the
    pivot column of each of the first ``rank`` rows.
    """
    n_rows = rows.shape[0]
    pivots = np.empty(min(n_rows, n_cols), dtype=np.int64)
    rank = 0
    for col in range(n_cols):
        if rank == n_rows:
            break
        word = col >> 6
        mask = np.uint64(1) << np.uint64(col & 63)
        sel = -1
        for i in range(rank, n_rows):
            if rows[i, word] & mask:
                sel = i
                break
        if sel < 0:
            continue
        if sel != rank:
            for k in range(rows.shape[1]):
                tmp = rows[sel, k]
                rows[sel, k] = rows[rank, k]
                rows[rank, k] = tmp
        for i in range(n_rows):
            if i != rank and rows[i, word] & mask:
                for k in range(word, rows.shape[1]):
                    rows[i, k] ^= rows[rank, k]
        pivots[rank] = col
        rank += 1
    return pivots[:rank]


@numba.njit(cache=True)
def _parity(x):
    x ^= x >> np.uint64(32)
    x ^= x >> np.uint64(16)
    x ^= x >> np.uint64(8)
    x ^= x >> np.uint64(4)
    x ^= x >> np.uint64(2)
    x ^= x >> np.uint64(1)
    return x & np.uint64(1)


@numba.njit(cache=True)
def _gf2_matvec(mat, vec):
    out = np.zeros(mat.shape[0], dtype=np.uint8)
    for i in range(mat.shape[0]):
        acc = np.uint64(0)
        for k in range(mat.shape[1]):
            acc ^= mat[i, k] & vec[k]
        out[i] = _parity(acc)
    return out


# -- code ------------------------------------------------------------------------------


@dataclass
class ScLdpcCode:
    """Lifted SC LDPC code.

    Attributes
    ----------
    dv, dc, L, M : int
    base : ndarray
        Base matrix.
    perms : dict
        ``(row, col) -> permutation`` of every lifted base one; check
        ``row*Z + a`` is connected to bit ``col*Z + perm[a]``.
    H : scipy.sparse.csr_matrix
        Parity-check matrix, shape ``((L+1) Z, L M)``.
    """

    dv: int
    dc: int
    L: int
    M: int
    base: np.ndarray = field(repr=False)
    perms: dict = field(repr=False)
    H: sparse.csr_matrix = field(repr=False)
    _tail: dict = field(default=None, repr=False)

    @property
    def r(self) -> int:
        return self.dc // self.dv

    @property
    def Z(self) -> int:
        return self.M // self.r

    @property
    def n(self) -> int:
        return self.L * self.M

    @property
    def rate(self) -> Fraction:
        return design_rate(self.dv, self.dc, self.L)

    @property
    def k(self) -> int:
        """Number of information bits, ``L M r`` exactly."""
        return int(self.rate * self.n)

    # -- encoding ----------------------------------------------------------------------

    def _tail_system(self) -> dict:
        if self._tail is not None:
            return self._tail
        Z, M, L, dv = self.Z, self.M, self.L, self.dv
        first_sec = L - dv + 1
        col0 = first_sec * M
        row0 = first_sec * Z
        A = self.H[row0:, col0:].toarray().astype(np.uint8)
        n_rows, n_cols = A.shape
        aug = np.concatenate([A, np.eye(n_rows, dtype=np.uint8)], axis=1)
        packed = _pack(aug)
        pivots = _rref(packed, n_cols)
        rank = len(pivots)
        free = np.setdiff1d(np.arange(n_cols), pivots)
        n_info_tail = self.k - (L - dv + 1) * (self.r - 1) * Z
        if len(free) < n_info_tail:
            raise np.linalg.LinAlgError("tail system rank too large for the design rate")
        # reduced rows: [R | E]; x_piv = E b + R_free x_free
        R = np.unpackbits(packed[:rank].view(np.uint8), axis=1, bitorder="little")
        E = R[:, n_cols:n_cols + n_rows]
        Rfree = R[:, free]
        # rows beyond the rank must annihilate every reachable syndrome
        null = np.unpackbits(packed[rank:].view(np.uint8), axis=1, bitorder="little")[:, n_cols:n_cols + n_rows]
        self._tail = {
            "row0": row0, "col0": col0, "pivots": pivots, "free": free,
            "info_free": free[:n_info_tail], "E": _pack(E), "Rfree": _pack(Rfree),
            "null": _pack(null) if len(null) else None, "rank": rank,
        }
        return self._tail

    def encode(self, info: np.ndarray) -> np.ndarray:
        """Systematic encoding of ``k`` information bits into ``L`` section codewords.

        Returns an int8 array of shape ``(L, M)``.
        """
        info = np.asarray(info, dtype=np.uint8).ravel()
        if info.size != self.k:
            raise ValueError(f"expected {self.k} information bits, got {info.size}")
        Z, M, L, dv, r = self.Z, self.M, self.L, self.dv, self.r
        u = np.zeros(self.n, dtype=np.uint8)
        H = self.H
        pos = 0
        per = (r - 1) * Z
        for l in range(L - dv + 1):
            u[l * M:l * M + per] = info[pos:pos + per]
            pos += per
            rows = slice(l * Z, (l + 1) * Z)
            syn = (H[rows] @ u) & 1
            perm = self.perms[(l, r * l + r - 1)]
            # check l*Z + a sees parity bit col0 + perm[a]
            u[l * M + (r - 1) * Z + perm] = syn
        tail = self._tail_system()
        x = np.zeros(self.n - tail["col0"], dtype=np.uint8)
        x[tail["info_free"]] = info[pos:]
        known = u.copy()
        b = (H[tail["row0"]:] @ known) & 1
        b_packed = _pack(b[None, :])[0]
        if tail["null"] is not None and np.any(_gf2_matvec(tail["null"], b_packed)):
            raise np.linalg.LinAlgError("inconsistent tail syndrome; resample the lift")
        xf = _pack(x[tail["free"]][None, :])[0]
        x[tail["pivots"]] = _gf2_matvec(tail["E"], b_packed) ^ _gf2_matvec(tail["Rfree"], xf)
        u[tail["col0"]:] = x
        return u.reshape(L, M).astype(np.int8)

    def info_positions(self) -> np.ndarray:
        """Indices (in the flattened codeword) that carry the information bits."""
        Z, M, dv, r = self.Z, self.M, self.dv, self.r
        pos = [np.arange(l * M, l * M + (r - 1) * Z) for l in range(self.L - dv + 1)]
        tail = self._tail_system()
        pos.append(tail["col0"] + tail["info_free"])
        return np.concatenate(pos)

    def syndrome(self, codewords: np.ndarray) -> np.ndarray:
        c = np.asarray(codewords, dtype=np.int64).reshape(-1)
        return (self.H @ c) & 1

    # -- text export -------------------------------------------------------------------

    def save_text(self, path) -> None:
        """Write ``H`` as a header ``rows cols nnz`` and one ``row col`` pair per line."""
        coo = self.H.tocoo()
        order = np.lexsort((coo.col, coo.row))
        with open(path, "w") as f:
            f.write(f"{self.H.shape[0]} {self.H.shape[1]} {coo.nnz}\n")
            np.savetxt(f, np.stack([coo.row[order], coo.col[order]], axis=1), fmt="%d")


def load_parity_text(path) -> sparse.csr_matrix:
    """Read a matrix written by :meth:`ScLdpcCode.save_text`."""
    text = Path(path).read_text().split("\n", 1)
    n_rows, n_cols, nnz = (int(v) for v in text[0].split())
    pairs = np.loadtxt(text[1].splitlines(), dtype=np.int64, ndmin=2) if nnz else np.zeros((0, 2), int)
    data = np.ones(len(pairs), dtype=np.int8)
    return sparse.csr_matrix((data, (pairs[:, 0], pairs[:, 1])), shape=(n_rows, n_cols))


_ENCODE_PROBES = 20


def lift(base: np.ndarray, dv: int, dc: int, M: int, rng: np.random.Generator,
         max_tries: int = 20) -> ScLdpcCode:
    """Lift ``base`` with independent uniform permutations of size ``(dv/dc) M``.

    Lifts whose tail system cannot be solved for every information word are
    rejected and redrawn; solvability is probed with random words.
    """
    r = dc // dv
    if M % r:
        raise ValueError(f"M must be a multiple of dc/dv = {r}, got {M}")
    Z = M // r
    n_rows, n_cols = base.shape
    L = n_cols // r
    for _ in range(max_tries):
        perms = {}
        rows, cols = [], []
        for i, j in zip(*np.nonzero(base)):
            p = rng.permutation(Z)
            perms[(int(i), int(j))] = p
            rows.append(i * Z + np.arange(Z))
            cols.append(j * Z + p)
        rows = np.concatenate(rows)
        cols = np.concatenate(cols)
        H = sparse.csr_matrix((np.ones(rows.size, dtype=np.int8), (rows, cols)),
                              shape=(n_rows * Z, n_cols * Z))
        code = ScLdpcCode(dv, dc, L, M, base, perms, H)
        try:
            code._tail_system()
            # the tail syndrome fails to be absorbed on a linear functional of
            # the information bits, so each random word catches it with odds 1/2
            probe = np.random.default_rng(0)
            for _ in range(_ENCODE_PROBES):
                code.encode(probe.integers(0, 2, code.k))
        except np.linalg.LinAlgError:
            continue
        return code
    raise RuntimeError("could not draw an encodable lift")


def make_code(dv: int, dc: int, L: int, M: int, seed: int | np.random.Generator) -> ScLdpcCode:
    """Base matrix plus lift in one call."""
    rng = np.random.default_rng(seed)
    return lift(build_base_matrix(dv, dc, L), dv, dc, M, rng)


# -- uncoupled codes --------------------------------------------------------------------


@dataclass
class BlockLdpcCode:
    """``L`` sections, each a codeword of the same regular ``(dv, dc)`` LDPC code.

    The component parity-check matrix is Gallager's construction: ``dv``
    stacked bands, each a column permutation of a band of disjoint
    weight-``dc`` rows.  Exposes the same interface as :class:`ScLdpcCode`
    so the decoder and simulator treat both alike.
    """

    dv: int
    dc: int
    L: int
    M: int
    Hc: sparse.csr_matrix = field(repr=False)
    H: sparse.csr_matrix = field(repr=False)
    _enc: dict = field(default=None, repr=False)

    @property
    def n(self) -> int:
        return self.L * self.M

    @property
    def rate(self) -> Fraction:
        """Actual rate of the component code (at least the design rate)."""
        return Fraction(self.M - self._encoder()["rank"], self.M)

    @property
    def k(self) -> int:
        return self.L * (self.M - self._encoder()["rank"])

    def _encoder(self) -> dict:
        if self._enc is None:
            packed = _pack(self.Hc.toarray())
            pivots = _rref(packed, self.M)
            rank = len(pivots)
            free = np.setdiff1d(np.arange(self.M), pivots)
            R = np.unpackbits(packed[:rank].view(np.uint8), axis=1, bitorder="little")[:, :self.M]
            self._enc = {"rank": rank, "pivots": pivots, "free": free, "Rfree": _pack(R[:, free])}
        return self._enc

    def encode(self, info: np.ndarray) -> np.ndarray:
        """Systematic encoding of ``k`` bits into ``L`` section codewords, shape ``(L, M)``."""
        enc = self._encoder()
        per = self.M - enc["rank"]
        info = np.asarray(info, dtype=np.uint8).ravel()
        if info.size != self.k:
            raise ValueError(f"expected {self.k} information bits, got {info.size}")
        out = np.zeros((self.L, self.M), dtype=np.uint8)
        for l in range(self.L):
            x = info[l * per:(l + 1) * per]
            out[l, enc["free"]] = x
            out[l, enc["pivots"]] = _gf2_matvec(enc["Rfree"], _pack(x[None, :])[0])
        return out.astype(np.int8)

    def info_positions(self) -> np.ndarray:
        enc = self._encoder()
        return (np.arange(self.L)[:, None] * self.M + enc["free"][None, :]).ravel()

    def syndrome(self, codewords: np.ndarray) -> np.ndarray:
        c = np.asarray(codewords, dtype=np.int64).reshape(-1)
        return (self.H @ c) & 1


def make_block_code(dv: int, dc: int, L: int, M: int, seed: int | np.random.Generator) -> BlockLdpcCode:
    """Regular ``(dv, dc)`` Gallager code of length ``M`` repeated over ``L`` sections."""
    if dv < 1 or dc < 2 or M % dc:
        raise ValueError(f"M must be a multiple of dc={dc}")
    rng = np.random.default_rng(seed)
    band = M // dc
    rows, cols = [], []
    for i in range(dv):
        perm = np.arange(M) if i == 0 else rng.permutation(M)
        rows.append(i * band + perm // dc)
        cols.append(np.arange(M))
    # column c of band i sits in row i*band + perm[c] // dc
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    Hc = sparse.csr_matrix((np.ones(rows.size, dtype=np.int8), (rows, cols)), shape=(dv * band, M))
    H = sparse.block_diag([Hc] * L, format="csr").astype(np.int8)
    return BlockLdpcCode(dv, dc, L, M, Hc, H)


# -- belief propagation ----------------------------------------------------------------


_TANH_LIM = float(np.tanh(0.5 * LLR_MAX))


@numba.njit(cache=True)
def _check_update(rows, row_ptr, edges_v, tv, c2v, v_lo, v_hi):
    """Refresh the messages from checks ``rows`` to variables in ``[v_lo, v_hi)`` (tanh rule).

    ``tv`` holds ``tanh(v2c / 2)`` of every edge.
    """
    for i in range(rows.size):
        row = rows[i]
        a = row_ptr[row]
        b = row_ptr[row + 1]
        for e in range(a, b):
            v = edges_v[e]
            if v < v_lo or v >= v_hi:
                continue
            prod = 1.0
            for e2 in range(a, b):
                if e2 != e:
                    prod *= tv[e2]
            if prod > _TANH_LIM:
                prod = _TANH_LIM
            elif prod < -_TANH_LIM:
                prod = -_TANH_LIM
            c2v[e] = 2.0 * np.arctanh(prod)


@numba.njit(cache=True)
def _var_update(var_ptr, var_edges, apriori, v2c, tv, c2v, post, v_lo, v_hi):
    for v in range(v_lo, v_hi):
        total = apriori[v]
        for k in range(var_ptr[v], var_ptr[v + 1]):
            total += c2v[var_edges[k]]
        post[v] = total
        for k in range(var_ptr[v], var_ptr[v + 1]):
            e = var_edges[k]
            m = total - c2v[e]
            if m > LLR_MAX:
                m = LLR_MAX
            elif m < -LLR_MAX:
                m = -LLR_MAX
            v2c[e] = m
            tv[e] = np.tanh(0.5 * m)


@numba.njit(cache=True)
def _bp_rounds(lo, hi, M, rounds, sec_rows, sec_ptr, row_ptr, edges_v, var_ptr, var_edges, apriori,
               v2c, tv, c2v, post):
    """Variable refresh of ``[lo, hi)`` then ``rounds`` section-ordered check/variable passes."""
    _var_update(var_ptr, var_edges, apriori, v2c, tv, c2v, post, lo * M, hi * M)
    for _ in range(rounds):
        for l in range(lo, hi):
            _check_update(sec_rows[sec_ptr[l]:sec_ptr[l + 1]], row_ptr, edges_v, tv, c2v, l * M, (l + 1) * M)
            _var_update(var_ptr, var_edges, apriori, v2c, tv, c2v, post, l * M, (l + 1) * M)


@numba.njit(cache=True)
def _extrinsic(lo, hi, M, var_ptr, var_edges, c2v, out):
    for v in range(lo * M, hi * M):
        total = 0.0
        for k in range(var_ptr[v], var_ptr[v + 1]):
            total += c2v[var_edges[k]]
        out[v] = total


class BpDecoder:
    """Message store and section-scheduled sum-product decoding for one code.

    Edges are numbered in row-major order of ``H``.  Check messages start at
    zero, i.e. carry no information, and persist across calls.
    """

    def __init__(self, code: ScLdpcCode):
        self.code = code
        H = code.H.tocsr()
        H.sort_indices()
        self.row_ptr = H.indptr.astype(np.int64)
        self.edges_v = H.indices.astype(np.int64)
        n_edges = self.edges_v.size
        self.edges_c = np.repeat(np.arange(H.shape[0], dtype=np.int64), np.diff(self.row_ptr))
        order = np.argsort(self.edges_v, kind="stable")
        self.var_edges = order.astype(np.int64)
        counts = np.bincount(self.edges_v, minlength=H.shape[1])
        self.var_ptr = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
        # checks adjacent to each section, as a CSR list
        sec_of_edge = self.edges_v // code.M
        pairs = np.unique(np.stack([sec_of_edge, self.edges_c], axis=1), axis=0)
        self.sec_rows = pairs[:, 1].astype(np.int64)
        self.sec_ptr = np.searchsorted(pairs[:, 0], np.arange(code.L + 1)).astype(np.int64)
        self.v2c = np.zeros(n_edges)
        self.tv = np.zeros(n_edges)
        self.c2v = np.zeros(n_edges)
        self.apriori = np.zeros(H.shape[1])
        self.post = np.zeros(H.shape[1])

    def reset(self) -> None:
        self.v2c[:] = 0.0
        self.tv[:] = 0.0
        self.c2v[:] = 0.0
        self.post[:] = self.apriori

    def set_apriori(self, llr: np.ndarray, lo: int = 0, hi: int | None = None) -> None:
        """A-priori LLRs for sections ``[lo, hi)`` (shape ``(hi - lo, M)`` or flat)."""
        M = self.code.M
        hi = self.code.L if hi is None else hi
        self.apriori[lo * M:hi * M] = np.clip(np.asarray(llr, dtype=float).ravel(), -LLR_MAX, LLR_MAX)

    def run(self, lo: int, hi: int, rounds: int) -> None:
        """Refresh the variables of ``[lo, hi)`` then run ``rounds`` section-ordered rounds."""
        _bp_rounds(lo, hi, self.code.M, rounds, self.sec_rows, self.sec_ptr, self.row_ptr, self.edges_v,
                   self.var_ptr, self.var_edges,
                   self.apriori, self.v2c, self.tv, self.c2v, self.post)

    def extrinsic(self, lo: int = 0, hi: int | None = None) -> np.ndarray:
        """Sum of incoming check messages per bit, shape ``(hi - lo, M)``."""
        M = self.code.M
        hi = self.code.L if hi is None else hi
        out = np.zeros(self.code.n)
        _extrinsic(lo, hi, M, self.var_ptr, self.var_edges, self.c2v, out)
        return np.clip(out[lo * M:hi * M], -LLR_MAX, LLR_MAX).reshape(hi - lo, M)

    def posterior(self, lo: int = 0, hi: int | None = None) -> np.ndarray:
        M = self.code.M
        hi = self.code.L if hi is None else hi
        return self.post[lo * M:hi * M].reshape(hi - lo, M).copy()


def bp_decode(code: ScLdpcCode, llr: np.ndarray, rounds: int) -> np.ndarray:
    """Decode full-codeword a-priori LLRs (shape ``(L, M)``); returns a-posteriori LLRs."""
    dec = BpDecoder(code)
    dec.set_apriori(llr)
    dec.reset()
    dec.run(0, code.L, rounds)
    return dec.posterior()
