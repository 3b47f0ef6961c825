from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from scbicm.coupled_interleaver import (CouplingParams, assign_symbols, build, from_permutations, load_json,
                                        overall_rate)
from scbicm.sc_ldpc import design_rate


def reference_permute(params, perms, m, l):
    """Direct transcription of the coupling rule, used as an oracle."""
    Mt = params.M // (2 * params.W + 1)
    p = perms[l + params.W][m]
    w = p // Mt - params.W
    mu = p - (w + params.W) * Mt
    if -params.W <= l + w < params.end:
        return mu, l + w, -w
    return mu, l, w


def test_params_errors_aggregate():
    errs = CouplingParams(100, 4, 1, 2).errors()
    assert any("2W+1" in e for e in errs)
    assert CouplingParams(3024, 62, 1, 2).errors() == []
    with pytest.raises(ValueError):
        CouplingParams(10, 4, 1, 2).validate()


def test_w0_is_independent_per_section():
    p = CouplingParams(8, 5, 0, 2)
    itl = build(p, 0)
    for l in range(5):
        for m in range(8):
            mu, sec, sub = itl.permute(m, l)
            assert sec == l and sub == 0 and mu == itl.perms[l][m]


def test_small_m6_structure():
    p = CouplingParams(6, 3, 1, 2)
    assert p.M_sub == 2 and p.n_sections == 4
    itl = build(p, 4)
    seen = set()
    for l in range(-1, 3):
        for m in range(6):
            out = itl.permute(m, l)
            assert out == reference_permute(p, itl.perms, m, l)
            assert 0 <= out[0] < 2 and -1 <= out[1] < 3 and -1 <= out[2] <= 1
            seen.add(out)
    assert len(seen) == 24


def test_boundary_fallback_and_known_section():
    p = CouplingParams(6, 3, 1, 2)
    # section L-1 = 2, bit 0 in subsection +1 stays put; section 0, bit 1 in subsection -1 goes to section -1
    perms = np.tile(np.arange(6), (4, 1))
    perms[3] = [4, 0, 1, 2, 3, 5]  # section 2: bit 0 -> slot 4 -> w=+1
    perms[1] = [2, 0, 1, 3, 4, 5]  # section 0: bit 1 -> slot 0 -> w=-1
    itl = from_permutations(p, perms)
    assert itl.permute(0, 2) == (0, 2, 1)
    assert itl.permute(1, 0) == (0, -1, 1)


def test_exhaustive_round_trip_and_inverse():
    for W, M, L in [(1, 6, 3), (2, 20, 6), (0, 4, 4), (1, 12, 5)]:
        p = CouplingParams(M, L, W, 2)
        itl = build(p, W + M)
        for l in range(p.first, p.end):
            for m in range(M):
                assert itl.inverse(*itl.permute(m, l)) == (m, l)


def test_interleave_deinterleave_arrays():
    p = CouplingParams(30, 7, 2, 2, both_sided=True)
    itl = build(p, 1)
    x = np.random.default_rng(0).normal(size=(p.n_sections, p.M))
    np.testing.assert_array_equal(itl.deinterleave(itl.interleave(x)), x)
    out = itl.interleave(x)
    for l in range(p.first, p.end):
        for m in range(0, p.M, 7):
            mu, sec, sub = itl.permute(m, l)
            assert out[sec - p.first, (sub + p.W) * p.M_sub + mu] == x[l - p.first, m]


def test_both_sided_last_sections_are_known():
    p = CouplingParams(6, 4, 1, 2, both_sided=True)
    assert p.end == 5 and p.n_sections == 6
    assert p.is_known(-1) and p.is_known(4) and not p.is_known(3)


def test_json_round_trip(tmp_path):
    p = CouplingParams(12, 4, 1, 2)
    itl = build(p, 3)
    path = tmp_path / "itl.json"
    itl.to_json(path)
    back = load_json(path)
    np.testing.assert_array_equal(back.perms, itl.perms)
    np.testing.assert_array_equal(back.out_src, itl.out_src)
    np.testing.assert_array_equal(load_json(itl.to_json()).perms, itl.perms)


def test_assign_k3_cyclic_example():
    p = CouplingParams(18, 3, 1, 2)
    a = assign_symbols(p, K=3, T=4, T_tr=1)
    # period 0: antennas carry subsections (-1, 0, 1); period 1 is the cyclic shift
    assert list(a.subsection[0, 0]) == [-1, 0, 1]
    sym0, sym1 = a.symbol[0, 0], a.symbol[0, 1]
    assert list(a.subsection[0, 1]) == [1, -1, 0]
    # antenna k in period 1 carries what antenna k-1 would have carried under the period-0 order
    assert list(sym1 % 3) == list(np.roll(sym0 % 3, 1))


def test_assign_w0_round_robin():
    p = CouplingParams(24, 2, 0, 2)
    a = assign_symbols(p, K=2, T=7, T_tr=1)
    assert np.all(a.subsection[a.symbol >= 0] == 0)
    used = np.sort(a.symbol[a.symbol >= 0])
    np.testing.assert_array_equal(used, np.arange(12))


def test_assign_histogram_k6_58_periods():
    p = CouplingParams(6 * 58 * 2 * 3, 3, 1, 2)
    a = assign_symbols(p, K=6, T=64, T_tr=6)
    for b in range(a.n_blocks):
        for k in range(6):
            counts = np.bincount(a.subsection[b, :, k] + 1, minlength=3)
            assert counts.max() - counts.min() <= 1


def test_assign_equal_frequency_when_divisible():
    p = CouplingParams(6 * 9 * 2, 2, 1, 2)
    a = assign_symbols(p, K=6, T=10, T_tr=1)
    for t in range(9):
        assert np.all(np.bincount(a.subsection[0, t] + 1, minlength=3) == 2)
    for k in range(6):
        assert np.all(np.bincount(a.subsection[0, :, k] + 1, minlength=3) == 3)


def test_symbol_bits_come_from_one_subsection():
    p = CouplingParams(60, 3, 2, 4)
    a = assign_symbols(p, K=5, T=8, T_tr=2)
    sub_of_slot = np.arange(p.M) // p.M_sub - p.W
    for j, slots in enumerate(a.bit_slots):
        assert len(set(sub_of_slot[slots])) == 1
        assert sub_of_slot[slots[0]] == j % 5 - 2
    assert np.array_equal(np.sort(a.bit_slots.ravel()), np.arange(p.M))


def test_assign_strict_divisibility():
    p = CouplingParams(30, 2, 0, 2)
    with pytest.raises(ValueError):
        assign_symbols(p, K=2, T=5, T_tr=1, strict=True)


def test_overall_rates():
    assert overall_rate(CouplingParams(3072, 63, 1, 2), Fraction(31, 63), 6, 64, 0) == Fraction(93, 16)
    assert overall_rate(CouplingParams(3024, 63, 0, 2), design_rate(3, 6, 63), 6, 64, 1) == Fraction(93, 16)
    assert overall_rate(CouplingParams(3024, 124, 1, 2, both_sided=True), Fraction(1, 2), 6, 64, 1) \
        == Fraction(93, 16)
    assert overall_rate(CouplingParams(6, 10**9, 0, 2), Fraction(1, 2), 6, 64, 6) \
        == pytest.approx(5.4375, abs=1e-8)
    assert overall_rate(CouplingParams(6912, 47, 1, 6), design_rate(3, 6, 47), 6, 64, 16) == Fraction(207, 16)
    assert overall_rate(CouplingParams(6768, 47, 0, 6), design_rate(3, 6, 47), 6, 64, 17) == Fraction(207, 16)
    assert overall_rate(CouplingParams(6768, 92, 1, 6, both_sided=True), Fraction(1, 2), 6, 64, 17) \
        == Fraction(207, 16)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 3), st.integers(1, 6), st.integers(1, 4), st.booleans(), st.integers(0, 10**6))
def test_property_bijection(W, L, mult, both, seed):
    M = (2 * W + 1) * 2 * mult
    p = CouplingParams(M, L, W, 2, both)
    itl = build(p, seed)
    flat = itl.out_src.ravel()
    assert np.array_equal(np.sort(flat), np.arange(p.n_sections * M))
    for l in range(p.first, p.end):
        for m in range(M):
            mu, sec, sub = itl.permute(m, l)
            assert (mu, sec, sub) == reference_permute(p, itl.perms, m, l)
            assert itl.inverse(mu, sec, sub) == (m, l)
