from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from scbicm.sc_ldpc import (LLR_MAX, BpDecoder, bp_decode, build_base_matrix, design_rate, lift,
                            load_parity_text, make_block_code, make_code)


def staircase(dv, dc, L):
    """Independent oracle: enumerate the staircase pattern cell by cell."""
    r = dc // dv
    B = np.zeros((L + 1, r * L), dtype=int)
    for l in range(L + 1):
        for c in range(r * L):
            # column c belongs to section c // r; section s touches rows s .. s + dv - 1
            if c // r <= l <= c // r + dv - 1:
                B[l, c] = 1
    return B


def test_base_matrix_3_6_6_printed_form():
    expected = np.array([
        [1, 1, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0],
        [1, 1, 1, 1, 0, 0, 0, 0, 0, 0, 0, 0],
        [1, 1, 1, 1, 1, 1, 0, 0, 0, 0, 0, 0],
        [0, 0, 1, 1, 1, 1, 1, 1, 0, 0, 0, 0],
        [0, 0, 0, 0, 1, 1, 1, 1, 1, 1, 0, 0],
        [0, 0, 0, 0, 0, 0, 1, 1, 1, 1, 1, 1],
        [0, 0, 0, 0, 0, 0, 0, 0, 1, 1, 1, 1],
    ])
    np.testing.assert_array_equal(build_base_matrix(3, 6, 6), expected)


@pytest.mark.parametrize("dv,dc,L", [(3, 6, 6), (3, 6, 17), (2, 4, 4), (4, 8, 9), (3, 9, 5)])
def test_base_matrix_matches_enumeration(dv, dc, L):
    np.testing.assert_array_equal(build_base_matrix(dv, dc, L), staircase(dv, dc, L))


def test_base_matrix_first_row_and_column_weights():
    B = build_base_matrix(3, 6, 10)
    assert list(np.nonzero(B[0])[0]) == [0, 1]
    col_w = B.sum(axis=0)
    assert np.all(col_w[:-4] == 3)
    assert np.all(col_w <= 3)


def test_base_matrix_2_4_4_interior_columns():
    B = build_base_matrix(2, 4, 4)
    assert B.shape == (5, 8)
    assert np.all(B.sum(axis=0) == 2)


@pytest.mark.parametrize("args", [(3, 7, 6), (3, 6, 2), (0, 6, 6)])
def test_base_matrix_rejects_bad_params(args):
    with pytest.raises(ValueError):
        build_base_matrix(*args)


def test_design_rate_values():
    assert design_rate(3, 6, 6) == Fraction(5, 12)
    assert design_rate(3, 6) == Fraction(1, 2)
    assert design_rate(3, 6, 63) == Fraction(31, 63)
    assert abs(float(design_rate(3, 6, 63)) - 31 / 63) < 1e-15


def test_lift_shape_and_ones():
    base = build_base_matrix(3, 6, 6)
    code = lift(base, 3, 6, 12, np.random.default_rng(0))
    Z = 6
    assert code.H.shape == (7 * Z, 6 * 12)
    assert code.H.nnz == int(base.sum()) * Z


def test_lift_preserves_degrees():
    base = build_base_matrix(3, 6, 8)
    code = lift(base, 3, 6, 24, np.random.default_rng(3))
    Z = 12
    H = code.H.toarray()
    np.testing.assert_array_equal(H.sum(axis=1), np.repeat(base.sum(axis=1), Z))
    np.testing.assert_array_equal(H.sum(axis=0), np.repeat(base.sum(axis=0), Z))


def test_lift_deterministic():
    a = make_code(3, 6, 6, 24, 11)
    b = make_code(3, 6, 6, 24, 11)
    assert (a.H != b.H).nnz == 0


def test_lift_rejects_size():
    with pytest.raises(ValueError):
        lift(build_base_matrix(3, 6, 6), 3, 6, 13, np.random.default_rng(0))


def test_encode_zero_and_rate():
    code = make_code(3, 6, 6, 24, 1)
    assert code.k == int(Fraction(5, 12) * 6 * 24)
    c = code.encode(np.zeros(code.k, dtype=np.uint8))
    assert c.shape == (6, 24) and not c.any()


def test_encode_random_valid_by_independent_multiply():
    code = make_code(3, 6, 6, 24, 2)
    H = code.H.toarray().astype(np.int64)
    rng = np.random.default_rng(5)
    for _ in range(20):
        c = code.encode(rng.integers(0, 2, code.k))
        assert not np.any((H @ c.reshape(-1)) % 2)


def test_encode_parity_validity_1000_codewords():
    code = make_code(3, 6, 8, 48, 7)
    rng = np.random.default_rng(8)
    for _ in range(1000):
        c = code.encode(rng.integers(0, 2, code.k))
        assert not code.syndrome(c).any()


def test_encode_is_systematic():
    code = make_code(3, 6, 6, 24, 4)
    info = np.random.default_rng(1).integers(0, 2, code.k)
    c = code.encode(info)
    np.testing.assert_array_equal(c.reshape(-1)[code.info_positions()], info)


def test_parity_text_round_trip(tmp_path):
    code = make_code(3, 6, 6, 12, 0)
    path = tmp_path / "h.txt"
    code.save_text(path)
    H = load_parity_text(path)
    assert H.shape == code.H.shape
    assert (H != code.H).nnz == 0


def test_block_code_valid_codewords():
    code = make_block_code(3, 6, 3, 120, 0)
    rng = np.random.default_rng(0)
    for _ in range(50):
        c = code.encode(rng.integers(0, 2, code.k))
        assert c.shape == (3, 120)
        assert not code.syndrome(c).any()
    assert code.rate >= Fraction(1, 2)


def test_bp_saturated_all_zero_stays_saturated():
    code = make_code(3, 6, 6, 24, 0)
    dec = BpDecoder(code)
    dec.set_apriori(np.full((6, 24), 1e6))
    dec.reset()
    dec.run(0, 6, 3)
    assert np.all(dec.posterior() > 0)
    assert np.all(dec.v2c >= LLR_MAX - 1e-9)
    assert np.all(dec.c2v > 0.9 * LLR_MAX)


def test_bp_check_rule_degree_three():
    # a single 3-edge check: a parity matrix with one row
    from scipy import sparse

    from scbicm.sc_ldpc import ScLdpcCode

    H = sparse.csr_matrix(np.array([[1, 1, 1]], dtype=np.int8))
    code = ScLdpcCode(1, 3, 1, 3, np.ones((1, 1), dtype=np.int8), {}, H)
    dec = BpDecoder(code)
    l1, l2 = 1.3, -0.7
    dec.set_apriori(np.array([l1, l2, 0.0]))
    dec.reset()
    dec.run(0, 1, 1)
    ext = dec.extrinsic()[0]
    assert ext[2] == pytest.approx(2 * np.arctanh(np.tanh(l1 / 2) * np.tanh(l2 / 2)), abs=1e-12)


def test_bp_recovers_codeword_at_low_noise():
    code = make_code(3, 6, 6, 24, 9)
    rng = np.random.default_rng(2)
    c = code.encode(rng.integers(0, 2, code.k))
    sigma = 0.3
    y = (1 - 2 * c) + sigma * rng.standard_normal(c.shape)
    post = bp_decode(code, 2 * y / sigma**2, 10)
    np.testing.assert_array_equal((post < 0).astype(int), c)


def test_bp_corrects_errors_on_medium_code():
    code = make_code(3, 6, 20, 600, 1)
    rng = np.random.default_rng(3)
    c = code.encode(rng.integers(0, 2, code.k))
    sigma = 0.75
    y = (1 - 2 * c) + sigma * rng.standard_normal(c.shape)
    llr = 2 * y / sigma**2
    raw = np.count_nonzero((llr < 0) != c)
    post = bp_decode(code, llr, 40)
    assert raw > 100
    assert np.count_nonzero((post < 0) != c) == 0


def test_bp_deterministic():
    code = make_code(3, 6, 8, 48, 5)
    llr = np.random.default_rng(0).normal(1.0, 1.5, (8, 48))
    a = bp_decode(code, llr, 5)
    b = bp_decode(code, llr, 5)
    assert np.array_equal(a, b)


def test_bp_window_runs_only_touch_window():
    code = make_code(3, 6, 10, 48, 5)
    llr = np.random.default_rng(0).normal(1.0, 1.5, (10, 48))
    dec = BpDecoder(code)
    dec.set_apriori(llr)
    dec.reset()
    dec.run(2, 5, 3)
    post = dec.posterior()
    np.testing.assert_array_equal(post[6:], np.clip(llr[6:], -LLR_MAX, LLR_MAX))


@settings(max_examples=25, deadline=None)
@given(st.integers(3, 9), st.integers(0, 2**31 - 1))
def test_property_encoder_validity(L, seed):
    code = make_code(3, 6, L, 24, seed)
    c = code.encode(np.random.default_rng(seed).integers(0, 2, code.k))
    assert not code.syndrome(c).any()
