from itertools import combinations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mlnc import erasure
from mlnc.erasure import (CodeParams, EncodedSymbol, GeometryError, InsufficientSymbolsError,
                          build_cauchy_matrix, decode, decode_array, encode, encode_array,
                          exhaustive_erasure_check, generator_matrix, random_erasure_check)
from mlnc.gf256 import gf_matmul_np, gf_solve_np

from test_gf256 import clmul


def brute_inv(a):
    return next(x for x in range(1, 256) if clmul(a, x) == 1)


def gauss_decode(idx, payloads, params):
    """Reference decoder: invert the generator rows of the kept symbols."""
    g = generator_matrix(params)[np.asarray(idx[: params.k])]
    return gf_solve_np(g, payloads[: params.k])


def test_cauchy_entries_are_reciprocals_of_point_differences():
    p = CodeParams(3, 2, 1)
    expected = [[brute_inv(x ^ y) for y in range(3)] for x in range(3, 5)]
    assert build_cauchy_matrix(p).tolist() == expected
    assert expected == [[0xF4, 0x8E, 0x01], [0x47, 0xA7, 0x7A]]


def test_small_codeword_frozen():
    p = CodeParams(3, 2, 1)
    code = encode_array(np.array([[1], [2], [3]], dtype=np.uint8), p)
    assert code.ravel().tolist() == [1, 2, 3, 246, 154]


def test_systematic_prefix_and_parity_oracle():
    rng = np.random.default_rng(1)
    p = CodeParams(7, 4, 33)
    data = rng.integers(0, 256, (7, 33), dtype=np.uint8)
    code = encode_array(data, p)
    assert np.array_equal(code[:7], data)
    assert np.array_equal(code[7:], gf_matmul_np(build_cauchy_matrix(p), data))


def test_every_square_submatrix_of_generator_is_invertible():
    p = CodeParams(4, 3, 1)
    g = generator_matrix(p)
    eye = np.eye(4, dtype=np.uint8)
    for rows in combinations(range(7), 4):
        gf_solve_np(g[list(rows)], eye)  # raises if singular


@pytest.mark.parametrize("k,m", [(1, 0), (1, 3), (3, 2), (6, 2), (4, 3), (10, 5)])
def test_all_patterns_match_gauss_jordan(k, m):
    rng = np.random.default_rng(k * 31 + m)
    p = CodeParams(k, m, 17)
    data = rng.integers(0, 256, (k, 17), dtype=np.uint8)
    code = encode_array(data, p)
    for kept in combinations(range(p.n), k):
        idx = np.array(kept)
        got = decode_array(idx, code[idx], p)
        assert np.array_equal(got, data)
        assert np.array_equal(gauss_decode(idx, code[idx], p), data)


@pytest.mark.parametrize("k,m", [(1, 1), (5, 3), (8, 4), (12, 6)])
def test_exhaustive_sweep_backends_agree(k, m):
    p = CodeParams(k, m, 8)
    rng = np.random.default_rng(0)
    data = rng.integers(0, 256, (k, 8), dtype=np.uint8)
    code = encode_array(data, p)
    args = (erasure.MUL_TABLE, erasure.LOG_TABLE, erasure._LOGZ, erasure._EXPZ,
            build_cauchy_matrix(p), k, m, data, code)
    from math import comb
    assert erasure._sweep_jit(*args) == (comb(k + m, k), 0)
    assert erasure._sweep_np(*args) == (comb(k + m, k), 0)


def test_exhaustive_and_random_checks():
    assert exhaustive_erasure_check(CodeParams(9, 4, 16), np.random.default_rng(3)) == (715, 0)
    assert random_erasure_check(CodeParams(40, 20, 64), 50, np.random.default_rng(3)) == 0


def test_decoder_backends_agree_on_random_patterns():
    rng = np.random.default_rng(11)
    p = CodeParams(30, 12, 40)
    data = rng.integers(0, 256, (30, 40), dtype=np.uint8)
    code = encode_array(data, p)
    for _ in range(20):
        idx = np.sort(rng.choice(p.n, p.k, replace=False))
        a = erasure._run_recover(erasure._recover_np, p, idx, code[idx], np.arange(p.k))
        b = erasure._run_recover(erasure._recover_jit, p, idx, code[idx], np.arange(p.k))
        assert a[1] and b[1]
        assert np.array_equal(a[0], data) and np.array_equal(b[0], data)


def test_bytes_api_round_trip_and_duplicates():
    p = CodeParams(3, 2, 4)
    blocks = [b"abcd", b"efgh", b"ijkl"]
    syms = encode(blocks, p)
    assert [s.payload for s in syms[:3]] == blocks
    rx = [syms[4], syms[0], EncodedSymbol(0, b"zzzz"), syms[3]]  # first copy of index 0 wins
    assert decode(rx, p) == blocks


def test_errors():
    with pytest.raises(GeometryError):
        CodeParams(200, 56, 10)
    with pytest.raises(GeometryError):
        CodeParams(0, 1, 10)
    p = CodeParams(6, 2, 4)
    syms = encode([bytes([i] * 4) for i in range(6)], p)
    with pytest.raises(InsufficientSymbolsError):
        decode(syms[:5], p)
    with pytest.raises(GeometryError):
        decode([EncodedSymbol(9, b"aaaa")], p)
    with pytest.raises(GeometryError):
        decode_array([0, 0, 1, 2, 3, 4], np.zeros((6, 4), np.uint8), p)
    with pytest.raises(GeometryError):
        encode_array(np.zeros((5, 4), np.uint8), p)


geom = st.tuples(st.integers(1, 12), st.integers(0, 6), st.integers(1, 24))


@given(geom, st.randoms(use_true_random=False))
def test_any_k_symbols_round_trip(g, rnd):
    k, m, length = g
    p = CodeParams(k, m, length)
    rng = np.random.default_rng(rnd.getrandbits(32))
    data = rng.integers(0, 256, (k, length), dtype=np.uint8)
    code = encode_array(data, p)
    idx = rng.permutation(p.n)[:k]
    assert np.array_equal(decode_array(idx, code[idx], p), data)


@given(geom, st.randoms(use_true_random=False))
def test_encoding_is_linear(g, rnd):
    k, m, length = g
    p = CodeParams(k, m, length)
    rng = np.random.default_rng(rnd.getrandbits(32))
    a = rng.integers(0, 256, (k, length), dtype=np.uint8)
    b = rng.integers(0, 256, (k, length), dtype=np.uint8)
    assert np.array_equal(encode_array(a ^ b, p), encode_array(a, p) ^ encode_array(b, p))


def test_encoding_is_deterministic():
    p = CodeParams(10, 4, 32)
    data = np.arange(320, dtype=np.uint8).reshape(10, 32)
    assert np.array_equal(encode_array(data, p), encode_array(data.copy(), p))
    assert np.array_equal(build_cauchy_matrix(p), build_cauchy_matrix(CodeParams(10, 4, 1)))
