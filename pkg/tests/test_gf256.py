import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mlnc import gf256
from mlnc.gf256 import (gf_add, gf_div, gf_inv, gf_matmul, gf_matmul_np, gf_mul, gf_pow, gf_solve,
                        gf_solve_np)

byte = st.integers(0, 255)
nonzero = st.integers(1, 255)


def clmul(a, b):
    """Shift-and-add multiply with reduction, independent of the tables."""
    r = 0
    while b:
        if b & 1:
            r ^= a
        a <<= 1
        if a & 0x100:
            a ^= 0x11D
        b >>= 1
    return r


def test_mul_table_matches_bitwise_multiply():
    table = np.array([[clmul(a, b) for b in range(256)] for a in range(256)], dtype=np.uint8)
    assert np.array_equal(gf256.MUL_TABLE, table)


def test_known_products():
    assert gf_mul(0x53, 0xCA) == 0x8F
    assert gf_mul(0x80, 2) == 0x1D  # x^8 reduces to the low part of the polynomial
    assert gf_mul(0xFF, 0xFF) == 0xE2


def test_inverses():
    assert gf_inv(2) == 0x8E
    assert gf_inv(3) == 0xF4
    for a in range(1, 256):
        assert clmul(a, gf_inv(a)) == 1
    with pytest.raises(ZeroDivisionError):
        gf_inv(0)
    with pytest.raises(ZeroDivisionError):
        gf_div(5, 0)


def test_generator_has_full_order():
    assert len(set(gf256.EXP_TABLE[:255].tolist())) == 255
    assert gf_pow(2, 255) == 1


def test_out_of_range_elements_rejected():
    with pytest.raises(ValueError):
        gf_add(256, 1)
    with pytest.raises(ValueError):
        gf_mul(-1, 1)


def test_tables_are_read_only():
    with pytest.raises(ValueError):
        gf256.MUL_TABLE[1, 1] = 0


@given(byte, byte, byte)
def test_field_axioms(a, b, c):
    assert gf_mul(a, b) == gf_mul(b, a)
    assert gf_mul(a, gf_mul(b, c)) == gf_mul(gf_mul(a, b), c)
    assert gf_mul(a, gf_add(b, c)) == gf_add(gf_mul(a, b), gf_mul(a, c))


@given(byte, nonzero)
def test_division_undoes_multiplication(a, b):
    assert gf_div(gf_mul(a, b), b) == a


@given(nonzero, st.integers(-300, 300))
def test_pow_matches_repeated_multiplication(a, e):
    ref = 1
    base = a if e >= 0 else gf_inv(a)
    for _ in range(abs(e)):
        ref = clmul(ref, base)
    assert gf_pow(a, e) == ref


def _matmul_oracle(coef, data):
    out = np.zeros((coef.shape[0], data.shape[1]), dtype=np.int64)
    for i in range(coef.shape[0]):
        for j in range(coef.shape[1]):
            for t in range(data.shape[1]):
                out[i, t] ^= clmul(int(coef[i, j]), int(data[j, t]))
    return out.astype(np.uint8)


@pytest.mark.parametrize("shape", [(1, 1, 1), (3, 4, 5), (5, 2, 7), (2, 0, 3)])
def test_matmul_backends_match_oracle(shape):
    r, k, n = shape
    rng = np.random.default_rng(r * 100 + k * 10 + n)
    coef = rng.integers(0, 256, (r, k), dtype=np.uint8)
    data = rng.integers(0, 256, (k, n), dtype=np.uint8)
    ref = _matmul_oracle(coef, data)
    assert np.array_equal(gf_matmul(coef, data), ref)
    assert np.array_equal(gf_matmul_np(coef, data), ref)
    assert np.array_equal(gf256.gf_matmul_jit(gf256.MUL_TABLE, coef, data), ref)


def test_solve_round_trip_both_backends():
    rng = np.random.default_rng(7)
    for n in (1, 2, 5, 12):
        while True:
            a = rng.integers(0, 256, (n, n), dtype=np.uint8)
            x = rng.integers(0, 256, (n, 9), dtype=np.uint8)
            try:
                got = gf_solve(a, gf_matmul(a, x))
                break
            except ValueError:
                continue
        assert np.array_equal(got, x)
        assert np.array_equal(gf_solve_np(a, gf_matmul(a, x)), x)


def test_solve_singular_raises():
    a = np.array([[1, 2], [1, 2]], dtype=np.uint8)
    with pytest.raises(ValueError):
        gf_solve(a, np.zeros((2, 1), dtype=np.uint8))
    assert not gf256.gf_solve_jit(gf256.MUL_TABLE, gf256.INV_TABLE, a,
                                  np.zeros((2, 1), dtype=np.uint8))[1]


def test_shape_mismatch():
    with pytest.raises(ValueError):
        gf_matmul(np.zeros((2, 3), np.uint8), np.zeros((2, 3), np.uint8))
    with pytest.raises(ValueError):
        gf_solve(np.zeros((2, 3), np.uint8), np.zeros((2, 1), np.uint8))
