"""Arithmetic in GF(2^8) with reduction polynomial x^8+x^4+x^3+x^2+1 (0x11D).

Scalar helpers (``gf_mul``, ``gf_div``, ``gf_inv``) work on Python ints. The
byte-matrix kernels (``gf_matmul``, ``gf_solve``) operate on ``uint8`` arrays
through a full 256x256 multiplication table and come in a numba loop flavour
and a vectorised numpy flavour.
"""

import numpy as np

from ._accel import njit, pick

POLY = 0x11D
GENERATOR = 0x02


def _build_tables():
    exp = np.zeros(512, dtype=np.uint8)
    log = np.zeros(256, dtype=np.int32)
    x = 1
    for i in range(255):
        exp[i] = x
        log[x] = i
        x <<= 1
        if x & 0x100:
            x ^= POLY
    exp[255:510] = exp[:255]

    a = np.arange(256)
    idx = log[a][:, None] + log[a][None, :]
    mul = exp[idx]
    mul[0, :] = 0
    mul[:, 0] = 0

    inv = np.zeros(256, dtype=np.uint8)
    inv[1:] = exp[255 - log[1:]]
    return exp, log, mul.astype(np.uint8), inv


EXP_TABLE, LOG_TABLE, MUL_TABLE, INV_TABLE = _build_tables()
for _t in (EXP_TABLE, LOG_TABLE, MUL_TABLE, INV_TABLE):
    _t.setflags(write=False)
del _t


def _check(a):
    a = int(a)
    if not 0 <= a <= 255:
        raise ValueError(f"{a} is not an element of GF(2^8)")
    return a


def gf_add(a, b):
    return _check(a) ^ _check(b)


def gf_mul(a, b):
    return int(MUL_TABLE[_check(a), _check(b)])


def gf_inv(a):
    a = _check(a)
    if a == 0:
        raise ZeroDivisionError("0 has no inverse in GF(2^8)")
    return int(INV_TABLE[a])


def gf_div(a, b):
    """Return ``a / b``; raises ``ZeroDivisionError`` when ``b`` is zero."""
    return gf_mul(a, gf_inv(b))


def gf_pow(a, e):
    a = _check(a)
    if e < 0:
        return gf_pow(gf_inv(a), -e)
    if a == 0:
        return 1 if e == 0 else 0
    return int(EXP_TABLE[(int(LOG_TABLE[a]) * e) % 255])


# -- byte-matrix kernels ------------------------------------------------------


def _gf_matmul_loop(mul, coef, data):
    rows, inner = coef.shape
    length = data.shape[1]
    out = np.zeros((rows, length), dtype=np.uint8)
    for i in range(rows):
        for j in range(inner):
            c = coef[i, j]
            if c == 0:
                continue
            mrow = mul[c]
            for t in range(length):
                out[i, t] ^= mrow[data[j, t]]
    return out


def _gf_matmul_numpy(mul, coef, data):
    out = np.zeros((coef.shape[0], data.shape[1]), dtype=np.uint8)
    for i in range(coef.shape[0]):
        if coef.shape[1]:
            out[i] = np.bitwise_xor.reduce(mul[coef[i][:, None], data], axis=0)
    return out


def _gf_solve_loop(mul, inv, a, b):
    n = a.shape[0]
    length = b.shape[1]
    m = a.copy()
    x = b.copy()
    for col in range(n):
        piv = -1
        for r in range(col, n):
            if m[r, col] != 0:
                piv = r
                break
        if piv < 0:
            return x, False
        if piv != col:
            for c in range(n):
                tmp = m[col, c]
                m[col, c] = m[piv, c]
                m[piv, c] = tmp
            for t in range(length):
                tmp = x[col, t]
                x[col, t] = x[piv, t]
                x[piv, t] = tmp
        s = inv[m[col, col]]
        if s != 1:
            srow = mul[s]
            for c in range(n):
                m[col, c] = srow[m[col, c]]
            for t in range(length):
                x[col, t] = srow[x[col, t]]
        for r in range(n):
            f = m[r, col]
            if r == col or f == 0:
                continue
            frow = mul[f]
            for c in range(n):
                m[r, c] ^= frow[m[col, c]]
            for t in range(length):
                x[r, t] ^= frow[x[col, t]]
    return x, True


def _gf_solve_numpy(mul, inv, a, b):
    n = a.shape[0]
    aug = np.concatenate([a, b], axis=1).astype(np.uint8)
    for col in range(n):
        nz = np.flatnonzero(aug[col:, col])
        if nz.size == 0:
            return aug[:, n:].copy(), False
        piv = col + nz[0]
        if piv != col:
            aug[[col, piv]] = aug[[piv, col]]
        aug[col] = mul[inv[aug[col, col]], aug[col]]
        factors = aug[:, col].copy()
        factors[col] = 0
        aug ^= mul[factors[:, None], aug[col][None, :]]
    return aug[:, n:].copy(), True


gf_matmul_jit = njit(_gf_matmul_loop)
gf_solve_jit = njit(_gf_solve_loop)


def gf_matmul_np(coef, data):
    return _gf_matmul_numpy(MUL_TABLE, coef, data)


def gf_solve_np(a, b):
    """``gf_solve`` forced onto the numpy path."""
    return _solve_checked(_gf_solve_numpy, a, b)


_matmul_impl = pick(gf_matmul_jit, _gf_matmul_numpy)
_solve_impl = pick(gf_solve_jit, _gf_solve_numpy)


def gf_matmul(coef, data):
    """Multiply a GF(2^8) coefficient matrix (r x k) by k byte rows -> r byte rows."""
    coef = np.ascontiguousarray(coef, dtype=np.uint8)
    data = np.ascontiguousarray(data, dtype=np.uint8)
    if coef.ndim != 2 or data.ndim != 2 or coef.shape[1] != data.shape[0]:
        raise ValueError(f"shape mismatch: {coef.shape} @ {data.shape}")
    return _matmul_impl(MUL_TABLE, coef, data)


def gf_solve(a, b):
    """Solve ``a @ x = b`` over GF(2^8); raises ``ValueError`` if ``a`` is singular."""
    return _solve_checked(_solve_impl, a, b)


def _solve_checked(impl, a, b):
    a = np.ascontiguousarray(a, dtype=np.uint8)
    b = np.ascontiguousarray(b, dtype=np.uint8)
    if a.ndim != 2 or a.shape[0] != a.shape[1] or b.ndim != 2 or b.shape[0] != a.shape[0]:
        raise ValueError(f"shape mismatch: {a.shape} \\ {b.shape}")
    x, ok = impl(MUL_TABLE, INV_TABLE, a, b)
    if not ok:
        raise ValueError("singular matrix over GF(2^8)")
    return x


def gf_inv_matrix(a):
    a = np.asarray(a, dtype=np.uint8)
    return gf_solve(a, np.eye(a.shape[0], dtype=np.uint8))
