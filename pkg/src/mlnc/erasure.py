"""Systematic Cauchy Reed-Solomon erasure code over GF(2^8).

A codeword holds ``k`` data symbols followed by ``m`` parity symbols. Parity
row ``i`` is the Cauchy combination ``sum_j data_j / (x_i ^ y_j)`` with
``x_i = k + i`` and ``y_j = j``; any ``k`` of the ``n = k + m`` symbols
reconstruct the data.
"""

from dataclasses import dataclass
from functools import lru_cache
from itertools import combinations
from typing import Iterable, Sequence

import numpy as np

from ._accel import njit, pick
from .gf256 import EXP_TABLE, INV_TABLE, LOG_TABLE, MUL_TABLE, gf_matmul, gf_matmul_np

MAX_SYMBOLS = 255


class ErasureCodeError(ValueError):
    pass


class GeometryError(ErasureCodeError):
    """Code parameters or payload shapes do not fit the codec."""


class InsufficientSymbolsError(ErasureCodeError):
    """Fewer than k distinct symbols were supplied to the decoder."""


@dataclass(frozen=True)
class CodeParams:
    k: int
    m: int
    symbol_len: int

    def __post_init__(self):
        if self.k < 1 or self.m < 0 or self.symbol_len < 1:
            raise GeometryError(f"need k>=1, m>=0, symbol_len>=1, got {self}")
        if self.k + self.m > MAX_SYMBOLS:
            raise GeometryError(f"k+m={self.k + self.m} exceeds {MAX_SYMBOLS} symbols")

    @property
    def n(self) -> int:
        return self.k + self.m

    @property
    def rate(self) -> float:
        return self.k / self.n


@dataclass(frozen=True)
class EncodedSymbol:
    index: int
    payload: bytes


@lru_cache(maxsize=64)
def _cauchy(k: int, m: int) -> np.ndarray:
    x = np.arange(k, k + m, dtype=np.int64)[:, None]
    y = np.arange(k, dtype=np.int64)[None, :]
    mat = INV_TABLE[x ^ y].astype(np.uint8)
    mat.setflags(write=False)
    return mat


def build_cauchy_matrix(params: CodeParams) -> np.ndarray:
    """Return the m x k parity matrix (a read-only ``uint8`` array)."""
    return _cauchy(params.k, params.m)


def generator_matrix(params: CodeParams) -> np.ndarray:
    return np.vstack([np.eye(params.k, dtype=np.uint8), build_cauchy_matrix(params)])


# -- recovery kernel ----------------------------------------------------------
#
# Missing data symbols are solved from the syndromes of e parity symbols. The
# e x e Cauchy submatrix is inverted in closed form on logarithms:
#   inv[j, i] = prod_q (x_i^y_q)(x_q^y_j) / ((x_i^y_j) prod_{q!=i}(x_i^x_q) prod_{q!=j}(y_j^y_q))
# so inv[j, i] = antilog(colbase[j] + roww[i] - log(x_i^y_j)).
# The stages are separate kernels so the exhaustive sweep can hoist what depends
# only on the erased set. Scratch buffers are passed in; nothing allocates per
# pattern.

_ZERO_LOG = 2048
# LOGZ maps 0 to a sentinel that lands in the zero tail of EXPZ.
_LOGZ = LOG_TABLE.astype(np.int64)
_LOGZ[0] = _ZERO_LOG
_EXPZ = np.zeros(4096, dtype=np.uint8)
_EXPZ[:1020] = EXP_TABLE[(np.arange(1020) - 255) % 255]
for _t in (_LOGZ, _EXPZ):
    _t.setflags(write=False)
del _t


def _syndrome_into(mul, logz, cauchy, crow, k, present, known, parity, dst, ldst):
    for t in range(dst.shape[0]):
        acc = parity[t]
        for j in range(k):
            if present[j]:
                acc ^= mul[cauchy[crow, j], known[j, t]]
        dst[t] = acc
        ldst[t] = logz[acc]


def _col_terms(log, missing, e, lcol):
    for j in range(e):
        acc = 0
        for q in range(e):
            if q != j:
                acc -= log[missing[j] ^ missing[q]]
        lcol[j] = acc


def _cauchy_apply(expz, lsub_t, roww, colbase, ls, rsel, e, missing, out):
    """out[missing[j]] = sum_i inv[j, i] * syndrome[rsel[i]], all in the log domain.

    ``lsub_t[j, i]`` is log(x_i ^ y_j); ``roww`` and ``colbase`` are reduced to
    [0, 255); ``ls`` holds syndrome logs with the zero sentinel.
    """
    length = ls.shape[1]
    # Byte position innermost so the row gathers stay contiguous.
    for j in range(e):
        mj = missing[j]
        cb = colbase[j] + 255
        # Two parity rows per pass halve the read-modify-write chain on out.
        if e % 2:
            a = cb + roww[0] - lsub_t[j, 0]
            r = rsel[0]
            for t in range(length):
                out[mj, t] = expz[a + ls[r, t]]
        else:
            for t in range(length):
                out[mj, t] = 0
        for i in range(e % 2, e, 2):
            a0 = cb + roww[i] - lsub_t[j, i]
            a1 = cb + roww[i + 1] - lsub_t[j, i + 1]
            r0 = rsel[i]
            r1 = rsel[i + 1]
            for t in range(length):
                out[mj, t] ^= expz[a0 + ls[r0, t]] ^ expz[a1 + ls[r1, t]]


def _make_recover(syndrome_into, col_terms, cauchy_apply):
    def recover(mul, log, logz, expz, cauchy, k, idx, src, rows, out, present, iwork, lsub_t,
                s, ls):
        length = out.shape[1]
        missing = iwork[0]
        xr = iwork[1]
        roww = iwork[2]
        colbase = iwork[3]
        rsel = iwork[4]
        for j in range(k):
            present[j] = False
        for r in range(idx.shape[0]):
            sym = idx[r]
            if sym < k:
                present[sym] = True
                for t in range(length):
                    out[sym, t] = src[rows[r], t]
        e = 0
        for j in range(k):
            if not present[j]:
                missing[e] = j
                e += 1
        if e == 0:
            return True

        used = 0
        for r in range(idx.shape[0]):
            if used == e:
                break
            sym = idx[r]
            if sym < k:
                continue
            xr[used] = sym
            rsel[used] = used
            syndrome_into(mul, logz, cauchy, sym - k, k, present, out, src[rows[r]], s[used],
                          ls[used])
            used += 1
        if used < e:
            return False

        for i in range(e):
            acc = 0
            for q in range(e):
                lsub_t[q, i] = log[xr[i] ^ missing[q]]
                acc += lsub_t[q, i]
                if q != i:
                    acc -= log[xr[i] ^ xr[q]]
            roww[i] = acc % 255
        col_terms(log, missing, e, colbase)
        for j in range(e):
            acc = colbase[j]
            for i in range(e):
                acc += lsub_t[j, i]
            colbase[j] = acc % 255
        cauchy_apply(expz, lsub_t, roww, colbase, ls, rsel, e, missing, out)
        return True

    return recover


_syndrome_into_jit = njit(_syndrome_into, inline=True)
_col_terms_jit = njit(_col_terms, inline=True)
_cauchy_apply_jit = njit(_cauchy_apply, inline=True)
_recover_jit = njit(_make_recover(_syndrome_into_jit, _col_terms_jit, _cauchy_apply_jit))


def _recover_np(mul, log, logz, expz, cauchy, k, idx, src, rows, out, present, iwork, lxy,
                s, ls):
    sys_mask = idx < k
    present[:] = False
    present[idx[sys_mask]] = True
    out[idx[sys_mask]] = src[rows[sys_mask]]
    miss = np.flatnonzero(~present)
    e = miss.size
    if e == 0:
        return True
    par = np.flatnonzero(~sys_mask)[:e]
    if par.size < e:
        return False
    xr = idx[par]
    known = np.flatnonzero(present)
    synd = src[rows[par]] ^ gf_matmul_np(cauchy[xr - k][:, known], out[known])

    lxy_ = log[xr[:, None] ^ miss[None, :]].astype(np.int64)
    lxx = log[xr[:, None] ^ xr[None, :]].astype(np.int64)
    lyy = log[miss[:, None] ^ miss[None, :]].astype(np.int64)
    np.fill_diagonal(lxx, 0)
    np.fill_diagonal(lyy, 0)
    roww = (lxy_.sum(axis=1) - lxx.sum(axis=1)) % 255
    colbase = (lxy_.sum(axis=0) - lyy.sum(axis=1)) % 255
    inv = expz[colbase[:, None] + roww[None, :] - lxy_.T + 255]
    out[miss] = gf_matmul_np(inv, synd)
    return True


_recover = pick(_recover_jit, _recover_np)


def _scratch(k, length):
    return (np.zeros(k, dtype=np.bool_), np.zeros((5, k), dtype=np.int64),
            np.zeros((k, k), dtype=np.int64), np.zeros((k, length), dtype=np.uint8),
            np.zeros((k, length), dtype=np.int64))


def _run_recover(impl, params, idx, src, rows):
    out = np.empty((params.k, src.shape[1]), dtype=np.uint8)
    ok = impl(MUL_TABLE, LOG_TABLE, _LOGZ, _EXPZ, build_cauchy_matrix(params), params.k, idx,
              src, rows, out, *_scratch(params.k, src.shape[1]))
    return out, ok


# -- public codec -------------------------------------------------------------


def _as_data_array(data, params: CodeParams) -> np.ndarray:
    if isinstance(data, np.ndarray):
        arr = np.ascontiguousarray(data, dtype=np.uint8)
        if arr.shape != (params.k, params.symbol_len):
            raise GeometryError(f"data shape {arr.shape} != {(params.k, params.symbol_len)}")
        return arr
    data = list(data)
    if len(data) != params.k:
        raise GeometryError(f"expected {params.k} data symbols, got {len(data)}")
    for i, d in enumerate(data):
        if len(d) != params.symbol_len:
            raise GeometryError(f"symbol {i} has {len(d)} bytes, expected {params.symbol_len}")
    return np.frombuffer(b"".join(bytes(d) for d in data), dtype=np.uint8).reshape(
        params.k, params.symbol_len)


def encode_array(data, params: CodeParams) -> np.ndarray:
    """Encode a (k, symbol_len) byte array into the full (n, symbol_len) codeword."""
    arr = _as_data_array(data, params)
    if params.m == 0:
        return arr.copy()
    parity = gf_matmul(build_cauchy_matrix(params), arr)
    return np.vstack([arr, parity])


def encode(data: Sequence[bytes] | np.ndarray, params: CodeParams) -> list[EncodedSymbol]:
    code = encode_array(data, params)
    return [EncodedSymbol(i, code[i].tobytes()) for i in range(params.n)]


def decode_array(indices, payloads, params: CodeParams) -> np.ndarray:
    """Reconstruct the (k, symbol_len) data array from symbols given as parallel arrays.

    ``indices`` must be distinct; only the first k are used, systematic ones
    preferred.
    """
    idx = np.asarray(indices, dtype=np.int64)
    src = np.ascontiguousarray(payloads, dtype=np.uint8)
    if src.ndim != 2 or src.shape[0] != idx.shape[0] or src.shape[1] != params.symbol_len:
        raise GeometryError(f"payload array shape {src.shape} does not match indices/params")
    if idx.size and (idx.min() < 0 or idx.max() >= params.n):
        raise GeometryError(f"symbol index outside [0, {params.n})")
    if np.unique(idx).size != idx.size:
        raise GeometryError("duplicate symbol indices")
    if idx.size < params.k:
        raise InsufficientSymbolsError(f"need {params.k} distinct symbols, got {idx.size}")
    order = np.argsort(idx >= params.k, kind="stable")[: params.k]
    rows = np.ascontiguousarray(order, dtype=np.int64)
    take = np.ascontiguousarray(idx[rows])
    out, ok = _run_recover(_recover, params, take, src, rows)
    if not ok:  # pragma: no cover - cannot happen with k distinct symbols
        raise ErasureCodeError("not enough parity symbols to solve the erasures")
    return out


def decode(received: Iterable[EncodedSymbol], params: CodeParams) -> list[bytes]:
    seen: dict[int, bytes] = {}
    for sym in received:
        if not 0 <= sym.index < params.n:
            raise GeometryError(f"symbol index {sym.index} outside [0, {params.n})")
        if len(sym.payload) != params.symbol_len:
            raise GeometryError(
                f"symbol {sym.index} has {len(sym.payload)} bytes, expected {params.symbol_len}")
        seen.setdefault(sym.index, sym.payload)
    if len(seen) < params.k:
        raise InsufficientSymbolsError(f"need {params.k} distinct symbols, got {len(seen)}")
    idx = list(seen)
    payloads = np.frombuffer(b"".join(seen[i] for i in idx), dtype=np.uint8).reshape(
        len(idx), params.symbol_len)
    out = decode_array(idx, payloads, params)
    return [out[j].tobytes() for j in range(params.k)]


# -- erasure-pattern sweeps ---------------------------------------------------


def _next_combination(c, e, n):
    i = e - 1
    while i >= 0 and c[i] == i + n - e:
        i -= 1
    if i < 0:
        return False
    c[i] += 1
    for j in range(i + 1, e):
        c[j] = c[j - 1] + 1
    return True


def _make_sweep(syndrome_into, col_terms, cauchy_apply, next_combination):
    # Patterns are grouped by the set D of erased data symbols (size e); for each
    # D every choice P of e surviving parity symbols is decoded and checked. P runs
    # in lexicographic order, so the column terms are kept as prefix sums over P
    # and only the suffix after the changed position is recomputed.
    def sweep(mul, log, logz, expz, cauchy, k, m, data, code):
        length = data.shape[1]
        mm = max(m, 1)
        present = np.zeros(k, dtype=np.bool_)
        out = code[:k].copy()
        syn = np.zeros((mm, length), dtype=np.uint8)
        ls = np.zeros((mm, length), dtype=np.int64)
        lxy = np.zeros((mm, k), dtype=np.int64)
        rowsum = np.zeros(mm, dtype=np.int64)
        roww = np.zeros(k, dtype=np.int64)
        lcol = np.zeros(k, dtype=np.int64)
        colbase = np.zeros(k, dtype=np.int64)
        prefix = np.zeros((k + 1, k), dtype=np.int64)
        lsub_t = np.zeros((k, k), dtype=np.int64)
        rsel = np.zeros(mm, dtype=np.int64)
        patterns = 0
        failures = 0
        for e in range(min(k, m) + 1):
            nsets = 1
            for i in range(e):
                nsets = nsets * (m - i) // (i + 1)
            ee = max(e, 1)
            psets = np.zeros((nsets, ee), dtype=np.int64)
            pterm = np.zeros((nsets, ee), dtype=np.int64)
            pchg = np.zeros(nsets, dtype=np.int64)
            cur = np.arange(e)
            for p in range(nsets):
                first = e
                for i in range(e):
                    if p > 0 and first == e and psets[p - 1, i] != cur[i]:
                        first = i
                    psets[p, i] = cur[i]
                    acc = 0
                    for q in range(e):
                        if q != i:
                            acc += log[(k + cur[i]) ^ (k + cur[q])]
                    pterm[p, i] = acc
                pchg[p] = 0 if p == 0 else first
                next_combination(cur, e, m)

            dset = np.arange(e)
            while True:
                for j in range(k):
                    present[j] = True
                for q in range(e):
                    present[dset[q]] = False
                for j in range(k):
                    if present[j]:
                        for t in range(length):
                            out[j, t] = code[j, t]
                            if out[j, t] != data[j, t]:
                                failures += 1
                for r in range(m):
                    syndrome_into(mul, logz, cauchy, r, k, present, out, code[k + r], syn[r],
                                  ls[r])
                    acc = 0
                    for q in range(e):
                        lxy[r, q] = log[(k + r) ^ dset[q]]
                        acc += lxy[r, q]
                    rowsum[r] = acc
                col_terms(log, dset, e, lcol)
                for j in range(e):
                    prefix[0, j] = lcol[j]
                for p in range(nsets):
                    for i in range(e):
                        rsel[i] = psets[p, i]
                    for d in range(pchg[p], e):
                        r = rsel[d]
                        for j in range(e):
                            prefix[d + 1, j] = prefix[d, j] + lxy[r, j]
                            lsub_t[j, d] = lxy[r, j]
                    for j in range(e):
                        colbase[j] = prefix[e, j] % 255
                    for i in range(e):
                        roww[i] = (rowsum[rsel[i]] - pterm[p, i]) % 255
                    cauchy_apply(expz, lsub_t, roww, colbase, ls, rsel, e, dset, out)
                    bad = False
                    for q in range(e):
                        j = dset[q]
                        for t in range(length):
                            if out[j, t] != data[j, t]:
                                bad = True
                    failures += bad
                    patterns += 1
                if not next_combination(dset, e, k):
                    break
        return patterns, failures

    return sweep


_sweep_jit = njit(_make_sweep(_syndrome_into_jit, _col_terms_jit, _cauchy_apply_jit,
                              njit(_next_combination, inline=True)))


def _sweep_np(mul, log, logz, expz, cauchy, k, m, data, code):
    params = CodeParams(k, m, data.shape[1])
    patterns = failures = 0
    for kept in combinations(range(k + m), k):
        idx = np.array(kept, dtype=np.int64)
        out, ok = _run_recover(_recover_np, params, idx, code, idx)
        patterns += 1
        failures += not (ok and np.array_equal(out, data))
    return patterns, failures


_sweep = pick(_sweep_jit, _sweep_np)


def exhaustive_erasure_check(params: CodeParams, rng: np.random.Generator) -> tuple[int, int]:
    """Decode every k-of-n subset of one random codeword; return (patterns, failures)."""
    data = rng.integers(0, 256, size=(params.k, params.symbol_len), dtype=np.uint8)
    code = encode_array(data, params)
    return _sweep(MUL_TABLE, LOG_TABLE, _LOGZ, _EXPZ, build_cauchy_matrix(params), params.k,
                  params.m, data, code)


def random_erasure_check(params: CodeParams, trials: int, rng: np.random.Generator) -> int:
    """Decode ``trials`` random patterns with exactly m erasures; return the failure count."""
    data = rng.integers(0, 256, size=(params.k, params.symbol_len), dtype=np.uint8)
    code = encode_array(data, params)
    failures = 0
    for _ in range(trials):
        kept = np.sort(rng.choice(params.n, size=params.k, replace=False))
        out = decode_array(kept, code[kept], params)
        failures += not np.array_equal(out, data)
    return failures
