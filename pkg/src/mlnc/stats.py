"""Latency statistics: CDFs, k-of-n order statistics, gains, ACF, histograms."""

import csv
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.special import gammaln, ndtr, ndtri


class ZeroVarianceError(ValueError):
    pass


# -- CDFs -------------------------------------------------------------------


class EmpiricalCdf:
    """Step CDF of a sample; quantiles interpolate linearly between order statistics."""

    def __init__(self, values):
        v = np.asarray(values, dtype=np.float64).ravel()
        v = v[np.isfinite(v)]
        if v.size == 0:
            raise ValueError("empirical CDF needs at least one finite value")
        self.values = np.sort(v)

    def __len__(self):
        return self.values.size

    def cdf(self, x):
        return np.searchsorted(self.values, x, side="right") / self.values.size

    def quantile(self, p):
        return np.quantile(self.values, p)

    def points(self) -> tuple[np.ndarray, np.ndarray]:
        n = self.values.size
        return self.values, np.arange(1, n + 1) / n


@dataclass(frozen=True)
class GaussianCdf:
    mean: float
    std: float

    def __post_init__(self):
        if self.std <= 0:
            raise ValueError("std must be positive")

    def cdf(self, x):
        return ndtr((np.asarray(x, dtype=np.float64) - self.mean) / self.std)

    def quantile(self, p):
        return self.mean + self.std * ndtri(p)


def _log_binom(n: int, j):
    return gammaln(n + 1) - gammaln(j + 1) - gammaln(n - j + 1)


def order_statistic_prob(f, k: int, n: int):
    """P(k-th smallest of n i.i.d. draws <= x) given F(x) = ``f``."""
    if not 1 <= k <= n:
        raise ValueError(f"need 1 <= k <= n, got k={k}, n={n}")
    f = np.clip(np.asarray(f, dtype=np.float64), 0.0, 1.0)
    j = np.arange(k, n + 1, dtype=np.float64)
    fj = f[..., None]
    with np.errstate(divide="ignore", invalid="ignore"):
        logt = _log_binom(n, j) + j * np.log(fj) + (n - j) * np.log1p(-fj)
    terms = np.exp(logt)
    # 0 * log(0) terms produce nan; the matching probabilities are exact 0 or 1.
    terms = np.where(np.isnan(terms), 0.0, terms)
    out = terms.sum(axis=-1)
    out = np.where(f >= 1.0, 1.0, out)
    return np.clip(out, 0.0, 1.0)


def order_statistic_cdf(base, k: int, n: int, x):
    """CDF at ``x`` of the k-th order statistic of n draws from ``base``."""
    return order_statistic_prob(base.cdf(x), k, n)


def quantile_bisect(cdf, p: float, lo: float, hi: float, tol: float = 1e-9) -> float:
    """Smallest x with cdf(x) >= p inside [lo, hi], found by bisection."""
    if not 0 < p < 1:
        raise ValueError("p must be in (0, 1)")
    while cdf(lo) > p:
        lo -= max(1.0, hi - lo)
    while cdf(hi) < p:
        hi += max(1.0, hi - lo)
    while hi - lo > tol * max(1.0, abs(hi)):
        mid = 0.5 * (lo + hi)
        if cdf(mid) < p:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


@dataclass(frozen=True)
class OrderStatisticCdf:
    base: object
    k: int
    n: int

    def __post_init__(self):
        if not 1 <= self.k <= self.n:
            raise ValueError(f"need 1 <= k <= n, got k={self.k}, n={self.n}")

    def cdf(self, x):
        return order_statistic_cdf(self.base, self.k, self.n, x)

    def quantile(self, p):
        lo = float(self.base.quantile(1e-6))
        hi = float(self.base.quantile(1 - 1e-6))
        return quantile_bisect(lambda x: float(self.cdf(x)), p, lo, hi)


def quantile(dist, p: float) -> float:
    return float(dist.quantile(p))


def gain_at(p: float, cdf_uncoded, cdf_coded) -> float:
    """Latency saved at probability ``p``: uncoded quantile minus coded quantile."""
    if not 0 < p < 1:
        raise ValueError("p must be in (0, 1)")
    return quantile(cdf_uncoded, p) - quantile(cdf_coded, p)


def sup_distance(analytic, samples) -> float:
    """Kolmogorov distance between an analytic CDF and a sample."""
    emp = EmpiricalCdf(samples)
    x, hi = emp.points()
    lo = hi - 1.0 / x.size
    f = analytic.cdf(x)
    return float(max(np.max(np.abs(f - hi)), np.max(np.abs(f - lo))))


# -- autocorrelation ----------------------------------------------------------


def acf(series, max_lag: int) -> np.ndarray:
    """Sample autocorrelation for lags 0..max_lag (biased estimator, acf[0] = 1)."""
    x = np.asarray(series, dtype=np.float64).ravel()
    if max_lag < 0 or x.size <= max_lag:
        raise ValueError(f"series of length {x.size} too short for lag {max_lag}")
    d = x - x.mean()
    denom = float(d @ d)
    if denom == 0.0 or not np.isfinite(denom):
        raise ZeroVarianceError("autocorrelation of a constant series is undefined")
    return np.array([float(d[:x.size - lag] @ d[lag:]) / denom for lag in range(max_lag + 1)])


def best_subset(series, count: int = 500) -> np.ndarray:
    """The ``count`` smallest values of a series, kept in their original order."""
    x = np.asarray(series, dtype=np.float64).ravel()
    x = x[np.isfinite(x)]
    if count >= x.size:
        return x
    keep = np.sort(np.argsort(x, kind="stable")[:count])
    return x[keep]


# -- block reconstruction -----------------------------------------------------


def block_latency(arrivals: Sequence[Optional[float]], k: int, block_send: float) -> Optional[float]:
    """k-th earliest arrival minus the block send time; ``None`` when undecodable.

    Lost symbols are given as ``None`` or NaN.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    got = sorted(a for a in arrivals if a is not None and not math.isnan(a))
    if len(got) < k:
        return None
    return got[k - 1] - block_send


def block_latencies(arrivals, k: int, block_send) -> np.ndarray:
    """Vectorised ``block_latency`` over a (blocks, n) matrix; NaN marks loss/undecodable."""
    a = np.asarray(arrivals, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError("arrivals must be a (blocks, n) matrix")
    if not 1 <= k <= a.shape[1]:
        raise ValueError(f"need 1 <= k <= n={a.shape[1]}, got {k}")
    kth = np.sort(a, axis=1)[:, k - 1]  # NaN sorts last
    return kth - np.asarray(block_send, dtype=np.float64)


# -- histograms and CSV -------------------------------------------------------


def histogram(values, bins=50, range=None):
    v = np.asarray(values, dtype=np.float64)
    v = v[np.isfinite(v)]
    counts, edges = np.histogram(v, bins=bins, range=range)
    return edges[:-1], edges[1:], counts


def _write_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def write_cdf_csv(path, cdf: EmpiricalCdf, max_points: int = 2000):
    x, p = cdf.points()
    if x.size > max_points:
        sel = np.unique(np.linspace(0, x.size - 1, max_points).astype(np.int64))
        x, p = x[sel], p[sel]
    _write_rows(path, ["value", "probability"], ((f"{a:.6f}", f"{b:.6f}") for a, b in zip(x, p)))


def write_acf_csv(path, corr):
    _write_rows(path, ["lag", "corr"], ((i, f"{c:.6f}") for i, c in enumerate(corr)))


def write_histogram_csv(path, low, high, counts):
    _write_rows(path, ["bin_low", "bin_high", "count"],
                ((f"{a:.6f}", f"{b:.6f}", int(c)) for a, b, c in zip(low, high, counts)))


# -- traces -------------------------------------------------------------------


def _i64(a=()):
    return np.asarray(a, dtype=np.int64)


@dataclass
class LatencyTrace:
    """Per-packet events plus optional per-block reconstruction times (integer us).

    ``arrive_us`` and ``block_ready_us`` hold -1 for lost packets and
    undecodable blocks.
    """

    packet_id: np.ndarray = field(default_factory=_i64)
    link_id: np.ndarray = field(default_factory=_i64)
    send_us: np.ndarray = field(default_factory=_i64)
    arrive_us: np.ndarray = field(default_factory=_i64)
    block_id: np.ndarray = field(default_factory=_i64)
    block_send_us: np.ndarray = field(default_factory=_i64)
    block_ready_us: np.ndarray = field(default_factory=_i64)

    @property
    def lost(self) -> np.ndarray:
        return self.arrive_us < 0

    @property
    def latency_ms(self) -> np.ndarray:
        """Packet latencies in send order; NaN for lost packets."""
        lat = (self.arrive_us - self.send_us) / 1000.0
        return np.where(self.lost, np.nan, lat)

    @property
    def block_latency_ms(self) -> np.ndarray:
        lat = (self.block_ready_us - self.block_send_us) / 1000.0
        return np.where(self.block_ready_us < 0, np.nan, lat)

    def link_latency_ms(self, link: int) -> np.ndarray:
        return self.latency_ms[self.link_id == link]

    def write_packets_csv(self, path):
        rows = ((p, l, s, a if a >= 0 else "", int(a < 0))
                for p, l, s, a in zip(self.packet_id.tolist(), self.link_id.tolist(),
                                      self.send_us.tolist(), self.arrive_us.tolist()))
        _write_rows(path, ["packet_id", "link_id", "send_us", "arrive_us", "lost"], rows)

    def write_blocks_csv(self, path):
        lat = self.block_latency_ms
        rows = ((b, s, r if r >= 0 else "", f"{x:.3f}" if np.isfinite(x) else "")
                for b, s, r, x in zip(self.block_id.tolist(), self.block_send_us.tolist(),
                                      self.block_ready_us.tolist(), lat))
        _write_rows(path, ["block_id", "send_us", "ready_us", "latency_ms"], rows)
