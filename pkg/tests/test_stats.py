import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mlnc.stats import (EmpiricalCdf, GaussianCdf, LatencyTrace, OrderStatisticCdf,
                        ZeroVarianceError, acf, best_subset, block_latencies, block_latency,
                        gain_at, histogram, order_statistic_prob, quantile, sup_distance,
                        write_acf_csv, write_cdf_csv, write_histogram_csv)


def binomial_tail(f, k, n):
    return sum(math.comb(n, j) * f**j * (1 - f) ** (n - j) for j in range(k, n + 1))


def test_order_statistic_frozen_value():
    assert order_statistic_prob(0.9, 6, 8) == pytest.approx(0.96190821, abs=1e-8)


@given(st.floats(0, 1), st.integers(1, 40), st.data())
def test_order_statistic_matches_binomial_tail(f, n, data):
    k = data.draw(st.integers(1, n))
    assert order_statistic_prob(f, k, n) == pytest.approx(binomial_tail(f, k, n), abs=1e-9)


@given(st.floats(0, 1), st.integers(1, 12))
def test_order_statistic_edge_orders(f, n):
    assert order_statistic_prob(f, n, n) == pytest.approx(f**n, abs=1e-12)
    assert order_statistic_prob(f, 1, 1) == pytest.approx(f, abs=1e-12)
    with pytest.raises(ValueError):
        order_statistic_prob(f, n + 1, n)


@given(st.integers(1, 8), st.data(), st.integers(0, 2**31))
@settings(max_examples=15)
def test_order_statistic_cdf_matches_monte_carlo(n, data, seed):
    k = data.draw(st.integers(1, n))
    rng = np.random.default_rng(seed)
    draws = np.sort(rng.normal(20, 5, (100_000, n)), axis=1)[:, k - 1]
    assert sup_distance(OrderStatisticCdf(GaussianCdf(20, 5), k, n), draws) < 0.01


def test_gaussian_gain_example():
    g = GaussianCdf(20, 5)
    gain = gain_at(0.95, OrderStatisticCdf(g, 6, 6), OrderStatisticCdf(g, 6, 8))
    assert abs(gain - 6.0) <= 0.5
    assert gain_at(0.95, g, g) == 0.0


@given(st.floats(0.01, 0.99))
def test_gain_is_antisymmetric(p):
    a, b = GaussianCdf(10, 2), GaussianCdf(12, 3)
    assert gain_at(p, a, b) == pytest.approx(-gain_at(p, b, a))


def test_quantiles_invert_cdfs():
    d = OrderStatisticCdf(GaussianCdf(20, 5), 6, 8)
    x = quantile(d, 0.95)
    assert float(d.cdf(x)) == pytest.approx(0.95, abs=1e-7)
    emp = EmpiricalCdf([3, 1, 2, np.nan])
    assert len(emp) == 3 and emp.cdf(2) == pytest.approx(2 / 3) and quantile(emp, 0.5) == 2
    with pytest.raises(ValueError):
        EmpiricalCdf([np.nan])


def test_acf_examples():
    assert acf([1, 2, 3, 4], 1)[1] == pytest.approx(0.25)
    assert acf([1, -1, 1, -1], 1)[1] == pytest.approx(-0.75)
    with pytest.raises(ZeroVarianceError):
        acf([5.0] * 10, 2)
    with pytest.raises(ValueError):
        acf([1, 2], 3)


def test_acf_white_noise_and_ar1():
    rng = np.random.default_rng(0)
    white = acf(rng.normal(size=10_000), 10)
    assert white[0] == 1.0 and np.all(np.abs(white[1:]) < 0.05)
    x = np.empty(10_000)
    x[0] = 0
    e = rng.normal(size=10_000)
    for i in range(1, x.size):
        x[i] = 0.9 * x[i - 1] + e[i]
    assert abs(acf(x, 1)[1] - 0.9) <= 0.05


def test_block_latency_examples():
    assert block_latency(range(1, 9), 1, 0) == 1
    assert block_latency(range(1, 9), 8, 0) == 8
    assert block_latency([8, 3, 5, 1, 7, 2, 6, 4], 6, 0) == 6
    assert block_latency([1, None, 3, float("nan")], 3, 0) is None
    assert block_latency([10, 20, 30], 2, 5) == 15
    grid = np.array([[8, 3, 5, 1, 7, 2, 6, 4], [1, np.nan, np.nan, np.nan, 5, 6, 7, 8]], float)
    assert block_latencies(grid, 6, 0).tolist()[0] == 6
    assert np.isnan(block_latencies(grid, 6, 0)[1])


def test_best_subset_keeps_order():
    assert best_subset([5, 1, 4, 2, 3], 3).tolist() == [1, 2, 3]
    assert best_subset([3, 1], 5).tolist() == [3, 1]


def test_csv_writers(tmp_path):
    write_cdf_csv(tmp_path / "c.csv", EmpiricalCdf(np.arange(5000)), max_points=100)
    lines = (tmp_path / "c.csv").read_text().splitlines()
    assert lines[0] == "value,probability" and len(lines) == 101
    write_acf_csv(tmp_path / "a.csv", [1.0, 0.5])
    assert (tmp_path / "a.csv").read_text() == "lag,corr\n0,1.000000\n1,0.500000\n"
    write_histogram_csv(tmp_path / "h.csv", *histogram([0, 1, 1, 2], bins=2))
    assert (tmp_path / "h.csv").read_text().splitlines()[1:] == ["0.000000,1.000000,1",
                                                                "1.000000,2.000000,3"]


def test_trace_latency_views(tmp_path):
    t = LatencyTrace(np.arange(3), np.array([0, 1, 0]), np.array([0, 0, 1000]),
                     np.array([5000, -1, 9000]), np.array([0]), np.array([0]), np.array([-1]))
    assert t.lost.tolist() == [False, True, False]
    assert t.link_latency_ms(0).tolist() == [5.0, 8.0]
    assert np.isnan(t.block_latency_ms[0])
    t.write_packets_csv(tmp_path / "p.csv")
    assert (tmp_path / "p.csv").read_text().splitlines()[2] == "1,1,0,,1"
