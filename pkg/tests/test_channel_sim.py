import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats as sps

from mlnc import channel_sim as cs
from mlnc.channel_sim import (LOST, BufferedLink, BufferedQueue, GaussianDelay, LinkConfig,
                              PiecewiseRate, ServiceRateProcess, SimConfig, TrafficConfig,
                              run_closed_loop, run_experiment, sample_delay, step_buffered_link)
from mlnc.stats import GaussianCdf, OrderStatisticCdf, acf, sup_distance


def fifo_oracle(send_us, nbytes, rates, step_us):
    """Walk the service schedule one step at a time for each packet in turn."""
    out, free = [], 0.0
    for t, b in zip(send_us, nbytes):
        tau, bits = max(float(t), free), b * 8.0
        while True:
            i = int(tau // step_us)
            room = rates[i] * ((i + 1) * step_us - tau) * 1e-6
            if bits <= room:
                tau += bits / rates[i] * 1e6
                break
            bits -= room
            tau = (i + 1) * step_us
        out.append(tau)
        free = tau
    return np.array(out)


def bare_queue(service, limit=1e12):
    return BufferedQueue(service, propagation_ms=0.0, queue_limit_bytes=limit, jitter_ms=0.0)


@given(st.integers(0, 2**31), st.integers(1, 300))
@settings(max_examples=30)
def test_fifo_matches_step_walk(seed, count):
    rng = np.random.default_rng(seed)
    svc = ServiceRateProcess(2e6, 2e5, 0.05, 0.2, 10.0)
    link = BufferedLink(bare_queue(svc), rng)
    send = np.sort(rng.integers(0, 2_000_000, count))
    sizes = rng.integers(40, 1500, count)
    got = np.concatenate([link.step(send[:count // 2], sizes[:count // 2]),
                          link.step(send[count // 2:], sizes[count // 2:])])
    want = fifo_oracle(send, sizes, link.rates, link.step_us)
    assert np.all(np.abs(got - want) <= 1.0)


@given(st.integers(0, 2**31))
@settings(max_examples=20)
def test_numpy_and_loop_kernels_agree(seed):
    rng = np.random.default_rng(seed)
    rates = rng.choice([2e5, 1e6, 2e6], 4000)
    step = 1000.0
    cum = np.concatenate(([0.0], np.cumsum(rates * step * 1e-6)))
    send = np.sort(rng.uniform(0, 2e6, 500))
    bits = rng.integers(320, 12000, 500).astype(np.float64)
    a, b = np.empty(500), np.empty(500)
    wa = cs._fifo_loop(send, bits, cum, rates, step, 0.0, 1e12, a)
    wb = cs._fifo_numpy(send, bits, cum, rates, step, 0.0, 1e12, b)
    assert wa == pytest.approx(wb) and np.allclose(a, b, atol=1e-3)


def test_queue_limit_drops_excess():
    link = BufferedLink(bare_queue(PiecewiseRate((0.0,), (1e6,)), limit=10_000),
                        np.random.default_rng(0))
    arr = link.step(np.zeros(20, dtype=np.int64), np.full(20, 1000))
    assert np.all(arr[:10] >= 0) and np.all(arr[10:] == LOST)
    assert arr[9] == 80_000  # ten packets of 8000 bits at 1 Mbit/s
    events = step_buffered_link(link, 1_000_000, [1000])
    assert events[0].arrive_us == 1_008_000


def test_send_order_is_enforced():
    link = BufferedLink(BufferedQueue(), np.random.default_rng(0))
    link.step([100], [10])
    with pytest.raises(ValueError):
        link.step([50], [10])


def test_gaussian_moments_and_clamp():
    d = sample_delay(GaussianDelay(20.0, 5.0, 0.0), np.random.default_rng(3), 100_000)
    assert abs(d.mean() - 20.0) < 0.1 and abs(d.std() - 5.0) < 0.1
    assert np.all(sample_delay(GaussianDelay(20.0, 0.0), np.random.default_rng(0), 50) == 20.0)
    low = sample_delay(GaussianDelay(1.0, 10.0, 0.0), np.random.default_rng(0), 10_000)
    assert low.min() >= 0.0
    with pytest.raises(ValueError):
        GaussianDelay(std_ms=-1)


def test_loss_rate_is_binomial():
    link = cs.GaussianLink(GaussianDelay(loss_prob=0.1), np.random.default_rng(5))
    lost = int((link.step(np.arange(20_000), np.ones(20_000)) == LOST).sum())
    assert sps.binomtest(lost, 20_000, 0.1).pvalue > 0.001


def constant_link(rate, limit=4e6):
    return BufferedQueue(PiecewiseRate((0.0,), (rate,)), 20.0, limit, 0.0, 0.0)


def test_no_queueing_below_capacity():
    tr = TrafficConfig(0.5e6 * 1296 / 1320, 1, 0, 1296, 5.0)
    lat = run_experiment(SimConfig((LinkConfig(constant_link(1e6)),), tr)).latency_ms
    tx = 1320 * 8 / 1e6 * 1000
    assert np.allclose(lat, 20.0 + tx, atol=0.002)


def test_capacity_dip_builds_and_drains_queue():
    svc = PiecewiseRate((0.0, 3000.0, 5000.0), (2e6, 2e5, 2e6))
    q = BufferedQueue(svc, 20.0, 1e9, 0.0, 0.0)
    tr = TrafficConfig(1e6, 1, 0, 1296, 12.0)
    trace = run_experiment(SimConfig((LinkConfig(q),), tr))
    lat, t = trace.latency_ms, trace.send_us / 1e6
    assert lat[t < 2.9].max() < 30
    assert 200 < lat[(t > 4) & (t < 5.5)].max() < 5000
    assert lat[t > 11].max() < 30


def test_same_seed_is_bit_identical():
    cfg = SimConfig((LinkConfig(BufferedQueue(jitter_ms=10.0)),) * 3,
                    TrafficConfig(1.5e6, 4, 2, 1296, 5.0), seed=11)
    a, b = run_experiment(cfg), run_experiment(cfg)
    for f in ("link_id", "arrive_us", "block_ready_us"):
        assert np.array_equal(getattr(a, f), getattr(b, f))
    c = run_experiment(SimConfig(cfg.links, cfg.traffic, seed=12))
    assert not np.array_equal(a.arrive_us, c.arrive_us)


def test_iid_links_give_order_statistic_block_latency():
    links = (LinkConfig(GaussianDelay(20.0, 5.0, 0.0)),)
    tr = TrafficConfig(1e7, 6, 2, 1296, 200.0)
    trace = run_experiment(SimConfig(links, tr, seed=2))
    blocks = trace.block_latency_ms
    assert blocks.size > 30_000
    assert sup_distance(OrderStatisticCdf(GaussianCdf(20.0, 5.0), 6, 8), blocks) < 0.01


def test_buffered_single_link_is_correlated_and_iid_is_not():
    tr = TrafficConfig(1.2e6, 1, 0, 1296, 30.0)  # above the bad-state capacity
    buf = run_experiment(SimConfig((LinkConfig(BufferedQueue(ServiceRateProcess.from_sojourn(
        2e6, 1e6, 5.0, 0.5), jitter_ms=10.0)),), tr, seed=1)).latency_ms
    iid = run_experiment(SimConfig((LinkConfig(GaussianDelay()),), tr, seed=1)).latency_ms
    assert acf(buf, 1)[1] > 0.5
    assert abs(acf(iid, 1)[1]) < 0.05


def test_closed_loop_tracks_capacity():
    svc = PiecewiseRate((0.0,), (1.5e6,))
    link = LinkConfig(BufferedQueue(svc, 20.0, 4e6, 0.0, 0.0), 1e6)
    from mlnc.rate_control import RateControlConfig
    _, log = run_closed_loop(SimConfig((link,), TrafficConfig(1e5, 1, 0, 1296, 40.0),
                                      rate_control=RateControlConfig()))
    assert log.target_bps[-50:, 0].max() > 0.9 * 1.5e6
    assert np.all(log.target_bps[:, 0] < 1.5e6 * 1.1 * 1.1)
    assert np.all(log.capacity_bps == 1.5e6)


def test_config_validation():
    with pytest.raises(ValueError):
        PiecewiseRate((1.0,), (1e6,))
    with pytest.raises(ValueError):
        ServiceRateProcess(p_good_to_bad=2.0)
    with pytest.raises(ValueError):
        SimConfig(())
    with pytest.raises(TypeError):
        cs.make_link(object(), np.random.default_rng(0))
