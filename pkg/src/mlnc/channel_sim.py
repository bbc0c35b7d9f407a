"""Seeded simulation of last-mile links.

Two delay models are provided:

* ``GaussianDelay``: every packet gets an independent Gaussian delay.
* ``BufferedQueue``: a FIFO modem buffer drained at a piecewise-constant
  service rate (two-state Markov or a fixed schedule), followed by a
  propagation delay. Packets queue behind each other, so delays are strongly
  correlated in time.

``run_experiment`` pushes a constant-rate block stream, optionally FEC coded,
through the scheduler onto a set of links and returns a ``LatencyTrace``.
All timestamps are integer microseconds.
"""

from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence, Union

import numpy as np

from ._accel import njit, pick
from .rate_control import RateControlConfig, RateController
from .scheduler import Scheduler, tx_time_us
from .stats import LatencyTrace, block_latencies
from .transport import HEADER_LEN

LOST = -1


# -- models -------------------------------------------------------------------


@dataclass(frozen=True)
class GaussianDelay:
    mean_ms: float = 20.0
    std_ms: float = 5.0
    min_ms: float = 1.0
    loss_prob: float = 0.0

    def __post_init__(self):
        if self.std_ms < 0 or self.min_ms < 0:
            raise ValueError("std_ms and min_ms must be non-negative")
        if not 0 <= self.loss_prob <= 1:
            raise ValueError("loss_prob must be in [0, 1]")


@dataclass(frozen=True)
class ServiceRateProcess:
    """Two-state Markov-modulated service rate, re-drawn every ``step_ms``."""

    good_bps: float = 2e6
    bad_bps: float = 2e5
    p_good_to_bad: float = 0.002
    p_bad_to_good: float = 0.02
    step_ms: float = 10.0
    start_good: bool = True

    def __post_init__(self):
        if self.good_bps <= 0 or self.bad_bps <= 0:
            raise ValueError("service rates must be positive")
        for p in (self.p_good_to_bad, self.p_bad_to_good):
            if not 0 <= p <= 1:
                raise ValueError("transition probabilities must be in [0, 1]")
        if self.step_ms <= 0:
            raise ValueError("step_ms must be positive")

    @classmethod
    def from_sojourn(cls, good_bps=2e6, bad_bps=2e5, good_s=5.0, bad_s=0.5, step_ms=10.0):
        """Build from mean sojourn times instead of per-step probabilities."""
        steps = 1000.0 / step_ms
        return cls(good_bps, bad_bps, min(1.0, 1.0 / (good_s * steps)),
                   min(1.0, 1.0 / (bad_s * steps)), step_ms)

    def initial_state(self):
        return bool(self.start_good)

    def sample(self, n: int, state: bool, rng: np.random.Generator):
        """Rates for the next ``n`` steps and the state after them."""
        out = np.empty(n, dtype=np.float64)
        pos = 0
        while pos < n:
            rate = self.good_bps if state else self.bad_bps
            p = self.p_good_to_bad if state else self.p_bad_to_good
            if p == 0:
                out[pos:] = rate
                break
            # Geometric sojourns are memoryless, so a run cut at the chunk end
            # can simply be redrawn on the next call.
            run = int(rng.geometric(p))
            out[pos:pos + run] = rate
            if pos + run <= n:
                state = not state
            pos += run
        return out, state


@dataclass(frozen=True)
class PiecewiseRate:
    """Deterministic service-rate schedule: ``rates_bps[i]`` from ``starts_ms[i]`` on."""

    starts_ms: tuple
    rates_bps: tuple
    step_ms: float = 1.0

    def __post_init__(self):
        if len(self.starts_ms) != len(self.rates_bps) or not self.starts_ms:
            raise ValueError("starts_ms and rates_bps must be non-empty and equally long")
        if self.starts_ms[0] != 0 or list(self.starts_ms) != sorted(self.starts_ms):
            raise ValueError("starts_ms must begin at 0 and be sorted")
        if min(self.rates_bps) <= 0:
            raise ValueError("service rates must be positive")
        if self.step_ms <= 0:
            raise ValueError("step_ms must be positive")

    def initial_state(self):
        return 0

    def sample(self, n: int, state: int, rng=None):
        t = (state + np.arange(n)) * self.step_ms
        idx = np.searchsorted(np.asarray(self.starts_ms, dtype=np.float64), t, side="right") - 1
        return np.asarray(self.rates_bps, dtype=np.float64)[idx], state + n


@dataclass(frozen=True)
class BufferedQueue:
    service: Union[ServiceRateProcess, PiecewiseRate] = field(
        default_factory=ServiceRateProcess.from_sojourn)
    propagation_ms: float = 20.0
    queue_limit_bytes: float = 4_000_000
    loss_prob: float = 0.0
    # Extra per-packet delay, exponential with this mean (radio retransmissions).
    jitter_ms: float = 0.0

    def __post_init__(self):
        if self.propagation_ms < 0 or self.jitter_ms < 0:
            raise ValueError("propagation_ms and jitter_ms must be non-negative")
        if self.queue_limit_bytes <= 0:
            raise ValueError("queue_limit_bytes must be positive")
        if not 0 <= self.loss_prob <= 1:
            raise ValueError("loss_prob must be in [0, 1]")


DelayModel = Union[GaussianDelay, BufferedQueue]


class PacketEvent(NamedTuple):
    packet_id: int
    link_id: int
    send_us: int
    arrive_us: Optional[int]


def sample_delay(model: GaussianDelay, rng: np.random.Generator, size=None):
    """Gaussian delay in ms, clamped below at ``min_ms``."""
    d = rng.normal(model.mean_ms, model.std_ms, size)
    return np.maximum(d, model.min_ms)


# -- FIFO kernel ----------------------------------------------------------------


def _fifo_loop(send_us, bits, cum, rates, step_us, w_busy, limit_bits, finish_us):
    """Serve packets in order; cum[i] is the work (bits) served by i*step_us.

    Writes each finish time (or -1 for a queue-overflow drop) and returns the
    cumulative work at which the server next goes idle.
    """
    for p in range(send_us.shape[0]):
        t = send_us[p]
        i = int(t // step_us)
        w_arr = cum[i] + rates[i] * (t - i * step_us) * 1e-6
        start = w_busy if w_busy > w_arr else w_arr
        if start - w_arr + bits[p] > limit_bits:
            finish_us[p] = -1.0
            continue
        w_busy = start + bits[p]
        j = np.searchsorted(cum, w_busy, side="right") - 1
        finish_us[p] = j * step_us + (w_busy - cum[j]) / rates[j] * 1e6
    return w_busy


_fifo_jit = njit(_fifo_loop)


def _fifo_numpy(send_us, bits, cum, rates, step_us, w_busy, limit_bits, finish_us):
    # Unrolled recursion: w_end[i] = S[i] + max(w_busy, max_{j<=i}(W(send_j) - S[j-1])).
    grid = np.arange(cum.size, dtype=np.float64) * step_us
    w_arr = np.interp(send_us, grid, cum)
    s = np.cumsum(bits)
    prev = s - bits
    w_end = s + np.maximum(np.maximum.accumulate(w_arr - prev), w_busy)
    before = np.concatenate(([w_busy], w_end[:-1]))
    if np.any(np.maximum(before, w_arr) - w_arr + bits > limit_bits):
        return _fifo_loop(send_us, bits, cum, rates, step_us, w_busy, limit_bits, finish_us)
    finish_us[:] = np.interp(w_end, cum, grid)
    return float(w_end[-1]) if w_end.size else w_busy


_fifo = pick(_fifo_jit, _fifo_numpy)


# -- link runtimes ------------------------------------------------------------


class GaussianLink:
    def __init__(self, model: GaussianDelay, rng: np.random.Generator):
        self.model = model
        self.rng = rng

    def step(self, send_us, sizes) -> np.ndarray:
        send_us = np.asarray(send_us, dtype=np.int64)
        d = sample_delay(self.model, self.rng, send_us.size)
        lost = self.rng.random(send_us.size) < self.model.loss_prob
        arrive = send_us + np.round(d * 1000.0).astype(np.int64)
        return np.where(lost, LOST, arrive)


class BufferedLink:
    """Stateful FIFO link; ``step`` may be called repeatedly with later packets."""

    _CHUNK = 4096

    def __init__(self, model: BufferedQueue, rng: np.random.Generator):
        self.model = model
        self.rng = rng
        self.step_us = model.service.step_ms * 1000.0
        self._svc_state = model.service.initial_state()
        self.rates = np.empty(0)
        self.cum = np.zeros(1)
        self.w_busy = 0.0
        self.last_send_us = 0

    def _extend(self, t_us: float, work: float):
        need_t = int(t_us // self.step_us) + 2
        while self.rates.size < need_t or self.cum[-1] <= work:
            n = max(self._CHUNK, need_t - self.rates.size)
            r, self._svc_state = self.model.service.sample(n, self._svc_state, self.rng)
            self.rates = np.concatenate((self.rates, r))
            self.cum = np.concatenate((self.cum, self.cum[-1] + np.cumsum(r * self.step_us * 1e-6)))

    def service_rate_at(self, t_us: float) -> float:
        self._extend(t_us, 0.0)
        return float(self.rates[int(t_us // self.step_us)])

    def step(self, send_us, sizes) -> np.ndarray:
        """Enqueue packets (non-decreasing send times); returns arrival times, -1 if lost."""
        send_us = np.asarray(send_us, dtype=np.int64)
        n = send_us.size
        if n == 0:
            return np.empty(0, dtype=np.int64)
        if send_us[0] < self.last_send_us or np.any(np.diff(send_us) < 0):
            raise ValueError("send times must be non-decreasing")
        self.last_send_us = int(send_us[-1])
        bits = np.asarray(sizes, dtype=np.float64) * 8.0
        if bits.shape != send_us.shape:
            raise ValueError("sizes and send times must have the same shape")
        t = send_us.astype(np.float64)
        self._extend(t[-1], self._work_bound(t[-1]) + float(bits.sum()))
        finish = np.empty(n, dtype=np.float64)
        self.w_busy = float(_fifo(t, bits, self.cum, self.rates, self.step_us, self.w_busy,
                                  self.model.queue_limit_bytes * 8.0, finish))
        m = self.model
        extra = m.propagation_ms * 1000.0
        if m.jitter_ms > 0:
            extra = extra + self.rng.exponential(m.jitter_ms * 1000.0, n)
        lost = (finish < 0) | (self.rng.random(n) < m.loss_prob)
        arrive = np.round(finish + extra).astype(np.int64)
        return np.where(lost, LOST, arrive)

    def _work_bound(self, t_us: float) -> float:
        self._extend(t_us, 0.0)
        i = int(t_us // self.step_us)
        return max(self.w_busy, float(self.cum[i + 1]))


def make_link(model: DelayModel, rng: np.random.Generator):
    if isinstance(model, GaussianDelay):
        return GaussianLink(model, rng)
    if isinstance(model, BufferedQueue):
        return BufferedLink(model, rng)
    raise TypeError(f"unknown delay model {type(model).__name__}")


def step_buffered_link(link: BufferedLink, now_us: int, sizes: Sequence[int],
                       first_id: int = 0, link_id: int = 0) -> list[PacketEvent]:
    """Hand a burst of packets to a buffered link at ``now_us``."""
    arrive = link.step(np.full(len(sizes), now_us, dtype=np.int64), sizes)
    return [PacketEvent(first_id + i, link_id, now_us, None if a < 0 else int(a))
            for i, a in enumerate(arrive.tolist())]


# -- experiments ----------------------------------------------------------------


@dataclass(frozen=True)
class LinkConfig:
    model: DelayModel
    rate_bps: float = 1e6  # the scheduler's rate estimate for this link

    def __post_init__(self):
        if self.rate_bps <= 0:
            raise ValueError("link rate_bps must be positive")


@dataclass(frozen=True)
class TrafficConfig:
    """Constant-rate block stream: each block is k symbols of ``symbol_len`` bytes."""

    data_rate_bps: float = 1e6
    k: int = 1
    m: int = 0
    symbol_len: int = 1296
    duration_s: float = 10.0

    def __post_init__(self):
        if self.data_rate_bps <= 0 or self.duration_s <= 0:
            raise ValueError("data_rate_bps and duration_s must be positive")
        if self.k < 1 or self.m < 0 or self.symbol_len < 1:
            raise ValueError("need k >= 1, m >= 0, symbol_len >= 1")

    @property
    def n(self) -> int:
        return self.k + self.m

    @property
    def block_interval_us(self) -> float:
        return self.k * self.symbol_len * 8.0 * 1e6 / self.data_rate_bps

    @property
    def packet_bytes(self) -> int:
        return self.symbol_len + HEADER_LEN


@dataclass(frozen=True)
class SimConfig:
    """Links, traffic and seed; ``rate_control`` switches on the feedback loop."""

    links: tuple
    traffic: TrafficConfig = field(default_factory=TrafficConfig)
    seed: int = 0
    rate_control: Optional[RateControlConfig] = None
    # Closed loop only: top each link up to its target with padding packets so
    # the receiver measures what the link can carry, not what the source offers.
    padding: bool = True

    def __post_init__(self):
        if not self.links:
            raise ValueError("at least one link is required")


def _blocks(tr: TrafficConfig) -> np.ndarray:
    nblocks = int(tr.duration_s * 1e6 // tr.block_interval_us)
    return np.round(np.arange(nblocks) * tr.block_interval_us).astype(np.int64)


def _trace(tr: TrafficConfig, block_send, link_of, arrive) -> LatencyTrace:
    nblocks = block_send.size
    send = np.repeat(block_send, tr.n)
    grid = np.where(arrive < 0, np.nan, arrive.astype(np.float64)).reshape(nblocks, tr.n)
    ready = block_latencies(grid, tr.k, 0.0)
    ready = np.where(np.isnan(ready), LOST, np.round(ready)).astype(np.int64)
    return LatencyTrace(
        packet_id=np.arange(send.size, dtype=np.int64), link_id=np.asarray(link_of, dtype=np.int64),
        send_us=send, arrive_us=arrive, block_id=np.arange(nblocks, dtype=np.int64),
        block_send_us=block_send, block_ready_us=ready)


def run_experiment(cfg: SimConfig) -> LatencyTrace:
    """Simulate the block stream over the configured links; deterministic per seed.

    Packets are handed to their link's modem buffer the moment the block is
    produced. With ``cfg.rate_control`` set, see ``run_closed_loop``.
    """
    if cfg.rate_control is not None:
        return run_closed_loop(cfg)[0]
    rng = np.random.default_rng(cfg.seed)
    links = [make_link(lc.model, child) for lc, child in zip(cfg.links, rng.spawn(len(cfg.links)))]
    tr = cfg.traffic
    block_send = _blocks(tr)
    send = np.repeat(block_send, tr.n)

    sched = Scheduler([lc.rate_bps for lc in cfg.links])
    link_of = sched.assign_many(np.full(send.size, tr.packet_bytes), send)

    arrive = np.empty(send.size, dtype=np.int64)
    for lid, link in enumerate(links):
        sel = np.flatnonzero(link_of == lid)
        arrive[sel] = link.step(send[sel], np.full(sel.size, tr.packet_bytes))
    return _trace(tr, block_send, link_of, arrive)


@dataclass
class RateLog:
    """Per-window controller history, one column per link."""

    window_end_us: np.ndarray
    measured_bps: np.ndarray
    target_bps: np.ndarray
    capacity_bps: np.ndarray
    commands: list
    padding_packets: int = 0


def _pad(sched: Scheduler, floor_us: float, until_us: float, pkt: int, sends):
    """Fill every link that would go idle before ``until_us`` with padding.

    A padding packet may straddle ``until_us``; the next data packet then queues
    behind it, as it would in a real modem.
    """
    for ln in sched.links:
        tx = tx_time_us(pkt, ln.rate_bps)
        e = max(ln.anticipated_end_us, floor_us)
        while e < until_us:
            sends[ln.link_id].append((e, -1))
            e += tx
        ln.anticipated_end_us = max(ln.anticipated_end_us, e)


def run_closed_loop(cfg: SimConfig) -> tuple[LatencyTrace, RateLog]:
    """Block stream with one receiver-side rate controller per link.

    Every window each controller sees the bytes its link delivered, and the
    resulting send rates feed the scheduler from the next window on.
    """
    rc = cfg.rate_control or RateControlConfig()
    rng = np.random.default_rng(cfg.seed)
    links = [make_link(lc.model, child) for lc, child in zip(cfg.links, rng.spawn(len(cfg.links)))]
    nl = len(links)
    tr = cfg.traffic
    pkt = tr.packet_bytes
    win_us = rc.window_ms * 1000.0
    nwin = int(np.ceil(tr.duration_s * 1e6 / win_us))
    block_send = _blocks(tr)
    nblocks = block_send.size

    ctrls = [RateController(lc.rate_bps, rc) for lc in cfg.links]
    sched = Scheduler([c.send_rate_bps for c in ctrls])
    link_of = np.empty(nblocks * tr.n, dtype=np.int64)
    arrive = np.empty(nblocks * tr.n, dtype=np.int64)
    delivered = np.zeros((nl, nwin + 1))
    log = RateLog(np.arange(1, nwin + 1) * win_us, np.zeros((nwin, nl)), np.zeros((nwin, nl)),
                  np.full((nwin, nl), np.nan), [])

    bi = 0
    for w in range(nwin):
        t0, t1 = w * win_us, (w + 1) * win_us
        for lid, c in enumerate(ctrls):
            sched.update_rate(lid, c.send_rate_bps)
            if isinstance(links[lid], BufferedLink):
                log.capacity_bps[w, lid] = links[lid].service_rate_at(t0)
        sends = [[] for _ in range(nl)]
        while bi < nblocks and block_send[bi] < t1:
            tb = int(block_send[bi])
            if cfg.padding:
                _pad(sched, t0, tb, pkt, sends)
            for s in range(tr.n):
                pid = bi * tr.n + s
                lid = sched.assign(pkt, tb)
                link_of[pid] = lid
                sends[lid].append((tb, pid))
            bi += 1
        if cfg.padding:
            _pad(sched, t0, t1, pkt, sends)

        for lid, link in enumerate(links):
            if not sends[lid]:
                continue
            t, pid = np.array(sends[lid]).T
            arr = link.step(np.round(t).astype(np.int64), np.full(t.size, pkt))
            data = pid >= 0
            arrive[pid[data].astype(np.int64)] = arr[data]
            log.padding_packets += int((~data).sum())
            ok = arr >= 0
            np.add.at(delivered[lid], np.minimum(arr[ok] // int(win_us), nwin), pkt)

        cmds = []
        for lid, c in enumerate(ctrls):
            measured = delivered[lid, w] * 8.0 * 1e6 / win_us
            cmds.append(c.update(measured, int(t1)).command)
            log.measured_bps[w, lid] = measured
            log.target_bps[w, lid] = c.target_bps
        log.commands.append(cmds)

    return _trace(tr, block_send[:bi], link_of[:bi * tr.n], arrive[:bi * tr.n]), log
