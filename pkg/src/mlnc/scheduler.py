"""Earliest-anticipated-end-time packet scheduler over several links.

Each link keeps the time at which it is expected to have flushed everything
handed to it so far. A packet goes to the link that frees up first, and that
link's end time moves forward by the packet's serialisation time at the
link's current rate.
"""

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ._accel import njit, pick


class NoLinksError(ValueError):
    pass


class UnknownLinkError(KeyError):
    pass


@dataclass
class LinkState:
    link_id: int
    rate_bps: float
    anticipated_end_us: float = 0.0

    def __post_init__(self):
        if self.rate_bps <= 0:
            raise ValueError(f"link {self.link_id}: rate must be positive")


def tx_time_us(packet_bytes: float, rate_bps: float) -> float:
    return packet_bytes * 8.0 * 1e6 / rate_bps


def assign(links: Sequence[LinkState], packet_bytes: int, now_us: float) -> int:
    """Pick the link with the smallest anticipated end time (ties -> lowest id)."""
    if not links:
        raise NoLinksError("no links to schedule on")
    if packet_bytes <= 0:
        raise ValueError("packet_bytes must be positive")
    best = min(links, key=lambda ln: (max(ln.anticipated_end_us, now_us), ln.link_id))
    best.anticipated_end_us = (max(now_us, best.anticipated_end_us)
                               + tx_time_us(packet_bytes, best.rate_bps))
    return best.link_id


def update_rate(links: Sequence[LinkState], link_id: int, new_rate_bps: float) -> LinkState:
    if new_rate_bps <= 0:
        raise ValueError("new_rate_bps must be positive")
    for ln in links:
        if ln.link_id == link_id:
            ln.rate_bps = float(new_rate_bps)
            return ln
    raise UnknownLinkError(link_id)


def _assign_batch_loop(ends, rates, ids, sizes, times):
    out = np.empty(sizes.shape[0], dtype=np.int64)
    nl = ends.shape[0]
    for p in range(sizes.shape[0]):
        now = times[p]
        best = 0
        best_end = max(ends[0], now)
        for l in range(1, nl):
            e = max(ends[l], now)
            if e < best_end or (e == best_end and ids[l] < ids[best]):
                best = l
                best_end = e
        ends[best] = best_end + sizes[p] * 8.0 * 1e6 / rates[best]
        out[p] = best
    return out


_assign_batch_jit = njit(_assign_batch_loop)
# Sequential by nature; the numpy path is the same recursion in Python.
_assign_batch = pick(_assign_batch_jit, _assign_batch_loop)


class Scheduler:
    """Owns the link states of one sending loop."""

    def __init__(self, rates_bps: Sequence[float], now_us: float = 0.0):
        if not len(rates_bps):
            raise NoLinksError("no links to schedule on")
        self.links = [LinkState(i, float(r), float(now_us)) for i, r in enumerate(rates_bps)]

    def assign(self, packet_bytes: int, now_us: float) -> int:
        return assign(self.links, packet_bytes, now_us)

    def update_rate(self, link_id: int, new_rate_bps: float) -> LinkState:
        return update_rate(self.links, link_id, new_rate_bps)

    def assign_many(self, sizes, times) -> np.ndarray:
        """Assign a batch of packets (sizes in bytes, ready times in us) in order."""
        sizes = np.ascontiguousarray(sizes, dtype=np.float64)
        times = np.ascontiguousarray(times, dtype=np.float64)
        if sizes.shape != times.shape:
            raise ValueError("sizes and times must have the same shape")
        if sizes.size and sizes.min() <= 0:
            raise ValueError("packet sizes must be positive")
        ends = np.array([ln.anticipated_end_us for ln in self.links])
        rates = np.array([ln.rate_bps for ln in self.links])
        ids = np.array([ln.link_id for ln in self.links], dtype=np.int64)
        pos = _assign_batch(ends, rates, ids, sizes, times)
        for ln, e in zip(self.links, ends):
            ln.anticipated_end_us = float(e)
        return ids[pos]

    @property
    def rates(self) -> list[float]:
        return [ln.rate_bps for ln in self.links]
