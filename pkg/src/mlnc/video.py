"""Slice-level model of a low-latency video pipeline.

Covers the intra-refresh column sweep, the quantizer lookup table, the timing
of one or two slice encoders fed from a sensor, and slice-loss concealment
scored by PSNR. No bitstream is produced; compressed sizes come from QP
statistics.
"""

import csv
import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

MB = 16  # pixels per macroblock edge


class DimensionMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class SliceGeometry:
    frame_width_mb: int = 80
    frame_height_mb: int = 48
    slices_per_frame: int = 6
    fps: float = 60.0
    refresh_period_mb: int = 16

    def __post_init__(self):
        if self.frame_width_mb < 1 or self.frame_height_mb < 1:
            raise ValueError("frame dimensions must be >= 1 macroblock")
        if self.slices_per_frame < 1 or self.frame_height_mb % self.slices_per_frame:
            raise ValueError(f"{self.slices_per_frame} slices do not divide "
                             f"{self.frame_height_mb} macroblock rows")
        if self.fps <= 0:
            raise ValueError("fps must be positive")
        if self.refresh_period_mb < 1:
            raise ValueError("refresh_period_mb must be >= 1")

    @property
    def t_slice(self) -> float:
        """Seconds to read one slice from the sensor."""
        return 1.0 / (self.fps * self.slices_per_frame)

    @property
    def slice_height_mb(self) -> int:
        return self.frame_height_mb // self.slices_per_frame

    @property
    def width_px(self) -> int:
        return self.frame_width_mb * MB

    @property
    def height_px(self) -> int:
        return self.frame_height_mb * MB


# -- intra refresh --------------------------------------------------------------


def intra_refresh_columns(slice_counter: int, geometry: SliceGeometry) -> tuple[int, ...]:
    """Macroblock columns coded intra in the slice with this counter."""
    if slice_counter < 0:
        raise ValueError("slice_counter must be >= 0")
    p = geometry.refresh_period_mb
    return tuple(range(slice_counter % p, geometry.frame_width_mb, p))


def refresh_counts(first_counter: int, geometry: SliceGeometry) -> np.ndarray:
    """Intra refreshes per column over one period of counters starting here."""
    counts = np.zeros(geometry.frame_width_mb, dtype=np.int64)
    for c in range(first_counter, first_counter + geometry.refresh_period_mb):
        counts[list(intra_refresh_columns(c, geometry))] += 1
    return counts


def recovery_time(period: int, fps: float) -> float:
    """Worst-case seconds until every column has been refreshed after a loss."""
    if period < 1 or fps <= 0:
        raise ValueError("need period >= 1 and fps > 0")
    return period / fps


# -- QP lookup table ------------------------------------------------------------


@dataclass(frozen=True)
class QpEntry:
    size_bytes: float
    qp_i: int
    qp_p: int


@dataclass(frozen=True)
class QpTable:
    entries: tuple  # QpEntry sorted by size; both QPs non-increasing along it
    samples: tuple = ()  # (qp_i, qp_p, mean_bytes) for every observed pair

    def __len__(self):
        return len(self.entries)


def build_qp_table(samples: Iterable[Sequence[float]]) -> QpTable:
    """Average observed sizes per QP pair and keep the longest monotone chain.

    Along the chain sizes increase while both QPs weakly decrease, so a larger
    size budget never selects a coarser quantizer.
    """
    sums: dict[tuple[int, int], list] = {}
    for qi, qp, size in samples:
        acc = sums.setdefault((int(qi), int(qp)), [0.0, 0])
        acc[0] += float(size)
        acc[1] += 1
    if not sums:
        raise ValueError("no QP samples")
    means = sorted(((s / n, qi, qp) for (qi, qp), (s, n) in sums.items()),
                   key=lambda e: (e[0], -e[1], -e[2]))

    # Longest chain by O(n^2) dynamic programming; fine for QP grids (<= 52^2).
    n = len(means)
    best = [1] * n
    prev = [-1] * n
    for j in range(n):
        for i in range(j):
            if (means[i][1] >= means[j][1] and means[i][2] >= means[j][2]
                    and best[i] + 1 > best[j]):
                best[j] = best[i] + 1
                prev[j] = i
    j = max(range(n), key=lambda t: (best[t], -t))
    chain = []
    while j >= 0:
        chain.append(QpEntry(*means[j]))
        j = prev[j]
    return QpTable(tuple(reversed(chain)), tuple((qi, qp, m) for m, qi, qp in means))


def select_qp(table: QpTable, target_bytes: float) -> tuple[int, int]:
    """QP pair with the largest mean size not above ``target_bytes`` (clamped)."""
    if not table.entries:
        raise ValueError("empty QP table")
    pick = table.entries[0]
    for e in table.entries:
        if e.size_bytes <= target_bytes:
            pick = e
        else:
            break
    return pick.qp_i, pick.qp_p


def synthetic_qp_samples(rng: np.random.Generator, qp_range=range(20, 41), reps: int = 8,
                         base_bytes: float = 12000.0, noise: float = 0.15):
    """Noisy slice sizes that halve every 6 QP steps; the I-QP weighs a quarter."""
    out = []
    for qi in qp_range:
        for qp in qp_range:
            mean = base_bytes * 2.0 ** (-(0.25 * qi + 0.75 * qp - 20) / 6.0)
            for size in mean * rng.lognormal(0.0, noise, reps):
                out.append((qi, qp, float(size)))
    return out


def read_qp_samples(path) -> list[tuple[int, int, float]]:
    with open(path, newline="") as fh:
        return [(int(r["qp_i"]), int(r["qp_p"]), float(r["slice_bytes"]))
                for r in csv.DictReader(fh)]


def write_qp_samples(path, samples):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["qp_i", "qp_p", "slice_bytes"])
        w.writerows((qi, qp, f"{s:.1f}") for qi, qp, s in samples)


def write_qp_table_csv(path, table: QpTable):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["target_slice_bytes", "qp_i", "qp_p"])
        w.writerows((f"{e.size_bytes:.1f}", e.qp_i, e.qp_p) for e in table.entries)


# -- encoder timing -------------------------------------------------------------


@dataclass(frozen=True)
class SliceRecord:
    index: int
    arrival: float  # sensor starts writing the slice
    encode_start: float
    encode_end: float
    buffer_id: int
    encoder_id: int


@dataclass
class PingPongSchedule:
    records: list = field(default_factory=list)
    max_buffers_used: int = 0
    deadline_misses: int = 0
    t_slice: float = 0.0
    budget: float = 0.0

    @property
    def latency(self) -> np.ndarray:
        """Sensor start of each slice to the end of its encoding."""
        return np.array([r.encode_end - r.arrival for r in self.records])

    @property
    def backlog(self) -> np.ndarray:
        """Wait between a slice being fully buffered and its encoder picking it up."""
        return np.array([r.encode_start - (r.arrival + self.t_slice) for r in self.records])

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["slice", "arrival_s", "encode_start_s", "encode_end_s", "buffer_id",
                        "encoder_id"])
            w.writerows((r.index, f"{r.arrival:.9f}", f"{r.encode_start:.9f}",
                         f"{r.encode_end:.9f}", r.buffer_id, r.encoder_id) for r in self.records)


def simulate_pingpong(geometry: SliceGeometry, encoder_count: int, processing,
                      n_slices: Optional[int] = None) -> PingPongSchedule:
    """Time slices through one encoder (FIFO) or two encoders (alternating parity).

    ``processing`` is one encode time in seconds or one per slice. A slice
    occupies its buffer from the moment the sensor starts writing it. A
    finished slice's buffer may be refilled by a later slice only if that
    encoder had already started reading it when writing begins, and finishes
    reading before the writer catches up (by the end of the write).
    """
    if encoder_count not in (1, 2):
        raise ValueError("encoder_count must be 1 or 2")
    proc = np.atleast_1d(np.asarray(processing, dtype=np.float64))
    if n_slices is None:
        n_slices = proc.size if proc.size > 1 else geometry.slices_per_frame
    if proc.size == 1:
        proc = np.full(n_slices, proc[0])
    if proc.size != n_slices:
        raise ValueError("need one processing time per slice")
    if np.any(proc < 0):
        raise ValueError("processing times must be >= 0")

    t = geometry.t_slice
    budget = encoder_count * t
    sched = PingPongSchedule(t_slice=t, budget=budget)
    enc_free = [0.0] * encoder_count
    holders: list[Optional[SliceRecord]] = []  # last slice written into each buffer
    eps = 1e-12 * t
    for i in range(n_slices):
        arrival = i * t
        ready = arrival + t
        enc = i % encoder_count
        start = max(ready, enc_free[enc])
        end = start + proc[i]
        enc_free[enc] = end
        buf = next((b for b, h in enumerate(holders)
                    if h.encode_start <= arrival + eps and h.encode_end <= ready + eps), None)
        if buf is None:
            buf = len(holders)
            holders.append(None)
        rec = SliceRecord(i, arrival, start, end, buf, enc)
        holders[buf] = rec
        sched.records.append(rec)
        if end - ready > budget + eps:
            sched.deadline_misses += 1
    sched.max_buffers_used = len(holders)
    return sched


# -- concealment and PSNR -------------------------------------------------------


def psnr(a, b) -> float:
    """PSNR in dB of two 8-bit images; ``inf`` when they are identical."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionMismatchError(f"{a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(255.0 ** 2 / mse)


def _bands(height: int, slices: int):
    if height % slices:
        raise DimensionMismatchError(f"{height} rows do not split into {slices} slices")
    h = height // slices
    return [slice(s * h, (s + 1) * h) for s in range(slices)]


def conceal(received, dropped, geometry: SliceGeometry) -> np.ndarray:
    """Replace dropped slices with the co-located slice of the previous output frame.

    A slice lost in the very first frame has nothing to copy and becomes mid-grey.
    """
    rx = np.array(received, dtype=np.uint8, copy=True)
    mask = np.asarray(dropped, dtype=bool)
    if rx.ndim != 3 or mask.shape != (rx.shape[0], geometry.slices_per_frame):
        raise DimensionMismatchError("need frames (F, H, W) and a (F, slices) drop mask")
    bands = _bands(rx.shape[1], geometry.slices_per_frame)
    for f in range(rx.shape[0]):
        for s in np.flatnonzero(mask[f]):
            rx[f, bands[s]] = rx[f - 1, bands[s]] if f else 128
    return rx


def conceal_and_psnr(reference, received, dropped, geometry: SliceGeometry):
    """Conceal drops in ``received`` and score every frame against ``reference``.

    Returns ``(per_frame_psnr, average)``; the average is over finite frames
    and is ``inf`` if every frame is identical.
    """
    ref = np.asarray(reference)
    rx = np.asarray(received)
    if ref.shape != rx.shape:
        raise DimensionMismatchError(f"{ref.shape} vs {rx.shape}")
    out = conceal(rx, dropped, geometry)
    per = np.array([psnr(ref[f], out[f]) for f in range(ref.shape[0])])
    finite = per[np.isfinite(per)]
    return per, (float(finite.mean()) if finite.size else math.inf)


def read_raw_frames(path, width: int, height: int) -> np.ndarray:
    """Planar 8-bit grayscale frames, concatenated."""
    data = np.fromfile(path, dtype=np.uint8)
    if data.size % (width * height):
        raise DimensionMismatchError(f"{data.size} bytes is not a whole number of "
                                     f"{width}x{height} frames")
    return data.reshape(-1, height, width)


def write_raw_frames(path, frames):
    np.ascontiguousarray(frames, dtype=np.uint8).tofile(path)
