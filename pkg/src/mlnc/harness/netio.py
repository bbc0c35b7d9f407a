"""Real-datagram sender and receiver using the transport wire format.

Link ``i`` is a UDP flow to ``port + i``. The receiver measures each flow per
window, runs that link's rate controller and answers with a feedback datagram
to the flow's source address; the sender's feedback thread hands the new
rate to the scheduler under a lock. Timestamps are wall-clock microseconds,
so sender and receiver clocks must agree (same host or synchronised).
"""

import csv
import selectors
import socket
import threading
import time
from pathlib import Path

import numpy as np

from ..erasure import CodeParams
from ..rate_control import RateController, RateControlConfig, sender_rate_from
from ..scheduler import Scheduler
from ..transport import (HEADER_LEN, PacketKind, Reassembler, WireFormatError, decode_feedback,
                         feedback_packet, packetize_block, parse_packet, serialize_packet)
from .config import ExperimentConfig

MAX_DATAGRAM = 65535


def now_us() -> int:
    return time.time_ns() // 1000


class RateBoard:
    """Latest per-link send rate, written by the feedback thread."""

    def __init__(self, rates):
        self._lock = threading.Lock()
        self._rates = list(rates)
        self.updates = 0

    def set(self, link: int, rate_bps: float):
        with self._lock:
            self._rates[link] = rate_bps
            self.updates += 1

    def snapshot(self) -> list:
        with self._lock:
            return list(self._rates)


def _feedback_loop(socks, board: RateBoard, stop: threading.Event):
    sel = selectors.DefaultSelector()
    for i, s in enumerate(socks):
        sel.register(s, selectors.EVENT_READ, i)
    while not stop.is_set():
        for key, _ in sel.select(timeout=0.05):
            try:
                pkt = parse_packet(key.fileobj.recv(MAX_DATAGRAM))
            except (OSError, WireFormatError):
                continue
            if pkt.kind == PacketKind.FEEDBACK:
                rate = sender_rate_from(decode_feedback(pkt.payload))
                if rate > 0:
                    board.set(key.data, rate)
    sel.close()


def _warm_up(params: CodeParams):
    """Compile the codec kernels before any packet is timed."""
    pkts = packetize_block(b"x", 0, params, 0)
    r = Reassembler()
    for pkt in pkts[params.m:]:
        r.push(pkt, 0)


def send(cfg: ExperimentConfig, out: Path) -> dict:
    p = cfg.params
    params = CodeParams(cfg.code.k, cfg.code.m, cfg.code.symbol_len)
    _warm_up(params)
    block_bytes = int(p["block_bytes"]) or params.k * params.symbol_len - 4
    interval = block_bytes * 8.0 / cfg.traffic.data_rate_bps
    socks = []
    for _ in cfg.links:
        s = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        s.bind((p["host"], 0))
        socks.append(s)
    dests = [(p["host"], int(p["port"]) + i) for i in range(len(cfg.links))]
    board = RateBoard([ln.rate_bps for ln in cfg.links])
    stop = threading.Event()
    fb = threading.Thread(target=_feedback_loop, args=(socks, board, stop), daemon=True)
    fb.start()

    rng = np.random.default_rng(cfg.seed)
    sched = Scheduler(board.snapshot(), now_us())
    sent = np.zeros(len(cfg.links), dtype=np.int64)
    log = []
    t0 = time.monotonic()
    block = 0
    try:
        while time.monotonic() - t0 < cfg.traffic.duration_s:
            wake = t0 + block * interval
            delay = wake - time.monotonic()
            if delay > 0:
                time.sleep(delay)
            for lid, r in enumerate(board.snapshot()):
                sched.update_rate(lid, r)
            data = rng.integers(0, 256, block_bytes, dtype=np.uint8).tobytes()
            ts = now_us()
            for pkt in packetize_block(data, block, params, ts):
                lid = sched.assign(HEADER_LEN + pkt.payload_len, ts)
                socks[lid].sendto(serialize_packet(pkt), dests[lid])
                sent[lid] += 1
            log.append((block, ts))
            block += 1
    finally:
        stop.set()
        fb.join()
        for s in socks:
            s.close()
    with open(out / "sent.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["block_id", "send_us"])
        w.writerows(log)
    return {"blocks": block, "packets_per_link": sent.tolist(), "feedback_updates": board.updates,
            "final_rates_bps": [round(r) for r in board.snapshot()]}


def recv(cfg: ExperimentConfig, out: Path) -> dict:
    p = cfg.params
    rc = cfg.rate_control or RateControlConfig()
    _warm_up(CodeParams(cfg.code.k, cfg.code.m, cfg.code.symbol_len))
    win_us = int(rc.window_ms * 1000)
    socks = []
    sel = selectors.DefaultSelector()
    for i, _ in enumerate(cfg.links):
        s = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        s.bind((p["host"], int(p["port"]) + i))
        sel.register(s, selectors.EVENT_READ, i)
        socks.append(s)
    ctrls = [RateController(ln.rate_bps, rc) for ln in cfg.links]
    peers = [None] * len(cfg.links)
    window_bytes = np.zeros(len(cfg.links), dtype=np.int64)
    reasm = Reassembler()
    done = []
    bad = 0
    feedback = 0
    start = now_us()
    window_end = start + win_us
    stop_at = start + int(cfg.traffic.duration_s * 1e6)
    try:
        while True:
            t = now_us()
            if t >= stop_at:
                break
            if t >= window_end:
                for lid, c in enumerate(ctrls):
                    if peers[lid] is None:  # flow not started; nothing to measure yet
                        continue
                    msg = c.update(window_bytes[lid] * 8e6 / win_us, t)
                    socks[lid].sendto(serialize_packet(feedback_packet(msg, lid)), peers[lid])
                    feedback += 1
                window_bytes[:] = 0
                window_end += win_us
                continue
            timeout = max(0.0, (min(window_end, stop_at) - t) / 1e6)
            for key, _ in sel.select(timeout=timeout):
                buf, addr = key.fileobj.recvfrom(MAX_DATAGRAM)
                t = now_us()
                try:
                    pkt = parse_packet(buf)
                except WireFormatError:
                    bad += 1
                    continue
                if pkt.kind != PacketKind.DATA:
                    continue
                peers[key.data] = addr
                window_bytes[key.data] += len(buf)
                blk = reasm.push(pkt, t)
                if blk is not None:
                    done.append(blk)
    finally:
        sel.close()
        for s in socks:
            s.close()
    with open(out / "blocks.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["block_id", "send_us", "ready_us", "latency_ms"])
        w.writerows((b.block_id, b.send_us, b.ready_us, f"{b.latency_us / 1000:.3f}") for b in done)
    lat = np.array([b.latency_us / 1000 for b in done])
    return {"blocks": len(done), "rejected_datagrams": bad, "evicted_blocks": reasm.evicted,
            "feedback_sent": feedback,
            "p95_latency_ms": round(float(np.percentile(lat, 95)), 3) if lat.size else None,
            "final_targets_bps": [round(c.target_bps) for c in ctrls]}
