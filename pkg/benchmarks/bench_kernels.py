"""Time the hot kernels under numba and under the pure-numpy fallback.

Each backend runs in its own interpreter because the choice is made at import
time from ``MLNC_NO_NUMBA``. Usage::

    python benchmarks/bench_kernels.py [--repeat N] [--json]
"""

import argparse
import json
import os
import subprocess
import sys

WORKER = r"""
import json, sys, time
import numpy as np
from mlnc import backend_name
from mlnc.channel_sim import BufferedLink, BufferedQueue
from mlnc.erasure import CodeParams, decode_array, encode_array, exhaustive_erasure_check
from mlnc.scheduler import Scheduler

repeat = int(sys.argv[1])
rng = np.random.default_rng(0)


def best(fn):
    fn()  # compile / warm caches
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


p = CodeParams(100, 20, 1296)
data = rng.integers(0, 256, (p.k, p.symbol_len), dtype=np.uint8)
code = encode_array(data, p)
keep = np.arange(20, p.n)  # first 20 data symbols erased
small = CodeParams(8, 4, 16)
send = np.sort(rng.integers(0, 60_000_000, 20_000))
sizes = np.full(send.size, 1320)
stream = np.arange(50_000) * 500.0

def fifo():
    BufferedLink(BufferedQueue(jitter_ms=0.0), np.random.default_rng(1)).step(send, sizes)

rows = {
    "encode k=100 m=20 (MB/s)": p.k * p.symbol_len / 1e6 / best(lambda: encode_array(data, p)),
    "decode 20 erasures (MB/s)": p.k * p.symbol_len / 1e6
        / best(lambda: decode_array(keep, code[keep], p)),
    "sweep k=8 m=4 (patterns/s)": 495 / best(
        lambda: exhaustive_erasure_check(small, np.random.default_rng(2))),
    "fifo 20k packets (Mpkt/s)": send.size / 1e6 / best(fifo),
    "scheduler 50k packets (Mpkt/s)": stream.size / 1e6 / best(
        lambda: Scheduler([1e6, 0.75e6, 2e6]).assign_many(np.full(stream.size, 1320), stream)),
}
print(json.dumps({"backend": backend_name(), "rows": rows}))
"""


def run(no_numba: bool, repeat: int) -> dict:
    env = dict(os.environ)
    env.pop("MLNC_NO_NUMBA", None)
    if no_numba:
        env["MLNC_NO_NUMBA"] = "1"
    out = subprocess.run([sys.executable, "-c", WORKER, str(repeat)], env=env, check=True,
                         capture_output=True, text=True)
    return json.loads(out.stdout)


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5, help="timed runs per kernel (best is kept)")
    ap.add_argument("--json", action="store_true", help="print raw results as JSON")
    args = ap.parse_args(argv)
    fast, slow = run(False, args.repeat), run(True, args.repeat)
    if args.json:
        print(json.dumps({"numba": fast, "numpy": slow}, indent=2))
        return 0
    print(f"{'kernel':34s} {fast['backend']:>12s} {slow['backend']:>12s} {'speedup':>8s}")
    for name, a in fast["rows"].items():
        b = slow["rows"][name]
        print(f"{name:34s} {a:12.2f} {b:12.2f} {a / b:7.1f}x")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
