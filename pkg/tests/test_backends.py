"""The numpy fallback must reproduce the compiled kernels exactly."""

import json
import os
import subprocess
import sys

import pytest

from mlnc import backend_name

PROBE = r"""
import hashlib, json
import numpy as np
from mlnc import backend_name
from mlnc.channel_sim import BufferedQueue, LinkConfig, SimConfig, TrafficConfig, run_experiment
from mlnc.erasure import CodeParams, encode, decode, exhaustive_erasure_check

rng = np.random.default_rng(0)
p = CodeParams(8, 4, 375)
data = [rng.integers(0, 256, p.symbol_len, dtype=np.uint8).tobytes() for _ in range(p.k)]
sym = encode(data, p)
rec = decode([sym[i] for i in (1, 3, 5, 7, 8, 9, 10, 11)], p)
trace = run_experiment(SimConfig((LinkConfig(BufferedQueue(jitter_ms=5.0)),) * 2,
                                 TrafficConfig(1.5e6, 4, 2, 1296, 5.0), seed=3))
print(json.dumps({
    "backend": backend_name(),
    "parity": hashlib.sha256(b"".join(s.payload for s in sym)).hexdigest(),
    "decoded": rec == data,
    "sweep": list(exhaustive_erasure_check(CodeParams(7, 3, 4), np.random.default_rng(1))),
    "arrive": hashlib.sha256(trace.arrive_us.tobytes()).hexdigest(),
    "links": hashlib.sha256(trace.link_id.tobytes()).hexdigest(),
}))
"""


def probe(no_numba: bool) -> dict:
    env = dict(os.environ)
    env.pop("MLNC_NO_NUMBA", None)
    if no_numba:
        env["MLNC_NO_NUMBA"] = "1"
    out = subprocess.run([sys.executable, "-c", PROBE], env=env, capture_output=True, text=True,
                         check=True, timeout=600)
    return json.loads(out.stdout)


@pytest.mark.skipif(backend_name() != "numba", reason="numba backend not active")
def test_numpy_fallback_matches_numba():
    fast, slow = probe(False), probe(True)
    assert (fast.pop("backend"), slow.pop("backend")) == ("numba", "numpy")
    assert fast["decoded"] and fast == slow
