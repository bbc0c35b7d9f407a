"""Backend selection for the compiled kernels.

Kernels are written once as plain loops and compiled with numba when it is
available. Setting ``MLNC_NO_NUMBA=1`` forces the pure-numpy implementations,
which are also always importable under their ``*_np`` names so the two paths
can be cross-checked and benchmarked side by side.
"""

import os

_DISABLED = os.environ.get("MLNC_NO_NUMBA", "").strip().lower() in ("1", "true", "yes", "on")

try:
    import numba as _numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    _numba = None

HAS_NUMBA = _numba is not None
USE_NUMBA = HAS_NUMBA and not _DISABLED


def njit(func=None, *, inline=False):
    """Compile ``func`` in nopython mode, or return it untouched without numba."""
    if func is None:
        return lambda f: njit(f, inline=inline)
    if not HAS_NUMBA:
        return func
    opts = {"inline": "always"} if inline else {}
    return _numba.njit(cache=True, nogil=True, **opts)(func)


def pick(jit_impl, np_impl):
    return jit_impl if USE_NUMBA else np_impl


def backend_name() -> str:
    return "numba" if USE_NUMBA else "numpy"
