"""Multi-link low-latency transport toolkit: erasure coding, rate control,
scheduling, link simulation, latency statistics and a slice-level video model."""

from ._accel import backend_name

__version__ = "0.1.0"

__all__ = ["backend_name", "__version__"]
