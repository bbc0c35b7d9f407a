"""Experiment configuration: YAML file, per-experiment defaults, CLI overrides."""

import copy
from dataclasses import dataclass, field, fields
from typing import Any, Optional

import yaml

from ..channel_sim import (BufferedQueue, GaussianDelay, LinkConfig, PiecewiseRate,
                           ServiceRateProcess, SimConfig, TrafficConfig)
from ..rate_control import RateControlConfig

EXPERIMENTS = ("theory-gain", "simulate", "coded-cdf", "modem-count", "rate-step", "bench-crs",
               "intra-refresh", "pingpong", "qp-table", "psnr", "send", "recv")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class LinkSpec:
    """One link. ``buffered`` defaults are the calibrated cellular profile."""

    kind: str = "buffered"  # buffered | piecewise | gaussian
    rate_bps: float = 1e6
    scale: float = 1.0  # multiplies every capacity of the link
    # buffered (two-state modem)
    good_bps: float = 2e6
    bad_bps: float = 1e6
    good_s: float = 5.0
    bad_s: float = 0.5
    step_ms: float = 10.0
    propagation_ms: float = 20.0
    jitter_ms: float = 10.0
    queue_limit_bytes: float = 4e6
    loss_prob: float = 0.0
    # piecewise capacity
    starts_ms: tuple = (0.0,)
    rates_bps: tuple = (2e6,)
    # gaussian
    mean_ms: float = 20.0
    std_ms: float = 5.0
    min_ms: float = 1.0

    def model(self):
        if self.kind == "gaussian":
            return GaussianDelay(self.mean_ms, self.std_ms, self.min_ms, self.loss_prob)
        if self.kind == "buffered":
            svc = ServiceRateProcess.from_sojourn(self.good_bps * self.scale, self.bad_bps * self.scale,
                                                  self.good_s, self.bad_s, self.step_ms)
        elif self.kind == "piecewise":
            svc = PiecewiseRate(tuple(float(s) for s in self.starts_ms),
                                tuple(float(r) * self.scale for r in self.rates_bps))
        else:
            raise ConfigError(f"links.kind: unknown link kind {self.kind!r}")
        return BufferedQueue(svc, self.propagation_ms, self.queue_limit_bytes, self.loss_prob,
                             self.jitter_ms)

    def link_config(self) -> LinkConfig:
        return LinkConfig(self.model(), float(self.rate_bps))


@dataclass(frozen=True)
class CodeSpec:
    k: int = 6
    m: int = 2
    symbol_len: int = 1296


@dataclass(frozen=True)
class TrafficSpec:
    data_rate_bps: float = 1.2e6
    duration_s: float = 120.0


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    seed: int = 1
    links: tuple = (LinkSpec(),)
    code: CodeSpec = CodeSpec()
    traffic: TrafficSpec = TrafficSpec()
    rate_control: Optional[RateControlConfig] = None
    padding: bool = True
    params: dict = field(default_factory=dict)
    out: str = ""

    def sim_config(self, links=None, k=None, m=None, data_rate_bps=None, seed=None) -> SimConfig:
        links = self.links if links is None else links
        tr = TrafficConfig(self.traffic.data_rate_bps if data_rate_bps is None else data_rate_bps,
                           self.code.k if k is None else k, self.code.m if m is None else m,
                           self.code.symbol_len, self.traffic.duration_s)
        return SimConfig(tuple(ln.link_config() for ln in links), tr,
                         self.seed if seed is None else seed, self.rate_control, self.padding)


_GEOMETRY = {"width_mb": 80, "height_mb": 48, "slices": 6, "fps": 60.0, "period": 16}

# Per-experiment defaults; a config file or flags override individual keys.
DEFAULTS: dict[str, dict[str, Any]] = {
    "theory-gain": {"code": {"k": 6, "m": 2},
                    "params": {"mean_ms": 20.0, "std_ms": 5.0, "p": 0.95, "blocks": 1_000_000}},
    "simulate": {"links": [{}] * 4,
                 "params": {"best_count": 500, "max_lag": 20}},
    "coded-cdf": {"links": [{"rate_bps": 1e6}, {"rate_bps": 0.75e6, "scale": 0.75}],
                  "code": {"k": 4, "m": 3}, "traffic": {"data_rate_bps": 1e6},
                  "params": {"p": 0.95, "calibration_seed_offset": 100}},
    "modem-count": {"params": {"max_links": 4, "bins": 60}},
    "rate-step": {"links": [{"kind": "piecewise", "rate_bps": 2e6, "jitter_ms": 0.0,
                             "starts_ms": [0, 6000, 12000], "rates_bps": [2e6, 1e6, 2e6]}],
                  "code": {"k": 1, "m": 0}, "traffic": {"data_rate_bps": 1e5, "duration_s": 20.0},
                  "rate_control": {}, "seed": 0,
                  "params": {"reach_frac": 0.9}},
    "bench-crs": {"code": {"k": 100, "m": 50},
                  "params": {"configs": [[100, 1], [100, 10], [100, 20], [100, 30], [100, 40],
                                         [100, 50]],
                             "min_time_s": 0.2}},
    "intra-refresh": {"params": dict(_GEOMETRY)},
    "pingpong": {"params": dict(_GEOMETRY, processing_factor=1.5, n_slices=6,
                                processing_jitter=0.0)},
    "qp-table": {"params": {"samples": "", "targets": [2000, 4000, 8000], "reps": 8}},
    "psnr": {"params": dict(_GEOMETRY, reference="", received="", drops="", frames=30,
                            width_px=320, height_px=192, drop_prob=0.05, noise_std=2.0)},
    "send": {"links": [{}], "traffic": {"data_rate_bps": 1e6, "duration_s": 5.0}, "rate_control": {},
             "params": {"host": "127.0.0.1", "port": 47000, "feedback_port": 47100,
                        "block_bytes": 0}},
    "recv": {"links": [{}], "traffic": {"duration_s": 6.0}, "rate_control": {},
             "params": {"host": "127.0.0.1", "port": 47000}},
}

_TOP = {f.name for f in fields(ExperimentConfig)}


def _merge(base: dict, over: dict, where: str) -> dict:
    out = copy.deepcopy(base)
    for key, val in over.items():
        path = f"{where}.{key}" if where else key
        if where == "params" and key not in base:
            raise ConfigError(f"{path}: unknown parameter for this experiment")
        if isinstance(val, dict) and isinstance(out.get(key), dict) and key != "rate_control":
            out[key] = _merge(out[key], val, path)
        else:
            out[key] = val
    return out


def _dataclass_from(cls, data, where: str):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected a mapping, got {type(data).__name__}")
    known = {f.name: f for f in fields(cls)}
    kwargs = {}
    for key, val in data.items():
        if key not in known:
            raise ConfigError(f"{where}.{key}: unknown field")
        default = getattr(cls(), key) if cls is not ExperimentConfig else None
        kwargs[key] = _coerce(val, default, f"{where}.{key}")
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def _coerce(val, default, where):
    if isinstance(default, bool):
        if not isinstance(val, bool):
            raise ConfigError(f"{where}: expected true/false")
        return val
    if isinstance(default, int):
        if isinstance(val, bool) or not isinstance(val, (int, float)) or int(val) != val:
            raise ConfigError(f"{where}: expected an integer, got {val!r}")
        return int(val)
    if isinstance(default, float):
        if isinstance(val, bool) or not isinstance(val, (int, float, str)):
            raise ConfigError(f"{where}: expected a number, got {val!r}")
        try:
            return float(val)
        except ValueError:
            raise ConfigError(f"{where}: expected a number, got {val!r}") from None
    if isinstance(default, tuple):
        if not isinstance(val, (list, tuple)):
            raise ConfigError(f"{where}: expected a list")
        return tuple(float(v) for v in val)
    if isinstance(default, str) and not isinstance(val, str):
        raise ConfigError(f"{where}: expected a string")
    return val


def build_config(experiment: str, data: Optional[dict] = None) -> ExperimentConfig:
    """Validate a raw mapping (already merged with overrides) into a config."""
    if experiment not in EXPERIMENTS:
        raise ConfigError(f"experiment: unknown experiment {experiment!r}")
    data = dict(data or {})
    if data.get("experiment", experiment) != experiment:
        raise ConfigError(f"experiment: file is for {data['experiment']!r}, not {experiment!r}")
    data.pop("experiment", None)
    for key in data:
        if key not in _TOP:
            raise ConfigError(f"{key}: unknown field")
    merged = _merge(DEFAULTS[experiment], data, "")

    links_raw = merged.get("links", [{}])
    if not isinstance(links_raw, list) or not links_raw:
        raise ConfigError("links: expected a non-empty list of link mappings")
    links = tuple(_dataclass_from(LinkSpec, ln, f"links[{i}]") for i, ln in enumerate(links_raw))
    rc_raw = merged.get("rate_control")
    rc = None if rc_raw is None else _dataclass_from(RateControlConfig, rc_raw, "rate_control")
    seed = merged.get("seed", 1)
    if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
        raise ConfigError("seed: expected a non-negative integer")
    padding = merged.get("padding", True)
    if not isinstance(padding, bool):
        raise ConfigError("padding: expected true/false")
    out = merged.get("out", "") or f"out/{experiment}"
    if not isinstance(out, str):
        raise ConfigError("out: expected a path string")
    defaults = DEFAULTS[experiment].get("params", {})
    params = {key: _coerce(val, defaults[key], f"params.{key}")
              for key, val in merged.get("params", {}).items()}
    return ExperimentConfig(experiment, seed, links,
                            _dataclass_from(CodeSpec, merged.get("code"), "code"),
                            _dataclass_from(TrafficSpec, merged.get("traffic"), "traffic"),
                            rc, padding, params, out)


def load_yaml(path) -> dict:
    with open(path) as fh:
        data = yaml.safe_load(fh)
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return data


def apply_overrides(data: dict, *, seed=None, out=None, links=None, k=None, m=None,
                    rate_bps=None) -> dict:
    """Fold CLI flags into a raw config mapping.

    ``links`` sets the link count by repeating (or truncating) the link list.
    ``rate_bps`` is the source data rate.
    """
    data = copy.deepcopy(data)
    if seed is not None:
        data["seed"] = seed
    if out is not None:
        data["out"] = out
    if k is not None:
        data.setdefault("code", {})["k"] = k
    if m is not None:
        data.setdefault("code", {})["m"] = m
    if rate_bps is not None:
        data.setdefault("traffic", {})["data_rate_bps"] = rate_bps
    if links is not None:
        if links < 1:
            raise ConfigError("links: need at least one link")
        data["_link_count"] = links
    return data


def resolve(experiment: str, data: dict) -> ExperimentConfig:
    data = dict(data)
    count = data.pop("_link_count", None)
    cfg = build_config(experiment, data)
    if count is not None:
        if experiment == "modem-count":
            cfg = _with_params(cfg, max_links=count)
        else:
            reps = [cfg.links[i % len(cfg.links)] for i in range(count)]
            cfg = ExperimentConfig(**{**cfg.__dict__, "links": tuple(reps)})
    return cfg


def _with_params(cfg: ExperimentConfig, **kw) -> ExperimentConfig:
    return ExperimentConfig(**{**cfg.__dict__, "params": {**cfg.params, **kw}})
