"""Receiver-side two-state rate controller.

In *measuring* mode every window's delivered rate is compared with the target;
a shortfall drops the target below the measurement so sender and modem
buffers drain. After ``probation_trigger_windows`` windows without a decrease
the controller enters *probing*: it asks for a temporary raise, then for the
old rate, and makes the raise permanent only if the receiver actually saw it.
"""

import enum
import math
from dataclasses import dataclass, field, replace

from .transport import Command, FeedbackMessage


class Mode(enum.Enum):
    MEASURING = "measuring"
    PROBING = "probing"


class ProbePhase(enum.Enum):
    IDLE = "idle"
    UP = "up"
    DOWN = "down"


@dataclass(frozen=True)
class RateControlConfig:
    window_ms: float = 100.0
    delta_down_frac: float = 0.10
    probe_delta_frac: float = 0.10
    probation_trigger_windows: int = 8
    probe_windows: int = 2
    sustain_frac: float = 0.95
    floor_bps: float = 50_000.0
    # A window counts as short only below target * (1 - tolerance_frac) minus
    # tolerance_bytes; one packet more or less per window is counting noise.
    tolerance_frac: float = 0.05
    tolerance_bytes: float = 1320
    # Smaller but persistent shortfalls add up; once the accumulated deficit
    # passes this many bytes the target is decreased anyway. Credit from
    # surplus windows is capped at the same amount.
    deficit_limit_bytes: float = 2 * 1320
    # Bytes a probe may fall short in total and still count as sustained.
    sustain_slack_bytes: float = 1320

    def __post_init__(self):
        if self.window_ms <= 0:
            raise ValueError("window_ms must be positive")
        if not 0 <= self.delta_down_frac < 1:
            raise ValueError("delta_down_frac must be in [0, 1)")
        if self.probe_delta_frac < 0:
            raise ValueError("probe_delta_frac must be >= 0")
        if self.probation_trigger_windows < 1 or self.probe_windows < 1:
            raise ValueError("window counts must be >= 1")
        if self.floor_bps <= 0:
            raise ValueError("floor_bps must be positive")
        if not 0 <= self.tolerance_frac < 1:
            raise ValueError("tolerance_frac must be in [0, 1)")
        if min(self.tolerance_bytes, self.deficit_limit_bytes, self.sustain_slack_bytes) < 0:
            raise ValueError("byte allowances must be >= 0")


@dataclass(frozen=True)
class RateControllerState:
    target_bps: float
    config: RateControlConfig = field(default_factory=RateControlConfig)
    mode: Mode = Mode.MEASURING
    windows_since_decrease: int = 0
    probe_phase: ProbePhase = ProbePhase.IDLE
    probe_rate_bps: float = 0.0
    probe_samples: tuple = ()
    deficit_bytes: float = 0.0

    def __post_init__(self):
        if self.target_bps <= 0:
            raise ValueError("target_bps must be positive")


def _msg(command: Command, state: RateControllerState, measured: float, now_us: int,
         rate: float = None) -> FeedbackMessage:
    rate = state.target_bps if rate is None else rate
    return FeedbackMessage(int(round(measured)), command, max(1, int(round(rate))), now_us)


def _short(state: RateControllerState, measured: float) -> bool:
    cfg = state.config
    slack_bps = cfg.tolerance_bytes * 8000.0 / cfg.window_ms
    return measured < state.target_bps * (1.0 - cfg.tolerance_frac) - slack_bps


def _decrease(state: RateControllerState, measured: float, now_us: int):
    cfg = state.config
    target = max(cfg.floor_bps, measured * (1.0 - cfg.delta_down_frac))
    new = replace(state, target_bps=target, mode=Mode.MEASURING, windows_since_decrease=0,
                  probe_phase=ProbePhase.IDLE, probe_rate_bps=0.0, probe_samples=(),
                  deficit_bytes=0.0)
    return new, _msg(Command.SET_TARGET, new, measured, now_us)


def _start_probe(state: RateControllerState, measured: float, now_us: int):
    probed = state.target_bps * (1.0 + state.config.probe_delta_frac)
    new = replace(state, mode=Mode.PROBING, probe_phase=ProbePhase.UP, probe_rate_bps=probed,
                  probe_samples=(), deficit_bytes=0.0)
    return new, _msg(Command.PROBE_UP, new, measured, now_us, probed)


def on_window(state: RateControllerState, measured_bps: float, now_us: int = 0):
    """Measuring-mode update for one window; returns ``(state, FeedbackMessage)``."""
    if measured_bps < 0:
        raise ValueError("measured rate must be non-negative")
    if state.mode is Mode.PROBING:
        return probe_step(state, measured_bps, now_us)
    if _short(state, measured_bps):
        return _decrease(state, measured_bps, now_us)
    behind = (state.target_bps - measured_bps) * state.config.window_ms / 8000.0
    limit = state.config.deficit_limit_bytes
    deficit = max(-limit, state.deficit_bytes + behind)
    if deficit > limit:
        return _decrease(state, measured_bps, now_us)
    state = replace(state, windows_since_decrease=state.windows_since_decrease + 1,
                    deficit_bytes=deficit)
    if (state.windows_since_decrease >= state.config.probation_trigger_windows
            and state.config.probe_delta_frac > 0):
        return _start_probe(state, measured_bps, now_us)
    return state, _msg(Command.KEEP, state, measured_bps, now_us)


def probe_step(state: RateControllerState, measured_bps: float, now_us: int = 0):
    """Probing-mode update for one window; returns ``(state, FeedbackMessage)``.

    A window that falls short of the *base* target aborts the probe as an
    ordinary decrease.
    """
    cfg = state.config
    if state.mode is not Mode.PROBING:
        raise ValueError("probe_step requires probing mode")
    if _short(state, measured_bps):
        return _decrease(state, measured_bps, now_us)
    if state.probe_phase is ProbePhase.IDLE:
        return _start_probe(state, measured_bps, now_us)

    if state.probe_phase is ProbePhase.UP:
        samples = state.probe_samples + (measured_bps,)
        if len(samples) < cfg.probe_windows:
            new = replace(state, probe_samples=samples)
            return new, _msg(Command.KEEP, new, measured_bps, now_us, state.probe_rate_bps)
        new = replace(state, probe_phase=ProbePhase.DOWN, probe_samples=samples)
        return new, _msg(Command.PROBE_DOWN, new, measured_bps, now_us)

    # DOWN: the window just measured ran at the base target again.
    n = len(state.probe_samples)
    slack_bps = cfg.sustain_slack_bytes * 8000.0 / (cfg.window_ms * n)
    mean = sum(state.probe_samples) / n
    # The slack absorbs counting noise but never lets a probe pass that saw no
    # more than the base target.
    sustained = (mean >= state.probe_rate_bps * cfg.sustain_frac - slack_bps
                 and mean > state.target_bps)
    if sustained:
        # windows_since_decrease is kept, so the next window probes again.
        new = replace(state, target_bps=state.probe_rate_bps, mode=Mode.MEASURING,
                      probe_phase=ProbePhase.IDLE, probe_rate_bps=0.0, probe_samples=())
        return new, _msg(Command.CONFIRM_INCREASE, new, measured_bps, now_us)
    new = replace(state, mode=Mode.MEASURING, windows_since_decrease=0,
                  probe_phase=ProbePhase.IDLE, probe_rate_bps=0.0, probe_samples=())
    return new, _msg(Command.KEEP, new, measured_bps, now_us)


def step(state: RateControllerState, measured_bps: float, now_us: int = 0):
    """Dispatch one window to ``on_window`` or ``probe_step`` by mode."""
    if state.mode is Mode.PROBING:
        return probe_step(state, measured_bps, now_us)
    return on_window(state, measured_bps, now_us)


def sending_rate(state: RateControllerState) -> float:
    """Rate the sender should be using right now, including an active probe."""
    if state.mode is Mode.PROBING and state.probe_phase is ProbePhase.UP:
        return state.probe_rate_bps
    return state.target_bps


def sender_rate_from(msg: FeedbackMessage) -> float:
    """Every message carries the rate the sender should use from now on."""
    return float(msg.target_rate_bps)


def windows_to_fall_below(target_bps: float, capacity_bps: float, delta_down_frac: float) -> int:
    """Upper bound on windows before the target drops under a reduced capacity."""
    if target_bps <= capacity_bps:
        return 0
    return math.ceil(math.log(target_bps / capacity_bps) / math.log(1 / (1 - delta_down_frac))) + 1


class RateController:
    """Mutable wrapper around the pure state functions, one instance per link."""

    def __init__(self, initial_bps: float, config: RateControlConfig = None):
        self.state = RateControllerState(float(initial_bps), config or RateControlConfig())
        self.history: list[FeedbackMessage] = []

    @property
    def target_bps(self) -> float:
        return self.state.target_bps

    @property
    def send_rate_bps(self) -> float:
        return sending_rate(self.state)

    def update(self, measured_bps: float, now_us: int = 0) -> FeedbackMessage:
        self.state, msg = step(self.state, measured_bps, now_us)
        self.history.append(msg)
        return msg
