import math

import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from mlnc.rate_control import (Mode, ProbePhase, RateControlConfig, RateController,
                               RateControllerState, on_window, probe_step, sending_rate, step,
                               windows_to_fall_below)
from mlnc.transport import Command

STRICT = RateControlConfig(tolerance_frac=0, tolerance_bytes=0, deficit_limit_bytes=0,
                           sustain_slack_bytes=0)


def run_fluid(ctrl: RateController, capacity, windows):
    """Receiver sees exactly min(send rate, capacity) each window."""
    out = []
    for w in range(windows):
        cap = capacity(w) if callable(capacity) else capacity
        ctrl.update(min(ctrl.send_rate_bps, cap))
        out.append(ctrl.target_bps)
    return out


@pytest.mark.parametrize("cfg", [STRICT, RateControlConfig()])
def test_shortfall_sets_target_below_measurement(cfg):
    s, msg = on_window(RateControllerState(1e6, cfg), 0.8e6)
    assert s.target_bps == pytest.approx(0.72e6)
    assert msg.command is Command.SET_TARGET and msg.target_rate_bps == 720000
    assert s.windows_since_decrease == 0


@pytest.mark.parametrize("cfg", [STRICT, RateControlConfig()])
def test_equal_measurement_keeps_target(cfg):
    s, msg = on_window(RateControllerState(1e6, cfg, windows_since_decrease=3), 1e6)
    assert s.target_bps == 1e6 and s.windows_since_decrease == 4 and msg.command is Command.KEEP


def test_zero_measurement_clamps_to_floor():
    s, _ = on_window(RateControllerState(1e6), 0.0)
    assert s.target_bps == 50_000


def test_trigger_enters_probing():
    s = RateControllerState(1e6)
    for _ in range(7):
        s, msg = on_window(s, 1e6)
        assert s.mode is Mode.MEASURING
    s, msg = on_window(s, 1e6)
    assert s.mode is Mode.PROBING and msg.command is Command.PROBE_UP
    assert msg.target_rate_bps == 1_100_000 and sending_rate(s) == pytest.approx(1.1e6)


def _probing(cfg=RateControlConfig()):
    s = RateControllerState(1e6, cfg)
    for _ in range(cfg.probation_trigger_windows):
        s, _ = on_window(s, 1e6)
    return s


@pytest.mark.parametrize("cfg", [STRICT, RateControlConfig()])
def test_sustained_probe_is_confirmed(cfg):
    s = _probing(cfg)
    cmds = []
    for measured in (1.1e6, 1.1e6, 1.0e6):
        s, msg = probe_step(s, measured)
        cmds.append(msg.command)
    assert cmds == [Command.KEEP, Command.PROBE_DOWN, Command.CONFIRM_INCREASE]
    assert s.target_bps == pytest.approx(1.1e6) and s.mode is Mode.MEASURING


@pytest.mark.parametrize("cfg", [STRICT, RateControlConfig()])
def test_probe_at_capacity_leaves_rate_unchanged(cfg):
    s = _probing(cfg)
    for measured in (1.0e6, 1.0e6, 1.0e6):
        s, msg = probe_step(s, measured)
    assert msg.command is Command.KEEP
    assert s.target_bps == 1e6 and s.windows_since_decrease == 0


def test_zero_probe_delta_never_probes():
    cfg = RateControlConfig(probe_delta_frac=0.0)
    s = RateControllerState(1e6, cfg)
    for _ in range(50):
        s, msg = on_window(s, 1e6)
    assert s.mode is Mode.MEASURING and s.target_bps == 1e6


def test_probe_step_requires_probing():
    with pytest.raises(ValueError):
        probe_step(RateControllerState(1e6), 1e6)
    with pytest.raises(ValueError):
        on_window(RateControllerState(1e6), -1.0)
    with pytest.raises(ValueError):
        RateControllerState(0.0)
    with pytest.raises(ValueError):
        RateControlConfig(delta_down_frac=1.0)


def test_window_bound_formula():
    assert windows_to_fall_below(2e6, 1e6, 0.1) == math.ceil(math.log(2) / math.log(1 / 0.9)) + 1
    assert windows_to_fall_below(1e6, 2e6, 0.1) == 0


@given(st.floats(0.2e6, 20e6), st.floats(0.05, 0.95), st.floats(0.01, 0.5))
def test_step_drop_bound_strict(target, ratio, delta):
    cfg = RateControlConfig(delta_down_frac=delta, tolerance_frac=0, tolerance_bytes=0,
                            deficit_limit_bytes=0, sustain_slack_bytes=0)
    cap = target * ratio
    assume(cap * (1 - delta) > cfg.floor_bps)
    trace = run_fluid(RateController(target, cfg), cap, 50)
    first = next(i for i, t in enumerate(trace) if t < cap) + 1
    assert first <= windows_to_fall_below(target, cap, delta)


@given(st.floats(0.5e6, 10e6), st.floats(0.1, 0.97))
def test_step_drop_bound_defaults(target, ratio):
    """Defaults add at most the deficit horizon to the strict bound."""
    cfg = RateControlConfig()
    cap = target * ratio
    assume(cap * (1 - cfg.delta_down_frac) > cfg.floor_bps)
    behind = (target - cap) * cfg.window_ms / 8000.0
    horizon = math.ceil(cfg.deficit_limit_bytes / behind) + 1
    assume(horizon < cfg.probation_trigger_windows)
    trace = run_fluid(RateController(target, cfg), cap, 50)
    first = next(i for i, t in enumerate(trace) if t < cap) + 1
    assert first <= windows_to_fall_below(target, cap, cfg.delta_down_frac) + horizon


@pytest.mark.parametrize("cfg", [STRICT, RateControlConfig()])
@pytest.mark.parametrize("cap", [0.7e6, 2e6, 5e6])
def test_surplus_capacity_grows_geometrically(cfg, cap):
    trace = run_fluid(RateController(0.5e6, cfg), cap, 600)
    assert max(trace) >= cap / (1 + cfg.probe_delta_frac)
    assert max(trace) <= 0.5e6 if cap < 0.5e6 else max(trace) <= cap * (1 + cfg.probe_delta_frac)


def test_target_never_exceeds_confirmed_rate_by_more_than_probe():
    ctrl = RateController(1e6)
    confirmed = 1e6
    for w in range(400):
        cap = 1.6e6 if (w // 80) % 2 else 0.9e6
        msg = ctrl.update(min(ctrl.send_rate_bps, cap))
        if msg.command is Command.CONFIRM_INCREASE:
            confirmed = msg.target_rate_bps
        if msg.command is Command.SET_TARGET:
            confirmed = msg.target_rate_bps
        assert ctrl.send_rate_bps <= confirmed * 1.1 + 2
        assert ctrl.target_bps > 0


def test_deterministic_replay():
    series = [1e6, 0.98e6, 1.2e6, 0.4e6, 1e6] * 40
    a, b = RateController(1e6), RateController(1e6)
    assert [a.update(x) for x in series] == [b.update(x) for x in series]


def test_probing_only_after_trigger():
    s = RateControllerState(1e6)
    for x in [1e6, 1e6, 0.5e6] + [1e6] * 30:
        prev = s
        s, _ = step(s, x)
        if s.mode is Mode.PROBING and prev.mode is Mode.MEASURING:
            assert s.windows_since_decrease >= s.config.probation_trigger_windows
        assert s.probe_phase is ProbePhase.IDLE or s.mode is Mode.PROBING
