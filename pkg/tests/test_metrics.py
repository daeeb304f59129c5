"""
指标: THD、开关频率、调节时间

 Group 1 — THD
   1.  纯正弦 THD ≈ 0
   2.  叠加 10% 五次谐波 -> 10%
   3.  αβ 输入先做反 Clarke
   4.  零电流时 THD 未定义
   5.  采样方波 THD ≈ 48.3%

 Group 2 — 开关频率
   6.  每步一次跳变 -> 1/(12·Ts)
   7.  u_before 计入窗口首拍的跳变

 Group 3 — 调节时间
   8.  一阶衰减 1 -> 0 的调节时间 = τ·ln 20
   9.  持续漂移判为未稳定
  10.  稳态值偏离目标时判为未稳定
  11.  RunMetrics 的派生量
"""
import math

import numpy as np
import pytest

from src.errors import ConfigError
from src.sim.metrics import RunMetrics, compute_fsw, compute_thd, settling_time, thd_single

TS = 25e-6
PERIOD = 800


def _wave(periods, harmonics=()):
    k = np.arange(periods * PERIOD)
    theta = 2 * math.pi * k / PERIOD
    x = np.sin(theta)
    for order, amp in harmonics:
        x = x + amp * np.sin(order * theta)
    return x


# ── Group 1 ──────────────────────────────────────────────────────────

def test_pure_sine():
    assert thd_single(_wave(4), 4) == pytest.approx(0.0, abs=1e-9)


def test_fifth_harmonic():
    assert thd_single(_wave(4, [(5, 0.1)]), 4) == pytest.approx(0.1, rel=1e-9)
    # 直流分量不计入
    assert thd_single(_wave(4, [(5, 0.1)]) + 0.3, 4) == pytest.approx(0.1, rel=1e-9)


def test_sampled_square_wave():
    # 采样点错开半拍，避开过零点上的 sign(0)
    k = np.arange(4 * PERIOD)
    square = np.sign(np.sin(2 * math.pi * (k + 0.5) / PERIOD))
    assert thd_single(square, 4) == pytest.approx(0.4834, abs=1e-3)


def test_alpha_beta_input():
    k = np.arange(4 * PERIOD)
    theta = 2 * math.pi * k / PERIOD
    ab = np.column_stack([np.sin(theta), -np.cos(theta)])
    res = compute_thd(ab, 4)
    assert res.defined
    assert len(res.per_phase) == 3
    assert res.mean == pytest.approx(0.0, abs=1e-7)


def test_zero_current_is_undefined():
    res = compute_thd(np.zeros((4 * PERIOD, 3)), 4)
    assert not res.defined
    assert math.isnan(res.mean)
    with pytest.raises(ConfigError):
        thd_single(_wave(1), 0)


# ── Group 2 ──────────────────────────────────────────────────────────

def test_toggle_every_step():
    u = np.zeros((400, 3))
    u[1::2, 0] = 1.0
    assert compute_fsw(u, TS, u_before=[1.0, 0.0, 0.0]) == pytest.approx(1.0 / (12 * TS))


def test_window_entry_transition_counts():
    u = np.zeros((100, 3))
    assert compute_fsw(u, TS) == 0.0
    assert compute_fsw(u, TS, u_before=[1.0, 1.0, 0.0]) == pytest.approx(2.0 / (12 * 100 * TS))


# ── Group 3 ──────────────────────────────────────────────────────────

def test_first_order_settling():
    tau = 1e-3
    t = np.arange(2000) * TS
    step = 200 * TS
    torque = np.where(t < step, 1.0, np.exp(-(t - step) / tau))
    res = settling_time(t, torque, step, 1.0, 0.0, band=0.05, smoothing=1)
    assert res.settled
    assert res.level == pytest.approx(0.0, abs=1e-3)
    assert res.settling_ms == pytest.approx(tau * math.log(20) * 1e3, abs=0.05)


def test_drift_is_not_settled():
    t = np.arange(1000) * TS
    torque = np.clip((t - 100 * TS) / (900 * TS), 0.0, None)
    res = settling_time(t, torque, 100 * TS, 0.0, 1.0, smoothing=1)
    assert not res.settled
    with pytest.raises(ConfigError):
        settling_time(t, torque, 1.0, 0.0, 1.0)


def test_settling_measured_against_target():
    """停在 0.9 的阶跃响应对目标 1.0 而言没有进入 ±5% 带"""
    t = np.arange(2000) * TS
    step = 200 * TS
    torque = np.where(t < step, 0.0, 0.9)
    res = settling_time(t, torque, step, 0.0, 1.0, smoothing=1)
    assert not res.settled
    assert res.level == pytest.approx(0.9)
    # 同一响应对目标 0.9 立即稳定
    assert settling_time(t, torque, step, 0.0, 0.9, smoothing=1).settling_ms == 0.0


def test_run_metrics_derived():
    m = RunMetrics(fsw_measured=300.0, fsw_filter_final=309.0, max_delta_u=1)
    assert m.shoot_through_free
    assert m.filter_consistency == pytest.approx(0.03)
    assert not RunMetrics(max_delta_u=2).shoot_through_free
    assert any(line.startswith("fsw_measured_hz=300.000") for line in m.as_lines())
