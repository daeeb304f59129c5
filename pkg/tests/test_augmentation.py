"""
12 维增广模型

 Group 1 — 结构
   1.  A、B、C 维度与分块
   2.  常数位保持为 1，u_prev 记忆上一拍开关位置
   3.  跟踪与频率误差为零时阶段代价为零
   4.  非法 γ / 维度被拒绝

 Group 2 — 振荡器
   5.  800 步恰好转过一周，幅值不变
   6.  转矩指令变化时按比例重置幅值，相位不变
   7.  转矩指令超限报错，按转矩常数换算幅值

 Group 3 — 开关频率滤波器
   8.  恒定 p 下 f̂ 收敛到 Σp/(12·Ts)
   9.  归一化后的 B_sw = B_flt / f*
  10.  滑动窗口开关频率
  11.  周期翻转序列下滤波器与滑动窗口一致 (250 Hz)
  12.  直通跳变被拒绝，可行开关集合的大小与顺序

 Group 4 — 状态打包
  13.  augmented_vector / split_augmented 互逆，x_sw 末位必须为 1
"""
import math

import numpy as np
import pytest

from src.errors import ConfigError, ConstraintViolation, ModelError
from src.drive.perunit import PhysState, SwitchPosition
from src.drive.augmentation import (
    CONST, N_INPUT, N_STATE, UPR, AugmentedState, FilterState, OscState,
    assemble_augmented, augmented_vector, feasible_inputs, filter_matrices,
    fir_switching_frequency, input_vector, p_from_inputs, reset_oscillator,
    split_augmented, stage_cost, step_filter, step_oscillator, torque_to_amplitude,
)


# ── Group 1 ──────────────────────────────────────────────────────────

def test_block_structure(model, dm):
    assert model.A.shape == (N_STATE, N_STATE)
    assert model.B.shape == (N_STATE, N_INPUT)
    assert model.C.shape == (3, N_STATE)
    assert np.allclose(model.A[:4, :4], dm.A_ph)
    assert np.allclose(model.B[:4, :3], dm.B_ph)
    assert np.allclose(model.A[UPR], 0.0)
    assert model.C[2, 7] == pytest.approx(2.0)
    assert model.C[2, CONST] == pytest.approx(-2.0)


def test_constant_and_memory_propagate(model, x0):
    u = input_vector((1, 0, -1), (1, 0, 1))
    x1 = model.A @ x0 + model.B @ u
    assert x1[CONST] == pytest.approx(1.0)
    assert np.allclose(x1[UPR], [1, 0, -1])


def test_stage_cost_zero_on_target(model):
    x = np.zeros(N_STATE)
    x[0:2] = [0.3, -0.8]
    x[4:6] = [0.3, -0.8]
    x[6:9] = [1.0, 1.0, 1.0]
    assert stage_cost(model, x) == pytest.approx(0.0)
    x[7] = 1.5
    assert stage_cost(model, x) == pytest.approx(model.delta * 0.25)
    assert stage_cost(model, np.stack([x, x])).shape == (2,)


def test_invalid_assembly(dm, params):
    with pytest.raises(ConfigError):
        assemble_augmented(dm, params, gamma=1.0, delta=4.0, fsw_target=300.0)
    with pytest.raises(ConfigError):
        assemble_augmented(dm, params, gamma=0.95, delta=-1.0, fsw_target=300.0)
    bad = type(dm)(A_ph=np.eye(3), B_ph=dm.B_ph, C_ph=dm.C_ph)
    with pytest.raises(ModelError):
        assemble_augmented(bad, params, gamma=0.95, delta=4.0, fsw_target=300.0)


# ── Group 2 ──────────────────────────────────────────────────────────

def test_oscillator_full_period(params):
    osc = OscState.at(0.7, 0.2)
    start = osc.as_array()
    for _ in range(800):
        osc = step_oscillator(osc, params)
    assert np.allclose(osc.as_array(), start, atol=1e-9)
    assert osc.amplitude == pytest.approx(0.7)
    assert osc.phase == pytest.approx(0.2 + 2 * math.pi)


def test_oscillator_reset_keeps_phase(params):
    osc = OscState.at(1.0, 1.1)
    half = reset_oscillator(0.5, osc, params)
    assert half.amplitude == pytest.approx(0.5)
    assert half.phase == osc.phase
    assert np.allclose(half.as_array(), 0.5 * osc.as_array())
    assert reset_oscillator(1.0, osc, params) is osc
    # 零转矩时相位仍被保留，之后可以恢复
    zero = reset_oscillator(0.0, osc, params)
    assert zero.amplitude == 0.0
    assert np.allclose(reset_oscillator(1.0, zero, params).as_array(), osc.as_array())


def test_torque_out_of_range():
    with pytest.raises(ConfigError):
        torque_to_amplitude(1.5)
    assert torque_to_amplitude(-0.5) == pytest.approx(-0.5)
    # 以转矩常数换算幅值，k_T 非正被拒绝
    assert torque_to_amplitude(0.365, torque_constant=0.73) == pytest.approx(0.5)
    assert torque_to_amplitude(0.73, torque_constant=0.73, max_torque=0.73) == pytest.approx(1.0)
    with pytest.raises(ConfigError):
        torque_to_amplitude(0.8, torque_constant=0.73, max_torque=0.73)
    with pytest.raises(ConfigError):
        torque_to_amplitude(0.1, torque_constant=0.0)


# ── Group 3 ──────────────────────────────────────────────────────────

def test_filter_steady_state(params):
    flt = FilterState()
    p = [0.03, 0.03, 0.03]
    for _ in range(20000):
        flt = step_filter(flt, p, params)
    assert flt.f_hat == pytest.approx(0.09 / (12 * params.Ts), rel=1e-3)


def test_normalized_filter(model, params):
    A_flt, B_flt = filter_matrices(params)
    assert np.allclose(model.A_sw[:2, :2], A_flt)
    assert np.allclose(model.B_sw[:2], B_flt / 300.0)
    assert np.allclose(model.B_sw[2], 0.0)
    with pytest.raises(ConfigError):
        filter_matrices(params, r1=1.0)


def test_fir_switching_frequency(params):
    u = np.zeros((101, 3))
    u[1::2, 0] = 1.0
    f = fir_switching_frequency(u, 50, params.Ts)
    assert len(f) == 51
    assert np.allclose(f, 1.0 / (12 * params.Ts))
    assert fir_switching_frequency(u[:10], 50, params.Ts).size == 0


def test_filter_tracks_window_frequency(params):
    """每相每 40 步翻转一次 (错开相位)，对应 250 Hz 器件开关频率"""
    steps = 40000
    k = np.arange(steps + 1)
    u = np.stack([((k + off) // 40) % 2 for off in (0, 13, 27)], axis=1).astype(float)
    flt = FilterState()
    for j in range(1, steps + 1):
        flt = step_filter(flt, p_from_inputs(u[j], u[j - 1]), params)
    f_fir = fir_switching_frequency(u, 8000, params.Ts)
    assert f_fir[-1] == pytest.approx(250.0, rel=1e-2)
    assert flt.f_hat == pytest.approx(250.0, rel=0.05)
    assert flt.f_hat == pytest.approx(f_fir[-1], rel=0.05)


def test_switching_rules():
    assert np.allclose(p_from_inputs((1, 0, -1), (0, 0, 0)), [1, 0, 1])
    with pytest.raises(ConstraintViolation):
        p_from_inputs((1, 0, 0), (-1, 0, 0))
    assert len(feasible_inputs((0, 0, 0))) == 27
    assert len(feasible_inputs((1, 1, 1))) == 8
    assert len(feasible_inputs((1, 0, -1))) == 12
    first, p = feasible_inputs((1, 1, 1))[0]
    assert tuple(first) == (0, 0, 0)
    assert np.allclose(p, [1, 1, 1])


# ── Group 4 ──────────────────────────────────────────────────────────

def test_pack_unpack(x0):
    state = split_augmented(x0)
    assert isinstance(state.phys, PhysState)
    assert np.allclose(augmented_vector(state), x0)
    with pytest.raises(ModelError):
        AugmentedState(PhysState(), OscState(), (1.0, 1.0, 0.0), SwitchPosition())
