"""
12 维增广模型

    x = [x_ph(4), x_osc(2), x_sw(3), u_sw(k-1)(3)]
    u = [u_sw(3), p(3)]

x_osc 为参考电流振荡器，x_sw = [x_flt/f*; 1] 为归一化后的开关频率 IIR 估计器 (末位常数 1)，
最后三维记忆上一拍的开关位置。阶段代价 ℓ(x) = ‖Cx‖²。
"""
import math
import itertools
from dataclasses import dataclass

import numpy as np
from scipy.linalg import block_diag

from src.errors import ConfigError, ConstraintViolation, ModelError
from src.drive.perunit import DiscreteModel, PerUnitParams, PhysState, SwitchPosition, SWITCH_LEVELS

# === 增广状态下标 ===
N_STATE = 12
N_INPUT = 6
PHYS = slice(0, 4)
OSC = slice(4, 6)
SW = slice(6, 9)
UPR = slice(9, 12)
FLT = slice(6, 8)
CONST = 8
# 连续取值的自由坐标 (物理量、振荡器、滤波器)
FREE = slice(0, 8)


def rotation(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s], [s, c]])


@dataclass(frozen=True)
class OscState:
    """参考电流 i*_αβ = a·[sin θ, −cos θ]；θ 单独保存，幅值为 0 时相位仍连续"""
    x_osc: tuple = (0.0, 0.0)
    phase: float = 0.0

    @property
    def amplitude(self) -> float:
        return math.hypot(*self.x_osc)

    def as_array(self) -> np.ndarray:
        return np.array(self.x_osc, dtype=float)

    @classmethod
    def at(cls, amplitude: float, phase: float) -> "OscState":
        return cls((amplitude * math.sin(phase), -amplitude * math.cos(phase)), phase)


@dataclass(frozen=True)
class FilterState:
    x_flt: tuple = (0.0, 0.0)

    @property
    def f_hat(self) -> float:
        return float(self.x_flt[1])

    def as_array(self) -> np.ndarray:
        return np.array(self.x_flt, dtype=float)


@dataclass(frozen=True)
class AugmentedState:
    phys: PhysState
    osc: OscState
    sw: tuple
    u_prev: SwitchPosition

    def __post_init__(self):
        if len(self.sw) != 3 or self.sw[2] != 1.0:
            raise ModelError("❌ x_sw 末位必须恒为 1")


@dataclass(frozen=True, eq=False)
class AugmentedModel:
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    G: np.ndarray
    T: np.ndarray
    W: np.ndarray
    gamma: float
    delta: float
    fsw_target: float
    # 子模型，供控制器内部的 OSC / FLT 更新使用
    A_osc: np.ndarray
    A_sw: np.ndarray
    B_sw: np.ndarray
    r1: float = 800.0
    r2: float = 800.0

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]


def augmented_vector(state: AugmentedState) -> np.ndarray:
    return np.concatenate([
        state.phys.as_array(),
        state.osc.as_array(),
        np.asarray(state.sw, dtype=float),
        state.u_prev.as_array(),
    ])


def split_augmented(x, phase: float = 0.0) -> AugmentedState:
    x = np.asarray(x, dtype=float).reshape(N_STATE)
    return AugmentedState(
        phys=PhysState.from_array(x[PHYS]),
        osc=OscState(tuple(float(v) for v in x[OSC]), phase),
        sw=tuple(float(v) for v in x[SW]),
        u_prev=SwitchPosition.from_array(x[UPR]),
    )


# ==========================================
# 振荡器 (OSC)
# ==========================================

def step_oscillator(osc: OscState, params: PerUnitParams) -> OscState:
    """x_osc ← R(T̂s)·x_osc，相位同步前进 T̂s"""
    x_next = rotation(params.That) @ osc.as_array()
    return OscState((float(x_next[0]), float(x_next[1])), osc.phase + params.That)


def torque_to_amplitude(T_star, torque_constant=1.0, max_torque=1.0):
    """额定磁链下 T = k_T·|i_s|，故 |i*| = T*/k_T；T* 与 max_torque 均为标幺转矩"""
    if not math.isfinite(T_star) or abs(T_star) > max_torque * (1.0 + 1e-12):
        raise ConfigError(f"❌ 转矩指令 {T_star} 超出范围 ±{max_torque}")
    if torque_constant <= 0:
        raise ConfigError(f"❌ 转矩常数必须为正 (k_T={torque_constant})")
    return T_star / torque_constant


def reset_oscillator(T_star, osc: OscState, params: PerUnitParams,
                     torque_constant=1.0, max_torque=1.0) -> OscState:
    """
    按转矩方程重置参考幅值，相位保持不变。负转矩对应反相参考。
    """
    amplitude = torque_to_amplitude(T_star, torque_constant, max_torque)
    current = OscState.at(amplitude, osc.phase)
    if np.allclose(current.x_osc, osc.x_osc, rtol=0.0, atol=1e-12):
        return osc
    return current


# ==========================================
# 开关频率滤波器 (FLT)
# ==========================================

def p_from_inputs(u_now, u_prev) -> np.ndarray:
    """p_s = |u_s(k) − u_s(k−1)|，禁止直通跳变"""
    diff = np.abs(np.asarray(list(u_now), dtype=float) - np.asarray(list(u_prev), dtype=float))
    if np.any(diff > 1):
        raise ConstraintViolation(f"❌ 直通跳变: {tuple(u_prev)} -> {tuple(u_now)}")
    return diff


def filter_matrices(params: PerUnitParams, r1=800.0, r2=800.0):
    if r1 <= 1 or r2 <= 1:
        raise ConfigError("❌ 滤波器参数 r1, r2 必须大于 1")
    a1 = 1.0 - 1.0 / r1
    a2 = 1.0 - 1.0 / r2
    A_flt = np.array([[a1, 0.0], [1.0 - a1, a2]])
    B_flt = (1.0 - a2) / (12.0 * params.Ts) * np.array([[1.0, 1.0, 1.0], [0.0, 0.0, 0.0]])
    return A_flt, B_flt


def step_filter(flt: FilterState, p, params: PerUnitParams, r1=800.0, r2=800.0) -> FilterState:
    A_flt, B_flt = filter_matrices(params, r1, r2)
    x_next = A_flt @ flt.as_array() + B_flt @ np.asarray(p, dtype=float)
    return FilterState((float(x_next[0]), float(x_next[1])))


def switching_matrices(params: PerUnitParams, r1, r2, fsw_target):
    """归一化后的滤波器: x_sw = [x_flt/f*; 1]"""
    A_flt, B_flt = filter_matrices(params, r1, r2)
    A_sw = block_diag(A_flt, 1.0)
    B_sw = np.vstack([B_flt / fsw_target, np.zeros((1, 3))])
    return A_sw, B_sw


def fir_switching_frequency(u_history, M, Ts):
    """
    滑动窗口开关频率: 最近 M 步的 Σ‖Δu‖₁ / (12·M·Ts)。
    返回长度 len(u_history) − M 的数组，第 j 个元素对应窗口 [j+1, j+M]。
    """
    u = np.asarray(u_history, dtype=float)
    changes = np.abs(np.diff(u, axis=0)).sum(axis=1)
    if len(changes) < M:
        return np.zeros(0)
    csum = np.concatenate([[0.0], np.cumsum(changes)])
    return (csum[M:] - csum[:-M]) / (12.0 * M * Ts)


# ==========================================
# 增广系统
# ==========================================

def selectors():
    G = np.hstack([np.eye(3), np.zeros((3, 3))])
    T = np.hstack([np.zeros((3, 3)), np.eye(3)])
    W = np.zeros((3, N_STATE))
    W[:, UPR] = np.eye(3)
    return G, T, W


def assemble_augmented(dm: DiscreteModel, params: PerUnitParams, gamma, delta, fsw_target,
                       r1=800.0, r2=800.0) -> AugmentedModel:
    if dm.A_ph.shape != (4, 4) or dm.B_ph.shape != (4, 3) or dm.C_ph.shape != (2, 4):
        raise ModelError(
            f"❌ 物理模型维度错误: A{dm.A_ph.shape}, B{dm.B_ph.shape}, C{dm.C_ph.shape}"
        )
    if not 0 < gamma < 1:
        raise ConfigError(f"❌ 折扣因子 γ 必须在 (0,1) 内: {gamma}")
    if delta < 0 or fsw_target <= 0:
        raise ConfigError("❌ δ 必须非负，f* 必须为正")

    G, T, W = selectors()
    A_osc = rotation(params.That)
    A_sw, B_sw = switching_matrices(params, r1, r2, fsw_target)

    A = block_diag(dm.A_ph, A_osc, A_sw, np.zeros((3, 3)))
    B = np.zeros((N_STATE, N_INPUT))
    B[PHYS] = dm.B_ph @ G
    B[SW] = B_sw @ T
    B[UPR] = G

    C = np.zeros((3, N_STATE))
    C[0:2, PHYS] = dm.C_ph
    C[0:2, OSC] = -np.eye(2)
    # e_sw = f̂/f* − 1
    C[2, 7] = math.sqrt(delta)
    C[2, CONST] = -math.sqrt(delta)

    return AugmentedModel(A=A, B=B, C=C, G=G, T=T, W=W, gamma=float(gamma), delta=float(delta),
                          fsw_target=float(fsw_target), A_osc=A_osc, A_sw=A_sw, B_sw=B_sw,
                          r1=float(r1), r2=float(r2))


def stage_cost(model: AugmentedModel, x):
    """ℓ(x) = ‖Cx‖²，x 可为 (..., 12)"""
    e = np.asarray(x, dtype=float) @ model.C.T
    return np.sum(e * e, axis=-1)


def input_vector(u_sw, p) -> np.ndarray:
    return np.concatenate([np.asarray(list(u_sw), dtype=float), np.asarray(p, dtype=float)])


def feasible_inputs(u_prev):
    """所有满足 |Δu| ≤ 1 的开关位置，按 a、b、c 字典序 (-1 < 0 < 1) 排列"""
    prev = tuple(u_prev)
    options = [[v for v in SWITCH_LEVELS if abs(v - pv) <= 1] for pv in prev]
    pairs = []
    for combo in itertools.product(*options):
        u_sw = SwitchPosition(*combo)
        pairs.append((u_sw, p_from_inputs(u_sw, prev)))
    return pairs
