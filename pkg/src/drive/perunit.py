"""
逆变器 + 感应电机的标幺值物理模型

Clarke 变换、连续时间状态空间 (D, E, F)、精确离散化 (A_ph, B_ph)、电磁转矩。
所有类型构造后不可变，函数均为纯函数。
"""
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm

from src.errors import ConstraintViolation, DiscretizationError, ModelError

SQRT3 = math.sqrt(3.0)

# ξ_αβ = P ξ_abc
CLARKE = (2.0 / 3.0) * np.array([
    [1.0, -0.5, -0.5],
    [0.0, SQRT3 / 2, -SQRT3 / 2],
])
# ξ_abc = P† ξ_αβ
INV_CLARKE = np.array([
    [1.0, 0.0],
    [-0.5, SQRT3 / 2],
    [-0.5, -SQRT3 / 2],
])

SWITCH_LEVELS = (-1, 0, 1)


@dataclass(frozen=True)
class PerUnitParams:
    """表 I 的电机 / 逆变器参数 (标幺值) 及基值"""
    Rs: float = 0.0108
    Rr: float = 0.0091
    Xls: float = 0.1493
    Xlr: float = 0.1104
    Xm: float = 2.3489
    Vdc: float = 1.930
    omega_r: float = 1.0
    Ts: float = 25e-6
    omega_b: float = 2 * math.pi * 50
    # 转速冻结时不参与计算
    Tl: float = 0.0
    J: float = 0.0
    max_state_norm: float = 10.0

    def __post_init__(self):
        values = [self.Rs, self.Rr, self.Xls, self.Xlr, self.Xm, self.Vdc,
                  self.omega_r, self.Ts, self.omega_b]
        if not all(math.isfinite(v) for v in values):
            raise ModelError("❌ 参数必须为有限值")
        if self.Ts <= 0 or self.omega_b <= 0:
            raise ModelError("❌ Ts 与 omega_b 必须为正")
        if self.D <= 0:
            raise ModelError(f"❌ D = Xs·Xr − Xm² 必须为正 (D={self.D:.4g})")
        if self.Rr <= 0 or self.Xr <= 0:
            raise ModelError("❌ 转子时间常数必须为正")
        if self.Rs * self.Xr ** 2 + self.Rr * self.Xm ** 2 <= 0:
            raise ModelError("❌ 定子暂态时间常数必须为正")

    @property
    def Xs(self) -> float:
        return self.Xls + self.Xm

    @property
    def Xr(self) -> float:
        return self.Xlr + self.Xm

    @property
    def D(self) -> float:
        return self.Xs * self.Xr - self.Xm ** 2

    @property
    def tau_s(self) -> float:
        return self.Xr * self.D / (self.Rs * self.Xr ** 2 + self.Rr * self.Xm ** 2)

    @property
    def tau_r(self) -> float:
        return self.Xr / self.Rr

    @property
    def That(self) -> float:
        """标幺化采样周期 Ts·ω_b"""
        return self.Ts * self.omega_b


@dataclass(frozen=True)
class PhysState:
    is_alpha: float = 0.0
    is_beta: float = 0.0
    psi_alpha: float = 0.0
    psi_beta: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array([self.is_alpha, self.is_beta, self.psi_alpha, self.psi_beta])

    @classmethod
    def from_array(cls, x) -> "PhysState":
        x = np.asarray(x, dtype=float).reshape(4)
        return cls(float(x[0]), float(x[1]), float(x[2]), float(x[3]))


@dataclass(frozen=True)
class SwitchPosition:
    """三相开关位置，每相取 {-1, 0, 1}"""
    ua: int = 0
    ub: int = 0
    uc: int = 0

    def __post_init__(self):
        for v in (self.ua, self.ub, self.uc):
            if v not in SWITCH_LEVELS:
                raise ConstraintViolation(f"❌ 非法开关位置 {v} (只允许 -1/0/1)")

    def __iter__(self):
        return iter((self.ua, self.ub, self.uc))

    def as_array(self) -> np.ndarray:
        return np.array([self.ua, self.ub, self.uc], dtype=float)

    @classmethod
    def from_array(cls, u) -> "SwitchPosition":
        a, b, c = (int(round(float(v))) for v in np.asarray(u).reshape(3))
        return cls(a, b, c)


@dataclass(frozen=True)
class ContinuousModel:
    D_mat: np.ndarray
    E_mat: np.ndarray
    F_mat: np.ndarray = field(default_factory=lambda: np.eye(2, 4))


@dataclass(frozen=True)
class DiscreteModel:
    A_ph: np.ndarray
    B_ph: np.ndarray
    C_ph: np.ndarray


# ==========================================
# Clarke 变换
# ==========================================

def clarke(xi_abc):
    """abc -> αβ，支持 (..., 3) 批量输入"""
    return np.asarray(xi_abc, dtype=float) @ CLARKE.T


def inverse_clarke(xi_ab):
    """αβ -> abc，支持 (..., 2) 批量输入"""
    return np.asarray(xi_ab, dtype=float) @ INV_CLARKE.T


def inverter_voltage(u, params: PerUnitParams):
    """v_αβ = (Vdc/2)·P·u"""
    u_arr = u.as_array() if isinstance(u, SwitchPosition) else np.asarray(u, dtype=float)
    return 0.5 * params.Vdc * clarke(u_arr)


# ==========================================
# 状态空间模型
# ==========================================

def build_continuous(params: PerUnitParams) -> ContinuousModel:
    tau_s, tau_r, D, Xm, wr = params.tau_s, params.tau_r, params.D, params.Xm, params.omega_r
    D_mat = np.array([
        [-1.0 / tau_s, 0.0, Xm / (tau_r * D), wr * Xm / D],
        [0.0, -1.0 / tau_s, -wr * Xm / D, Xm / (tau_r * D)],
        [Xm / tau_r, 0.0, -1.0 / tau_r, -wr],
        [0.0, Xm / tau_r, wr, -1.0 / tau_r],
    ])
    if np.linalg.matrix_rank(D_mat) < 4:
        raise ModelError("❌ 连续模型矩阵 D 奇异，无法离散化")
    E_mat = np.zeros((4, 3))
    E_mat[:2, :] = (params.Xr / D) * (params.Vdc / 2) * CLARKE
    F_mat = np.eye(2, 4)
    return ContinuousModel(D_mat=D_mat, E_mat=E_mat, F_mat=F_mat)


def discretize(cm: ContinuousModel, params: PerUnitParams, that=None) -> DiscreteModel:
    """
    零阶保持精确离散化:
        A_ph = exp(D·T̂s),  B_ph = −D⁻¹(I − A_ph)E
    D = 0 时取极限 A_ph = I, B_ph = T̂s·E
    """
    that = params.That if that is None else float(that)
    D_mat = np.asarray(cm.D_mat, dtype=float)
    E_mat = np.asarray(cm.E_mat, dtype=float)
    n = D_mat.shape[0]
    if D_mat.shape != (n, n) or E_mat.shape[0] != n:
        raise ModelError(f"❌ 维度不一致: D{D_mat.shape}, E{E_mat.shape}")

    if not np.any(D_mat):
        return DiscreteModel(A_ph=np.eye(n), B_ph=that * E_mat, C_ph=np.asarray(cm.F_mat, dtype=float))

    if np.linalg.matrix_rank(D_mat) < n:
        raise DiscretizationError("❌ D 奇异，B_ph = −D⁻¹(I−A)E 无定义")

    A_ph = expm(D_mat * that)
    if not np.all(np.isfinite(A_ph)):
        raise DiscretizationError("❌ 矩阵指数不收敛")
    B_ph = -np.linalg.solve(D_mat, (np.eye(n) - A_ph) @ E_mat)
    return DiscreteModel(A_ph=A_ph, B_ph=B_ph, C_ph=np.asarray(cm.F_mat, dtype=float))


def build_discrete(params: PerUnitParams) -> DiscreteModel:
    return discretize(build_continuous(params), params)


# ==========================================
# 转矩 / 被控对象
# ==========================================

def torque(state, params: PerUnitParams):
    """T = (Xm/Xr)(ψα·iβ − ψβ·iα)；state 可为 PhysState 或 (..., 4) 数组"""
    if isinstance(state, PhysState):
        x = state.as_array()
    else:
        x = np.asarray(state, dtype=float)
    cross = x[..., 2] * x[..., 1] - x[..., 3] * x[..., 0]
    out = (params.Xm / params.Xr) * cross
    return float(out) if np.ndim(out) == 0 else out


def step_plant(state, u, dm: DiscreteModel):
    """x_ph(k+1) = A_ph x_ph(k) + B_ph u(k)"""
    x = state.as_array() if isinstance(state, PhysState) else np.asarray(state, dtype=float)
    u_arr = u.as_array() if isinstance(u, SwitchPosition) else np.asarray(u, dtype=float)
    x_next = dm.A_ph @ x + dm.B_ph @ u_arr
    return PhysState.from_array(x_next) if isinstance(state, PhysState) else x_next


def steady_state_flux(i_s: complex, params: PerUnitParams) -> complex:
    """额定电频率 (1 pu) 正弦稳态下的转子磁链相量 ψ = Xm·i / (1 + j·τr·(1 − ωr))"""
    slip = 1.0 - params.omega_r
    return params.Xm * complex(i_s) / complex(1.0, params.tau_r * slip)


def steady_state_voltage(i_s: complex, params: PerUnitParams) -> complex:
    """
    维持正弦稳态电流 i_s 所需的定子电压相量 (由定子方程 di/dt = j·i 反解):
        v = (D/Xr)·[(j + 1/τs)·i − (Xm/D)(1/τr − j·ωr)·ψ]
    """
    i_s = complex(i_s)
    psi = steady_state_flux(i_s, params)
    coupling = (params.Xm / params.D) * complex(1.0 / params.tau_r, -params.omega_r)
    return (params.D / params.Xr) * (complex(1.0 / params.tau_s, 1.0) * i_s - coupling * psi)


def voltage_limit(params: PerUnitParams) -> float:
    """线性调制区半径: 外六边形内切圆 Vdc/√3"""
    return params.Vdc / SQRT3


def rated_torque(params: PerUnitParams, amplitude: float = 1.0) -> float:
    """参考幅值为 amplitude 的正弦稳态转矩 (额定磁链)"""
    i_s = complex(0.0, -amplitude)
    psi = steady_state_flux(i_s, params)
    T = torque(np.array([i_s.real, i_s.imag, psi.real, psi.imag]), params)
    if not T > 0:
        raise ModelError(f"❌ 转差为零或为负 (ωr={params.omega_r})，额定转矩 {T:.4g} 不为正")
    return T


def torque_constant(params: PerUnitParams, amplitude: float = 1.0) -> float:
    """额定磁链下的转矩 / 电流比 k_T，T = k_T·|i_s|"""
    if amplitude <= 0:
        raise ModelError("❌ 参考幅值必须为正")
    return rated_torque(params, amplitude) / amplitude
