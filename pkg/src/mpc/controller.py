"""
在线控制器 (ComputeMPCinput)

内部记忆 x_osc(k−1)、x_sw(k−1)、p(k−1)、u_sw(k−1)；每拍:
    1. 转矩指令变化则重置振荡器，否则旋转一步
    2. x_sw ← A_sw x_sw + B_sw p(k−1)
    3. 组装 x0，穷举求解，更新记忆
同一实例不允许并发调用 step。
"""
from dataclasses import dataclass

import numpy as np

from src.errors import ConfigError
from src.utils import debug
from src.drive.perunit import PerUnitParams, SwitchPosition, build_discrete, torque_constant
from src.drive.augmentation import (
    AugmentedModel, OscState, assemble_augmented, reset_oscillator, step_oscillator,
)
from src.mpc.condensed import (
    CondensedQP, ControlDecision, build_condensed, build_condensed_dmpc, exhaustive_solve,
)


@dataclass(frozen=True)
class ReferenceSettings:
    """转矩指令 -> 参考幅值: k_T 由磁链模型导出；max_torque 为标幺转矩"""
    torque_constant: float = 1.0
    max_torque: float = 1.0

    @classmethod
    def rated(cls, params: PerUnitParams, ref_amplitude=1.0, max_torque_ratio=1.0) -> "ReferenceSettings":
        """额定幅值 ref_amplitude 对应额定转矩，max_torque_ratio 以额定转矩为单位"""
        k_T = torque_constant(params, ref_amplitude)
        return cls(torque_constant=k_T, max_torque=max_torque_ratio * k_T * ref_amplitude)


@dataclass(eq=False)
class ControllerMemory:
    osc: OscState
    x_sw: np.ndarray
    p: np.ndarray
    u_prev: SwitchPosition
    T_prev: float | None = None


@dataclass(eq=False)
class StepRecord:
    """回放用: 控制器每拍看到的 x0 与所选候选"""
    x0: np.ndarray
    u_prev: tuple
    index: int
    u_sw: tuple


class MpcController:
    def __init__(self, model: AugmentedModel, qp: CondensedQP, params: PerUnitParams,
                 reference: ReferenceSettings | None = None, initial_filter=1.0,
                 phase=0.0, u_prev=SwitchPosition(), record=False):
        self.model = model
        self.qp = qp
        self.params = params
        self.reference = ReferenceSettings.rated(params) if reference is None else reference
        self.record = record
        self.history = []
        # 记忆表示第 −1 拍，首拍旋转后相位恰为 phase
        self.memory = ControllerMemory(
            osc=OscState.at(0.0, phase - params.That),
            x_sw=np.array([initial_filter, initial_filter, 1.0]),
            p=np.zeros(3),
            u_prev=u_prev,
        )

    @property
    def kind(self) -> str:
        return self.qp.kind

    @property
    def label(self) -> str:
        return f"{self.qp.kind}-N{self.qp.N}"

    def _update_reference(self, T_star) -> OscState:
        mem = self.memory
        osc = step_oscillator(mem.osc, self.params)
        if mem.T_prev is None or T_star != mem.T_prev:
            ref = self.reference
            osc = reset_oscillator(T_star, osc, self.params, ref.torque_constant, ref.max_torque)
            debug("MPC", f"振荡器重置: T*={T_star}, |i*|={osc.amplitude:.4f}")
        return osc

    def _update_filter(self) -> np.ndarray:
        mem = self.memory
        return self.model.A_sw @ mem.x_sw + self.model.B_sw @ mem.p

    def solve(self, x0, u_prev) -> ControlDecision:
        return exhaustive_solve(self.qp, x0, u_prev)

    def step(self, T_star, x_ph) -> ControlDecision:
        mem = self.memory
        osc = self._update_reference(T_star)
        x_sw = self._update_filter()
        x0 = np.concatenate([np.asarray(x_ph, dtype=float).reshape(4), osc.as_array(), x_sw, mem.u_prev.as_array()])

        decision = self.solve(x0, mem.u_prev)
        if self.record:
            self.history.append(StepRecord(x0=x0, u_prev=tuple(mem.u_prev), index=decision.index,
                                           u_sw=tuple(decision.u_sw)))

        self.memory = ControllerMemory(osc=osc, x_sw=x_sw, p=np.asarray(decision.p, dtype=float),
                                       u_prev=decision.u_sw, T_prev=T_star)
        return decision

    def controller_step(self, T_star, x_ph) -> SwitchPosition:
        return self.step(T_star, x_ph).u_sw

    @property
    def f_hat(self) -> float:
        """当前开关频率估计 (Hz)"""
        return float(self.memory.x_sw[1] * self.model.fsw_target)

    @property
    def reference_current(self) -> np.ndarray:
        return self.memory.osc.as_array()


# ==========================================
# 工厂
# ==========================================

def model_from_config(cfg) -> tuple:
    """RunConfig -> (PerUnitParams, AugmentedModel)"""
    params = cfg.machine()
    dm = build_discrete(params)
    model = assemble_augmented(dm, params, cfg.gamma, cfg.delta, cfg.fsw_target, cfg.r1, cfg.r2)
    return params, model


def build_qp(cfg, model: AugmentedModel, tail=None) -> CondensedQP:
    if cfg.controller == "dmpc":
        return build_condensed_dmpc(model, cfg.horizon, cfg.lambda_u)
    if tail is None:
        raise ConfigError("❌ ADP 控制器需要尾代价 (--tail 或先运行 train)")
    return build_condensed(model, tail, cfg.horizon)


def build_controller(cfg, tail=None, record=False, model=None, params=None) -> MpcController:
    if model is None or params is None:
        params, model = model_from_config(cfg)
    qp = build_qp(cfg, model, tail)
    reference = ReferenceSettings.rated(params, cfg.ref_amplitude, cfg.max_torque)
    kwargs = dict(reference=reference, initial_filter=cfg.initial_filter, phase=cfg.reference_phase, record=record)
    if cfg.profile == "fixed":
        from src.mpc.fixedpoint import FixedPointController, formats_from_config
        return FixedPointController(model, qp, params, formats=formats_from_config(cfg),
                                    renorm_period=cfg.renorm_period, **kwargs)
    return MpcController(model, qp, params, **kwargs)
