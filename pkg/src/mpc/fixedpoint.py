# fixedpoint.py
#
# 控制器定点运算的逐位仿真: 输入 Q(4,0)，状态 Q(2,22)，系数 / 代价 Q(12,22)。
# 全部为 int64 尾数运算，舍入为就近偶数，溢出饱和 (不回绕) 并计数。

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from src.errors import ConfigError
from src.drive.perunit import SwitchPosition
from src.drive.augmentation import OscState
from src.mpc.condensed import ControlDecision, select_minimum
from src.mpc.controller import MpcController


# ---------------------------
# 定点格式与量化
# ---------------------------

@dataclass(frozen=True)
class FixedFormat:
    int_bits: int       # 含符号位
    frac_bits: int
    signed: bool = True

    def __post_init__(self):
        if self.int_bits < 1 or self.frac_bits < 0 or self.word_length > 64:
            raise ConfigError(f"❌ 非法定点格式 Q({self.int_bits},{self.frac_bits})")

    @property
    def word_length(self) -> int:
        return self.int_bits + self.frac_bits

    @property
    def scale(self) -> int:
        return 1 << self.frac_bits

    @property
    def min_int(self) -> int:
        return -(1 << (self.word_length - 1)) if self.signed else 0

    @property
    def max_int(self) -> int:
        return (1 << (self.word_length - 1)) - 1 if self.signed else (1 << self.word_length) - 1

    @property
    def max_value(self) -> float:
        return self.max_int / self.scale

    def __str__(self):
        return f"Q({self.int_bits},{self.frac_bits})"


@dataclass(frozen=True)
class FixedScalar:
    mantissa: int
    fmt: FixedFormat

    @property
    def value(self) -> float:
        return self.mantissa / self.fmt.scale


@dataclass
class QuantizationAudit:
    saturations: dict = field(default_factory=dict)
    max_state_error: float = 0.0
    osc_drift: list = field(default_factory=list)
    steps: int = 0

    def count(self, name, n):
        if n:
            self.saturations[name] = self.saturations.get(name, 0) + int(n)

    @property
    def total_saturations(self) -> int:
        return sum(self.saturations.values())

    def report(self, formats: "FixedFormats") -> str:
        lines = [
            "# quantization audit",
            f"input_format={formats.input}",
            f"state_format={formats.state}",
            f"coeff_format={formats.coeff}",
            f"cost_format={formats.cost}",
            f"steps={self.steps}",
            f"saturations_total={self.total_saturations}",
        ]
        for name in sorted(self.saturations):
            lines.append(f"saturations_{name}={self.saturations[name]}")
        lines.append(f"max_state_error={self.max_state_error:.6e}")
        drift = max((abs(d) for d in self.osc_drift), default=0.0)
        lines.append(f"osc_renormalizations={len(self.osc_drift)}")
        lines.append(f"osc_max_rel_drift={drift:.6e}")
        return "\n".join(lines) + "\n"


def _saturate(val: np.ndarray, fmt: FixedFormat, audit: QuantizationAudit | None, name: str):
    clipped = np.clip(val, fmt.min_int, fmt.max_int)
    if audit is not None:
        audit.count(name, np.count_nonzero(clipped != val))
    return clipped


def quantize_array(x, fmt: FixedFormat, audit: QuantizationAudit | None = None, name="value") -> np.ndarray:
    """就近偶数舍入 (np.rint) + 饱和"""
    x = np.asarray(x, dtype=float)
    scaled = np.rint(x * fmt.scale)
    # 先在浮点域限幅，避免转换 int64 时溢出
    limited = np.clip(scaled, float(fmt.min_int), float(fmt.max_int))
    if audit is not None:
        audit.count(name, np.count_nonzero(limited != scaled))
    return limited.astype(np.int64)


def quantize(x: float, fmt: FixedFormat, audit: QuantizationAudit | None = None) -> FixedScalar:
    return FixedScalar(int(quantize_array(x, fmt, audit)), fmt)


def dequantize(q, fmt: FixedFormat) -> np.ndarray:
    return np.asarray(q, dtype=np.int64).astype(float) / fmt.scale


def round_shift(v, shift: int) -> np.ndarray:
    """整数右移 shift 位，就近偶数舍入；shift < 0 时左移"""
    v = np.asarray(v, dtype=np.int64)
    if shift <= 0:
        return v << (-shift)
    q = v >> shift
    rem = v - (q << shift)
    half = np.int64(1) << (shift - 1)
    up = (rem > half) | ((rem == half) & ((q & 1) == 1))
    return q + up.astype(np.int64)


@dataclass(frozen=True)
class FixedFormats:
    input: FixedFormat = FixedFormat(4, 0)
    state: FixedFormat = FixedFormat(2, 22)
    coeff: FixedFormat = FixedFormat(12, 22)
    cost: FixedFormat = FixedFormat(12, 22)


def formats_from_config(cfg) -> FixedFormats:
    return FixedFormats(
        input=FixedFormat(*cfg.input_format),
        state=FixedFormat(*cfg.state_format),
        coeff=FixedFormat(*cfg.coeff_format),
        cost=FixedFormat(*cfg.cost_format),
    )


# ---------------------------
# 定点控制器
# ---------------------------

class FixedPointController(MpcController):
    """
    与浮点控制器流程相同，但 OSC / FLT 递推与代价计算全部在整数尾数上完成。
    代价评估为相互独立的函数求值，舍入误差不随时间累积；OSC 与 FLT 的递推会累积，
    振荡器幅值每 renorm_period 拍重新归一化一次。
    """

    def __init__(self, model, qp, params, formats: FixedFormats = FixedFormats(), renorm_period=800, **kwargs):
        super().__init__(model, qp, params, **kwargs)
        self.formats = formats
        self.renorm_period = int(renorm_period)
        self.audit = QuantizationAudit()
        fm = formats
        a = self.audit

        # 系数量化一次
        self.A_osc_m = quantize_array(model.A_osc, fm.coeff, a, "coeff")
        self.A_sw_m = quantize_array(model.A_sw, fm.coeff, a, "coeff")
        self.B_sw_m = quantize_array(model.B_sw, fm.coeff, a, "coeff")
        self.F_x_m = quantize_array(qp.F_x, fm.coeff, a, "coeff")
        self.f_c_m = quantize_array(qp.f_c, fm.cost, a, "cost")
        self.Q_m = quantize_array(qp.Q, fm.coeff, a, "coeff")
        self.J_ub = fm.cost.max_int
        self._quad_cache = {}

        mem = self.memory
        self.x_osc_m = quantize_array(mem.osc.as_array(), fm.state, a, "state")
        self.x_sw_m = quantize_array(mem.x_sw, fm.state, a, "state")
        self._amplitude = 0.0
        self._since_renorm = 0

    @property
    def label(self) -> str:
        return f"{super().label}-fixed"

    # --- 代价 ---
    def _quad(self, u_prev):
        """UᵀQU 的整数值 (代价格式)，只依赖 u_prev"""
        key = tuple(int(v) for v in u_prev)
        if key not in self._quad_cache:
            cand = self.qp.candidates(key)
            U = np.rint(cand.U).astype(np.int64)
            raw = np.einsum("ki,ij,kj->k", U, self.Q_m, U)
            quad = round_shift(raw, self.formats.coeff.frac_bits - self.formats.cost.frac_bits)
            self._quad_cache[key] = (U, cand.feasible, _saturate(quad, self.formats.cost, self.audit, "cost"))
        return self._quad_cache[key]

    def candidate_costs(self, x0_m: np.ndarray, u_prev):
        """返回 (全部候选的代价尾数, 可行掩码)"""
        fm = self.formats
        U, feasible, quad = self._quad(u_prev)
        shift = fm.coeff.frac_bits + fm.state.frac_bits - fm.cost.frac_bits
        f_m = round_shift(self.F_x_m @ x0_m, shift) + self.f_c_m
        f_m = _saturate(f_m, fm.cost, self.audit, "cost")
        J = quad + 2 * (U @ f_m)
        J = _saturate(J, fm.cost, self.audit, "cost")
        return np.where(feasible, J, self.J_ub), feasible

    def reference_costs(self, x0_m: np.ndarray, u_prev) -> np.ndarray:
        """用反量化后的系数和状态在浮点域计算同一代价，作为误差界的参照"""
        fm = self.formats
        U, feasible, _ = self._quad(u_prev)
        Q = dequantize(self.Q_m, fm.coeff)
        f = dequantize(self.F_x_m, fm.coeff) @ dequantize(x0_m, fm.state) + dequantize(self.f_c_m, fm.cost)
        Uf = U.astype(float)
        return np.einsum("ki,ij,kj->k", Uf, Q, Uf) + 2.0 * (Uf @ f)

    def quantize_state(self, x0) -> np.ndarray:
        fm = self.formats
        x0 = np.asarray(x0, dtype=float)
        x0_m = quantize_array(x0, fm.state, self.audit, "state")
        err = np.abs(dequantize(x0_m, fm.state) - x0)
        in_range = np.abs(x0) <= fm.state.max_value
        if np.any(in_range):
            self.audit.max_state_error = max(self.audit.max_state_error, float(err[in_range].max()))
        return x0_m

    def solve_quantized(self, x0_m: np.ndarray, u_prev) -> ControlDecision:
        J, feasible = self.candidate_costs(x0_m, u_prev)
        i_min = select_minimum(J)
        u0 = self.qp.candidates(tuple(int(v) for v in u_prev)).U[i_min, :6]
        return ControlDecision(
            u_sw=SwitchPosition.from_array(u0[:3]),
            p=u0[3:].copy(),
            J_min=float(dequantize(J[i_min], self.formats.cost)),
            candidates_evaluated=len(J),
            feasible_count=int(feasible.sum()),
            index=i_min,
        )

    def solve(self, x0, u_prev) -> ControlDecision:
        return self.solve_quantized(self.quantize_state(x0), u_prev)

    # --- OSC / FLT ---
    def _update_reference(self, T_star) -> OscState:
        fm, mem = self.formats, self.memory
        phase = mem.osc.phase + self.params.That
        if mem.T_prev is None or T_star != mem.T_prev:
            osc = super()._update_reference(T_star)
            self._amplitude = osc.amplitude
            self.x_osc_m = quantize_array(osc.as_array(), fm.state, self.audit, "state")
            self._since_renorm = 0
        else:
            acc = self.A_osc_m @ self.x_osc_m
            self.x_osc_m = _saturate(round_shift(acc, fm.coeff.frac_bits), fm.state, self.audit, "state")
            self._since_renorm += 1
            if self._since_renorm >= self.renorm_period:
                self._renormalize()
        x = dequantize(self.x_osc_m, fm.state)
        return OscState((float(x[0]), float(x[1])), phase)

    def _renormalize(self):
        fm = self.formats
        x = dequantize(self.x_osc_m, fm.state)
        amp = math.hypot(x[0], x[1])
        if self._amplitude > 0 and amp > 0:
            self.audit.osc_drift.append(amp / self._amplitude - 1.0)
            self.x_osc_m = quantize_array(x * (self._amplitude / amp), fm.state, self.audit, "state")
        self._since_renorm = 0

    def _update_filter(self) -> np.ndarray:
        fm, mem = self.formats, self.memory
        p_m = quantize_array(mem.p, fm.input, self.audit, "input")
        acc = self.A_sw_m @ self.x_sw_m + ((self.B_sw_m @ p_m) << (fm.state.frac_bits - fm.input.frac_bits))
        self.x_sw_m = _saturate(round_shift(acc, fm.coeff.frac_bits), fm.state, self.audit, "state")
        return dequantize(self.x_sw_m, fm.state)

    def step(self, T_star, x_ph) -> ControlDecision:
        self.audit.steps += 1
        return super().step(T_star, x_ph)


# ---------------------------
# 回放对比
# ---------------------------

@dataclass
class ReplayReport:
    n_steps: int
    matches: int
    mismatched_steps: list

    @property
    def match_fraction(self) -> float:
        return self.matches / self.n_steps if self.n_steps else 1.0


def replay_decisions(fixed: FixedPointController, records) -> ReplayReport:
    """
    按浮点控制器记录的 x0 逐拍求解 (内部记忆与浮点同步)，统计决策一致的比例
    """
    matches, mismatched = 0, []
    for k, rec in enumerate(records):
        decision = fixed.solve(rec.x0, rec.u_prev)
        if tuple(decision.u_sw) == tuple(rec.u_sw):
            matches += 1
        else:
            mismatched.append(k)
    return ReplayReport(n_steps=len(records), matches=matches, mismatched_steps=mismatched)


def fixed_controller_step(controller: FixedPointController, T_star, x_ph) -> SwitchPosition:
    return controller.controller_step(T_star, x_ph)
