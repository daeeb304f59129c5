"""
闭环仿真: 控制器 + 被控对象，按 Ts 逐拍推进

场景中的转矩以额定转矩为单位 (1 = 幅值 ref_amplitude 的稳态转矩)，
送入控制器与写入轨迹前换算为标幺转矩。
"""
import math
import time
from dataclasses import dataclass

import numpy as np

from src.errors import ConfigError, ConstraintViolation, SimulationDiverged
from src.utils import debug, log, read_csv, write_csv
from src.drive.perunit import (
    PerUnitParams, build_discrete, inverse_clarke, rated_torque, steady_state_flux,
    steady_state_voltage, step_plant, torque, voltage_limit,
)
from src.sim.metrics import RunMetrics, compute_fsw, compute_thd, settling_time

TRACE_COLUMNS = ["t", "ia", "ib", "ic", "ia_ref", "ib_ref", "ic_ref", "ua", "ub", "uc", "f_hat", "T", "T_ref"]


@dataclass(frozen=True)
class Scenario:
    warmup_periods: int = 4
    duration_periods: int = 24
    period_steps: int = 800
    torque_steps: tuple = ()
    initial_torque: float = 1.0
    reference_phase: float = 0.0
    ref_amplitude: float = 1.0
    max_torque: float = 1.0
    settling_band: float = 0.05
    settling_smoothing: int = 8

    def __post_init__(self):
        if self.warmup_periods >= self.duration_periods:
            raise ConfigError("❌ 预热周期数必须小于总周期数")
        if self.ref_amplitude <= 0:
            raise ConfigError("❌ 参考幅值必须为正")
        for value in [self.initial_torque] + [T for _, T in self.torque_steps]:
            if abs(value) > self.max_torque:
                raise ConfigError(f"❌ 转矩指令 {value} 超出 ±{self.max_torque} (额定转矩为单位)")

    @classmethod
    def from_config(cls, cfg) -> "Scenario":
        return cls(
            warmup_periods=cfg.warmup_periods, duration_periods=cfg.duration_periods,
            period_steps=cfg.period_steps, torque_steps=tuple(cfg.torque_steps),
            initial_torque=cfg.initial_torque, reference_phase=cfg.reference_phase,
            ref_amplitude=cfg.ref_amplitude, max_torque=cfg.max_torque,
            settling_band=cfg.settling_band, settling_smoothing=cfg.settling_smoothing,
        )

    @property
    def total_steps(self) -> int:
        return self.duration_periods * self.period_steps

    @property
    def warmup_steps(self) -> int:
        return self.warmup_periods * self.period_steps

    @property
    def peak_torque(self) -> float:
        return max([abs(self.initial_torque)] + [abs(T) for _, T in self.torque_steps])

    def torque_schedule(self, Ts) -> np.ndarray:
        """每拍的转矩指令 (额定转矩为单位)"""
        k = np.arange(self.total_steps)
        ref = np.full(self.total_steps, float(self.initial_torque))
        for t_step, value in self.torque_steps:
            ref[k * Ts >= t_step - 0.5 * Ts] = value
        return ref


@dataclass(eq=False)
class Trace:
    t: np.ndarray
    x_ph: np.ndarray        # (n, 4)
    i_ref: np.ndarray       # (n, 2) αβ
    u: np.ndarray           # (n, 3) 第 k 拍施加的开关位置
    u_before: np.ndarray    # 轨迹开始前的开关位置
    f_hat: np.ndarray
    torque: np.ndarray
    torque_ref: np.ndarray
    label: str = ""          # 控制器标签，写入 CSV 注释

    def __len__(self):
        return len(self.t)

    @property
    def i_ab(self) -> np.ndarray:
        return self.x_ph[:, :2]

    def table(self) -> np.ndarray:
        return np.column_stack([
            self.t, inverse_clarke(self.i_ab), inverse_clarke(self.i_ref),
            self.u, self.f_hat, self.torque, self.torque_ref,
        ])

    def to_csv(self, path, header_lines=()):
        lines = [*header_lines, f"controller_label={self.label}"] if self.label else list(header_lines)
        return write_csv(path, TRACE_COLUMNS, self.table(), lines)


def load_trace_table(path):
    columns, data, meta = read_csv(path)
    if columns != TRACE_COLUMNS:
        raise ConfigError(f"❌ 轨迹文件列名不符: {path}")
    return data, meta


def check_voltage_feasible(scenario: Scenario, params: PerUnitParams) -> float:
    """返回峰值参考电流所需的稳态电压；超出线性调制区时报错"""
    amp = scenario.peak_torque * scenario.ref_amplitude
    need = abs(steady_state_voltage(complex(0.0, -amp), params))
    limit = voltage_limit(params)
    if need > limit:
        raise ConfigError(
            f"❌ 参考电流 {amp:.3g} pu 需要稳态电压 {need:.3f} pu，超出线性调制区 {limit:.3f} pu"
        )
    return need


def initial_state(scenario: Scenario, params: PerUnitParams) -> np.ndarray:
    """参考一致的稳态初值: 电流等于参考，磁链取对应的正弦稳态值"""
    check_voltage_feasible(scenario, params)
    amp = scenario.ref_amplitude * scenario.initial_torque
    theta = scenario.reference_phase
    i_s = complex(amp * math.sin(theta), -amp * math.cos(theta))
    psi = steady_state_flux(i_s, params)
    return np.array([i_s.real, i_s.imag, psi.real, psi.imag])


def run_closed_loop(scenario: Scenario, params: PerUnitParams, controller, x_ph0=None):
    """返回 (trace, metrics)；指标在预热之后的窗口上计算"""
    dm = build_discrete(params)
    n_steps = scenario.total_steps
    x = initial_state(scenario, params) if x_ph0 is None else np.asarray(x_ph0, dtype=float).copy()
    T_rated = rated_torque(params, scenario.ref_amplitude)
    schedule = scenario.torque_schedule(params.Ts) * T_rated

    xs = np.empty((n_steps, 4))
    refs = np.empty((n_steps, 2))
    us = np.empty((n_steps, 3))
    f_hat = np.empty(n_steps)
    u_before = controller.memory.u_prev.as_array()
    u_last = u_before.copy()
    candidates = 0
    solver_seconds = 0.0

    log("Sim", f"🚀 {controller.label}: {n_steps} 步 (预热 {scenario.warmup_steps}), 额定转矩 {T_rated:.4f} pu", "step")
    for k in range(n_steps):
        start = time.perf_counter()
        decision = controller.step(float(schedule[k]), x)
        solver_seconds += time.perf_counter() - start
        candidates += decision.candidates_evaluated

        u = decision.u_sw.as_array()
        if np.any(np.abs(u - u_last) > 1):
            raise ConstraintViolation(f"❌ 第 {k} 步出现直通跳变 {u_last} -> {u}")
        xs[k] = x
        refs[k] = controller.reference_current
        us[k] = u
        f_hat[k] = controller.f_hat
        u_last = u

        x = step_plant(x, u, dm)
        norm = float(np.linalg.norm(x))
        if not math.isfinite(norm) or norm > params.max_state_norm:
            raise SimulationDiverged(k, norm, params.max_state_norm)

    t = np.arange(n_steps) * params.Ts
    trace = Trace(t=t, x_ph=xs, i_ref=refs, u=us, u_before=u_before, f_hat=f_hat,
                  torque=torque(xs, params), torque_ref=schedule, label=controller.label)
    metrics = evaluate_trace(trace, scenario, params)
    metrics.solver_seconds = solver_seconds
    metrics.throughput = candidates / solver_seconds if solver_seconds > 0 else 0.0
    debug("Sim", f"求解耗时 {solver_seconds:.2f}s, 吞吐 {metrics.throughput:.3g} 候选/秒")
    return trace, metrics


def evaluate_trace(trace: Trace, scenario: Scenario, params: PerUnitParams) -> RunMetrics:
    W = scenario.warmup_steps
    window_periods = scenario.duration_periods - scenario.warmup_periods
    i_win = trace.i_ab[W:]

    thd = compute_thd(inverse_clarke(i_win), window_periods)
    u_prior = trace.u[W - 1] if W > 0 else trace.u_before
    fsw = compute_fsw(trace.u[W:], params.Ts, u_before=u_prior)
    err = np.linalg.norm(i_win - trace.i_ref[W:], axis=1)
    du = np.abs(np.diff(np.vstack([trace.u_before.reshape(1, 3), trace.u]), axis=0))

    # 阶跃前后的指令取自轨迹中的标幺转矩指令
    settling = []
    end = len(trace) * params.Ts
    steps = list(scenario.torque_steps)
    for j, (t_step, _) in enumerate(steps):
        t_end = steps[j + 1][0] if j + 1 < len(steps) else end
        k_step = int(np.searchsorted(trace.t, t_step - 0.5 * params.Ts))
        previous = float(trace.torque_ref[k_step - 1]) if k_step > 0 else float(trace.torque_ref[0])
        target = float(trace.torque_ref[min(k_step, len(trace) - 1)])
        settling.append(settling_time(
            trace.t, trace.torque, t_step, previous, target, end_time=t_end,
            band=scenario.settling_band, smoothing=scenario.settling_smoothing,
            final_window=min(scenario.period_steps // 4, max(1, int((t_end - t_step) / params.Ts) // 4)),
        ))

    return RunMetrics(
        thd_per_phase=thd.per_phase, thd_mean=thd.mean, thd_defined=thd.defined,
        fsw_measured=fsw, fsw_filter_final=float(trace.f_hat[-1]),
        settling=settling, max_current_error=float(err.max()) if len(err) else 0.0,
        max_delta_u=int(du.max()) if du.size else 0, steps=len(trace),
    )
