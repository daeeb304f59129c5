"""
稳态 / 暂态指标: THD、开关频率、转矩调节时间
"""
from dataclasses import dataclass, field

import numpy as np
from scipy.fft import rfft
from scipy.ndimage import uniform_filter1d

from src.errors import ConfigError
from src.drive.perunit import inverse_clarke


@dataclass(frozen=True)
class ThdResult:
    per_phase: tuple
    mean: float
    defined: bool


@dataclass(frozen=True)
class SettlingResult:
    time: float                 # 阶跃时刻 (s)
    torque_from: float
    torque_to: float
    settling_ms: float
    settled: bool
    level: float                # 稳定后的转矩水平


@dataclass
class RunMetrics:
    thd_per_phase: tuple = (float("nan"),) * 3
    thd_mean: float = float("nan")
    thd_defined: bool = False
    fsw_measured: float = 0.0
    fsw_filter_final: float = 0.0
    settling: list = field(default_factory=list)
    max_current_error: float = 0.0
    max_delta_u: int = 0
    solver_seconds: float = 0.0
    throughput: float = 0.0
    steps: int = 0

    @property
    def shoot_through_free(self) -> bool:
        return self.max_delta_u <= 1

    @property
    def filter_consistency(self) -> float:
        """|f̂ − f_sw| / f_sw"""
        if self.fsw_measured <= 0:
            return 0.0 if self.fsw_filter_final == 0 else float("inf")
        return abs(self.fsw_filter_final - self.fsw_measured) / self.fsw_measured

    def as_lines(self) -> list:
        lines = [
            f"thd_defined={int(self.thd_defined)}",
            "thd_phase_percent=" + ",".join(f"{v:.4f}" for v in self.thd_per_phase),
            f"thd_mean_percent={self.thd_mean:.4f}",
            f"fsw_measured_hz={self.fsw_measured:.3f}",
            f"fsw_filter_final_hz={self.fsw_filter_final:.3f}",
            f"filter_consistency={self.filter_consistency:.5f}",
            f"max_current_error={self.max_current_error:.6f}",
            f"max_delta_u={self.max_delta_u}",
            f"steps={self.steps}",
        ]
        for k, s in enumerate(self.settling):
            lines.append(
                f"settling_{k}=t:{s.time:.6f},from:{s.torque_from:g},to:{s.torque_to:g},"
                f"ms:{s.settling_ms:.4f},settled:{int(s.settled)},level:{s.level:.5f}"
            )
        return lines


def harmonic_amplitudes(x: np.ndarray) -> np.ndarray:
    """单边幅值谱 (峰值)，直流与 Nyquist 分量不加倍"""
    n = len(x)
    amp = 2.0 * np.abs(rfft(x)) / n
    amp[0] *= 0.5
    if n % 2 == 0:
        amp[-1] *= 0.5
    return amp


def thd_single(x, periods: int) -> float:
    """窗口为整数个基波周期，基波位于第 periods 个频点；谐波求和不含直流"""
    amp = harmonic_amplitudes(np.asarray(x, dtype=float))
    if periods < 1 or periods >= len(amp):
        raise ConfigError(f"❌ 窗口内基波周期数非法: {periods}")
    fund = amp[periods]
    scale = max(1.0, float(np.max(np.abs(x)))) if len(x) else 1.0
    if fund <= 1e-9 * scale:
        return float("nan")
    harm = np.delete(amp[1:], periods - 1)
    return float(np.sqrt(np.sum(harm ** 2)) / fund)


def compute_thd(currents, periods: int) -> ThdResult:
    """
    currents: (n, 3) 相电流，或 (n, 2) 的 αβ 电流 (先做反 Clarke)；返回百分数
    """
    x = np.asarray(currents, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.shape[1] == 2:
        x = inverse_clarke(x)
    per_phase = tuple(100.0 * thd_single(x[:, j], periods) for j in range(x.shape[1]))
    defined = all(np.isfinite(per_phase))
    mean = float(np.mean(per_phase)) if defined else float("nan")
    return ThdResult(per_phase=per_phase, mean=mean, defined=defined)


def compute_fsw(u, Ts, u_before=None) -> float:
    """Σ‖Δu‖₁ / (12 · 窗口时长)；给出 u_before 时窗口首拍的跳变也计入"""
    u = np.asarray(u, dtype=float)
    if u_before is not None:
        u = np.vstack([np.asarray(u_before, dtype=float).reshape(1, 3), u])
        duration = (len(u) - 1) * Ts
    else:
        duration = len(u) * Ts
    if duration <= 0:
        return 0.0
    total = np.abs(np.diff(u, axis=0)).sum()
    return float(total / (12.0 * duration))


def settling_time(t, torque, step_time, torque_from, torque_to, end_time=None,
                  band=0.05, smoothing=8, final_window=None) -> SettlingResult:
    """
    从阶跃时刻起，平滑后的转矩持续停留在目标 torque_to 的 ±band·max(|阶跃量|, |目标|) 以内所需时间。
    最后一次越界落在本段末尾 final_window 个采样之内时标记为未稳定。
    level 记录末尾窗口的平均转矩，仅供报告。
    """
    t = np.asarray(t, dtype=float)
    torque = np.asarray(torque, dtype=float)
    end_time = t[-1] + (t[1] - t[0] if len(t) > 1 else 0.0) if end_time is None else end_time
    seg = np.nonzero((t >= step_time) & (t < end_time))[0]
    if len(seg) == 0:
        raise ConfigError(f"❌ 阶跃时刻 {step_time} 不在轨迹内")
    dt = t[1] - t[0] if len(t) > 1 else 0.0

    smooth = uniform_filter1d(torque, size=max(1, int(smoothing)), mode="nearest")
    window = final_window or max(1, len(seg) // 4)
    level = float(np.mean(torque[seg[-window:]]))
    half_width = band * max(abs(torque_to - torque_from), abs(torque_to), 1e-6)

    outside = np.abs(smooth[seg] - torque_to) > half_width
    if not outside.any():
        return SettlingResult(step_time, torque_from, torque_to, 0.0, True, level)
    last = int(np.nonzero(outside)[0][-1])
    settled = last < len(seg) - window
    return SettlingResult(step_time, torque_from, torque_to, (last + 1) * dt * 1e3, bool(settled), level)
