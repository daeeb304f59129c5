"""
单次运行配置 (RunConfig)

配置文件为纯文本 key=value (dotenv 语法，# 开头为注释)，
所有字段都有显式默认值 (表 I / 稳态实验设置)，未知键直接报错。
"""
import os
import math
from typing import Literal

from dotenv import dotenv_values
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from src.errors import ConfigError
from src.utils import fingerprint

PRESET_DIR = os.path.join(os.path.dirname(os.path.abspath(__file__)), "presets")

# 参与尾代价指纹的字段 (改变任一项都必须重新训练)
TAIL_KEYS = (
    "gamma", "delta", "fsw_target", "r1", "r2", "omega_r", "vdc",
    "rs", "rr", "xls", "xlr", "xm", "ts", "omega_b",
)


def _parse_format(value):
    if isinstance(value, str):
        parts = [p.strip() for p in value.split(",")]
        if len(parts) != 2:
            raise ValueError(f"定点格式应为 'int,frac'，收到 {value!r}")
        return int(parts[0]), int(parts[1])
    return tuple(int(v) for v in value)


class RunConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    # === 电机 / 逆变器 (标幺值) ===
    rs: float = 0.0108
    rr: float = 0.0091
    xls: float = 0.1493
    xlr: float = 0.1104
    xm: float = 2.3489
    vdc: float = 1.930
    # 额定转差 1%: 单位参考电流所需电压 0.91 pu，位于线性调制区 (Vdc/√3 = 1.11 pu) 内
    omega_r: float = 0.99
    ts: float = Field(25e-6, gt=0)
    omega_b: float = Field(2 * math.pi * 50, gt=0)
    tl: float = 0.0
    inertia: float = 0.0
    max_state_norm: float = Field(10.0, gt=0)

    # === 控制器 ===
    controller: Literal["adp", "dmpc"] = "adp"
    horizon: int = Field(1, ge=1, le=3)
    gamma: float = Field(0.95, gt=0, lt=1)
    delta: float = Field(4.0, ge=0)
    r1: float = Field(800.0, gt=1)
    r2: float = Field(800.0, gt=1)
    fsw_target: float = Field(300.0, gt=0)
    lambda_u: float = Field(0.00235, ge=0)
    ref_amplitude: float = Field(1.0, gt=0)
    # 以下转矩均以额定转矩 (幅值 ref_amplitude 的稳态转矩) 为单位
    max_torque: float = Field(1.0, gt=0)
    initial_filter: float = Field(1.0, ge=0)

    # === 尾代价训练 ===
    bellman_iters: int = Field(50, ge=1)
    ci_bellman_iters: int = Field(5, ge=1)
    sigma_scale: float = Field(1.0, gt=0)
    upr_second_moment: float = Field(2.0 / 3.0, gt=0)
    bellman_samples: int = Field(100000, ge=1)
    bellman_slack: float = Field(1e-6, ge=0)

    # === 场景 ===
    warmup_periods: int = Field(4, ge=0)
    duration_periods: int = Field(24, ge=1)
    torque_steps: tuple[tuple[float, float], ...] = ()
    initial_torque: float = 1.0
    reference_phase: float = 0.0
    settling_band: float = Field(0.05, gt=0, lt=1)
    settling_smoothing: int = Field(8, ge=1)

    # === 数值格式 ===
    profile: Literal["float", "fixed"] = "float"
    input_format: tuple[int, int] = (4, 0)
    state_format: tuple[int, int] = (2, 22)
    coeff_format: tuple[int, int] = (12, 22)
    cost_format: tuple[int, int] = (12, 22)
    renorm_period: int = Field(800, ge=1)

    seed: int = 0

    @field_validator("torque_steps", mode="before")
    @classmethod
    def _parse_steps(cls, value):
        # "0.02:0, 0.04:1" -> ((0.02, 0.0), (0.04, 1.0))
        if isinstance(value, str):
            steps = []
            for item in value.split(","):
                item = item.strip()
                if not item:
                    continue
                t, _, torque = item.partition(":")
                if not torque:
                    raise ValueError(f"转矩阶跃应为 't:T'，收到 {item!r}")
                steps.append((float(t), float(torque)))
            return tuple(steps)
        return value

    @field_validator("input_format", "state_format", "coeff_format", "cost_format", mode="before")
    @classmethod
    def _parse_formats(cls, value):
        return _parse_format(value)

    @model_validator(mode="after")
    def _check_consistency(self):
        if self.warmup_periods >= self.duration_periods:
            raise ValueError("warmup_periods 必须小于 duration_periods")
        if abs(self.initial_torque) > self.max_torque:
            raise ValueError("initial_torque 超出 max_torque")
        horizon_s = self.duration_periods * self.period_steps * self.ts
        last = -1.0
        for t, torque in self.torque_steps:
            if not 0 <= t < horizon_s:
                raise ValueError(f"转矩阶跃时刻 {t} 不在仿真区间 [0, {horizon_s:.4g})")
            if t <= last:
                raise ValueError("转矩阶跃时刻必须严格递增")
            if abs(torque) > self.max_torque:
                raise ValueError(f"转矩指令 {torque} 超出 max_torque")
            last = t
        for name in ("input_format", "state_format", "coeff_format", "cost_format"):
            int_bits, frac_bits = getattr(self, name)
            if int_bits < 1 or frac_bits < 0 or int_bits + frac_bits > 64:
                raise ValueError(f"{name} 非法: Q({int_bits},{frac_bits})")
        self._check_voltage()
        return self

    def _check_voltage(self):
        """最大转矩指令对应的稳态电压必须落在线性调制区内"""
        from src.drive.perunit import rated_torque, steady_state_voltage, voltage_limit
        params = self.machine()
        rated_torque(params, self.ref_amplitude)
        peak = max([abs(self.initial_torque)] + [abs(T) for _, T in self.torque_steps])
        need = abs(steady_state_voltage(complex(0.0, -peak * self.ref_amplitude), params))
        if need > voltage_limit(params):
            raise ValueError(
                f"参考电流 {peak * self.ref_amplitude:.3g} pu 需要稳态电压 {need:.3f} pu，"
                f"超出线性调制区 {voltage_limit(params):.3f} pu (增大转差或减小参考幅值)"
            )

    # ------------------------------------------------------------------
    @property
    def period_steps(self) -> int:
        """一个基波周期对应的采样步数 (50 Hz, 25 µs -> 800)"""
        return int(round(2 * math.pi / (self.ts * self.omega_b)))

    def machine(self):
        from src.drive.perunit import PerUnitParams
        return PerUnitParams(
            Rs=self.rs, Rr=self.rr, Xls=self.xls, Xlr=self.xlr, Xm=self.xm,
            Vdc=self.vdc, omega_r=self.omega_r, Ts=self.ts, omega_b=self.omega_b,
            Tl=self.tl, J=self.inertia, max_state_norm=self.max_state_norm,
        )

    def scenario(self):
        from src.sim.loop import Scenario
        return Scenario.from_config(self)

    def tail_fingerprint(self) -> str:
        return fingerprint({k: getattr(self, k) for k in TAIL_KEYS})

    def config_fingerprint(self) -> str:
        return fingerprint(self.model_dump())

    def with_overrides(self, **updates) -> "RunConfig":
        """命令行覆盖后重新校验"""
        updates = {k: v for k, v in updates.items() if v is not None}
        if not updates:
            return self
        try:
            return RunConfig.model_validate({**self.model_dump(), **updates})
        except ValidationError as e:
            raise ConfigError(f"❌ 配置覆盖非法: {e}") from e


def resolve_config_path(path_or_preset: str) -> str:
    if os.path.isfile(path_or_preset):
        return path_or_preset
    candidate = os.path.join(PRESET_DIR, f"{path_or_preset}.env")
    if os.path.isfile(candidate):
        return candidate
    raise ConfigError(f"❌ 找不到配置文件或预设: {path_or_preset}")


def list_presets() -> list[str]:
    if not os.path.isdir(PRESET_DIR):
        return []
    return sorted(f[:-4] for f in os.listdir(PRESET_DIR) if f.endswith(".env"))


def load_run_config(path_or_preset: str | None = None) -> RunConfig:
    """加载配置文件 (路径或预设名)；None 时返回全默认配置"""
    if path_or_preset is None:
        return RunConfig()
    path = resolve_config_path(path_or_preset)
    raw = dotenv_values(path)
    values = {}
    for key, value in raw.items():
        if value is None:
            raise ConfigError(f"❌ 配置项缺少取值: {key} ({path})")
        values[key.strip().lower()] = value.strip()
    try:
        return RunConfig.model_validate(values)
    except ValidationError as e:
        raise ConfigError(f"❌ 配置文件非法 {path}:\n{e}") from e
