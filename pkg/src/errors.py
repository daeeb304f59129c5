"""统一异常定义 (CLI 根据异常类型映射退出码)"""


class LabError(Exception):
    """所有实验室错误的基类"""


class ConfigError(LabError, ValueError):
    """配置文件 / 参数非法"""


class FingerprintMismatch(ConfigError):
    """尾代价文件的指纹与当前运行配置不一致"""

    def __init__(self, expected: str, found: str, path: str = ""):
        self.expected = expected
        self.found = found
        self.path = path
        super().__init__(
            f"❌ 尾代价指纹不匹配 {path}: 期望 {expected}, 实际 {found} (系统参数已变化，需要重新训练)"
        )


class ModelError(LabError, ValueError):
    """物理模型构造失败 (维度错误、D 奇异等)"""


class DiscretizationError(ModelError):
    """矩阵指数 / 离散化失败"""


class ConstraintViolation(LabError, ValueError):
    """开关跳变 |Δu| = 2 (直通禁止)"""


class SolverError(LabError, RuntimeError):
    """SDP / 穷举求解失败，附带求解器状态"""

    def __init__(self, message: str, status: str = "unknown"):
        self.status = status
        super().__init__(f"❌ {message} (status={status})")


class SimulationDiverged(LabError, RuntimeError):
    """闭环仿真状态越过安全上限"""

    def __init__(self, step: int, norm: float, limit: float):
        self.step = step
        self.norm = norm
        super().__init__(f"❌ 仿真发散: 第 {step} 步 |x_ph|={norm:.4g} > {limit:.4g}")


class AcceptanceFailure(LabError):
    """--check 模式下验收阈值未通过"""

    def __init__(self, failures: list[str]):
        self.failures = list(failures)
        super().__init__("❌ 验收未通过: " + "; ".join(self.failures))
