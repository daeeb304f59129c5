import os
from dotenv import load_dotenv

load_dotenv()


def _env_bool(key, default):
    return os.getenv(key, str(default)).strip().lower() in ("1", "true", "yes", "on")


class Settings:
    PROJECT_NAME = "NPC-ADP Drive Lab"
    VERSION = "0.2.0"
    DEBUG = _env_bool("LAB_DEBUG", False)

    # 默认输出目录
    OUTPUT_DIR = os.getenv("LAB_OUTPUT_DIR", "outputs")

    # SDP 求解器 (cvxopt) 选项
    SDP_BACKEND = os.getenv("LAB_SDP_BACKEND", "cvxopt")
    SDP_FEASTOL = float(os.getenv("LAB_SDP_FEASTOL", "1e-8"))
    SDP_ABSTOL = float(os.getenv("LAB_SDP_ABSTOL", "1e-8"))
    SDP_RELTOL = float(os.getenv("LAB_SDP_RELTOL", "1e-8"))
    SDP_MAXITERS = int(os.getenv("LAB_SDP_MAXITERS", "200"))
    # 约束块 PSD 检查容差
    PSD_TOL = float(os.getenv("LAB_PSD_TOL", "1e-7"))

    # compare 子命令并行进程数 (1 = 串行)
    WORKERS = int(os.getenv("LAB_WORKERS", "1"))


settings = Settings()
