import os
import io
import json
import hashlib

import numpy as np
from colorama import Fore, Style

from configs.settings import settings
from src.errors import ConfigError, FingerprintMismatch

# ==========================================
# 1. 控制台日志
# ==========================================

_LEVEL_COLORS = {
    "info": "",
    "ok": Fore.GREEN,
    "warn": Fore.YELLOW,
    "error": Fore.RED,
    "step": Fore.CYAN,
}


def log(tag, message, level="info"):
    """带组件标签的彩色输出，例如 [ADP] ✅ 训练完成"""
    color = _LEVEL_COLORS.get(level, "")
    print(f"{color}[{tag}] {message}" + (Style.RESET_ALL if color else ""))


def debug(tag, message):
    if settings.DEBUG:
        print(Style.DIM + f"[{tag}] {message}" + Style.RESET_ALL)


# ==========================================
# 2. 指纹
# ==========================================

def _canonical(value):
    if isinstance(value, float):
        return repr(float(value))
    if isinstance(value, (list, tuple)):
        return [_canonical(v) for v in value]
    if isinstance(value, dict):
        return {str(k): _canonical(v) for k, v in sorted(value.items())}
    return value


def fingerprint(mapping) -> str:
    """对配置子集做规范化序列化后取 SHA-256 前 16 位"""
    payload = json.dumps(_canonical(dict(mapping)), sort_keys=True, ensure_ascii=True)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]


# ==========================================
# 3. 尾代价文件 (纯文本)
# ==========================================

TAIL_MAGIC = "# npc-adp tail cost v1"


def save_tail(path, vf, tail_fp, meta=None):
    """写出 (P0, q0, r0)，首部带指纹；数值用 %.17g 保证可逆"""
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    n = vf.P.shape[0]
    lines = [TAIL_MAGIC, f"# fingerprint={tail_fp}", f"# dim={n}"]
    for key, value in sorted((meta or {}).items()):
        lines.append(f"# {key}={value}")
    for row in vf.P:
        lines.append(" ".join(f"{v:.17g}" for v in row))
    lines.append(" ".join(f"{v:.17g}" for v in vf.q))
    lines.append(f"{vf.r:.17g}")
    with open(path, "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")
    return path


def read_tail_header(path):
    header = {}
    with open(path, "r", encoding="utf-8") as f:
        first = f.readline().strip()
        if first != TAIL_MAGIC:
            raise ConfigError(f"❌ 不是尾代价文件: {path}")
        for line in f:
            if not line.startswith("#"):
                break
            key, _, value = line[1:].strip().partition("=")
            header[key.strip()] = value.strip()
    return header


def load_tail(path, expected_fp=None):
    """读取尾代价；expected_fp 给定时指纹不符直接报错"""
    from src.adp.trainer import QuadValueFunction

    if not os.path.isfile(path):
        raise ConfigError(f"❌ 尾代价文件不存在: {path}")
    header = read_tail_header(path)
    found = header.get("fingerprint", "")
    if expected_fp is not None and found != expected_fp:
        raise FingerprintMismatch(expected_fp, found, path)
    n = int(header.get("dim", "12"))
    with open(path, "r", encoding="utf-8") as f:
        rows = [line for line in f if line.strip() and not line.startswith("#")]
    if len(rows) != n + 2:
        raise ConfigError(f"❌ 尾代价文件行数错误: {path}")
    data = np.loadtxt(io.StringIO("".join(rows[:n])), ndmin=2)
    q = np.array([float(v) for v in rows[n].split()])
    r = float(rows[n + 1])
    return QuadValueFunction(P=data, q=q, r=r), header


# ==========================================
# 4. 轨迹 / 报告输出
# ==========================================

def write_csv(path, columns, data, header_lines=()):
    """numpy.savetxt 写 CSV，注释行携带配置指纹"""
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    comment = "\n".join(header_lines)
    header = (comment + "\n" if comment else "") + ",".join(columns)
    np.savetxt(path, np.asarray(data, dtype=float), delimiter=",", fmt="%.10g",
               header=header, comments="# ")
    return path


def read_csv(path):
    """返回 (列名, 数据, 注释字典)"""
    meta, columns = {}, None
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            if not line.startswith("#"):
                break
            body = line[1:].strip()
            if "=" in body and "," not in body:
                key, _, value = body.partition("=")
                meta[key.strip()] = value.strip()
            else:
                columns = [c.strip() for c in body.split(",")]
    data = np.loadtxt(path, delimiter=",", comments="#", ndmin=2)
    return columns, data, meta


def write_text(path, text):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(text)
    return path
