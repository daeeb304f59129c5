"""
SDP 求解后端

训练器只输出标准形式的锥规划:

    minimize    cᵀx
    subject to  F0_k + Σ_j x_j F_jk ⪰ 0,   k = 1..K

每个约束块以 (F0 方阵, 列主序展开的稀疏系数) 给出。后端按名称注册，实例缓存复用。
"""
import time
from dataclasses import dataclass, field

import numpy as np

from configs.settings import settings
from src.errors import SolverError
from src.utils import debug


@dataclass(eq=False)
class LmiBlock:
    F0: np.ndarray          # (s, s) 对称
    rows: np.ndarray        # vec(F) 下标 (列主序)
    cols: np.ndarray        # 变量下标
    vals: np.ndarray

    @property
    def size(self) -> int:
        return self.F0.shape[0]

    def evaluate(self, x: np.ndarray) -> np.ndarray:
        s = self.size
        flat = self.F0.reshape(-1, order="F").copy()
        np.add.at(flat, self.rows, self.vals * x[self.cols])
        return flat.reshape((s, s), order="F")


@dataclass(eq=False)
class ConicProblem:
    c: np.ndarray
    blocks: list = field(default_factory=list)

    @property
    def n_vars(self) -> int:
        return self.c.shape[0]


@dataclass
class ConicSolution:
    x: np.ndarray
    status: str
    primal_objective: float
    iterations: int
    seconds: float


class BaseBackend:
    name = "base"

    def solve(self, problem: ConicProblem) -> ConicSolution:
        raise NotImplementedError

    def available(self) -> bool:
        return True


class CvxoptBackend(BaseBackend):
    """cvxopt.solvers.sdp: min cᵀx s.t. Σ x_j G_j + S = h, S ⪰ 0，故 G = −F_j, h = F0"""
    name = "cvxopt"

    def available(self) -> bool:
        try:
            import cvxopt  # noqa: F401
            return True
        except ImportError:
            return False

    def options(self) -> dict:
        return {
            "show_progress": settings.DEBUG,
            "feastol": settings.SDP_FEASTOL,
            "abstol": settings.SDP_ABSTOL,
            "reltol": settings.SDP_RELTOL,
            "maxiters": settings.SDP_MAXITERS,
        }

    def solve(self, problem: ConicProblem) -> ConicSolution:
        try:
            from cvxopt import matrix, spmatrix, solvers
        except ImportError as e:
            raise SolverError("未安装 cvxopt，无法求解 SDP", status="unavailable") from e

        n = problem.n_vars
        c = matrix(np.asarray(problem.c, dtype=float))
        Gs, hs = [], []
        for blk in problem.blocks:
            s = blk.size
            Gs.append(spmatrix((-blk.vals).tolist(), blk.rows.tolist(), blk.cols.tolist(), (s * s, n)))
            hs.append(matrix(np.asarray(blk.F0, dtype=float)))

        debug("ADP", f"cvxopt: {n} 变量, {len(Gs)} 个 LMI 块")
        start = time.perf_counter()
        try:
            sol = solvers.sdp(c, Gs=Gs, hs=hs, options=self.options())
        except (ValueError, ArithmeticError) as e:
            raise SolverError(f"cvxopt 数值失败: {e}", status="numerical error") from e
        seconds = time.perf_counter() - start

        status = sol["status"]
        if status in ("primal infeasible", "dual infeasible"):
            kind = "不可行" if status == "primal infeasible" else "无界"
            raise SolverError(f"SDP {kind}", status=status)
        if sol["x"] is None:
            raise SolverError("SDP 未返回解", status=status)
        if status != "optimal":
            pinf = sol.get("primal infeasibility")
            if pinf is None or pinf > 1e-6:
                raise SolverError("SDP 未收敛", status=status)

        return ConicSolution(
            x=np.array(sol["x"]).ravel(),
            status=status,
            primal_objective=float(sol["primal objective"]),
            iterations=int(sol.get("iterations", 0)),
            seconds=seconds,
        )


BACKENDS = {
    "cvxopt": CvxoptBackend,
}

_backends = {}


def get_backend(name=None) -> BaseBackend:
    name = (name or settings.SDP_BACKEND).lower()
    if name not in BACKENDS:
        raise SolverError(f"未知的 SDP 后端: {name}", status="unavailable")
    if name not in _backends:
        _backends[name] = BACKENDS[name]()
    return _backends[name]
