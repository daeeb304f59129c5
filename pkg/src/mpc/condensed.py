"""
消元后的整数二次规划

    minimize  UᵀQU + 2f(x0)ᵀU
    s.t.      (ℛ − 𝒮ℬ)U ≤ 𝒮𝒜x0,   ℱU ≤ 1

U = [u_0; …; u_{N−1}]，u_k = [u_sw(k); p(k)]。穷举全部 27^N 个开关序列，
p 沿时域链式计算 (p_0 = |u_0 − u_prev|, p_k = |u_k − u_{k−1}|)。
"""
import time
import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import block_diag

from src.errors import ModelError, SolverError
from src.drive.perunit import SwitchPosition, SWITCH_LEVELS
from src.drive.augmentation import AugmentedModel, AugmentedState, augmented_vector, N_INPUT
from src.adp.trainer import QuadValueFunction

MAX_HORIZON = 3
FEAS_TOL = 1e-9


def prediction_matrices(A, B, N):
    """X = 𝒜x0 + ℬU，X = [x_0; …; x_N]"""
    n, m = B.shape
    powers = [np.eye(n)]
    for _ in range(N):
        powers.append(A @ powers[-1])
    calA = np.vstack(powers)
    calB = np.zeros(((N + 1) * n, N * m))
    for k in range(1, N + 1):
        for j in range(k):
            calB[k * n:(k + 1) * n, j * m:(j + 1) * m] = powers[k - 1 - j] @ B
    return calA, calB, powers[N]


def switch_table(N) -> np.ndarray:
    """(27^N, N, 3)，第 0 步为最高位，每步内 a、b、c 字典序"""
    per_stage = np.array(list(itertools.product(SWITCH_LEVELS, repeat=3)), dtype=np.int64)
    idx = np.array(list(itertools.product(range(27), repeat=N)), dtype=np.int64).reshape(-1, N)
    return per_stage[idx]


@dataclass(frozen=True)
class ControlDecision:
    u_sw: SwitchPosition
    p: np.ndarray
    J_min: float
    candidates_evaluated: int
    feasible_count: int
    index: int = -1


@dataclass(eq=False)
class _Candidates:
    U: np.ndarray           # (K, 6N)
    feasible: np.ndarray    # (K,) bool，由不等式矩阵判定
    quad: np.ndarray        # (K,) UᵀQU


@dataclass(eq=False)
class CondensedQP:
    N: int
    Q: np.ndarray
    F_x: np.ndarray         # f(x0) = F_x x0 + f_c
    f_c: np.ndarray
    A_ineq: np.ndarray
    B_x: np.ndarray         # b(x0) = B_x x0 + b_c
    b_c: np.ndarray
    G_stack: np.ndarray
    U_seq: np.ndarray       # (27^N, N, 3) 开关序列，p 占位为 0
    kind: str = "adp"
    _cache: dict = field(default_factory=dict, repr=False)

    def f(self, x0) -> np.ndarray:
        return self.F_x @ _as_vector(x0) + self.f_c

    def b(self, x0) -> np.ndarray:
        return self.B_x @ _as_vector(x0) + self.b_c

    def candidates(self, u_prev) -> _Candidates:
        """按 u_prev 缓存候选序列: p 的链式填充、二次项与可行性只依赖 u_prev"""
        key = tuple(int(v) for v in u_prev)
        if key not in self._cache:
            U = sequences_with_p(self.U_seq, key)
            # x0 中只有 u_prev 影响不等式右端，因此可行性也可预先判定
            x_ref = np.zeros(self.B_x.shape[1])
            x_ref[-3:] = key
            lhs = U @ self.A_ineq.T
            feasible = np.all(lhs <= self.b(x_ref) + FEAS_TOL, axis=1)
            quad = np.einsum("ki,ij,kj->k", U, self.Q, U)
            self._cache[key] = _Candidates(U=U, feasible=feasible, quad=quad)
        return self._cache[key]


def _as_vector(x0) -> np.ndarray:
    return augmented_vector(x0) if isinstance(x0, AugmentedState) else np.asarray(x0, dtype=float)


def sequences_with_p(U_seq, u_prev) -> np.ndarray:
    """由开关序列生成完整 U，p_k = |u_k − u_{k−1}|"""
    K, N, _ = U_seq.shape
    prev = np.concatenate([np.broadcast_to(np.asarray(u_prev, dtype=np.int64), (K, 1, 3)), U_seq[:, :-1]], axis=1)
    p = np.abs(U_seq - prev)
    return np.concatenate([U_seq, p], axis=2).reshape(K, N * N_INPUT).astype(float)


def _inequality_data(model: AugmentedModel, calA, calB, N):
    """
    每步 −p_k ≤ u_sw(k) − W x_k ≤ p_k 与 |p_k| ≤ 1：
        ℛ = [blkdiag(G−T); blkdiag(−G−T)],  𝒮 = [blkdiag(W) 0; −blkdiag(W) 0],  ℱ = [blkdiag(T); −blkdiag(T)]
    """
    G, T, W = model.G, model.T, model.W
    n = model.n
    R_cal = np.vstack([block_diag(*[G - T] * N), block_diag(*[-G - T] * N)])
    S_half = np.hstack([block_diag(*[W] * N), np.zeros((3 * N, n))])
    S_cal = np.vstack([S_half, -S_half])
    T_stack = block_diag(*[T] * N)
    F_cal = np.vstack([T_stack, -T_stack])

    A_ineq = np.vstack([R_cal - S_cal @ calB, F_cal])
    B_x = np.vstack([S_cal @ calA, np.zeros((F_cal.shape[0], n))])
    b_c = np.concatenate([np.zeros(R_cal.shape[0]), np.ones(F_cal.shape[0])])
    return A_ineq, B_x, b_c


def _check(model: AugmentedModel, N):
    if not 1 <= N <= MAX_HORIZON:
        raise ModelError(f"❌ 只支持 N ∈ {{1,…,{MAX_HORIZON}}}，收到 N={N}")
    n = model.n
    if model.A.shape != (n, n) or model.B.shape != (n, N_INPUT) or model.C.shape[1] != n:
        raise ModelError("❌ 增广模型维度不一致")


def build_condensed(model: AugmentedModel, tail: QuadValueFunction, N: int) -> CondensedQP:
    """
    Q    = ℬᵀℋℬ + γᴺ ℬ_endᵀ P0 ℬ_end
    f(x) = (ℬᵀℋ𝒜 + γᴺ ℬ_endᵀ P0 Aᴺ) x + γᴺ ℬ_endᵀ q0
    ℋ = blkdiag(CᵀC, γCᵀC, …, γ^{N−1}CᵀC, 0)，常数项 const(x0) 省略
    """
    _check(model, N)
    if tail.n != model.n:
        raise ModelError(f"❌ 尾代价维度 {tail.n} 与模型 {model.n} 不一致")
    n, g = model.n, model.gamma
    calA, calB, A_N = prediction_matrices(model.A, model.B, N)
    CtC = model.C.T @ model.C
    H = block_diag(*[g ** k * CtC for k in range(N)], np.zeros((n, n)))
    B_end = calB[N * n:, :]

    gN = g ** N
    Q = calB.T @ H @ calB + gN * B_end.T @ tail.P @ B_end
    Q = 0.5 * (Q + Q.T)
    F_x = calB.T @ H @ calA + gN * B_end.T @ tail.P @ A_N
    f_c = gN * B_end.T @ tail.q

    A_ineq, B_x, b_c = _inequality_data(model, calA, calB, N)
    return CondensedQP(
        N=N, Q=Q, F_x=F_x, f_c=f_c, A_ineq=A_ineq, B_x=B_x, b_c=b_c,
        G_stack=block_diag(*[model.G] * N), U_seq=switch_table(N), kind="adp",
    )


def build_condensed_dmpc(model: AugmentedModel, N: int, lambda_u: float) -> CondensedQP:
    """
    对照组直接 MPC: Σ_k ‖e_i(k+1)‖² + λu‖Δu(k)‖₁，无折扣、无尾代价。
    ‖Δu‖₁ = 1ᵀp 在 U 中是线性的，并入 f 的常数部分。
    """
    _check(model, N)
    if lambda_u < 0:
        raise ModelError("❌ λu 必须非负")
    n = model.n
    calA, calB, _ = prediction_matrices(model.A, model.B, N)
    Ci = model.C[0:2]
    CtC = Ci.T @ Ci
    H = block_diag(np.zeros((n, n)), *[CtC] * N)
    T_stack = block_diag(*[model.T] * N)

    Q = calB.T @ H @ calB
    Q = 0.5 * (Q + Q.T)
    F_x = calB.T @ H @ calA
    f_c = 0.5 * lambda_u * T_stack.T @ np.ones(3 * N)

    A_ineq, B_x, b_c = _inequality_data(model, calA, calB, N)
    return CondensedQP(
        N=N, Q=Q, F_x=F_x, f_c=f_c, A_ineq=A_ineq, B_x=B_x, b_c=b_c,
        G_stack=block_diag(*[model.G] * N), U_seq=switch_table(N), kind="dmpc",
    )


def select_minimum(J: np.ndarray, tie_break="first") -> int:
    """
    Loop 2: 并列时取候选表中下标最小者；
    tie_break="last" 对应顺序比较 J ≤ J_min，保留最后一个并列下标
    """
    if tie_break == "last":
        return int(len(J) - 1 - np.argmin(J[::-1]))
    if tie_break != "first":
        raise ModelError(f"❌ 未知的并列规则: {tie_break}")
    return int(np.argmin(J))


def exhaustive_solve(qp: CondensedQP, x0, u_prev, J_ub=None, tie_break="first") -> ControlDecision:
    J_ub = np.finfo(float).max if J_ub is None else J_ub
    cand = qp.candidates(u_prev)
    feasible_count = int(cand.feasible.sum())
    if feasible_count == 0:
        raise SolverError("没有可行的开关序列 (保持当前开关位置应总是可行)", status="infeasible")

    f = qp.f(x0)
    J = cand.quad + 2.0 * (cand.U @ f)
    J = np.where(cand.feasible, J, J_ub)
    i_min = select_minimum(J, tie_break)
    u0 = cand.U[i_min, :N_INPUT]
    return ControlDecision(
        u_sw=SwitchPosition.from_array(u0[:3]),
        p=u0[3:].copy(),
        J_min=float(J[i_min]),
        candidates_evaluated=len(J),
        feasible_count=feasible_count,
        index=i_min,
    )


def measure_throughput(qp: CondensedQP, x0, u_prev, repeats=50) -> float:
    """候选序列评估吞吐量 (个/秒)，仅作参考"""
    exhaustive_solve(qp, x0, u_prev)
    start = time.perf_counter()
    for _ in range(repeats):
        exhaustive_solve(qp, x0, u_prev)
    seconds = time.perf_counter() - start
    return repeats * len(qp.U_seq) / max(seconds, 1e-12)


def rollout_cost(model: AugmentedModel, tail: QuadValueFunction, x0, U, N) -> float:
    """Σ_{k<N} γᵏ ℓ(x_k) + γᴺ V(x_N)，用于验证消元形式"""
    x = _as_vector(x0).copy()
    U = np.asarray(U, dtype=float).reshape(N, N_INPUT)
    total = 0.0
    for k in range(N):
        e = model.C @ x
        total += model.gamma ** k * float(e @ e)
        x = model.A @ x + model.B @ U[k]
    return total + model.gamma ** N * float(tail(x))


def dmpc_rollout_cost(model: AugmentedModel, x0, U, N, lambda_u) -> float:
    x = _as_vector(x0).copy()
    U = np.asarray(U, dtype=float).reshape(N, N_INPUT)
    total = 0.0
    for k in range(N):
        x = model.A @ x + model.B @ U[k]
        e = model.C[0:2] @ x
        total += float(e @ e) + lambda_u * float(np.sum(U[k, 3:]))
    return total


def baseline_dmpc_solve(model: AugmentedModel, x0, u_prev, N, lambda_u, qp=None) -> ControlDecision:
    """对照组 DMPC 的单步求解；闭环中应复用已构造的 qp"""
    qp = qp if qp is not None else build_condensed_dmpc(model, N, lambda_u)
    return exhaustive_solve(qp, x0, u_prev)
