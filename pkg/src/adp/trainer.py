"""
离线训练二次尾代价 V(z) = zᵀPz + 2qᵀz + r

迭代 Bellman 不等式 V_{i-1} ≤ ℓ + γ·V_i(Az+Bu) (i = 1..M，V_0 = V_M 以变量别名实现)
对所有 (u_sw, u_prev) 组合写成 9×9 的 LMI，最大化 ∫V dc 得到最大的下界估计。
"""
import time
import itertools
from dataclasses import dataclass, field

import numpy as np

from configs.settings import settings
from src.errors import ModelError
from src.utils import debug, log
from src.drive.perunit import SwitchPosition, SWITCH_LEVELS
from src.drive.augmentation import (
    AugmentedModel, AugmentedState, CONST, FREE, N_STATE, augmented_vector,
    feasible_inputs, input_vector, p_from_inputs, stage_cost,
)
from src.adp.backends import ConicProblem, LmiBlock, get_backend

# 参与优化的下标: 除常数位外全部 (常数只体现在 r 中)
VAR_INDEX = np.array([i for i in range(N_STATE) if i != CONST])
N_FREE = FREE.stop - FREE.start
_TRIU = np.triu_indices(len(VAR_INDEX))
N_THETA = len(_TRIU[0]) + len(VAR_INDEX) + 1


@dataclass(frozen=True, eq=False)
class QuadValueFunction:
    P: np.ndarray
    q: np.ndarray
    r: float = 0.0

    def __post_init__(self):
        P = np.asarray(self.P, dtype=float)
        q = np.asarray(self.q, dtype=float).ravel()
        if P.ndim != 2 or P.shape[0] != P.shape[1] or q.shape[0] != P.shape[0]:
            raise ModelError(f"❌ 值函数维度错误: P{P.shape}, q{q.shape}")
        if not np.allclose(P, P.T, rtol=0.0, atol=1e-9 * max(1.0, np.abs(P).max())):
            raise ModelError("❌ P 必须对称")
        object.__setattr__(self, "P", P)
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "r", float(self.r))

    @classmethod
    def zeros(cls, n=N_STATE) -> "QuadValueFunction":
        return cls(np.zeros((n, n)), np.zeros(n), 0.0)

    @property
    def n(self) -> int:
        return self.P.shape[0]

    def __call__(self, z):
        z = np.asarray(z, dtype=float)
        quad = np.einsum("...i,ij,...j->...", z, self.P, z)
        return quad + 2.0 * (z @ self.q) + self.r

    def homogeneous(self) -> np.ndarray:
        """S = [[P, q], [qᵀ, r]]"""
        n = self.n
        S = np.zeros((n + 1, n + 1))
        S[:n, :n] = self.P
        S[:n, n] = self.q
        S[n, :n] = self.q
        S[n, n] = self.r
        return S


def evaluate_tail(vf: QuadValueFunction, x) -> float:
    z = augmented_vector(x) if isinstance(x, AugmentedState) else np.asarray(x, dtype=float)
    return vf(z)


def theta_to_vf(theta) -> QuadValueFunction:
    theta = np.asarray(theta, dtype=float)
    n_p = len(_TRIU[0])
    k = len(VAR_INDEX)
    sub = np.zeros((k, k))
    sub[_TRIU] = theta[:n_p]
    sub = sub + np.triu(sub, 1).T
    P = np.zeros((N_STATE, N_STATE))
    P[np.ix_(VAR_INDEX, VAR_INDEX)] = sub
    q = np.zeros(N_STATE)
    q[VAR_INDEX] = theta[n_p:n_p + k]
    return QuadValueFunction(P, q, float(theta[-1]))


def _basis_vfs():
    for j in range(N_THETA):
        e = np.zeros(N_THETA)
        e[j] = 1.0
        yield theta_to_vf(e)


@dataclass(eq=False)
class BellmanSdp:
    """
    迭代 Bellman SDP 的设置。c(·) 由均值 μ_c 与协方差 Σ_c 描述 (常数位均值 1、方差 0)，
    目标函数 ∫V dc = Tr(P·E[zzᵀ]) + 2qᵀμ_c + r，其中 E[zzᵀ] = Σ_c + μ_c μ_cᵀ。
    """
    M_iters: int
    gamma: float
    mu_c: np.ndarray
    Sigma_c: np.ndarray
    combos: list = field(default_factory=list)

    def __post_init__(self):
        if self.M_iters < 1:
            raise ModelError("❌ Bellman 迭代次数 M 必须 ≥ 1")
        self.mu_c = np.asarray(self.mu_c, dtype=float).ravel()
        self.Sigma_c = np.asarray(self.Sigma_c, dtype=float)
        if self.mu_c.shape != (N_STATE,) or self.Sigma_c.shape != (N_STATE, N_STATE):
            raise ModelError(f"❌ c(·) 的矩维度错误: μ{self.mu_c.shape}, Σ{self.Sigma_c.shape}")
        if not np.allclose(self.Sigma_c, self.Sigma_c.T):
            raise ModelError("❌ Σ_c 必须对称")
        if self.mu_c[CONST] != 1.0 or np.any(self.Sigma_c[CONST] != 0.0):
            raise ModelError("❌ 常数位必须均值为 1、方差为 0")
        # 协方差半正定 <=> 矩矩阵 E[zzᵀ] (含常数位) 半正定，即存在对应的分布
        moment = self.second_moment()
        if np.linalg.eigvalsh(moment).min() < -1e-12 * max(1.0, np.abs(moment).max()):
            raise ModelError("❌ c(·) 的矩矩阵 E[zzᵀ] 不是半正定，不对应任何概率分布")

    @classmethod
    def default(cls, model: AugmentedModel, M_iters=50, sigma_scale=1.0, upr_second_moment=2.0 / 3.0):
        """
        c(·): 连续坐标以工作点为中心 (滤波器状态 = f*，即归一化后为 1)，协方差 sigma_scale·I；
        u_prev 取 {-1,0,1} 均匀分布 (均值 0，方差 2/3)
        """
        mu = np.zeros(N_STATE)
        mu[6:8] = 1.0
        mu[CONST] = 1.0
        sigma = np.zeros((N_STATE, N_STATE))
        sigma[FREE, FREE] = sigma_scale * np.eye(N_FREE)
        sigma[9:12, 9:12] = upr_second_moment * np.eye(3)
        return cls(M_iters=M_iters, gamma=model.gamma, mu_c=mu, Sigma_c=sigma, combos=enumerate_combos())

    def second_moment(self) -> np.ndarray:
        """E[zzᵀ] = Σ_c + μ_c μ_cᵀ"""
        return self.Sigma_c + np.outer(self.mu_c, self.mu_c)

    def expected_value(self, vf: QuadValueFunction) -> float:
        """E_c[V(z)] = Tr(P·E[zzᵀ]) + 2qᵀμ_c + r"""
        return float(np.sum(vf.P * self.second_moment()) + 2.0 * vf.q @ self.mu_c + vf.r)

    def objective(self) -> np.ndarray:
        """Tr(P0·E[zzᵀ]) + 2q0ᵀμc + r0 对 θ0 的系数"""
        mom = self.second_moment()[np.ix_(VAR_INDEX, VAR_INDEX)]
        # 非对角元在 P 中出现两次
        weights = np.where(_TRIU[0] == _TRIU[1], 1.0, 2.0) * mom[_TRIU]
        return np.concatenate([weights, 2.0 * self.mu_c[VAR_INDEX], [1.0]])


@dataclass(eq=False)
class ConstraintBlock:
    M_tilde: np.ndarray
    combo: tuple


def enumerate_combos():
    """所有 (u_sw, u_prev) 组合，每相 7 种 (去掉 −1↔1)，共 343 个；u_prev 在外层按字典序"""
    combos = []
    for prev in itertools.product(SWITCH_LEVELS, repeat=3):
        u_prev = SwitchPosition(*prev)
        for u_sw, _ in feasible_inputs(u_prev):
            combos.append((u_sw, u_prev))
    return combos


def build_G_L_S(vf_i: QuadValueFunction, vf_prev: QuadValueFunction, u, model: AugmentedModel) -> np.ndarray:
    """
    M_i(u) = L + γ·G_i(u) − S_{i−1}，满足
        [z;1]ᵀ M_i(u) [z;1] = ℓ(z) + γ·V_i(Az+Bu) − V_{i−1}(z)
    G_i 中的 Ψ、Φ、Γ 统一使用 (P_i, q_i, r_i)
    """
    A, B, C = model.A, model.B, model.C
    u = np.asarray(u, dtype=float)
    n = A.shape[0]
    if B.shape != (n, u.shape[0]) or vf_i.n != n or vf_prev.n != n:
        raise ModelError("❌ build_G_L_S 维度不一致")
    P, q, r = vf_i.P, vf_i.q, vf_i.r
    Bu = B @ u
    PBu = P @ Bu

    L = np.zeros((n + 1, n + 1))
    L[:n, :n] = C.T @ C

    G = np.zeros((n + 1, n + 1))
    G[:n, :n] = A.T @ P @ A
    phi = A.T @ (PBu + q)
    G[:n, n] = phi
    G[n, :n] = phi
    G[n, n] = Bu @ PBu + 2.0 * q @ Bu + r

    return L + model.gamma * G - vf_prev.homogeneous()


def congruence(combo) -> np.ndarray:
    """T_m (13×9): [z;1] = T_m [z̃;1]，z̃ 为 8 个连续坐标，常数位与 u_prev 由组合给定"""
    _, u_prev = combo
    n = N_STATE
    T_m = np.zeros((n + 1, N_FREE + 1))
    T_m[FREE, :N_FREE] = np.eye(N_FREE)
    T_m[CONST, N_FREE] = 1.0
    T_m[9:12, N_FREE] = u_prev.as_array()
    T_m[n, N_FREE] = 1.0
    return T_m


def reduce_to_Mtilde(M_full: np.ndarray, m) -> ConstraintBlock:
    T_m = congruence(m)
    return ConstraintBlock(M_tilde=T_m.T @ M_full @ T_m, combo=m)


def combo_input(combo) -> np.ndarray:
    u_sw, u_prev = combo
    return input_vector(u_sw, p_from_inputs(u_sw, u_prev))


def coefficient_tensors(model: AugmentedModel, combos):
    """
    对每个组合 m 把 M̃ 写成 θ 的仿射函数:
        vec M̃ = L̃(m) + K_next(m)·θ_i + K_prev(m)·θ_{i−1}
    与迭代序号 i 无关，只算一次
    """
    zero = QuadValueFunction.zeros()
    basis = list(_basis_vfs())
    s = N_FREE + 1
    out = []
    for m in combos:
        u = combo_input(m)
        base = reduce_to_Mtilde(build_G_L_S(zero, zero, u, model), m).M_tilde
        K_next = np.empty((s * s, N_THETA))
        K_prev = np.empty((s * s, N_THETA))
        for j, e in enumerate(basis):
            K_next[:, j] = (reduce_to_Mtilde(build_G_L_S(e, zero, u, model), m).M_tilde - base).ravel(order="F")
            K_prev[:, j] = (reduce_to_Mtilde(build_G_L_S(zero, e, u, model), m).M_tilde - base).ravel(order="F")
        out.append((base, K_next, K_prev))
    return out


def _sparse(K, offset):
    rows, cols = np.nonzero(np.abs(K) > 0)
    return rows, cols + offset, K[rows, cols]


def build_conic_problem(sdp: BellmanSdp, model: AugmentedModel, tensors=None) -> ConicProblem:
    M = sdp.M_iters
    tensors = tensors if tensors is not None else coefficient_tensors(model, sdp.combos)
    c = np.zeros(M * N_THETA)
    c[:N_THETA] = -sdp.objective()
    blocks = []
    for i in range(1, M + 1):
        prev_off = (i - 1) * N_THETA
        next_off = (i % M) * N_THETA
        for base, K_next, K_prev in tensors:
            if prev_off == next_off:
                rows, cols, vals = _sparse(K_next + K_prev, next_off)
            else:
                r1, c1, v1 = _sparse(K_next, next_off)
                r2, c2, v2 = _sparse(K_prev, prev_off)
                rows, cols, vals = np.concatenate([r1, r2]), np.concatenate([c1, c2]), np.concatenate([v1, v2])
            blocks.append(LmiBlock(F0=base, rows=rows, cols=cols, vals=vals))
    return ConicProblem(c=c, blocks=blocks)


@dataclass
class TrainingReport:
    objective: float
    status: str
    iterations: int
    n_blocks: int
    min_block_eig: float
    psd_ok: bool
    seconds: float


@dataclass(eq=False)
class TrainingResult:
    vf: QuadValueFunction
    iterates: list
    report: TrainingReport


def block_min_eigenvalues(problem: ConicProblem, x: np.ndarray) -> np.ndarray:
    mats = np.stack([blk.evaluate(x) for blk in problem.blocks])
    mats = 0.5 * (mats + np.swapaxes(mats, 1, 2))
    return np.linalg.eigvalsh(mats)[:, 0]


def train_tail(sdp: BellmanSdp, model: AugmentedModel, backend=None) -> TrainingResult:
    backend = get_backend(backend) if not hasattr(backend, "solve") else backend
    start = time.perf_counter()
    log("ADP", f"🚀 构造 SDP: M={sdp.M_iters}, |𝓜|={len(sdp.combos)}, 变量 {sdp.M_iters * N_THETA}")
    problem = build_conic_problem(sdp, model)
    debug("ADP", f"LMI 块: {len(problem.blocks)}，构造耗时 {time.perf_counter() - start:.2f}s")

    solution = backend.solve(problem)
    x = solution.x
    iterates = [theta_to_vf(x[i * N_THETA:(i + 1) * N_THETA]) for i in range(sdp.M_iters)]

    eigs = block_min_eigenvalues(problem, x)
    scale = max(1.0, max(float(np.abs(b.F0).max()) for b in problem.blocks))
    tol = settings.PSD_TOL * scale
    min_eig = float(eigs.min())
    psd_ok = min_eig >= -tol
    if not psd_ok:
        log("ADP", f"⚠️ {int((eigs < -tol).sum())} 个约束块违反 PSD (最小特征值 {min_eig:.3e}, 容差 {tol:.1e})", "warn")

    objective = float(sdp.objective() @ x[:N_THETA])
    report = TrainingReport(
        objective=objective, status=solution.status, iterations=solution.iterations,
        n_blocks=len(problem.blocks), min_block_eig=min_eig, psd_ok=psd_ok,
        seconds=time.perf_counter() - start,
    )
    log("ADP", f"✅ SDP 完成: 目标 {objective:.6g}, 状态 {solution.status}, 耗时 {report.seconds:.1f}s", "ok")
    return TrainingResult(vf=iterates[0], iterates=iterates, report=report)


def solve_tail_sdp(sdp: BellmanSdp, model: AugmentedModel, backend=None) -> QuadValueFunction:
    return train_tail(sdp, model, backend).vf


# ==========================================
# 训练后的性质检查
# ==========================================

@dataclass
class BellmanCheck:
    min_slack: float            # 原始松弛量最小值
    min_scaled_slack: float     # 除以 (1 + ‖z̃‖²) 后的最小值
    n_samples: int
    n_links: int


def sample_states(sdp: BellmanSdp, n_samples, rng):
    """z̃ ~ N(μ_c, Σ_c) (连续坐标)，u_prev 在 {-1,0,1}³ 上均匀"""
    z = np.zeros((n_samples, N_STATE))
    z[:, FREE] = rng.multivariate_normal(sdp.mu_c[FREE], sdp.Sigma_c[FREE, FREE], size=n_samples)
    z[:, CONST] = 1.0
    z[:, 9:12] = rng.integers(-1, 2, size=(n_samples, 3))
    return z


def check_bellman_inequality(iterates, model: AugmentedModel, sdp: BellmanSdp,
                             n_samples=100000, seed=0) -> BellmanCheck:
    """
    对采样状态检查每一环 V_{i−1}(z) ≤ min_u ℓ(z) + γ·V_i(Az+Bu)。
    只有 V0 时 (M = 1) 即单步 Bellman 不等式。
    """
    iterates = list(iterates)
    M = len(iterates)
    rng = np.random.default_rng(seed)
    z = sample_states(sdp, n_samples, rng)
    ell = stage_cost(model, z)
    scale = 1.0 + np.sum(z[:, FREE] ** 2, axis=1)

    slack = np.full(n_samples, np.inf)
    upr = z[:, 9:12].astype(int)
    keys = (upr[:, 0] + 1) * 9 + (upr[:, 1] + 1) * 3 + (upr[:, 2] + 1)
    for key in np.unique(keys):
        idx = np.nonzero(keys == key)[0]
        u_prev = SwitchPosition(*(int(v) for v in upr[idx[0]]))
        U = np.stack([input_vector(u_sw, p) for u_sw, p in feasible_inputs(u_prev)])
        Zk = z[idx]
        nxt = (Zk @ model.A.T)[:, None, :] + (U @ model.B.T)[None, :, :]
        for i in range(1, M + 1):
            v_next = iterates[i % M](nxt)
            rhs = ell[idx] + model.gamma * v_next.min(axis=1)
            s = rhs - iterates[i - 1](Zk)
            slack[idx] = np.minimum(slack[idx], s)

    return BellmanCheck(
        min_slack=float(slack.min()),
        min_scaled_slack=float((slack / scale).min()),
        n_samples=n_samples,
        n_links=M,
    )


def discounted_rollout_cost(model: AugmentedModel, x0, policy, steps=2000) -> float:
    """沿闭环轨迹累加 Σ γᵏ ℓ(x_k)；policy(x) 返回 6 维输入"""
    x = np.asarray(x0, dtype=float).copy()
    total, weight = 0.0, 1.0
    for _ in range(steps):
        total += weight * float(stage_cost(model, x))
        x = model.A @ x + model.B @ np.asarray(policy(x), dtype=float)
        weight *= model.gamma
    return total
