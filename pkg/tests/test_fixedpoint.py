"""
定点运算与定点控制器

 Group 1 — 格式与量化
   1.  Q(2,22) 的取值范围 (整数位含符号位)
   2.  饱和而非回绕，并计数
   3.  右移就近偶数舍入
   4.  量化误差不超过半个 LSB
   5.  默认状态格式容纳额定转子磁链

 Group 2 — 定点代价
   6.  候选代价与浮点参照的误差 ≤ 2⁻²²·(6N+1)
   7.  定点选择的候选在浮点参照下也是 (近似) 最优

 Group 3 — 闭环
   8.  按浮点记录回放，决策一致率高
   9.  振荡器定期重新归一化，审计报告完整
  10.  闭环中逐拍调用定点控制器，与浮点决策基本一致
  11.  闭环 THD 与回放一致率满足定点验收阈值
"""
import numpy as np
import pytest

from configs.run import RunConfig
from src import cli
from src.errors import ConfigError
from src.drive.perunit import SwitchPosition, build_discrete, step_plant
from src.mpc.condensed import build_condensed
from src.mpc.controller import MpcController
from src.mpc.fixedpoint import (
    FixedFormat, FixedFormats, FixedPointController, QuantizationAudit,
    dequantize, fixed_controller_step, quantize, quantize_array, replay_decisions, round_shift,
)


# ── Group 1 ──────────────────────────────────────────────────────────

def test_format_range():
    fmt = FixedFormat(2, 22)
    assert fmt.word_length == 24
    assert fmt.max_value == pytest.approx(2.0 - 2.0 ** -22)
    assert fmt.min_int == -(1 << 23)
    assert str(fmt) == "Q(2,22)"
    with pytest.raises(ConfigError):
        FixedFormat(0, 10)
    with pytest.raises(ConfigError):
        FixedFormat(40, 40)


def test_saturation_is_counted():
    fmt = FixedFormat(2, 22)
    audit = QuantizationAudit()
    q = quantize_array([3.0, -5.0, 0.5], fmt, audit, "state")
    assert q[0] == fmt.max_int and q[1] == fmt.min_int
    assert audit.saturations == {"state": 2}
    assert quantize(0.25, fmt).value == 0.25


def test_round_shift_ties_to_even():
    assert list(round_shift(np.array([3, 5, -3, 6, 7]), 1)) == [2, 2, -2, 3, 4]
    assert list(round_shift(np.array([3]), -2)) == [12]


def test_quantization_error():
    fmt = FixedFormat(2, 22)
    x = np.random.default_rng(0).uniform(-1.9, 1.9, size=1000)
    assert np.abs(dequantize(quantize_array(x, fmt), fmt) - x).max() <= 2.0 ** -23


def test_default_state_format_holds_rated_flux(x_ph):
    # 额定工作点 |ψr| ≈ 0.82 pu
    assert np.abs(x_ph).max() < FixedFormats().state.max_value


# ── Group 2 ──────────────────────────────────────────────────────────

@pytest.fixture
def fixed(model, tail, params):
    qp = build_condensed(model, tail, 1)
    return FixedPointController(model, qp, params, formats=FixedFormats())


def test_cost_error_bound(fixed, x0):
    x0_m = fixed.quantize_state(x0)
    for u_prev in [(0, 0, 0), (1, -1, 0)]:
        J, feasible = fixed.candidate_costs(x0_m, u_prev)
        ref = fixed.reference_costs(x0_m, u_prev)
        err = np.abs(dequantize(J, fixed.formats.cost) - ref)[feasible]
        assert err.max() <= 2.0 ** -22 * (6 * fixed.qp.N + 1)
    assert fixed.audit.total_saturations == 0


def test_fixed_choice_is_near_optimal(fixed, x0):
    x0_m = fixed.quantize_state(x0)
    decision = fixed.solve_quantized(x0_m, (0, 0, 0))
    ref = fixed.reference_costs(x0_m, (0, 0, 0))
    bound = 2.0 ** -22 * (6 * fixed.qp.N + 1)
    assert ref[decision.index] <= ref.min() + 2 * bound


# ── Group 3 ──────────────────────────────────────────────────────────

def test_replay_against_float(model, tail, params, x_ph, t_rated):
    qp = build_condensed(model, tail, 1)
    float_ctrl = MpcController(model, qp, params, record=True)
    fixed = FixedPointController(model, build_condensed(model, tail, 1), params)
    x = x_ph.copy()
    dm = build_discrete(params)
    for _ in range(400):
        u = float_ctrl.controller_step(t_rated, x).as_array()
        x = dm.A_ph @ x + dm.B_ph @ u
    report = replay_decisions(fixed, float_ctrl.history)
    assert report.n_steps == 400
    assert report.match_fraction >= 0.9


def test_oscillator_renormalization(model, tail, params, x_ph, t_rated):
    fixed = FixedPointController(model, build_condensed(model, tail, 1), params, renorm_period=100)
    x = x_ph.copy()
    for _ in range(350):
        fixed.step(t_rated, x)
    assert len(fixed.audit.osc_drift) == 3
    assert max(abs(d) for d in fixed.audit.osc_drift) < 1e-4
    text = fixed.audit.report(fixed.formats)
    assert "coeff_format=Q(12,22)" in text
    assert "steps=350" in text
    assert abs(np.linalg.norm(fixed.reference_current) - 1.0) < 1e-4


def test_fixed_controller_step_follows_float(model, tail, params, x_ph, t_rated):
    float_ctrl = MpcController(model, build_condensed(model, tail, 1), params)
    fixed = FixedPointController(model, build_condensed(model, tail, 1), params)
    assert fixed.label == "adp-N1-fixed"
    dm = build_discrete(params)
    x = x_ph.copy()
    matches = 0
    for _ in range(200):
        u_fixed = fixed_controller_step(fixed, t_rated, x)
        u_float = float_ctrl.controller_step(t_rated, x)
        assert isinstance(u_fixed, SwitchPosition)
        matches += tuple(u_fixed) == tuple(u_float)
        x = step_plant(x, u_float, dm)
    assert fixed.audit.steps == 200
    assert matches >= 180


@pytest.mark.slow
def test_fixed_point_parity_in_closed_loop(tail):
    cfg = RunConfig(controller="adp", horizon=1, warmup_periods=1, duration_periods=2, profile="fixed")
    _, _, fixed_metrics = cli.simulate(cfg, tail)
    float_metrics, replay = cli.fixed_point_parity(cfg, tail)
    assert replay.n_steps == cli.ACCEPTANCE["replay_steps"]
    assert replay.match_fraction >= cli.ACCEPTANCE["fixed_replay_match"]
    assert abs(fixed_metrics.thd_mean - float_metrics.thd_mean) <= cli.ACCEPTANCE["fixed_thd_tol"]
