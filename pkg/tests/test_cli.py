"""
命令行

 Group 1 — simulate
   1.  DMPC 短运行写出轨迹与指标，重复运行逐字节相同，轨迹记录控制器标签
   2.  ADP 缺少尾代价且指纹不符时报错

 Group 2 — 验收判定
   3.  稳态 / 阶跃阈值
   4.  ADP 与 DMPC 的排序检查

 Group 3 — 入口
   5.  退出码: 成功 0，配置错误 1
   6.  对比表渲染为纯文本

 Group 4 — 验收 (训练尾代价，-m acceptance 运行)
   7.  稳态对比: ADP 优于 DMPC，N=2 优于 N=1
   8.  转矩阶跃的调节时间
"""
import os

import pytest

from configs.run import RunConfig, load_run_config
from src import cli
from src.errors import FingerprintMismatch
from src.sim.metrics import RunMetrics, SettlingResult
from src.utils import save_tail

import main

SHORT = dict(controller="dmpc", warmup_periods=1, duration_periods=2)


# ── Group 1 ──────────────────────────────────────────────────────────

def test_simulate_is_deterministic(tmp_path):
    cfg = RunConfig(**SHORT)
    first = cli.cmd_simulate(cfg, out_dir=str(tmp_path / "a"))
    second = cli.cmd_simulate(cfg, out_dir=str(tmp_path / "b"))
    for key in ("trace", "metrics"):
        assert os.path.basename(first[key]) == os.path.basename(second[key])
        with open(first[key], "rb") as fa, open(second[key], "rb") as fb:
            assert fa.read() == fb.read()
    with open(first["metrics"], encoding="utf-8") as f:
        text = f.read()
    assert f"config_fingerprint={cfg.config_fingerprint()}" in text
    assert "thd_mean_percent=" in text
    with open(first["trace"], encoding="utf-8") as f:
        assert "controller_label=dmpc-N1" in f.read()


def test_adp_tail_fingerprint_checked(tmp_path, tail):
    cfg = RunConfig(**{**SHORT, "controller": "adp"})
    path = save_tail(str(tmp_path / "tail.txt"), tail, "0000000000000000")
    with pytest.raises(FingerprintMismatch):
        cli.cmd_simulate(cfg, tail_path=path, out_dir=str(tmp_path))


# ── Group 2 ──────────────────────────────────────────────────────────

def _metrics(thd, fsw, f_hat=None, settling=()):
    return RunMetrics(thd_mean=thd, thd_defined=True, fsw_measured=fsw,
                      fsw_filter_final=fsw if f_hat is None else f_hat,
                      settling=list(settling), max_delta_u=1)


def test_simulate_thresholds():
    cfg = RunConfig(controller="adp", horizon=1)
    assert cli.simulate_failures(cfg, _metrics(5.3, 300.0)) == []
    assert len(cli.simulate_failures(cfg, _metrics(7.0, 350.0, f_hat=200.0))) == 3

    steps = RunConfig(torque_steps="0.03:0,0.04:1", warmup_periods=1, duration_periods=3)
    good = [SettlingResult(0.03, 1.0, 0.0, 0.4, True, 0.0), SettlingResult(0.04, 0.0, 1.0, 3.5, True, 0.95)]
    assert cli.simulate_failures(steps, _metrics(9.0, 500.0, settling=good)) == []
    slow = [SettlingResult(0.03, 1.0, 0.0, 1.2, True, 0.0), good[1]]
    assert len(cli.simulate_failures(steps, _metrics(9.0, 500.0, settling=slow))) == 1


def test_compare_orderings():
    adp1, dmpc1 = RunConfig(horizon=1), RunConfig(controller="dmpc", horizon=1)
    adp2 = RunConfig(horizon=2, delta=5.1)
    rows = [(adp1, "a1", _metrics(5.2, 300.0)), (dmpc1, "d1", _metrics(6.9, 310.0)),
            (adp2, "a2", _metrics(5.0, 305.0))]
    assert cli.compare_failures(rows) == []
    rows[2] = (adp2, "a2", _metrics(5.19, 305.0))
    assert len(cli.compare_failures(rows)) == 1
    rows[1] = (dmpc1, "d1", _metrics(6.9, 400.0))
    assert len(cli.compare_failures(rows)) == 2


# ── Group 3 ──────────────────────────────────────────────────────────

def test_exit_codes(tmp_path):
    cfg_path = tmp_path / "short.env"
    cfg_path.write_text("\n".join(f"{k}={v}" for k, v in SHORT.items()) + "\n", encoding="utf-8")
    assert main.run(["simulate", "--config", str(cfg_path), "--out", str(tmp_path)]) == main.EXIT_OK
    assert main.run(["simulate", "--config", "no-such-preset"]) == main.EXIT_CONFIG


def test_render_report():
    rows = [(RunConfig(horizon=1), "table2-n1", _metrics(5.24, 301.0)),
            (RunConfig(controller="dmpc"), "table2-n1-dmpc", _metrics(6.9, 299.0))]
    text = cli.render_report(rows)
    assert "table2-n1-dmpc" in text
    assert "5.240" in text
    assert "\x1b[" not in text


# ── Group 4 ──────────────────────────────────────────────────────────

@pytest.mark.slow
@pytest.mark.acceptance
def test_steady_state_comparison(tmp_path):
    """训练 N=1、N=2 的尾代价，ADP 在相同开关频率下 THD 低于 DMPC，且 N=2 优于 N=1"""
    path = cli.cmd_compare(cli.DEFAULT_COMPARE, out_dir=str(tmp_path), check=True)
    assert os.path.isfile(path)


@pytest.mark.slow
@pytest.mark.acceptance
def test_torque_step_transients(tmp_path):
    """额定 -> 0 -> 额定 的阶跃: 下降沿与上升沿的调节时间在验收区间内"""
    cfg = load_run_config("fig6-steps")
    paths = cli.cmd_simulate(cfg, out_dir=str(tmp_path), check=True)
    with open(paths["metrics"], encoding="utf-8") as f:
        assert "controller=adp" in f.read()
