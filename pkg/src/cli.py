"""
命令行子命令: train / simulate / compare

所有输出文件都带配置指纹；耗时类信息只打印到控制台，不写入文件，
相同配置重复运行得到逐字节相同的输出。
"""
import io
import os
from concurrent.futures import ProcessPoolExecutor

from rich.console import Console
from rich.table import Table

from configs.settings import settings
from configs.run import RunConfig, load_run_config
from src.errors import AcceptanceFailure
from src.utils import fingerprint, load_tail, log, read_tail_header, save_tail, write_text
from src.adp.trainer import BellmanSdp, check_bellman_inequality, train_tail
from src.mpc.controller import build_controller, model_from_config
from src.sim.loop import run_closed_loop

# 验收阈值 (稳态表格与转矩阶跃实验)
ACCEPTANCE = {
    "thd_n1_target": 5.24,
    "thd_n1_tol": 0.75,
    "fsw_band": (270.0, 330.0),
    "filter_consistency": 0.05,
    "settle_drop_ms": (0.25, 0.60),
    "settle_rise_ms": (2.5, 5.0),
    "fixed_thd_tol": 0.1,
    "fixed_replay_match": 0.99,
    "replay_steps": 1000,
    "n2_thd_gain": 0.05,
    "compare_fsw_match": 0.10,
}

DEFAULT_COMPARE = ("table2-n1", "table2-n1-dmpc", "table2-n2", "table2-n2-dmpc")


def tail_path_for(cfg: RunConfig, out_dir) -> str:
    return os.path.join(out_dir, f"tail-{cfg.tail_fingerprint()}.txt")


def _header(cfg: RunConfig) -> list:
    return [f"config_fingerprint={cfg.config_fingerprint()}", f"tail_fingerprint={cfg.tail_fingerprint()}"]


# ==========================================
# train
# ==========================================

def cmd_train(cfg: RunConfig, out_dir=None, ci=False, check=False, backend=None) -> str:
    out_dir = out_dir or settings.OUTPUT_DIR
    params, model = model_from_config(cfg)
    M = cfg.ci_bellman_iters if ci else cfg.bellman_iters
    sdp = BellmanSdp.default(model, M, cfg.sigma_scale, cfg.upr_second_moment)
    result = train_tail(sdp, model, backend)

    tail_fp = cfg.tail_fingerprint()
    path = save_tail(tail_path_for(cfg, out_dir), result.vf, tail_fp, meta={
        "bellman_iters": M,
        "objective": f"{result.report.objective:.12g}",
        "status": result.report.status,
    })
    log("ADP", f"✅ 尾代价已保存: {path}", "ok")

    samples = cfg.bellman_samples if check else min(cfg.bellman_samples, 10000)
    bell = check_bellman_inequality(result.iterates, model, sdp, n_samples=samples, seed=cfg.seed)
    lines = [
        "# train report",
        *_header(cfg),
        f"bellman_iters={M}",
        f"objective={result.report.objective:.12g}",
        f"status={result.report.status}",
        f"lmi_blocks={result.report.n_blocks}",
        f"min_block_eig={result.report.min_block_eig:.6e}",
        f"psd_ok={int(result.report.psd_ok)}",
        f"bellman_samples={bell.n_samples}",
        f"bellman_min_slack={bell.min_slack:.6e}",
        f"bellman_min_scaled_slack={bell.min_scaled_slack:.6e}",
    ]
    write_text(os.path.join(out_dir, f"train-{tail_fp}.txt"), "\n".join(lines) + "\n")
    log("ADP", f"Bellman 抽检: {bell.n_samples} 个状态, 最小松弛 {bell.min_scaled_slack:.3e}")

    if check:
        failures = []
        if bell.min_scaled_slack < -cfg.bellman_slack:
            failures.append(f"Bellman 不等式松弛 {bell.min_scaled_slack:.3e} < −{cfg.bellman_slack:g}")
        if not result.report.psd_ok:
            failures.append(f"LMI 块最小特征值 {result.report.min_block_eig:.3e}")
        if failures:
            raise AcceptanceFailure(failures)
        log("ADP", "✅ 训练验收通过", "ok")
    return path


def ensure_tail(cfg: RunConfig, out_dir, tail_path=None, ci=False):
    """ADP 需要尾代价: 优先 --tail，其次输出目录中按指纹缓存的文件，都没有则现场训练"""
    if cfg.controller != "adp":
        return None
    path = tail_path or tail_path_for(cfg, out_dir)
    if tail_path is None and not os.path.isfile(path):
        log("CLI", f"⚠️ 未找到尾代价 {path}，开始训练", "warn")
        path = cmd_train(cfg, out_dir, ci=ci)
    vf, _ = load_tail(path, expected_fp=cfg.tail_fingerprint())
    return vf


# ==========================================
# simulate
# ==========================================

def simulate(cfg: RunConfig, tail=None, record=False):
    params, model = model_from_config(cfg)
    controller = build_controller(cfg, tail, record=record, model=model, params=params)
    trace, metrics = run_closed_loop(cfg.scenario(), params, controller)
    return controller, trace, metrics


def fixed_point_parity(cfg: RunConfig, tail):
    """定点与浮点: 浮点运行的指标，以及定点控制器按浮点记录回放 1000 拍的一致率"""
    from src.mpc.fixedpoint import replay_decisions

    float_ctrl, _, float_metrics = simulate(cfg.with_overrides(profile="float"), tail, record=True)
    fixed = build_controller(cfg.with_overrides(profile="fixed"), tail)
    W = cfg.warmup_periods * cfg.period_steps
    records = float_ctrl.history[W:W + ACCEPTANCE["replay_steps"]]
    return float_metrics, replay_decisions(fixed, records)


def cmd_simulate(cfg: RunConfig, tail_path=None, out_dir=None, check=False, ci=False) -> dict:
    out_dir = out_dir or settings.OUTPUT_DIR
    tail = ensure_tail(cfg, out_dir, tail_path, ci=ci)
    controller, trace, metrics = simulate(cfg, tail)
    cfp = cfg.config_fingerprint()

    paths = {
        "trace": trace.to_csv(os.path.join(out_dir, f"trace-{cfp}.csv"), _header(cfg)),
    }
    lines = ["# metrics", *_header(cfg), f"controller={cfg.controller}", f"controller_label={controller.label}",
             f"horizon={cfg.horizon}", f"profile={cfg.profile}", *metrics.as_lines()]

    failures = []
    if cfg.profile == "fixed":
        paths["audit"] = write_text(os.path.join(out_dir, f"audit-{cfp}.txt"),
                                    "\n".join(_header(cfg)) + "\n" + controller.audit.report(controller.formats))
        if check:
            float_metrics, replay = fixed_point_parity(cfg, tail)
            gap = abs(metrics.thd_mean - float_metrics.thd_mean)
            lines += [f"float_thd_mean_percent={float_metrics.thd_mean:.4f}",
                      f"replay_match={replay.match_fraction:.4f}"]
            if not gap <= ACCEPTANCE["fixed_thd_tol"]:
                failures.append(f"定点 THD 偏差 {gap:.3f} pp")
            if replay.match_fraction < ACCEPTANCE["fixed_replay_match"]:
                failures.append(f"回放一致率 {replay.match_fraction:.2%}")

    paths["metrics"] = write_text(os.path.join(out_dir, f"metrics-{cfp}.txt"), "\n".join(lines) + "\n")

    log("Sim", f"THD {metrics.thd_mean:.3f}% | f_sw {metrics.fsw_measured:.1f} Hz | f̂ {metrics.fsw_filter_final:.1f} Hz", "ok")
    for s in metrics.settling:
        flag = "" if s.settled else " (未稳定)"
        log("Sim", f"阶跃 {s.torque_from:g}→{s.torque_to:g} @ {s.time * 1e3:.1f} ms: 调节时间 {s.settling_ms:.3f} ms{flag}")
    log("Sim", f"候选评估吞吐 {metrics.throughput:.3g} 个/秒 (仅供参考)")

    if check:
        failures += simulate_failures(cfg, metrics)
        if failures:
            raise AcceptanceFailure(failures)
        log("Sim", "✅ 仿真验收通过", "ok")
    return paths


def simulate_failures(cfg: RunConfig, metrics) -> list:
    failures = []
    if not metrics.shoot_through_free:
        failures.append("出现 |Δu| = 2 的跳变")
    if not cfg.torque_steps:
        lo, hi = ACCEPTANCE["fsw_band"]
        if not lo <= metrics.fsw_measured <= hi:
            failures.append(f"开关频率 {metrics.fsw_measured:.1f} Hz 不在 [{lo}, {hi}]")
        if metrics.filter_consistency > ACCEPTANCE["filter_consistency"]:
            failures.append(f"滤波器估计偏差 {metrics.filter_consistency:.2%}")
        if cfg.controller == "adp" and cfg.horizon == 1:
            gap = abs(metrics.thd_mean - ACCEPTANCE["thd_n1_target"])
            if not gap <= ACCEPTANCE["thd_n1_tol"]:
                failures.append(f"THD {metrics.thd_mean:.2f}% 偏离 {ACCEPTANCE['thd_n1_target']}%")
    for s in metrics.settling:
        band = ACCEPTANCE["settle_drop_ms"] if abs(s.torque_to) < abs(s.torque_from) else ACCEPTANCE["settle_rise_ms"]
        if not s.settled or not band[0] <= s.settling_ms <= band[1]:
            failures.append(f"阶跃 {s.torque_from:g}→{s.torque_to:g} 调节时间 {s.settling_ms:.3f} ms 不在 {band}")
    return failures


# ==========================================
# compare
# ==========================================

def _compare_job(cfg_values, tail_path):
    cfg = RunConfig.model_validate(cfg_values)
    tail = load_tail(tail_path, expected_fp=cfg.tail_fingerprint())[0] if tail_path else None
    _, _, metrics = simulate(cfg, tail)
    return metrics


def render_report(rows) -> str:
    table = Table(title="ADP vs DMPC (steady state)")
    for col in ("config", "controller", "N", "delta / lambda_u", "THD [%]", "f_sw [Hz]", "f_hat [Hz]"):
        table.add_column(col, justify="right" if col not in ("config", "controller") else "left")
    for cfg, name, metrics in rows:
        weight = f"{cfg.delta:g}" if cfg.controller == "adp" else f"{cfg.lambda_u:g}"
        table.add_row(name, cfg.controller, str(cfg.horizon), weight, f"{metrics.thd_mean:.3f}",
                      f"{metrics.fsw_measured:.1f}", f"{metrics.fsw_filter_final:.1f}")
    console = Console(file=io.StringIO(), width=100, color_system=None, record=True)
    console.print(table)
    return console.export_text()


def cmd_compare(names_or_cfgs=DEFAULT_COMPARE, tails=(), out_dir=None, ci=False, check=False, horizon=None) -> str:
    out_dir = out_dir or settings.OUTPUT_DIR
    entries = []
    for item in names_or_cfgs:
        cfg = item if isinstance(item, RunConfig) else load_run_config(item)
        cfg = cfg.with_overrides(horizon=horizon)
        entries.append((cfg, item if isinstance(item, str) else cfg.config_fingerprint()))

    # 尾代价: 显式给出的按指纹匹配，其余按需训练
    explicit = {}
    for path in tails:
        explicit[read_tail_header(path).get("fingerprint", "")] = path
    jobs = []
    for cfg, _ in entries:
        tail_path = None
        if cfg.controller == "adp":
            tail_path = explicit.get(cfg.tail_fingerprint())
            if tail_path is None:
                ensure_tail(cfg, out_dir, None, ci=ci)
                tail_path = tail_path_for(cfg, out_dir)
        jobs.append((cfg.model_dump(), tail_path))

    if settings.WORKERS > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=settings.WORKERS) as pool:
            results = list(pool.map(_compare_job, *zip(*jobs)))
    else:
        results = [_compare_job(*job) for job in jobs]

    rows = [(cfg, name, metrics) for (cfg, name), metrics in zip(entries, results)]
    fingerprints = ",".join(cfg.config_fingerprint() for cfg, _ in entries)
    report = f"# compare report\n# configs={fingerprints}\n" + render_report(rows)
    path = write_text(os.path.join(out_dir, f"compare-{fingerprint({'configs': fingerprints})}.txt"), report)
    print(report)
    log("CLI", f"✅ 对比报告: {path}", "ok")

    if check:
        failures = compare_failures(rows)
        if failures:
            raise AcceptanceFailure(failures)
        log("CLI", "✅ 对比验收通过", "ok")
    return path


def compare_failures(rows) -> list:
    failures = []
    by_key = {(cfg.controller, cfg.horizon): m for cfg, _, m in rows}
    tol = ACCEPTANCE["compare_fsw_match"]
    for (kind, N), adp in by_key.items():
        if kind != "adp":
            continue
        base = by_key.get(("dmpc", N))
        if base is not None:
            matched = abs(adp.fsw_measured - base.fsw_measured) <= tol * max(base.fsw_measured, 1e-9)
            if not matched:
                failures.append(f"N={N}: 开关频率不匹配 ({adp.fsw_measured:.0f} vs {base.fsw_measured:.0f} Hz)")
            elif not adp.thd_mean < base.thd_mean:
                failures.append(f"N={N}: ADP THD {adp.thd_mean:.2f}% 不低于 DMPC {base.thd_mean:.2f}%")
    n1, n2 = by_key.get(("adp", 1)), by_key.get(("adp", 2))
    if n1 is not None and n2 is not None and not n2.thd_mean <= n1.thd_mean - ACCEPTANCE["n2_thd_gain"]:
        failures.append(f"ADP N=2 THD {n2.thd_mean:.2f}% 未低于 N=1 {n1.thd_mean:.2f}% − {ACCEPTANCE['n2_thd_gain']}")
    return failures
