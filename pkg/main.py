import sys
import os
import argparse
from colorama import init, Fore

# 确保项目根目录在 python path 中
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from configs.settings import settings
from configs.run import list_presets, load_run_config
from src.errors import AcceptanceFailure, ConfigError, LabError, SolverError

init(autoreset=True)

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_ACCEPTANCE = 0, 1, 2, 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="npc-adp", description=f"{settings.PROJECT_NAME} v{settings.VERSION}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, multi=False):
        if multi:
            p.add_argument("--config", action="append", default=None,
                           help="配置文件路径或预设名 (可重复)；预设: " + ", ".join(list_presets()))
        else:
            p.add_argument("--config", default=None, help="配置文件路径或预设名")
        p.add_argument("--out", default=None, help=f"输出目录 (默认 {settings.OUTPUT_DIR})")
        p.add_argument("--ci", action="store_true", help="使用较少的 Bellman 迭代次数训练尾代价")
        p.add_argument("--check", action="store_true", help="执行验收检查，失败时退出码为 3")

    p_train = sub.add_parser("train", help="离线求解 SDP，得到尾代价")
    common(p_train)
    p_train.add_argument("--backend", default=None, help=f"SDP 后端 (默认 {settings.SDP_BACKEND})")

    p_sim = sub.add_parser("simulate", help="闭环仿真并计算指标")
    common(p_sim)
    p_sim.add_argument("--tail", default=None, help="尾代价文件")
    p_sim.add_argument("--profile", choices=["float", "fixed"], default=None)
    p_sim.add_argument("--horizon", type=int, choices=[1, 2, 3], default=None)

    p_cmp = sub.add_parser("compare", help="ADP 与 DMPC 的稳态对比表")
    common(p_cmp, multi=True)
    p_cmp.add_argument("--tail", action="append", default=[], help="尾代价文件 (可重复，按指纹匹配)")
    p_cmp.add_argument("--horizon", type=int, choices=[1, 2, 3], default=None)
    return parser


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    from src import cli

    print(Fore.CYAN + f"=== {settings.PROJECT_NAME} v{settings.VERSION}: {args.command} ===")
    try:
        if args.command == "train":
            cfg = load_run_config(args.config)
            cli.cmd_train(cfg, args.out, ci=args.ci, check=args.check, backend=args.backend)
        elif args.command == "simulate":
            cfg = load_run_config(args.config).with_overrides(profile=args.profile, horizon=args.horizon)
            cli.cmd_simulate(cfg, args.tail, args.out, check=args.check, ci=args.ci)
        else:
            names = args.config or list(cli.DEFAULT_COMPARE)
            cli.cmd_compare(names, args.tail, args.out, ci=args.ci, check=args.check, horizon=args.horizon)
    except AcceptanceFailure as e:
        print(Fore.RED + str(e))
        return EXIT_ACCEPTANCE
    except SolverError as e:
        print(Fore.RED + str(e))
        return EXIT_SOLVER
    except ConfigError as e:
        print(Fore.RED + str(e))
        return EXIT_CONFIG
    except LabError as e:
        print(Fore.RED + str(e))
        return EXIT_CONFIG
    print(Fore.GREEN + "=== 完成 ===")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(run())
