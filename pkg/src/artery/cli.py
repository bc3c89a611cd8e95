"""Command-line front end.

Subcommands cover the whole workflow: run one controller over a
scenario, solve a coordination plan, train the per-strategy signal
policies or the strategy selector, and replay a trained selector over a
demand schedule.  Every run starts from a scenario file; outputs are
plain CSV and structured plan/weight files in the chosen directory.

Exit codes: 0 success, 1 usage problems (bad flags, missing files,
invalid scenarios), 2 infeasible optimization, 3 anything that breaks
at runtime.
"""

from __future__ import annotations

import argparse
import csv
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from .agents import STRATEGIES, StrategyAssignment
from .baselines import (
    BackpressureController,
    FixedPlanController,
    PolicyController,
    run_episode,
)
from .coordinator import (
    OPTIONS,
    HlcEnv,
    HlcRewardWeights,
    evaluate_hlc,
    train_hlc,
    write_decision_log,
)
from .envs import CorridorEnv, build_plan, segment_inputs
from .gwc import GwcInputs, gwc_plan, solve_gwc, webster_splits
from .mfc import MfcInfeasibleError, mfc_plan, solve_mfc
from .net import PolicyParams
from .plan import load_plan, save_plan
from .ppo import train_mode, write_training_log
from .scenario import Scenario, load_scenario
from .sim import EpisodeMetrics

METRICS_FORMAT = "metrics-v1"
METRICS_COLUMNS = (
    "seed",
    "corridor_thru", "corridor_stop", "corridor_speed",
    "network_thru", "network_avg_t",
    "network_in_tt", "network_out_tt", "network_oth_tt",
)

SIM_STRATEGIES = STRATEGIES + ("BP", "fixed-plan")

SERIES_COLUMNS = (
    "tau", "level", "option", "corridor_stops", "corridor_speed",
    "network_queue",
)

# day-scale decision defaults; desk runs shrink them through flags
HLC_WARMUP = 1200.0
HLC_STEP = 3600.0
HLC_MEASURE = 600.0


class CommandError(Exception):
    """Operator-facing failure with a chosen exit code."""

    def __init__(self, message: str, code: int = 1):
        super().__init__(message)
        self.code = code


def _load_scenario(path: str) -> Scenario:
    spot = Path(path)
    if not spot.exists():
        raise CommandError(f"scenario file {path!r} not found")
    try:
        return load_scenario(spot)
    except ValueError as err:
        raise CommandError(f"{path}: {err}") from err


def _pick_level(scenario: Scenario, requested: str | None) -> str:
    if requested is None:
        return "med" if "med" in scenario.levels else sorted(scenario.levels)[0]
    if requested not in scenario.levels:
        raise CommandError(
            f"level {requested!r} not in scenario "
            f"(has {', '.join(sorted(scenario.levels))})"
        )
    return requested


def _load_weights(path: str | None, what: str) -> PolicyParams:
    if path is None:
        raise CommandError(f"{what} needs --weights")
    spot = Path(path)
    if not spot.exists():
        raise CommandError(f"weight file {path!r} not found")
    try:
        return PolicyParams.load(spot)
    except Exception as err:
        raise CommandError(f"{path}: {err}") from err


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# -- simulate --------------------------------------------------------------


def _build_controller(scenario: Scenario, strategy: str, level: str,
                      weights_path: str | None, plan_path: str | None):
    corridor = scenario.corridor
    if strategy == "BP":
        return BackpressureController(corridor)
    if strategy == "fixed-plan":
        if plan_path is None:
            raise CommandError("fixed-plan needs --plan")
        if not Path(plan_path).exists():
            raise CommandError(f"plan file {plan_path!r} not found")
        return FixedPlanController(load_plan(plan_path))
    params = _load_weights(weights_path, f"strategy {strategy}")
    if strategy == "PAC":
        assignment = StrategyAssignment("PAC")
    else:
        segment = scenario.segment(level, 0.0, scenario.episode)
        plan = build_plan(
            strategy, corridor, segment, epoch=scenario.warmup,
            horizon=scenario.plan_horizon,
        )
        assignment = StrategyAssignment(strategy, plan)
    return PolicyController(params, assignment, corridor, mode="argmax")


def _metrics_row(seed: int, metrics: EpisodeMetrics) -> list:
    return [
        seed,
        metrics.thru_corridor, f"{metrics.stop:.6f}", f"{metrics.speed:.6f}",
        metrics.thru, f"{metrics.avg_t:.6f}",
        f"{metrics.in_tt:.6f}", f"{metrics.out_tt:.6f}",
        f"{metrics.oth_tt:.6f}",
    ]


def write_metrics_csv(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# {METRICS_FORMAT}\n")
        writer = csv.writer(fh)
        writer.writerow(METRICS_COLUMNS)
        for seed, metrics in rows:
            writer.writerow(_metrics_row(seed, metrics))


def _episode_worker(scenario_path, strategy, level, weights, plan, seed):
    scenario = load_scenario(scenario_path)
    controller = _build_controller(scenario, strategy, level, weights, plan)
    metrics, _ = run_episode(
        scenario.corridor, scenario.level_profile(level, seed=seed),
        controller, seed=seed, episode=scenario.episode,
        warmup=scenario.warmup, kappa=scenario.kappa,
    )
    return metrics


def cmd_simulate(args) -> None:
    scenario = _load_scenario(args.scenario)
    level = _pick_level(scenario, args.level)
    out = _out_dir(args)
    if args.strategy not in SIM_STRATEGIES:
        raise CommandError(
            f"unknown strategy {args.strategy!r} "
            f"(choose from {', '.join(SIM_STRATEGIES)})"
        )
    seeds = [args.seed + k for k in range(args.parallel)]
    if args.parallel > 1:
        with ProcessPoolExecutor(max_workers=args.parallel) as pool:
            futures = [
                pool.submit(_episode_worker, args.scenario, args.strategy,
                            level, args.weights, args.plan, seed)
                for seed in seeds
            ]
            rows = [(s, f.result()) for s, f in zip(seeds, futures)]
    else:
        controller = _build_controller(
            scenario, args.strategy, level, args.weights, args.plan
        )
        metrics, sim = run_episode(
            scenario.corridor, scenario.level_profile(level, seed=args.seed),
            controller, seed=args.seed, episode=scenario.episode,
            warmup=scenario.warmup, kappa=scenario.kappa, record_events=True,
        )
        rows = [(args.seed, metrics)]
        sim.write_trajectories(out / "trajectories.csv")
    write_metrics_csv(out / "metrics.csv", rows)
    print(f"wrote {out / 'metrics.csv'}")


# -- optimize --------------------------------------------------------------


def _read_queue_file(path: str | None, n: int):
    if path is None:
        return None
    spot = Path(path)
    if not spot.exists():
        raise CommandError(f"queue file {path!r} not found")
    values = [float(v) for v in spot.read_text().split()]
    if len(values) != n:
        raise CommandError(f"queue file lists {len(values)} queues, need {n}")
    return values


def _matrix_lines(label: str, matrix: np.ndarray, idents) -> list[str]:
    lines = [label]
    for ident, row in zip(idents, np.atleast_2d(matrix)):
        cells = "  ".join(f"{v:7.4f}" for v in np.atleast_1d(row))
        lines.append(f"  {ident:>6}  {cells}")
    return lines


def plan_summary(solution, plan, idents) -> str:
    lines = [
        f"plan: {plan.strategy}",
        f"cycle: {plan.cycle:.3f} s",
        f"epoch: {plan.epoch:.3f} s",
    ]
    lines += _matrix_lines("green splits (rows = intersections, "
                           "columns = cycles):", plan.splits, idents)
    lines += _matrix_lines("offsets (cycle fractions):", plan.offsets, idents)
    if plan.strategy == "MFC":
        lines.append("per-cycle regimes:")
        for ident, row in zip(idents, solution.scenario):
            lines.append(f"  {ident:>6}  " + "  ".join(row))
    if plan.band_in is not None:
        lines += _matrix_lines("inbound band (center, width):",
                               plan.band_in, idents)
        lines += _matrix_lines("outbound band (center, width):",
                               plan.band_out, idents)
    if getattr(solution, "fallback", False):
        lines.append("note: zero-bandwidth fallback (no common band exists)")
    return "\n".join(lines) + "\n"


def cmd_optimize(args) -> None:
    scenario = _load_scenario(args.scenario)
    level = _pick_level(scenario, args.level)
    out = _out_dir(args)
    corridor = scenario.corridor
    segment = scenario.segment(level, 0.0, scenario.episode)
    queues = _read_queue_file(args.queues, scenario.n)
    if args.which == "mfc":
        solution = solve_mfc(segment_inputs(
            corridor, segment, queues, scenario.plan_horizon
        ))
        plan = mfc_plan(solution, corridor, epoch=0.0)
    else:
        green_in, green_out = webster_splits(corridor, segment)
        solution = solve_gwc(GwcInputs(corridor, green_in, green_out))
        plan = gwc_plan(solution, corridor, epoch=0.0)
    name = f"plan-{args.which}"
    save_plan(plan, out / f"{name}.yaml")
    idents = [spec.ident for spec in corridor.intersections]
    (out / f"{name}.txt").write_text(plan_summary(solution, plan, idents))
    print(f"wrote {out / (name + '.yaml')}")


# -- training --------------------------------------------------------------


def _parse_hidden(text: str):
    try:
        sizes = tuple(int(v) for v in text.split(",") if v.strip())
    except ValueError as err:
        raise CommandError(f"bad --hidden {text!r}: {err}") from err
    if not sizes:
        raise CommandError(f"bad --hidden {text!r}")
    return sizes


def _train_config(scenario: Scenario, args, hlc: bool):
    cfg = scenario.ppo_config()
    if args.desk:
        if hlc:
            cfg = replace(cfg, hidden=(32, 32), train_batch=32,
                          minibatch=16, epochs=10)
        else:
            cfg = replace(cfg, hidden=(32, 32), train_batch=4000,
                          minibatch=256, epochs=10)
    if args.hidden is not None:
        cfg = replace(cfg, hidden=_parse_hidden(args.hidden))
    if args.batch is not None:
        cfg = replace(cfg, train_batch=args.batch,
                      minibatch=min(cfg.minibatch, args.batch))
    iterations = args.iterations
    if iterations is None:
        if hlc:
            iterations = 5 if args.desk else 30
        else:
            iterations = 50 if args.desk else 300
    return cfg, iterations


def _echo_config(cfg, iterations: int) -> None:
    for name in ("clip", "gamma", "kl_coef", "value_clip", "entropy_coef",
                 "value_coef", "epochs", "train_batch", "minibatch"):
        print(f"{name}={getattr(cfg, name)}")
    schedule = ";".join(f"{int(s)}:{lr:g}" for s, lr in cfg.lr_schedule)
    print(f"lr_schedule={schedule}")
    print("hidden=" + ",".join(str(v) for v in cfg.hidden))
    print(f"iterations={iterations}")


def hsa_weight_path(out: Path, mode: str) -> Path:
    return out / f"hsa-{mode}.weights"


def cmd_train_hsa(args) -> None:
    scenario = _load_scenario(args.scenario)
    cfg, iterations = _train_config(scenario, args, hlc=False)
    if args.show_config:
        _echo_config(cfg, iterations)
        return
    out = _out_dir(args)
    profiles = {
        level: scenario.level_profile(level) for level in scenario.levels
    }

    def env_factory():
        return CorridorEnv(
            scenario.corridor, profiles, args.mode,
            episode=scenario.episode, warmup=scenario.warmup,
            kappa=scenario.kappa, plan_horizon=scenario.plan_horizon,
        )

    result = train_mode(env_factory, args.mode, cfg,
                        iterations=iterations, seed=args.seed)
    result.params.save(hsa_weight_path(out, args.mode))
    write_training_log(out / f"train-hsa-{args.mode}.csv", result.log)
    print(f"wrote {hsa_weight_path(out, args.mode)}")


def _hlc_timing(scenario: Scenario, args):
    if scenario.schedule is None:
        raise CommandError("scenario has no demand schedule")
    steps = int((scenario.schedule_end - args.hlc_warmup) // args.hlc_step)
    if steps < 1:
        raise CommandError("demand schedule shorter than one decision step")
    episode = args.hlc_warmup + steps * args.hlc_step
    return episode, steps


def _load_hsa_bank(args) -> dict:
    bank = {}
    hsa_dir = Path(args.hsa)
    for mode in OPTIONS:
        path = hsa_dir / f"hsa-{mode}.weights"
        if not path.exists():
            raise CommandError(f"missing frozen weights {path}")
        try:
            bank[mode] = PolicyParams.load(path)
        except Exception as err:
            raise CommandError(f"{path}: {err}") from err
    return bank


def _hlc_env_factory(scenario: Scenario, bank: dict, weights, args):
    episode, _ = _hlc_timing(scenario, args)
    profile = scenario.schedule_profile()

    def env_factory():
        return HlcEnv(
            scenario.corridor, profile, bank, weights,
            episode=episode, warmup=args.hlc_warmup,
            step_seconds=args.hlc_step, measure=args.hlc_measure,
            kappa=scenario.kappa, plan_horizon=scenario.plan_horizon,
        )

    return env_factory


def cmd_train_hlc(args) -> None:
    scenario = _load_scenario(args.scenario)
    cfg, iterations = _train_config(scenario, args, hlc=True)
    if args.show_config:
        _echo_config(cfg, iterations)
        return
    out = _out_dir(args)
    bank = _load_hsa_bank(args)
    factory = _hlc_env_factory(scenario, bank, scenario.weights, args)
    result = train_hlc(factory, cfg, iterations=iterations, seed=args.seed)
    result.params.save(out / "hlc.weights")
    write_training_log(out / "train-hlc.csv", result.log)
    print(f"wrote {out / 'hlc.weights'}")


# -- evaluate --------------------------------------------------------------


def write_series_csv(path, decisions, window_stats) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SERIES_COLUMNS)
        for row, stats in zip(decisions, window_stats):
            tau, level, _, _, _, option, _ = row
            _, stops, speed, queue = stats
            writer.writerow([
                tau, level, option,
                f"{stops:.6f}", f"{speed:.6f}", f"{queue:.6f}",
            ])


def cmd_evaluate(args) -> None:
    scenario = _load_scenario(args.scenario)
    out = _out_dir(args)
    weights = scenario.weights
    if args.group is not None:
        try:
            weights = HlcRewardWeights.group(args.group)
        except ValueError as err:
            raise CommandError(str(err)) from err
    params = _load_weights(args.weights, "evaluate")
    bank = _load_hsa_bank(args)
    env = _hlc_env_factory(scenario, bank, weights, args)()
    rows, metrics = evaluate_hlc(env, params, mode="argmax", seed=args.seed)
    write_decision_log(out / "decisions.csv", rows)
    write_series_csv(out / "series.csv", env.decisions, env.window_stats)
    if metrics is not None:
        write_metrics_csv(out / "metrics.csv", [(args.seed, metrics)])
    print(f"wrote {out / 'decisions.csv'}")


# -- parser ----------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        # bad flags are usage errors, not the default argparse exit code
        raise CommandError(message)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--scenario", required=True,
                        help="scenario file path")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--out", default=".", help="output directory")
    common.add_argument("--desk", action="store_true",
                        help="shrunk nets and batches for quick runs")
    common.add_argument("--parallel", type=int, default=1,
                        help="independent seeded runs to fan out")

    train_flags = argparse.ArgumentParser(add_help=False)
    train_flags.add_argument("--iterations", type=int, default=None)
    train_flags.add_argument("--hidden", default=None,
                             help="comma-separated layer sizes")
    train_flags.add_argument("--batch", type=int, default=None)
    train_flags.add_argument("--show-config", action="store_true",
                             help="print the resolved config and exit")

    hlc_flags = argparse.ArgumentParser(add_help=False)
    hlc_flags.add_argument("--hsa", default=".",
                           help="directory holding hsa-*.weights")
    hlc_flags.add_argument("--hlc-warmup", type=float, default=HLC_WARMUP)
    hlc_flags.add_argument("--hlc-step", type=float, default=HLC_STEP)
    hlc_flags.add_argument("--hlc-measure", type=float, default=HLC_MEASURE)

    parser = _Parser(prog="artery",
                     description="Corridor signal-coordination toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common],
                       help="one controller over one episode")
    p.add_argument("--strategy", required=True)
    p.add_argument("--level", default=None)
    p.add_argument("--weights", default=None,
                   help="policy weight file for PAC/MFC/GWC")
    p.add_argument("--plan", default=None, help="plan file for fixed-plan")
    p.set_defaults(func=cmd_simulate)

    for which in ("mfc", "gwc"):
        p = sub.add_parser(f"optimize-{which}", parents=[common],
                           help=f"solve a {which.upper()} plan")
        p.add_argument("--level", default=None)
        p.add_argument("--queues", default=None,
                       help="file of per-intersection starting queues")
        p.set_defaults(func=cmd_optimize, which=which)

    p = sub.add_parser("train-hsa", parents=[common, train_flags],
                       help="train one strategy's signal policy")
    p.add_argument("--mode", required=True, choices=list(STRATEGIES))
    p.set_defaults(func=cmd_train_hsa)

    p = sub.add_parser("train-hlc", parents=[common, train_flags, hlc_flags],
                       help="train the strategy selector")
    p.set_defaults(func=cmd_train_hlc)

    p = sub.add_parser("evaluate", parents=[common, hlc_flags],
                       help="replay a trained selector over the schedule")
    p.add_argument("--weights", required=True, help="selector weight file")
    p.add_argument("--group", type=int, default=None,
                   help="reward weight group override (1, 2 or 3)")
    p.set_defaults(func=cmd_evaluate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except CommandError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except SystemExit as err:   # --help
        return 0 if not err.code else 1
    try:
        args.func(args)
    except CommandError as err:
        print(f"error: {err}", file=sys.stderr)
        return err.code
    except MfcInfeasibleError as err:
        print(f"infeasible: {err}", file=sys.stderr)
        return 2
    except KeyboardInterrupt:
        return 3
    except Exception as err:
        print(f"runtime error: {err}", file=sys.stderr)
        return 3
    return 0
