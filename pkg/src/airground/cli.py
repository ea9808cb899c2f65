"""Command-line interface.

Thin shell over the library: every verb maps onto one library call plus file
I/O.  Exit codes: 0 success, 1 infeasibility or validation failure, 2 usage
errors.  All errors go to stderr with an ``error:`` prefix.  ``--threads``
and the ``AIRGROUND_THREADS`` environment variable cap internal parallelism
(all built-in pipelines are single-threaded, so the cap is a no-op guard).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import fileio, svgplot
from .bilevel import Budget
from .errors import AirgroundError, ContractViolationError
from .evaluation import DRL_KINDS, MethodSpec, evaluate_suite, run_method, score_run
from .mdp import replay_actions
from .nn.model import PolicyConfig, PolicyParams
from .replan import ReplanEvent, dynamic_replan, replay_replan
from .rng import derive_seed
from .scenario import TaskPoint, TeamConfig, generate_scenario
from .training import ProblemSpec, TrainConfig, train

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2


def _team_from_args(args) -> TeamConfig:
    return TeamConfig(
        num_uavs=args.uavs,
        num_ugvs=args.ugvs,
        v_a=args.v_air,
        v_g=args.v_ground,
        recharge_time_s=args.recharge_s,
    )


def _add_team_args(p):
    p.add_argument("--uavs", type=int, default=1)
    p.add_argument("--ugvs", type=int, default=1)
    p.add_argument("--v-air", type=float, default=10.0)
    p.add_argument("--v-ground", type=float, default=4.5)
    p.add_argument("--recharge-s", type=float, default=300.0)


def _add_budget_args(p):
    p.add_argument("--iterations", type=int, default=2000)
    p.add_argument("--stall", type=int, default=200)
    p.add_argument("--wall-ms", type=float, default=None)


def _budget_from_args(args) -> Budget:
    return Budget(iterations=args.iterations, wall_ms=args.wall_ms, stall=args.stall)


def _method_spec(args, kind: str) -> MethodSpec:
    params = None
    if kind in DRL_KINDS:
        if not args.checkpoint:
            raise AirgroundError(f"method {kind} requires --checkpoint")
        params = fileio.load_checkpoint(args.checkpoint)
    return MethodSpec(
        name=kind if args_name(args) is None else args_name(args),
        kind=kind,
        sample_n=getattr(args, "samples", 1),
        params=params,
        budget=_budget_from_args(args),
        seed=args.seed,
    )


def args_name(args) -> Optional[str]:
    return getattr(args, "name", None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="airground",
        description="Cooperative UAV-UGV mission planning: simulate, solve, train, evaluate.",
    )
    parser.add_argument("--threads", type=int, default=int(os.environ.get("AIRGROUND_THREADS", "1")),
                        help="cap on internal parallelism (pipelines are single-threaded)")
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("generate", help="write a randomized scenario file")
    p.add_argument("--aerial", type=int, required=True)
    p.add_argument("--ground", type=int, required=True)
    p.add_argument("--dist", choices=["uniform", "gaussian", "rayleigh"], default="uniform")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--area-m", type=float, default=20000.0)
    _add_team_args(p)
    p.add_argument("--out", required=True)

    p = sub.add_parser("solve", help="plan one mission and write its trace")
    p.add_argument("--scenario", required=True)
    p.add_argument(
        "--method",
        required=True,
        choices=["gls", "tabu", "anneal", "oracle"] + list(DRL_KINDS),
    )
    p.add_argument("--checkpoint")
    p.add_argument("--samples", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    _add_budget_args(p)
    p.add_argument("--out", required=True)
    p.add_argument("--report", help="optional JSON solve report")

    p = sub.add_parser("train", help="train the routing policy")
    p.add_argument("--profile", choices=["desk", "paper"], default="desk")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batches", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--alpha", type=float)
    p.add_argument("--aerial", type=int)
    p.add_argument("--ground", type=int)
    p.add_argument("--dist", choices=["uniform", "gaussian", "rayleigh"])
    p.add_argument("--selection", choices=["sortie", "per_step"], default="sortie")
    _add_team_args(p)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out-dir", required=True)

    p = sub.add_parser("evaluate", help="compare methods over fresh instances")
    p.add_argument("--methods", required=True, help="comma list, e.g. gls,tabu,drl_greedy")
    p.add_argument("--checkpoint")
    p.add_argument("--mf-checkpoint", help="checkpoint for drl_mf_* methods")
    p.add_argument("--samples", type=int, default=16)
    p.add_argument("--instances", type=int, default=10)
    p.add_argument("--aerial", type=int, default=15)
    p.add_argument("--ground", type=int, default=5)
    p.add_argument("--dist", choices=["uniform", "gaussian", "rayleigh"], default="uniform")
    _add_team_args(p)
    _add_budget_args(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--csv")

    p = sub.add_parser("replan", help="execute a mission with online replanning")
    p.add_argument("--scenario", required=True)
    p.add_argument("--method", choices=list(DRL_KINDS), default="drl_sample")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--samples", type=int, default=16)
    p.add_argument("--events", required=True, help="JSON file with the replan events")
    p.add_argument("--seed", type=int, default=0)
    _add_budget_args(p)
    p.add_argument("--out", required=True)

    p = sub.add_parser("plot", help="render a scenario (and optional trace) to SVG")
    p.add_argument("--scenario", required=True)
    p.add_argument("--trace")
    p.add_argument("--size", type=int, default=800)
    p.add_argument("--out", required=True)

    p = sub.add_parser("validate", help="replay a trace and report violations")
    p.add_argument("--scenario", required=True)
    p.add_argument("--trace", required=True)
    return parser


def cmd_generate(args) -> int:
    scenario = generate_scenario(
        args.aerial, args.ground, args.dist, _team_from_args(args), args.seed,
        area_side_m=args.area_m,
    )
    fileio.save_scenario(scenario, args.out)
    print(f"wrote scenario with {scenario.n_tasks} tasks to {args.out}")
    return EXIT_OK


def cmd_solve(args) -> int:
    scenario = fileio.load_scenario(args.scenario)
    spec = _method_spec(args, args.method)
    run = run_method(spec, scenario, scenario.team)
    objective_min = score_run(run, scenario, scenario.team)
    records, _state, _env = replay_actions(
        scenario, scenario.team, run.actions, selection=run.selection, horizon=run.horizon
    )
    meta = {
        "method": spec.kind,
        "seed": args.seed,
        "selection": run.selection,
        "horizon": run.horizon,
        "scenario_seed": scenario.seed,
        "objective_min": objective_min,
    }
    fileio.save_trace(records, meta, args.out)
    if args.report:
        report = {"method": spec.kind, "seed": args.seed, "objective_min": objective_min,
                  "steps": len(run.actions)}
        if run.reports is not None:
            report["subproblems"] = run.reports
        Path(args.report).write_text(json.dumps(report, sort_keys=True, indent=1) + "\n")
    print(f"{spec.kind}: objective {objective_min:.1f} min, {len(run.actions)} steps -> {args.out}")
    return EXIT_OK


def _train_config(args) -> TrainConfig:
    cfg = TrainConfig.desk_profile() if args.profile == "desk" else TrainConfig()
    overrides = {}
    if args.epochs is not None:
        overrides["epochs"] = args.epochs
    if args.batches is not None:
        overrides["batches_per_epoch"] = args.batches
    if args.batch_size is not None:
        overrides["batch_size"] = args.batch_size
    if args.lr is not None:
        overrides["lr0"] = args.lr
    if args.alpha is not None:
        overrides["decay_alpha"] = args.alpha
    problem = cfg.problem
    prob_overrides = {}
    if args.aerial is not None:
        prob_overrides["n_aerial"] = args.aerial
    if args.ground is not None:
        prob_overrides["n_ground"] = args.ground
    if args.dist is not None:
        prob_overrides["distribution"] = args.dist
    team_default = problem.team
    team = TeamConfig(
        num_uavs=args.uavs or team_default.num_uavs,
        num_ugvs=args.ugvs or team_default.num_ugvs,
        v_a=args.v_air,
        v_g=args.v_ground,
        recharge_time_s=args.recharge_s,
    )
    problem = ProblemSpec(
        n_aerial=prob_overrides.get("n_aerial", problem.n_aerial),
        n_ground=prob_overrides.get("n_ground", problem.n_ground),
        distribution=prob_overrides.get("distribution", problem.distribution),
        team=team,
    )
    overrides["problem"] = problem
    overrides["selection"] = args.selection
    import dataclasses

    return dataclasses.replace(cfg, **overrides)


def cmd_train(args) -> int:
    cfg = _train_config(args)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    def on_epoch(state):
        fileio.save_checkpoint(
            state.policy,
            out_dir / f"checkpoint_epoch{state.epoch:03d}.json",
            meta={"epoch": state.epoch, "seed": args.seed, "selection": cfg.selection},
        )
        stat = state.epoch_stats[-1]
        print(
            f"epoch {state.epoch}: mean {stat['mean_return_min']:.1f} min, "
            f"p={stat['p_value']:.4f}, swapped={bool(stat['swapped'])}"
        )

    state = train(cfg, seed=args.seed, on_epoch=on_epoch)
    fileio.save_checkpoint(
        state.policy, out_dir / "checkpoint_final.json",
        meta={"epoch": state.epoch, "seed": args.seed, "selection": cfg.selection},
    )
    fileio.save_training_log(state.history, out_dir / "log.csv")
    print(f"trained {cfg.epochs} epochs -> {out_dir}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    kinds = [k.strip() for k in args.methods.split(",") if k.strip()]
    methods = []
    for kind in kinds:
        params = None
        if kind in DRL_KINDS:
            ckpt = args.mf_checkpoint if kind.startswith("drl_mf") and args.mf_checkpoint else args.checkpoint
            if not ckpt:
                raise AirgroundError(f"method {kind} requires --checkpoint")
            params = fileio.load_checkpoint(ckpt)
        methods.append(
            MethodSpec(
                name=kind,
                kind=kind,
                sample_n=args.samples,
                params=params,
                budget=_budget_from_args(args),
                seed=args.seed,
            )
        )
    team = _team_from_args(args)
    instances = [
        generate_scenario(
            args.aerial, args.ground, args.dist, team, seed=derive_seed(args.seed, 5, i)
        )
        for i in range(args.instances)
    ]
    report = evaluate_suite(methods, instances, team)
    fileio.save_report_json(report, args.out)
    if args.csv:
        fileio.save_report_csv(report, args.csv)
    width = max(len(r["name"]) for r in report.methods)
    print(f"{'method'.ljust(width)}  obj(min)    gap%   time(s)  win%")
    for row in report.methods:
        print(
            f"{row['name'].ljust(width)}  {row['obj_mean_min']:8.1f}  "
            f"{row['gap_pct']:6.1f}  {row['time_mean_s']:7.2f}  {row['win_rate_pct']:5.1f}"
        )
    return EXIT_OK


def _load_events(path, scenario) -> List[ReplanEvent]:
    doc = json.loads(Path(path).read_text())
    events = []
    next_id = scenario.n_tasks
    for entry in doc["events"]:
        add = None
        if "add_tasks" in entry and entry["add_tasks"]:
            pts = []
            for td in entry["add_tasks"]:
                pts.append(TaskPoint(next_id, float(td["x"]), float(td["y"]), td.get("kind", "aerial")))
                next_id += 1
            add = tuple(pts)
        team = TeamConfig(**entry["set_team"]) if entry.get("set_team") else None
        events.append(
            ReplanEvent(
                trigger_recharge_index=entry.get("trigger_recharge_index"),
                trigger_time_s=entry.get("trigger_time_s"),
                add_tasks=add,
                set_team=team,
            )
        )
    return events


def cmd_replan(args) -> int:
    scenario = fileio.load_scenario(args.scenario)
    spec = _method_spec(args, args.method)
    events = _load_events(args.events, scenario)
    outcome = dynamic_replan(scenario, scenario.team, spec, events, seed=args.seed)
    replay_makespan = replay_replan(outcome)
    meta = {
        "method": spec.kind,
        "seed": args.seed,
        "selection": spec.selection,
        "horizon": outcome.segments[-1].horizon,
        "scenario_seed": scenario.seed,
        "objective_min": outcome.makespan_min,
        "coverage": outcome.coverage,
        "segments": [len(s.actions) for s in outcome.segments],
        "events": outcome.event_reports,
    }
    fileio.save_trace(outcome.records, meta, args.out)
    print(
        f"replanned mission: coverage {100 * outcome.coverage:.0f}%, "
        f"makespan {outcome.makespan_min:.1f} min (replay {replay_makespan / 60:.1f}) -> {args.out}"
    )
    return EXIT_OK


def cmd_plot(args) -> int:
    scenario = fileio.load_scenario(args.scenario)
    records: List[dict] = []
    selection, horizon = "sortie", None
    if args.trace:
        header, records = fileio.load_trace(args.trace)
        selection = header.get("selection", "sortie")
        horizon = header.get("horizon")
    svg = svgplot.export_svg(
        scenario, records, size_px=args.size, selection=selection, horizon=horizon
    )
    Path(args.out).write_text(svg)
    print(f"wrote {args.out}")
    return EXIT_OK


def cmd_validate(args) -> int:
    scenario = fileio.load_scenario(args.scenario)
    header, records = fileio.load_trace(args.trace)
    actions = fileio.trace_actions(records)
    try:
        _, state, env = replay_actions(
            scenario,
            scenario.team,
            actions,
            selection=header.get("selection", "sortie"),
            horizon=header.get("horizon"),
        )
    except ContractViolationError as err:
        print(json.dumps({"valid": False, "violations": [str(err)]}))
        return EXIT_FAILURE
    status = env.is_terminal(state)
    doc = {
        "valid": True,
        "violations": [],
        "status": status,
        "visited": int(state.visited.sum()),
        "tasks": int(state.visited.size),
    }
    if status != "running":
        doc["objective_min"] = env.compute_return(state) / 60.0
    print(json.dumps(doc, sort_keys=True))
    return EXIT_OK


_COMMANDS = {
    "generate": cmd_generate,
    "solve": cmd_solve,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "replan": cmd_replan,
    "plot": cmd_plot,
    "validate": cmd_validate,
}


def run_cli(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_USAGE
    try:
        return _COMMANDS[args.verb](args)
    except (AirgroundError, ContractViolationError) as err:
        print(f"error: {type(err).__name__}: {err}", file=sys.stderr)
        return EXIT_FAILURE
    except FileNotFoundError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_FAILURE


def main() -> None:
    sys.exit(run_cli(sys.argv[1:]))


if __name__ == "__main__":
    main()
