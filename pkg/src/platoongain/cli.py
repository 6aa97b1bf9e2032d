"""Command-line front end.

Subcommands: simulate, optimize, datagen, train, predict, merge. Each reads an
INI config (``--config``), applies ``--seed`` and the per-key overrides
(``--<section>-<key> value``), validates everything, then writes its files to
``--out`` and prints a JSON summary.

Exit codes: 0 success, 1 runtime failure, 2 invalid input, 3 infeasible
optimization, 4 merge scheduling fault.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys

import numpy as np

from . import config as C
from .dynamics import DomainError
from .gainopt import evaluate_mu, optimize_mu
from .merge import SchedulingError, run_merge_scenario, write_events_csv, write_plan_csv
from .simulation import SimulationError, accel_cost, peak_accel, simulate, write_trajectory_csv

EXIT_OK, EXIT_RUNTIME, EXIT_INVALID, EXIT_INFEASIBLE, EXIT_SCHEDULING = 0, 1, 2, 3, 4

COMMAND_SECTIONS = {
    "simulate": ("controller", "sim", "initial", "policy"),
    "optimize": ("controller", "sim", "initial", "policy", "optimizer"),
    "datagen": ("controller", "sim", "policy", "optimizer", "dataset"),
    "train": ("train",),
    "predict": ("controller", "sim", "initial", "policy", "predict"),
    "merge": ("controller", "sim", "policy", "optimizer", "scenario"),
}

def _num(x: float):
    """JSON-safe float: non-finite values become null."""
    x = float(x)
    return x if math.isfinite(x) else None


def _write_json(path: str, record: dict) -> None:
    with open(path, "w") as fh:
        json.dump(record, fh, indent=2, sort_keys=True)
        fh.write("\n")


def settling_time(traj, v_star: float, tol: float = 0.1) -> float | None:
    """Earliest recorded time after which every speed stays within ``tol`` of v*."""
    ok = np.all(np.abs(traj.speeds - v_star) <= tol, axis=1)
    if not ok[-1]:
        return None
    bad = np.flatnonzero(~ok)
    k = 0 if bad.size == 0 else int(bad[-1]) + 1
    return float(traj.times[k])


def cmd_simulate(cfg: C.RunConfig, out: str) -> dict:
    params = C.controller_params(cfg)
    sim = C.sim_config(cfg)
    state = C.initial_state(cfg, params)
    traj = simulate(state, params, sim)
    write_trajectory_csv(os.path.join(out, "trajectory.csv"), traj)
    hi, lo = peak_accel(traj)
    summary = {"n": state.n, "mu": params.mu, "cost": accel_cost(traj), "peak_accel_max": hi,
               "peak_accel_min": lo, "settling_time": settling_time(traj, params.v_star),
               "final_speeds": traj.speeds[-1].tolist()}
    _write_json(os.path.join(out, "summary.json"), summary)
    return summary


def _solution_record(sol) -> dict:
    return {"mu_star": sol.mu_star, "cost": _num(sol.cost), "feasible": sol.feasible,
            "peak_accel_max": _num(sol.peak[0]), "peak_accel_min": _num(sol.peak[1])}


def cmd_optimize(cfg: C.RunConfig, out: str) -> dict:
    params = C.controller_params(cfg)
    sim = C.sim_config(cfg)
    opt = C.opt_config(cfg)
    state = C.initial_state(cfg, params)
    sol = optimize_mu(state, params, sim, opt, workers=int(cfg.get("optimizer", "workers", 1)))
    record = _solution_record(sol)
    if cfg.get("optimizer", "compare", False):
        cost, feasible, (hi, lo) = evaluate_mu(state, params.mu, params, sim)
        record["baseline"] = {"mu": params.mu, "cost": _num(cost), "feasible": feasible,
                              "peak_accel_max": _num(hi), "peak_accel_min": _num(lo)}
    _write_json(os.path.join(out, "solution.json"), record)
    return record


def cmd_datagen(cfg: C.RunConfig, out: str) -> dict:
    from .surrogate import generate_dataset

    params = C.controller_params(cfg)
    ds_cfg = cfg.section("dataset")
    count = int(ds_cfg.get("count", 2000))
    n = int(ds_cfg.get("n", 7))
    if count < 100:
        raise C.ConfigError(f"{cfg.source}: [dataset] count must be at least 100")
    if n < 2:
        raise C.ConfigError(f"{cfg.source}: [dataset] n must be at least 2")
    ds = generate_dataset(count, n, C.ic_ranges(cfg, "dataset"), C.spacing_policy(cfg), params,
                          C.sim_config(cfg), C.opt_config(cfg), seed=cfg.seed,
                          workers=int(ds_cfg.get("workers", 1)),
                          batch=int(ds_cfg.get("batch", 250)))
    path = os.path.join(out, "dataset.csv")
    ds.to_csv(path)
    return {"dataset": path, "count": len(ds), "n": n, "mu_star_mean": float(ds.mu_star.mean()),
            "mu_star_std": float(ds.mu_star.std())}


def cmd_train(cfg: C.RunConfig, out: str) -> dict:
    from .surrogate import TrainConfig, mlp_eval, mlp_train, save_model
    from .surrogate.mlp import write_history_csv

    tr = cfg.section("train")
    if "dataset" not in tr:
        raise C.ConfigError(f"{cfg.source}: [train] dataset missing")
    keys = ("learning_rate", "epochs", "batch_size", "optimizer", "weight_decay")
    try:
        tc = TrainConfig(seed=cfg.seed, **{k: tr[k] for k in keys if k in tr})
    except ValueError as exc:
        raise C.ConfigError(f"{cfg.source}: [train] {exc}") from None
    h1, h2 = int(tr.get("h1", 32)), int(tr.get("h2", 64))
    if h1 < 1 or h2 < 1:
        raise C.ConfigError(f"{cfg.source}: [train] h1 and h2 must be positive")
    ds = C.load_dataset(tr["dataset"], cfg.seed)
    model, history = mlp_train(ds, h1, h2, tc)
    save_model(model, os.path.join(out, "model.txt"))
    write_history_csv(os.path.join(out, "history.csv"), history)
    best = min(history, key=lambda row: (row[2], row[0]))
    test_mse, test_dev = mlp_eval(model, ds, "test")
    summary = {"best_epoch": best[0], "best_val_mse": best[2], "test_mse": test_mse,
               "test_mean_abs_mu_deviation": test_dev, "epochs": len(history)}
    _write_json(os.path.join(out, "train_summary.json"), summary)
    return summary


def cmd_predict(cfg: C.RunConfig, out: str) -> dict:
    from .surrogate import mlp_forward

    params = C.controller_params(cfg)
    sim = C.sim_config(cfg)
    path = cfg.get("predict", "model")
    if path is None:
        raise C.ConfigError(f"{cfg.source}: [predict] model missing")
    model = C.load_model_file(path)
    state = C.initial_state(cfg, params)
    if state.n != model.n:
        raise C.ConfigError(f"model expects {model.n} vehicles, initial condition has {state.n}")
    mu = mlp_forward(model, state.speeds, state.positions)
    record = {"mu_pred": mu}
    if cfg.get("predict", "simulate_cost", False):
        cost, feasible, (hi, lo) = evaluate_mu(state, mu, params, sim)
        record.update(cost=_num(cost), feasible=feasible, peak_accel_max=_num(hi),
                      peak_accel_min=_num(lo))
    _write_json(os.path.join(out, "prediction.json"), record)
    return record


def cmd_merge(cfg: C.RunConfig, out: str) -> dict:
    params = C.controller_params(cfg)
    sim = C.sim_config(cfg)
    opt = C.opt_config(cfg)
    scenario = C.merge_scenario(cfg, params)
    model_path = cfg.get("scenario", "model")
    model = C.load_model_file(model_path) if model_path else None
    fixed_mu = float(cfg.get("scenario", "fixed_mu", 0.5))
    if not 0.0 < fixed_mu <= 2.0:
        raise C.ConfigError(f"{cfg.source}: [scenario] fixed_mu must lie in (0, 2]")
    res = run_merge_scenario(scenario, params, sim, model, opt)
    base = run_merge_scenario(scenario, params, sim, None, opt, coordinator=False,
                              fixed_mu=fixed_mu)
    write_trajectory_csv(os.path.join(out, "trajectory.csv"), res.trajectory,
                         [str(i) for i in res.ids])
    write_trajectory_csv(os.path.join(out, "baseline_trajectory.csv"), base.trajectory,
                         [str(i) for i in base.ids])
    for vid, plan in sorted(res.plans.items()):
        write_plan_csv(os.path.join(out, f"plan_{vid}.csv"), plan, sim.dt)
    write_events_csv(os.path.join(out, "events.csv"), res.events)
    incoming = []
    for ev in res.events:
        peak_c = res.incoming_peak(ev.vehicle_id)
        peak_b = base.incoming_peak(ev.vehicle_id)
        incoming.append({"vehicle_id": ev.vehicle_id, "t_merge": ev.t,
                         "mu_assigned": ev.mu_assigned, "peak_accel_coordinator": peak_c,
                         "peak_accel_fixed": peak_b,
                         "reduction": _num(1.0 - peak_c / peak_b) if peak_b > 0 else None})
    summary = {"fixed_mu": fixed_mu, "merges": len(res.events), "incoming": incoming,
               "arrival_times": res.arrival_times(),
               "cost_coordinator": _main_road_cost(res.trajectory),
               "cost_fixed": _main_road_cost(base.trajectory)}
    _write_json(os.path.join(out, "summary.json"), summary)
    return summary


def _main_road_cost(traj) -> float:
    """Trapezoidal cost with vehicles counted only while on the main road."""
    sq = np.nansum(traj.accels ** 2, axis=1)
    return float(traj.dt * (sq.sum() - 0.5 * (sq[0] + sq[-1]))) if len(sq) > 1 else 0.0


COMMANDS = {"simulate": cmd_simulate, "optimize": cmd_optimize, "datagen": cmd_datagen,
            "train": cmd_train, "predict": cmd_predict, "merge": cmd_merge}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="platoongain",
                                     description="Gain tuning for bidirectional platoon control.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, sections in COMMAND_SECTIONS.items():
        p = sub.add_parser(name, help=COMMANDS[name].__name__.replace("cmd_", "") + " command")
        p.add_argument("--config", help="INI config file")
        p.add_argument("--out", default="out", help="output directory (default: out)")
        p.add_argument("--seed", type=int, help="overrides [run] seed")
        group = p.add_argument_group("config overrides")
        for section in sections:
            for key in C.SCHEMA[section]:
                group.add_argument(f"--{section}-{key}".replace("_", "-"), dest=f"ov:{section}:{key}",
                                   metavar="VALUE", help=f"overrides [{section}] {key}")
    return parser


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = C.load_config(args.config)
        if args.seed is not None:
            cfg.set("run", "seed", str(args.seed))
        for dest, value in sorted(vars(args).items()):
            if dest.startswith("ov:") and value is not None:
                _, section, key = dest.split(":")
                cfg.set(section, key, value)
        cfg.check_paths()
        os.makedirs(args.out, exist_ok=True)
        summary = COMMANDS[args.command](cfg, args.out)
    except SchedulingError as exc:
        print(f"error: scheduling: {exc}", file=sys.stderr)
        return EXIT_SCHEDULING
    except SimulationError as exc:
        print(f"error: simulation: {exc}", file=sys.stderr)
        return EXIT_SCHEDULING if args.command == "merge" else EXIT_RUNTIME
    except (C.ConfigError, DomainError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except RuntimeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    print(json.dumps(summary, indent=2, sort_keys=True))
    if args.command == "optimize" and not summary["feasible"]:
        print("error: no gain keeps the accelerations inside the bounds; "
              f"least-violating mu = {summary['mu_star']}", file=sys.stderr)
        return EXIT_INFEASIBLE
    return EXIT_OK


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
