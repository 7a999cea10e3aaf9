"""``fedopt`` command line: optimize, simulate, sweep and verify-bound.

Exit codes: 0 success, 1 bound check failed, 2 configuration error,
3 infeasible everywhere, 4 solver failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from .bound import check_bound
from .config import ConfigError, ExperimentConfig, levels_value, load_config, params_from
from .cost_model import AlgoParams, energy_cost, time_cost
from .datasets import load_idx_dataset, partition_dataset
from .engine import TrainingDiverged, model_to_bytes, run_genqsgd, write_trace
from .optimizer import Mode, OptResult, SolverFailure, optimize, sweep, variable_names
from .quantizer import QuantSpec
from .tasks import MLPTask, Task, make_synthetic_task

log = logging.getLogger("fedopt")

EXIT_OK, EXIT_BOUND_FAILED, EXIT_CONFIG, EXIT_INFEASIBLE, EXIT_SOLVER = 0, 1, 2, 3, 4
DEFAULT_SWEEP_MODES = ("genqsgd", "fedavg", "prsgd", "psgd")


def fmt(value) -> str:
    """CSV number formatting: 12 significant digits, empty for missing."""
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return ""
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return f"{float(value):.12g}"


def _num(value):
    if value is None:
        return None
    value = float(value)
    return None if math.isnan(value) else value


def _params_dict(p: AlgoParams | None):
    if p is None:
        return None
    return {"K0": int(p.k0), "K": [int(v) for v in p.k], "B": int(p.batch)}


def result_record(res: OptResult, spec_hash: str) -> dict:
    names = variable_names(len(res.point) - 4) if res.point is not None else []
    return {
        "spec_hash": spec_hash,
        "mode": res.mode.value,
        "status": res.status.value,
        "continuous_point": dict(zip(names, map(float, res.point))) if res.point is not None else None,
        "integer_point": _params_dict(res.integer_params),
        "E_continuous": _num(res.energy),
        "E_integer": _num(res.integer_energy),
        "kkt_residual": _num(res.kkt_residual),
        "iterations": res.iterations,
        "fedavg_epochs": res.fedavg_epochs,
        "message": res.message,
    }


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# commands


def cmd_optimize(cfg: ExperimentConfig, args) -> int:
    mode = Mode(args.mode or "genqsgd")
    res = optimize(cfg.opt_spec(), mode)
    record = result_record(res, cfg.spec_hash())
    _write_json(args.out / f"optimize_{mode.value}.json", record)
    print(f"{mode.value}: {res.status.value} E={fmt(res.energy)} E_int={fmt(res.integer_energy)}")
    return EXIT_OK if res.feasible else EXIT_INFEASIBLE


def build_task(cfg: ExperimentConfig, n_workers: int, samples_per_worker: int) -> Task:
    """Task from the config; missing dataset files fall back to a synthetic task with a warning."""
    spec = cfg.data.get("task", {"kind": "logistic"})
    kind = spec["kind"]
    seed = spec.get("data_seed", 0)
    if kind == "mnist":
        images, labels = cfg.resolve(spec.get("images", "")), cfg.resolve(spec.get("labels", ""))
        if images.is_file() and labels.is_file():
            data = load_idx_dataset(images, labels)
            return MLPTask(data.images, data.labels, partition_dataset(data, n_workers, seed))
        kind = spec.get("fallback", "logistic")
        log.warning("dataset files %s / %s not found; using a synthetic %s task", images, labels, kind)
    return make_synthetic_task(kind, spec.get("dimension", 50), n_workers,
                               spec.get("samples_per_worker", samples_per_worker), seed, spec.get("spread", 1.0))


def cmd_simulate(cfg: ExperimentConfig, args) -> int:
    sim = cfg.data.get("simulation", {})
    n = cfg.n_workers
    if "params" in sim:
        params = params_from(sim["params"])
    else:
        res = optimize(cfg.opt_spec(), Mode.GENQSGD)
        if res.integer_params is None:
            log.error("no feasible integer parameters to simulate: %s", res.status.value)
            return EXIT_INFEASIBLE
        params = res.integer_params
    spw = cfg.data["optimizer"].get("samples_per_worker", [6000] * n)
    task = build_task(cfg, n, min(spw))
    levels = sim.get("levels", {"server": "inf", "worker": "inf"})
    quant = [QuantSpec.create(levels_value(levels["server"]), task.dimension)]
    quant += [QuantSpec.create(levels_value(levels["worker"]), task.dimension)] * n
    step = sim.get("step_size", cfg.data["learning"]["step_size"])
    profile = cfg.profile()
    summary = {"config_hash": cfg.hash, "params": _params_dict(params), "dimension": task.dimension,
               "time_cost": float(time_cost(params, profile)), "energy_cost": float(energy_cost(params, profile)),
               "runs": []}
    for seed in ([args.seed] if args.seed is not None else cfg.seeds):
        trace = run_genqsgd(task, params, quant, step, seed, init_scale=sim.get("init_scale", 1.0),
                            keep_iterates=False)
        with open(args.out / f"trace_seed{seed}.csv", "w") as fh:
            write_trace(trace, fh, cfg.hash)
        with open(args.out / f"metrics_seed{seed}.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["k0", "loss", "grad_sq_norm"])
            for k0, x in enumerate(trace.global_iterates[1:], start=1):
                g = task.global_gradient(x)
                w.writerow([k0, fmt(task.global_loss(x)), fmt(float(g @ g))])
        (args.out / f"model_seed{seed}.bin").write_bytes(model_to_bytes(trace.final_model))
        final = task.global_loss(trace.final_model)
        summary["runs"].append({"seed": seed, "final_loss": final})
        print(f"seed {seed}: final loss {fmt(final)}")
    _write_json(args.out / "simulate_summary.json", summary)
    return EXIT_OK


def cmd_sweep(cfg: ExperimentConfig, args) -> int:
    if args.axis is None:
        raise ConfigError("sweep needs --axis cmax|tmax")
    sweep_cfg = cfg.data.get("sweep", {})
    if args.values:
        try:
            values = [float(v) for v in args.values.split(",")]
        except ValueError as exc:
            raise ConfigError(f"bad --values list: {exc}") from exc
        if any(not (v > 0 and math.isfinite(v)) for v in values):
            raise ConfigError("sweep values must be positive")
    elif args.axis in sweep_cfg:
        values = sweep_cfg[args.axis]
    else:
        raise ConfigError(f"no values for axis {args.axis}: pass --values or set sweep/{args.axis}")
    modes = [args.mode] if args.mode else sweep_cfg.get("modes", list(DEFAULT_SWEEP_MODES))
    points = sweep(cfg.opt_spec(), args.axis, values, modes, jobs=args.jobs)

    point_dir = args.out / "points"
    point_dir.mkdir(exist_ok=True)
    order = sorted(set(p.value for p in points))
    rows = []
    for p in points:
        lim = {"t_max": p.value} if args.axis == "tmax" else {"c_max": p.value}
        rec = result_record(p.result, cfg.spec_hash(**lim))
        rec[args.axis] = p.value
        _write_json(point_dir / f"{args.axis}_{order.index(p.value):03d}_{p.mode.value}.json", rec)
        ip = p.result.integer_params
        rows.append([fmt(p.value), p.mode.value, p.result.status.value, fmt(p.result.energy),
                     fmt(p.result.integer_energy), *(["", "", ""] if ip is None else
                                                     [int(ip.k0), " ".join(str(int(k)) for k in ip.k), int(ip.batch)])])
    with open(args.out / f"sweep_{args.axis}.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([args.axis, "mode", "status", "E_star", "E_integer", "K0", "K", "B"])
        w.writerows(rows)
    for r in rows:
        print(",".join(map(str, r[:5])))
    return EXIT_OK if any(p.result.feasible for p in points) else EXIT_INFEASIBLE


def cmd_verify_bound(cfg: ExperimentConfig, args) -> int:
    ver = cfg.data.get("verify")
    if ver is None:
        raise ConfigError("verify-bound needs a 'verify' section")
    base = args.seed if args.seed is not None else 0
    seeds = [base + i for i in range(ver["seeds"])]
    settings = [params_from(s) for s in ver["settings"]]
    levels = ver.get("levels", {"server": "inf", "worker": "inf"})
    levels = (levels_value(levels["server"]), levels_value(levels["worker"]))
    report = []
    for spec in ver["tasks"]:
        kind = spec["kind"]
        task = make_synthetic_task(kind, spec.get("dimension", 20), ver["n_workers"], spec.get("samples_per_worker", 50),
                                   spec.get("data_seed", 0), spec.get("spread", 1.0))
        # logistic loss is nonnegative, so 0 is a valid lower bound on the optimum
        f_star = task.f_star if task.f_star is not None else 0.0
        step = ver.get("step_size", {}).get(kind, cfg.data["learning"]["step_size"])
        checks = check_bound(task, settings, step, seeds, levels=levels, f_star=f_star,
                             init_scale=ver.get("init_scale", 1.0), probe_count=ver.get("probe_count", 64))
        for c in checks:
            report.append({"task": kind, "params": _params_dict(c.params), "lhs": c.lhs, "lhs_stderr": c.lhs_stderr,
                           "rhs": c.rhs, "f_init": c.f_init, "constants": c.constants._asdict(),
                           "result": "PASS" if c.passed else "FAIL"})
    with open(args.out / "bound_report.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["task", "K0", "K", "B", "lhs", "lhs_stderr", "rhs", "result"])
        for r in report:
            p = r["params"]
            w.writerow([r["task"], p["K0"], " ".join(map(str, p["K"])), p["B"], fmt(r["lhs"]), fmt(r["lhs_stderr"]),
                        fmt(r["rhs"]), r["result"]])
    _write_json(args.out / "bound_report.json", {"config_hash": cfg.hash, "seeds": seeds, "checks": report})
    for r in report:
        print(f"{r['result']} {r['task']} {r['params']}: {fmt(r['lhs'])} <= {fmt(r['rhs'])}")
    return EXIT_OK if all(r["result"] == "PASS" for r in report) else EXIT_BOUND_FAILED


COMMANDS = {"optimize": cmd_optimize, "simulate": cmd_simulate, "sweep": cmd_sweep, "verify-bound": cmd_verify_bound}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fedopt", description=__doc__.splitlines()[0])
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", required=True, type=Path)
    parser.add_argument("--out", required=True, type=Path)
    parser.add_argument("--seed", type=int)
    parser.add_argument("--jobs", type=int, default=1)
    parser.add_argument("--axis", choices=["cmax", "tmax"])
    parser.add_argument("--values", help="comma-separated limit values for sweep")
    parser.add_argument("--mode", choices=[m.value for m in Mode])
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.jobs < 1:
        print("error: --jobs must be at least 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfg = load_config(args.config)
        args.out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](cfg, args)
    except (ConfigError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SolverFailure, TrainingDiverged, np.linalg.LinAlgError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
