"""Command-line entry point: ``secondorder <command> --config <path> ...``.

Commands
--------
validate   single-client theory vs. simulation sweep (over p or ell)
optimize   solve the allocation problem, print binding constraints
simulate   run the configured policy, per-client metrics (+ optional time series)
compare    run several policies on identical seeds
scenario   write a random instance as a configuration document

Exit codes: 0 success, 2 configuration error, 3 infeasible problem,
4 runtime error.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import sys

import numpy as np

from . import gilbert_elliott as ge
from . import scenarios
from .config import ConfigError, ExperimentConfig, config_to_dict, load_config
from .optimizer import (
    AllocationProblem,
    AllocationSolution,
    InfeasibleProblem,
    objective_terms,
    solve,
)
from .policies import POLICY_IDS
from .second_order import aoi_approx, outage_approx
from .simulator import build_trace_config, run_experiment

EXIT_OK, EXIT_CONFIG, EXIT_INFEASIBLE, EXIT_RUNTIME = 0, 2, 3, 4

VALIDATE_HEADER = ["parameter", "value", "theoretical", "empirical", "relative_error"]
OPTIMIZE_HEADER = ["client", "kind", "mu", "sigma_sq", "ell", "objective"]
SIMULATE_HEADER = ["policy", "client", "kind", "theoretical_mu", "empirical_mu",
                   "theoretical_sigma_sq", "empirical_sigma_sq", "theoretical_aoi",
                   "empirical_aoi", "theoretical_outage", "empirical_outage",
                   "timely_throughput"]
SERIES_HEADER = ["policy", "t", "client", "empirical_mean", "empirical_variance",
                 "theoretical_mean", "theoretical_variance"]
COMPARE_HEADER = ["policy", "empirical_objective", "total_aoi", "weighted_outage",
                  "theoretical_objective"]

SCENARIO_KINDS = ("aoi", "aoi-weighted", "iid", "streaming", "streaming-configurable", "mixed")


def fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


class CsvOut:
    """Collects rows and writes them once, to a file or stdout."""

    def __init__(self, header):
        self.buffer = io.StringIO()
        self.writer = csv.writer(self.buffer)
        self.writer.writerow(header)

    def row(self, *values):
        self.writer.writerow([fmt(v) for v in values])

    def emit(self, path: str | None):
        text = self.buffer.getvalue()
        if path is None or path == "-":
            sys.stdout.write(text)
        else:
            with open(path, "w", encoding="utf-8", newline="") as fh:
                fh.write(text)


def _problem(cfg: ExperimentConfig, clients=None) -> AllocationProblem:
    return AllocationProblem.build(clients or cfg.clients, cfg.delta, cfg.truncation_tol,
                                   cfg.truncation_depth)


def _rel(theory: float, empirical: float) -> float:
    return abs(theory - empirical) / empirical if empirical else float("inf")


def cmd_validate(cfg: ExperimentConfig, args) -> CsvOut:
    if len(cfg.clients) != 1:
        raise ConfigError(["validate needs exactly one client"])
    client = cfg.clients[0]
    out = CsvOut(VALIDATE_HEADER)
    key = "p" if client.is_sensing else "ell"
    if cfg.sweep is not None:
        sweep_key, values = next(iter(cfg.sweep.items()))
        if sweep_key != key:
            raise ConfigError([f"sweep.{sweep_key} does not apply to a {client.kind} client"])
    else:
        values = [client.channel.p if client.is_sensing else client.ell]
    for value in values:
        if client.is_sensing:
            spec = dataclasses.replace(client, channel=ge.GeChannelParams(value, client.channel.q))
        else:
            spec = dataclasses.replace(client, ell=float(value))
        solution = solve(_problem(cfg, [spec]))
        model = solution.targets.models[0]
        trace = build_trace_config([spec], "vwd", solution, cfg.horizon, cfg.sample_every,
                                   cfg.initial_channel_state)
        result = run_experiment(trace, cfg.runs, cfg.parallelism, cfg.master_seed)
        if client.is_sensing:
            theory, empirical = aoi_approx(model, spec.lam), float(result.aoi[0])
        else:
            theory, empirical = outage_approx(model, spec.ell), float(result.outage_rate[0])
        out.row(key, float(value), theory, empirical, _rel(theory, empirical))
    return out


def _print_report(solution: AllocationSolution, ids, stream):
    for check in solution.binding_constraints:
        where = "" if check.subset is None else \
            " S={" + ",".join(ids[i] for i in check.subset) + "}"
        print(f"binding: {check.name}{where} slack={check.slack:.6g}", file=stream)


def cmd_optimize(cfg: ExperimentConfig, args) -> CsvOut:
    problem = _problem(cfg)
    solution = solve(problem)
    out = CsvOut(OPTIMIZE_HEADER)
    terms = objective_terms(solution.targets, solution.delays, problem)
    for i, (c, m) in enumerate(zip(cfg.clients, solution.targets.models)):
        out.row(cfg.client_ids[i], c.kind, m.mean, m.variance, solution.delays[i], terms[i])
    out.row("total", "", float(solution.means.sum()), float(solution.variances.sum()), None,
            solution.objective)
    _print_report(solution, cfg.client_ids, sys.stderr)
    return out


def _simulate_policy(cfg, problem, solution, name):
    trace = build_trace_config(cfg.clients, name, solution, cfg.horizon, cfg.sample_every,
                               cfg.initial_channel_state)
    return trace, run_experiment(trace, cfg.runs, cfg.parallelism, cfg.master_seed)


def cmd_simulate(cfg: ExperimentConfig, args) -> CsvOut:
    problem = _problem(cfg)
    solution = solve(problem)
    out = CsvOut(SIMULATE_HEADER)
    series = CsvOut(SERIES_HEADER)
    for name in cfg.policy:
        trace, result = _simulate_policy(cfg, problem, solution, name)
        second = result.second_order()
        for i, c in enumerate(cfg.clients):
            model = solution.targets.models[i]
            ell = trace.delays[i]
            out.row(name, cfg.client_ids[i], c.kind, model.mean, result.delivery_rate[i],
                    model.variance, None if second is None else second[i].variance,
                    aoi_approx(model, c.lam) if c.is_sensing else None,
                    result.aoi[i] if c.is_sensing else None,
                    None if c.is_sensing else outage_approx(model, ell),
                    None if c.is_sensing else result.outage_rate[i],
                    None if c.is_sensing else result.timely_throughput[i])
        sensing = [i for i, c in enumerate(cfg.clients) if c.is_sensing]
        streaming = [i for i, c in enumerate(cfg.clients) if not c.is_sensing]
        out.row(name, "total", "", float(solution.means.sum()), float(result.delivery_rate.sum()),
                float(solution.variances.sum()),
                None if second is None else sum(m.variance for m in second),
                sum(aoi_approx(solution.targets.models[i], cfg.clients[i].lam) for i in sensing)
                if sensing else None,
                float(result.aoi[sensing].sum()) if sensing else None,
                sum(outage_approx(solution.targets.models[i], trace.delays[i])
                    for i in streaming) if streaming else None,
                float(result.outage_rate[streaming].sum()) if streaming else None,
                float(result.timely_throughput[streaming].sum()) if streaming else None)
        times, means, variances = result.convergence_series()
        for k, t in enumerate(times):
            for i in range(len(cfg.clients)):
                series.row(name, int(t), cfg.client_ids[i], means[k, i], variances[k, i],
                           solution.means[i], solution.variances[i])
    if args.series_out:
        series.emit(args.series_out)
    return out


def cmd_compare(cfg: ExperimentConfig, args) -> CsvOut:
    if len(cfg.policy) < 2:
        raise ConfigError(["compare needs at least two policies"])
    problem = _problem(cfg)
    solution = solve(problem)
    out = CsvOut(COMPARE_HEADER)
    for name in cfg.policy:
        trace, result = _simulate_policy(cfg, problem, solution, name)
        sensing = np.array([c.is_sensing for c in cfg.clients])
        beta = np.array([0.0 if c.is_sensing else c.beta for c in cfg.clients])
        out.row(name, result.objective(), float(result.aoi[sensing].sum()),
                float((beta * result.outage_rate).sum()), solution.objective)
    return out


def cmd_scenario(args) -> str:
    makers = {
        "aoi": lambda: scenarios.aoi_instance(args.n, args.seed),
        "aoi-weighted": lambda: scenarios.aoi_instance(args.n, args.seed, weighted=True),
        "iid": lambda: scenarios.iid_instance(args.n, args.seed),
        "streaming": lambda: scenarios.streaming_instance(args.n, args.seed),
        "streaming-configurable": lambda: scenarios.streaming_instance(
            args.n, args.seed, configurable=True),
        "mixed": lambda: scenarios.mixed_instance(args.n, args.seed),
    }
    clients = makers[args.kind]()
    policies = {"aoi": ["vwd", "whittle", "stationary", "maxweight"],
                "streaming": ["vwd", "wld", "dbldf"],
                "mixed": ["vwd", "stationary-dbldf"]}
    family = "aoi" if args.kind in ("aoi", "aoi-weighted", "iid") else \
        "mixed" if args.kind == "mixed" else "streaming"
    cfg = ExperimentConfig(clients, [c.name for c in clients], policies[family],
                           args.horizon or 100_000, args.runs or 50, 0)
    return json.dumps(config_to_dict(cfg), indent=2) + "\n"


COMMANDS = {
    "validate": cmd_validate,
    "optimize": cmd_optimize,
    "simulate": cmd_simulate,
    "compare": cmd_compare,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="secondorder",
                                     description="Second-order wireless scheduling toolkit")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, helptext in [("validate", "single-client theory vs. simulation sweep"),
                           ("optimize", "solve the allocation problem"),
                           ("simulate", "simulate the configured policies"),
                           ("compare", "compare policies on identical seeds")]:
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--config", required=True, help="configuration document (JSON/YAML)")
        p.add_argument("--seed", type=int, help="master seed (overrides the config)")
        p.add_argument("--runs", type=int, help="independent runs")
        p.add_argument("--horizon", type=int, help="slots per run")
        p.add_argument("--out", help="output CSV path (default: stdout)")
        p.add_argument("--policy", help="policy id or comma-separated list")
        p.add_argument("--parallelism", type=int, help="worker threads")
        if name == "simulate":
            p.add_argument("--series-out", help="CSV path for the convergence time series")
    p = sub.add_parser("scenario", help="write a random instance as a config document")
    p.add_argument("kind", choices=SCENARIO_KINDS)
    p.add_argument("--n", type=int, default=5, help="number of clients")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--runs", type=int)
    p.add_argument("--horizon", type=int)
    p.add_argument("--out", help="output path (default: stdout)")
    return parser


def _apply_overrides(cfg: ExperimentConfig, args) -> ExperimentConfig:
    errors = []
    for key, attr, low in [("seed", "master_seed", 0), ("runs", "runs", 1),
                           ("horizon", "horizon", 1), ("parallelism", "parallelism", 1)]:
        value = getattr(args, key, None)
        if value is not None:
            if value < low:
                errors.append(f"--{key} must be >= {low}")
            else:
                setattr(cfg, attr, value)
    if args.policy:
        names = [p.strip() for p in args.policy.split(",") if p.strip()]
        bad = [p for p in names if p not in POLICY_IDS]
        if bad or not names:
            errors.append(f"--policy unknown policy {', '.join(bad) or '(empty)'}")
        else:
            cfg.policy = names
    if errors:
        raise ConfigError(errors)
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "scenario":
            text = cmd_scenario(args)
            if args.out:
                with open(args.out, "w", encoding="utf-8") as fh:
                    fh.write(text)
            else:
                sys.stdout.write(text)
            return EXIT_OK
        cfg = _apply_overrides(load_config(args.config), args)
        out = COMMANDS[args.command](cfg, args)
        out.emit(args.out or cfg.output_path)
        return EXIT_OK
    except ConfigError as exc:
        for err in exc.errors:
            print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except InfeasibleProblem as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except Exception as exc:  # noqa: BLE001 - map every other failure to one exit code
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
