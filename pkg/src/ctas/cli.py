"""``ctas`` command line: plan, decompose, bench and metrics.

Exit codes: 0 success, 2 infeasible, 3 time limit without incumbent,
4 I/O or schema error.  ``CTAS_LOG`` sets the log level (name or number).
"""

from __future__ import annotations

import argparse
import concurrent.futures
import csv
import io
import json
import logging
import math
import os
import sys
import time
from pathlib import Path

from .flows import FlowError, FlowNetwork, from_dot, to_dot
from .lp.bnb import NO_FEASIBLE
from .lp.simplex import INFEASIBLE, UNBOUNDED
from .model import ModelError, problem_from_dict
from .pipeline import MODES, Plan, decompose, plan
from .scenario import (
    PANDEMIC_SPECIES,
    load_bench_cases,
    pandemic_case,
    read_cost_csv,
    success_probability,
    synthetic_cost_matrix,
)

logger = logging.getLogger("ctas")

EXIT_OK = 0
EXIT_INFEASIBLE = 2
EXIT_TIMEOUT = 3
EXIT_IO = 4

SCHEMA = 1
BENCH_MODES = {"deterministic": "deterministic", "risk-extensive": "extensive", "risk-lshaped": "lshaped"}
BENCH_COLUMNS = ["case", "mode", "C_e", "C_q", "C_h", "status", "objective", "lower_bound", "gap",
                 "gap_delta", "mean_p", "energy", "rounded_energy", "wall_time"]
DEFAULT_WEIGHTS = (1.0, 0.1, 1.0)


class SchemaError(ValueError):
    pass


# helpers ---------------------------------------------------------------------------

def _setup_logging():
    level = os.environ.get("CTAS_LOG", "WARNING").strip()
    value = int(level) if level.isdigit() else getattr(logging, level.upper(), logging.WARNING)
    logging.basicConfig(level=value, stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")


def _read_json(path) -> dict:
    doc = json.loads(Path(path).read_text())
    if isinstance(doc, dict) and doc.get("schema", SCHEMA) != SCHEMA:
        raise SchemaError(f"{path}: unsupported schema {doc.get('schema')!r}")
    return doc


def _write(text: str, path):
    if path is None or str(path) == "-":
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def _dump(doc) -> str:
    return json.dumps(doc, indent=2, sort_keys=False) + "\n"


def _exit_for(status: str) -> int:
    if status in (INFEASIBLE, UNBOUNDED):
        return EXIT_INFEASIBLE
    if status == NO_FEASIBLE:
        return EXIT_TIMEOUT
    return EXIT_OK


def _weights(text: str) -> tuple:
    parts = [float(p) for p in text.split(",")]
    if len(parts) != 3 or min(parts) < 0:
        raise argparse.ArgumentTypeError("weights are three non-negative numbers C_e,C_q,C_h")
    return tuple(parts)


def _problem_overrides(args) -> dict:
    out = {}
    for flag, key in (("samples", "n_samples"), ("beta", "beta"), ("seed", "seed"),
                      ("ce", "C_e"), ("cq", "C_q"), ("ch", "C_h")):
        value = getattr(args, flag, None)
        if value is not None:
            out[key] = value
    return out


# plan ---------------------------------------------------------------------------------

def plan_metrics_csv(p: Plan, problem) -> str:
    report = success_probability(p, problem) if p.has_solution else None
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["task", "team", "start_time", "risk", "p_success"])
    for t in problem.tasks:
        team = " ".join(f"{k}:{n}" for k, n in sorted(p.teams.get(t.id, {}).items()))
        w.writerow([t.id, team, p.schedule.get(t.id, ""), p.risk.get(t.id, ""),
                    "" if report is None else report.per_task[t.id]])
    if report is not None:
        w.writerow(["mean", "", "", "", report.mean])
    return buf.getvalue()


def plan_dot(p: Plan) -> str:
    return "".join(to_dot(net, [r for r in p.routes if r.species == k], name=k)
                   for k, net in p.rounded.items())


def cmd_plan(args) -> int:
    problem = problem_from_dict(_read_json(args.problem))
    overrides = _problem_overrides(args)
    if overrides:
        problem = problem.replace(**overrides)
    mode = "deterministic" if args.deterministic else args.mode
    result = plan(problem, mode, gap=args.gap, time_limit=args.time_limit, backend=args.backend)
    _write(_dump(result.to_dict()), args.output)
    if args.dot and result.has_solution:
        Path(args.dot).write_text(plan_dot(result))
    if args.metrics:
        Path(args.metrics).write_text(plan_metrics_csv(result, problem))
    logger.info("plan %s: objective %s, gap %s", result.status, result.objective, result.gap)
    return _exit_for(result.status)


# decompose -------------------------------------------------------------------------

def _networks(path) -> list:
    if str(path).endswith(".dot"):
        return from_dot(Path(path).read_text())
    doc = _read_json(path)
    if isinstance(doc, dict) and "edges" in doc:
        return [FlowNetwork.from_dict(doc)]
    if isinstance(doc, dict) and "networks" in doc:
        return [FlowNetwork.from_dict(d) for d in doc["networks"]]
    if isinstance(doc, dict) and "flows" in doc:
        return [FlowNetwork.from_dict(d) for d in doc["flows"]]
    raise SchemaError(f"{path}: expected a flow network, a network list or a plan file")


def cmd_decompose(args) -> int:
    out = []
    for net in _networks(args.flows):
        rounded, cover, round_time = decompose(net, time_limit=args.time_limit)
        out.append({
            "species": net.species,
            "flow": net.total_flow(),
            "int_flow": rounded.total_flow(),
            "energy": net.energy(),
            "int_energy": rounded.energy(),
            "round_time": round_time,
            "cover_time": cover.wall_time,
            "cover_status": cover.status,
            "max_route_energy": cover.max_energy,
            "cover_gap": cover.gap if math.isfinite(cover.gap) else None,
            "rounded": rounded.to_dict(),
            "routes": [r.to_dict() for r in cover.routes],
        })
    if args.dot:
        Path(args.dot).write_text("".join(
            to_dot(FlowNetwork.from_dict(rec["rounded"]), None, rec["species"] or "flow") for rec in out))
    _write(_dump({"schema": SCHEMA, "networks": out}), args.output)
    return EXIT_OK


# bench -----------------------------------------------------------------------------

def run_bench_case(case, mode: str, weights: tuple, costs_path=None, samples: int = 100,
                   beta: float = 0.9, gap: float = 1e-4, time_limit: float | None = 120.0,
                   backend: str = "highs") -> dict:
    """One bench row; failures become rows whose status starts with ``error``."""
    row = dict.fromkeys(BENCH_COLUMNS, "")
    row.update(case=case.case_id, mode=mode, C_e=weights[0], C_q=weights[1], C_h=weights[2])
    start = time.perf_counter()
    try:
        task_ids = [f"m{i + 1}" for i in range(case.tasks)]
        costs = (read_cost_csv(costs_path) if costs_path
                 else synthetic_cost_matrix(list(PANDEMIC_SPECIES), task_ids, case.seed))
        problem = pandemic_case(case, costs, C_e=weights[0], C_q=weights[1], C_h=weights[2],
                                n_samples=samples, beta=beta)
        p = plan(problem, BENCH_MODES[mode], gap=gap, time_limit=time_limit, backend=backend)
        row.update(status=p.status, lower_bound=p.lower_bound, wall_time=p.wall_time)
        if p.has_solution:
            row.update(objective=p.objective, gap=p.gap, gap_delta=p.gap_delta,
                       mean_p=success_probability(p, problem).mean, energy=p.energy,
                       rounded_energy=p.rounded_energy)
    except Exception as exc:  # recorded, the run continues
        logger.warning("case %s/%s failed: %s", case.case_id, mode, exc)
        row.update(status=f"error: {type(exc).__name__}: {exc}", wall_time=time.perf_counter() - start)
    return row


def bench_rows(cases, modes, weight_sets, *, jobs: int = 1, **kw) -> list:
    """All rows in (case, weights, mode) order, whatever order workers finish in."""
    tasks = [(c, m, w) for c in cases for w in weight_sets for m in modes]
    if jobs <= 1:
        return [run_bench_case(c, m, w, **kw) for c, m, w in tasks]
    with concurrent.futures.ProcessPoolExecutor(max_workers=jobs) as pool:
        futures = [pool.submit(run_bench_case, c, m, w, **kw) for c, m, w in tasks]
        return [f.result() for f in futures]


def rows_to_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=BENCH_COLUMNS, lineterminator="\n")
    w.writeheader()
    for row in rows:
        w.writerow({k: (f"{v:.10g}" if isinstance(v, float) else v) for k, v in row.items()})
    return buf.getvalue()


def cmd_bench(args) -> int:
    cases = load_bench_cases(args.grid)
    if args.case:
        wanted = set(args.case)
        cases = [c for c in cases if c.case_id in wanted]
    rows = bench_rows(cases, args.modes, args.weights or [DEFAULT_WEIGHTS], jobs=args.jobs,
                      costs_path=args.costs, samples=args.samples, beta=args.beta, gap=args.gap,
                      time_limit=args.time_limit, backend=args.backend)
    _write(rows_to_csv(rows), args.output)
    return EXIT_OK


# metrics -----------------------------------------------------------------------------

def cmd_metrics(args) -> int:
    problem = problem_from_dict(_read_json(args.problem))
    p = Plan.from_dict(_read_json(args.plan))
    report = success_probability(p, problem, seed=problem.seed)
    if args.csv:
        _write(plan_metrics_csv(p, problem), args.output)
    else:
        doc = {"schema": SCHEMA, **report.to_dict(), "objective": p.objective if p.has_solution else None,
               "rounded_objective": p.rounded_objective if p.has_solution else None,
               "energy": p.energy, "rounded_energy": p.rounded_energy}
        _write(_dump(doc), args.output)
    return EXIT_OK


# entry point -----------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ctas", description="Risk-aware heterogeneous team planning.")
    sub = ap.add_subparsers(dest="command", required=True)

    def solver_flags(p, time_limit=120.0):
        p.add_argument("--gap", type=float, default=1e-4, help="relative optimality gap target")
        p.add_argument("--time-limit", type=float, default=time_limit, help="solver time limit in seconds")
        p.add_argument("--backend", choices=("highs", "bnb"), default="highs", help="MILP solver")

    p = sub.add_parser("plan", help="solve a problem file and decompose its flows into routes")
    p.add_argument("problem", help="problem JSON")
    p.add_argument("--mode", choices=MODES, default="extensive")
    p.add_argument("--deterministic", action="store_true", help="shorthand for --mode deterministic")
    p.add_argument("--samples", type=int, help="scenario count")
    p.add_argument("--beta", type=float, help="CVaR level")
    p.add_argument("--seed", type=int, help="root seed")
    p.add_argument("--ce", type=float, help="energy weight C_e")
    p.add_argument("--cq", type=float, help="time weight C_q")
    p.add_argument("--ch", type=float, help="risk weight C_h")
    solver_flags(p)
    p.add_argument("-o", "--output", help="plan JSON (default stdout)")
    p.add_argument("--dot", help="write rounded flows and routes as DOT")
    p.add_argument("--metrics", help="write per-task metrics CSV")
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("decompose", help="round a flow and cover it with routes")
    p.add_argument("flows", help="flow network JSON, network list, plan JSON or DOT")
    p.add_argument("--time-limit", type=float, default=60.0, help="cover time limit in seconds")
    p.add_argument("-o", "--output")
    p.add_argument("--dot")
    p.set_defaults(func=cmd_decompose)

    p = sub.add_parser("bench", help="run a case grid and write one CSV row per case and mode")
    p.add_argument("grid", help="bench case JSON")
    p.add_argument("--costs", help="cost matrix CSV (default: synthetic, seeded per case)")
    p.add_argument("--modes", nargs="+", choices=tuple(BENCH_MODES), default=list(BENCH_MODES))
    p.add_argument("--weights", type=_weights, action="append",
                   help="C_e,C_q,C_h; repeat to sweep (default 1,0.1,1)")
    p.add_argument("--case", action="append", help="run only these case ids")
    p.add_argument("--samples", type=int, default=100)
    p.add_argument("--beta", type=float, default=0.9)
    p.add_argument("--jobs", type=int, default=1, help="cases solved concurrently")
    solver_flags(p)
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("metrics", help="score a plan by its probability of success")
    p.add_argument("plan", help="plan JSON")
    p.add_argument("problem", help="problem JSON")
    p.add_argument("--csv", action="store_true", help="per-task CSV instead of JSON")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_metrics)
    return ap


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (OSError, json.JSONDecodeError, SchemaError, ModelError, FlowError, KeyError, TypeError) as exc:
        print(f"ctas: error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
