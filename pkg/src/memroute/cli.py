"""Command line: generate scenarios, play single games, sweep weights and NCRs."""

from __future__ import annotations

import argparse
import logging
import math
import os
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import reports
from .assignment import InfeasibleAssignment
from .equity import InfeasibleSweep, evaluate_mem, maximize_mem, thresholds, weight_grid
from .game import (CHATTER_RESOLVED, MAX_ITERATIONS, TIME_FORMULAS, EquilibriumResult, GameConfig,
                   RedistributionError, delta_pv, play_game, travel_times)
from .network import ScenarioError
from .scenario import read_scenario, sample_scenario

log = logging.getLogger("memroute")

EXIT_OK = 0
EXIT_VALIDATION = 3
EXIT_INFEASIBLE = 4
EXIT_NOT_CONVERGED = 5
EXIT_IO = 6

LOG_ENV = "MEMROUTE_LOG"
DEFAULT_SPLIT = (0.5, 0.3, 0.2)


def _floats(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="memroute", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write the seeded 12-node sample scenario")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)

    def common(sp):
        sp.add_argument("scenario", help="scenario JSON file, or preset:sample / preset:chatter")
        sp.add_argument("--level-split", type=_floats, default=DEFAULT_SPLIT)
        sp.add_argument("--time-formula", choices=TIME_FORMULAS, default="paper")
        sp.add_argument("--max-iterations", type=int, default=50)
        sp.add_argument("--out", required=True, help="output directory")

    s = sub.add_parser("solve", help="play one routing game")
    common(s)
    s.add_argument("--weights", type=_floats)
    s.add_argument("--ncr", type=float)

    w = sub.add_parser("sweep", help="weight grid x NCR sweep with the delta_pv limit")
    common(w)
    w.add_argument("--grid-step", type=float, default=0.05)
    w.add_argument("--ncr-list", type=_floats, default=(0.2, 0.4, 0.6, 0.8))
    w.add_argument("--gap-limit", type=float, default=math.inf)
    w.add_argument("--jobs", type=int, default=1)

    d = sub.add_parser("iterate-demo", help="travel times before and after chatter redistribution")
    common(d)
    d.add_argument("--weights", type=_floats)
    return p


def _weights(args, scenario) -> tuple:
    if args.weights is not None:
        return args.weights
    if scenario.weights is not None:
        return scenario.weights
    n = len(scenario.modes)
    return tuple([1.0 / n] * n)


def _demands(scenario, ncr, split):
    if ncr is None:
        return scenario.demands
    return scenario.demands.with_ncr(scenario.modes, ncr, split)


def _config(args) -> GameConfig:
    return GameConfig(max_iterations=args.max_iterations, time_formula=args.time_formula)


def _outdir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _base_record(command, args, scenario) -> dict:
    params = {k: (list(v) if isinstance(v, tuple) else v) for k, v in vars(args).items()
              if k not in ("command", "out")}
    if isinstance(params.get("gap_limit"), float) and math.isinf(params["gap_limit"]):
        params["gap_limit"] = "inf"
    return {"toolkit": {"name": "memroute", "version": reports.__version__},
            "command": command, "parameters": params, "scenario_digest": scenario.digest}


def cmd_generate(args) -> int:
    scenario = sample_scenario(args.seed)
    Path(args.out).write_text(scenario.dumps(), encoding="utf-8")
    print(f"wrote {args.out} ({len(scenario.network.nodes)} nodes, {scenario.network.n_edges} edges, "
          f"digest {scenario.digest[:12]})")
    return EXIT_OK


def _play(network, demands, weights, config) -> tuple[EquilibriumResult, str]:
    try:
        result = play_game(network, demands, weights, config)
        return result, result.status
    except RedistributionError as exc:
        log.error("%s", exc)
        return exc.result, "redistribution_failed"


def cmd_solve(args) -> int:
    scenario = read_scenario(args.scenario)
    demands = _demands(scenario, args.ncr, args.level_split)
    weights = _weights(args, scenario)
    out = _outdir(args.out)
    started = time.perf_counter()
    result, status = _play(scenario.network, demands, weights, _config(args))
    times = travel_times(result, demands, args.time_formula)
    modes = scenario.modes
    value, sigmas = evaluate_mem(times, scenario.network, demands, modes, scenario.mem, args.time_formula)
    gap = delta_pv(times, demands, modes) if modes.cpv is not None else None
    record = _base_record("solve", args, scenario)
    record.update({
        "status": status,
        "result": reports.result_summary(result),
        "travel_times": reports.times_record(times, modes),
        "mem": {"value": value, "sigmas": [{"mode": m, "service": s, "sigma": v} for (m, s), v in sigmas.items()],
                "thresholds": thresholds(scenario.mem, scenario.network, demands, modes, args.time_formula),
                "kappa": scenario.mem.kappa, "cost": scenario.mem.cost, "priority": scenario.mem.priority,
                "indicator": scenario.mem.indicator, "slope": scenario.mem.slope},
        "delta_pv": gap,
        "timing": {"seconds": time.perf_counter() - started},
    })
    reports.write_json(out / "run_record.json", record)
    reports.write_csv(out / "travel_times.csv", reports.TIMES_HEADER, reports.times_rows(times, demands, modes))
    print(f"status {status}, {len(result.trace)} iterations, MEM {value:.6g}, delta_pv {gap}")
    if status in (MAX_ITERATIONS, "redistribution_failed"):
        return EXIT_NOT_CONVERGED
    return EXIT_OK


def cmd_sweep(args) -> int:
    scenario = read_scenario(args.scenario)
    modes = scenario.modes
    if modes.cpv is None:
        raise ScenarioError("a sweep needs a CPV mode to measure delta_pv")
    grid = weight_grid(len(modes), args.grid_step)
    config = _config(args)
    out = _outdir(args.out)
    started = time.perf_counter()
    rows, time_rows, best = [], [], []
    any_feasible = False
    for ncr in args.ncr_list:
        demands = _demands(scenario, ncr, args.level_split)
        try:
            weights, records = maximize_mem(scenario.network, demands, modes, scenario.mem, args.gap_limit,
                                            grid, config, ncr=ncr, jobs=args.jobs)
        except InfeasibleSweep as exc:
            log.warning("NCR %s: %s", ncr, exc)
            weights, records = None, exc.records
        any_feasible |= weights is not None
        for rec in records:
            rows.append((*rec.weights, float(ncr), rec.mem, rec.delta_pv, str(rec.feasible).lower(), rec.status))
            for trip, o, d, group, rate, t in reports.times_rows(rec.times, demands, modes):
                time_rows.append((*rec.weights, float(ncr), trip, o, d, group, rate, t))
        chosen = next((r for r in records if weights is not None and r.weights == weights), None)
        best.append({"ncr": ncr, "feasible": chosen is not None,
                     "weights": None if chosen is None else dict(zip(modes.names, chosen.weights)),
                     "mem": None if chosen is None else chosen.mem,
                     "delta_pv": None if chosen is None else chosen.delta_pv})
    wcols = tuple(f"w_{m}" for m in modes.names)
    reports.write_csv(out / "results.csv", (*wcols, "ncr", "mem", "delta_pv", "feasible", "status"), rows)
    reports.write_csv(out / "travel_times.csv", (*wcols, "ncr", *reports.TIMES_HEADER), time_rows)
    reports.write_json(out / "best_weights.json", best)
    record = _base_record("sweep", args, scenario)
    record.update({"grid_points": len(grid), "rows": len(rows), "best": best,
                   "timing": {"seconds": time.perf_counter() - started}})
    reports.write_json(out / "run_record.json", record)
    for b in best:
        if b["feasible"]:
            print(f"NCR {b['ncr']}: best weights {b['weights']} MEM {b['mem']:.6g}")
        else:
            print(f"NCR {b['ncr']}: infeasible (no weights keep delta_pv <= {args.gap_limit})")
    return EXIT_OK if any_feasible else EXIT_INFEASIBLE


def cmd_iterate_demo(args) -> int:
    scenario = read_scenario(args.scenario)
    demands = scenario.demands
    modes = scenario.modes
    out = _outdir(args.out)
    result, status = _play(scenario.network, demands, _weights(args, scenario), _config(args))
    after = reports.group_means(travel_times(result, demands, args.time_formula), demands, modes)
    record = _base_record("iterate-demo", args, scenario)
    red = result.redistribution
    if red is None:
        notice = f"no chattering (status {status}); showing the final iteration only"
        print(notice, file=sys.stderr)
        reports.write_csv(out / "iterations.csv", ("group", "final"), sorted(after.items()))
        record.update({"status": status, "notice": notice, "checks": None})
        reports.write_json(out / "run_record.json", record)
        return EXIT_NOT_CONVERGED if status == MAX_ITERATIONS else EXIT_OK

    before_result = replace(result, compliant=red.before)
    before = reports.group_means(travel_times(before_result, demands, args.time_formula), demands, modes)
    groups = sorted(set(before) | set(after))
    reports.write_csv(out / "iterations.csv", ("group", "before_redistribution", "after_redistribution"),
                      [(g, before.get(g, ""), after.get(g, "")) for g in groups])
    npv_same = all(np.isclose(before[g], after.get(g, np.nan), rtol=1e-9, atol=1e-12)
                   for g in before if g.startswith("npv_level_"))
    checks = {
        "totals_deviation": red.totals_deviation,
        "totals_preserved": red.totals_deviation <= 1e-9,
        "npv_paths_unchanged": red.paths_unchanged,
        "npv_times_unchanged": bool(npv_same),
        "objective_before": red.objective_before,
        "objective_after": red.objective_after,
        "objective_non_increasing": red.objective_after <= red.objective_before * (1 + 1e-12),
    }
    if modes.public is not None and modes.public in before:
        checks["public_time_non_increasing"] = after[modes.public] <= before[modes.public] * (1 + 1e-12)
    record.update({"status": status, "iteration": len(result.trace), "checks": checks,
                   "group_times": {"before": before, "after": after}})
    reports.write_json(out / "run_record.json", record)
    for g in groups:
        print(f"{g:>16}  {before.get(g, float('nan')):10.4f}  {after.get(g, float('nan')):10.4f}")
    print("checks: " + ", ".join(f"{k}={v}" for k, v in checks.items() if isinstance(v, bool)))
    return EXIT_OK if status == CHATTER_RESOLVED else EXIT_NOT_CONVERGED


COMMANDS = {"generate": cmd_generate, "solve": cmd_solve, "sweep": cmd_sweep, "iterate-demo": cmd_iterate_demo}


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get(LOG_ENV, "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    args = _parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except InfeasibleAssignment as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (ScenarioError, ValueError) as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
