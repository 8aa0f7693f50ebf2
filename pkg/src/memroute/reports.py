"""Run records (JSON) and result tables (CSV), with loaders and a re-check."""

from __future__ import annotations

import csv
import io
import json
import math
from pathlib import Path

import numpy as np

from .game import EquilibriumResult, TravelTimes
from .network import LEVELS, DemandTable, ModeSet, Network

__version__ = "0.1.0"

TIMES_HEADER = ("trip", "origin", "destination", "group", "demand", "time")


def _num(value) -> str:
    """Lossless, platform-stable text for a float."""
    value = float(value)
    if math.isinf(value):
        return "inf" if value > 0 else "-inf"
    return repr(value)


def write_csv(path, header, rows) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_num(v) if isinstance(v, (float, np.floating)) else v for v in row])
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


def read_csv(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def _plain(value):
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    raise TypeError(f"cannot serialize {type(value).__name__}")


def write_json(path, data) -> None:
    text = json.dumps(data, indent=1, sort_keys=True, default=_plain)
    Path(path).write_text(text + "\n", encoding="utf-8")


def read_json(path):
    return json.loads(Path(path).read_text(encoding="utf-8"))


def group_name(modes: ModeSet, mode: int | None = None, level: int | None = None) -> str:
    return modes.names[mode] if level is None else f"npv_level_{level}"


def times_rows(times: TravelTimes, demands: DemandTable, modes: ModeSet) -> list[tuple]:
    """One row per (trip, mode) and per (trip, NPV level) with a time."""
    rows = []
    for n, trip in enumerate(demands.trips):
        for m in range(len(modes)):
            if (m, n) in times.modes:
                rows.append((n, trip.origin, trip.destination, modes.names[m],
                             float(demands.compliant[m, n]), times.modes[(m, n)]))
        for level in LEVELS:
            if (level, n) in times.levels:
                rows.append((n, trip.origin, trip.destination, group_name(modes, level=level),
                             float(demands.noncompliant[level, n]), times.levels[(level, n)]))
    return rows


def group_means(times: TravelTimes, demands: DemandTable, modes: ModeSet) -> dict:
    """Demand-weighted mean time of each mode and NPV level that carries flow."""
    out = {}
    for m, name in enumerate(modes.names):
        pairs = [(demands.compliant[m, n], t) for (mm, n), t in times.modes.items() if mm == m]
        if pairs:
            out[name] = sum(a * t for a, t in pairs) / sum(a for a, _ in pairs)
    for level in LEVELS:
        pairs = [(demands.noncompliant[level, n], t) for (l, n), t in times.levels.items() if l == level]
        if pairs:
            out[group_name(modes, level=level)] = sum(a * t for a, t in pairs) / sum(a for a, _ in pairs)
    return out


def result_summary(result: EquilibriumResult) -> dict:
    net = result.network
    x = result.compliant.x
    flows = [{"edge": int(e), "mode": int(m), "trip": int(n), "flow": float(x[e, m, n])}
             for e, m, n in zip(*np.nonzero(x))]
    trace = [{
        "iteration": k + 1,
        "objective": rec.objective,
        "solve": rec.solve.as_dict(),
        "compliant_totals": rec.compliant_totals.tolist(),
        "npv_totals": rec.npv_totals.tolist(),
    } for k, rec in enumerate(result.trace)]
    red = result.redistribution
    return {
        "status": result.status,
        "iterations": len(result.trace),
        "weights": result.weights.tolist(),
        "compliant_flows": flows,
        "npv_level_flows": result.npv_flows.level.tolist(),
        "npv_paths": [{"level": l, "trip": n, "path": list(p)}
                      for (l, n), p in sorted(result.npv_assignment.paths.items())],
        "edge_totals": result.totals.tolist(),
        "link_times": result.link_times.tolist(),
        "edges": [[e.tail, e.head] for e in net.edges],
        "trace": trace,
        "redistribution": None if red is None else {
            "objective_before": red.objective_before,
            "objective_after": red.objective_after,
            "totals_deviation": red.totals_deviation,
            "paths_unchanged": red.paths_unchanged,
        },
    }


def times_record(times: TravelTimes, modes: ModeSet) -> dict:
    return {
        "formula": times.formula,
        "modes": [{"mode": modes.names[m], "trip": n, "time": t} for (m, n), t in sorted(times.modes.items())],
        "levels": [{"level": l, "trip": n, "time": t} for (l, n), t in sorted(times.levels.items())],
    }


def check_run_record(record: dict, network: Network, demands: DemandTable, modes: ModeSet,
                     tol: float = 1e-6) -> list[str]:
    """Re-verify a reloaded solve record against its scenario; returns problems found."""
    problems = []
    res = record["result"]
    n_e = network.n_edges
    x = np.zeros((n_e, len(modes), demands.n_trips))
    for item in res["compliant_flows"]:
        if item["flow"] < 0:
            problems.append(f"negative flow on edge {item['edge']}")
        x[item["edge"], item["mode"], item["trip"]] = item["flow"]
    scale = max(demands.total, 1.0)
    for m in range(len(modes)):
        for n, trip in enumerate(demands.trips):
            net_out = np.zeros(len(network.nodes))
            np.add.at(net_out, network.tails, x[:, m, n])
            np.add.at(net_out, network.heads, -x[:, m, n])
            want = np.zeros(len(network.nodes))
            rate = demands.compliant[m, n]
            want[network.node_index[trip.origin]] += rate
            want[network.node_index[trip.destination]] -= rate
            if np.max(np.abs(net_out - want)) > tol * scale:
                problems.append(f"conservation fails for mode {modes.names[m]}, trip {n}")
    q = np.array(res["npv_level_flows"]).reshape(n_e, len(LEVELS))
    rebuilt = np.zeros_like(q)
    for item in res["npv_paths"]:
        level, n, path = item["level"], item["trip"], item["path"]
        trip = demands.trips[n]
        if path[0] != trip.origin or path[-1] != trip.destination:
            problems.append(f"NPV path for level {level}, trip {n} has wrong endpoints")
            continue
        rebuilt[network.path_edges(path), level] += demands.noncompliant[level, n]
    if not np.allclose(rebuilt, q, atol=tol * scale):
        problems.append("NPV level flows do not match their paths")
    totals = x.sum(axis=(1, 2)) + q.sum(axis=1)
    if not np.allclose(totals, res["edge_totals"], atol=tol * scale):
        problems.append("edge totals do not match compliant plus NPV flows")
    if not np.allclose(network.link_times(totals), res["link_times"], rtol=1e-9):
        problems.append("link times do not match the BPR curve")
    return problems
