"""Mobility Equity Metric and its maximization over mode weights."""

from __future__ import annotations

import itertools
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .game import (GameConfig, RedistributionError, TravelTimes, delta_pv, play_game,
                   travel_times)
from .network import DemandTable, ModeSet, Network, ScenarioError, free_flow_distances

INDICATORS = ("exact", "sigmoid")
DEFAULT_COSTS = {"public": 0.3, "cpv": 1.0}
THRESHOLD_PERCENTILE = 60.0


@dataclass(frozen=True)
class MemParams:
    """Metric parameters.

    ``cost`` maps mode name to cost per passenger mile, ``priority`` maps
    service name to its weight, ``threshold`` maps mode name to its time
    threshold. Modes missing from ``threshold`` get the automatic threshold
    (see :func:`auto_threshold`).
    """

    kappa: float = 1.0
    cost: dict = field(default_factory=lambda: dict(DEFAULT_COSTS))
    priority: dict = field(default_factory=lambda: {"essential": 1.0})
    threshold: dict = field(default_factory=dict)
    slope: float = 2.0
    indicator: str = "sigmoid"
    services: dict = field(default_factory=dict)  # service -> destinations; empty = all destinations

    def __post_init__(self):
        if self.kappa < 0:
            raise ScenarioError("price sensitivity kappa must be >= 0")
        if any(c < 0 for c in self.cost.values()):
            raise ScenarioError("mode costs must be >= 0")
        if any(b < 0 for b in self.priority.values()):
            raise ScenarioError("service priorities must be >= 0")
        if any(not tau > 0 for tau in self.threshold.values()):
            raise ScenarioError("time thresholds must be positive")
        if not self.slope > 0:
            raise ScenarioError("sigmoid slope must be positive")
        if self.indicator not in INDICATORS:
            raise ScenarioError(f"indicator must be one of {INDICATORS}")
        for name, dests in self.services.items():
            if not dests:
                raise ScenarioError(f"service {name!r} has no destinations")

    def service_map(self, network: Network) -> dict:
        services = self.services or {name: tuple(network.destinations) for name in self.priority}
        for name, dests in services.items():
            unknown = [d for d in dests if d not in network.destinations]
            if unknown:
                raise ScenarioError(f"service {name!r} lists non-destination nodes {unknown}")
        return {name: tuple(dests) for name, dests in services.items()}


def smooth_indicator(t: float, tau: float, k: float) -> float:
    """Sigmoid stand-in for ``t <= tau``: ``1 - 1 / (1 + exp(-k (t - tau)))``."""
    if not k > 0:
        raise ValueError("slope must be positive")
    z = k * (t - tau)
    # branch so exp never overflows
    if z >= 0:
        e = math.exp(-z)
        return e / (1.0 + e)
    return 1.0 / (1.0 + math.exp(z))


def _free_flow_od_times(network: Network, demands: DemandTable, formula: str) -> list[float]:
    from .cognitive import shortest_path

    values = []
    for trip in demands.trips:
        if formula == "path":
            dist = free_flow_distances(network, trip.origin)
            values.append(float(dist[network.node_index[trip.destination]]))
        else:
            path = shortest_path(network, network.free_flow, trip.origin, trip.destination)
            edges = network.path_edges(path)
            values.append(float(network.free_flow[edges].mean()))
    return values


def auto_threshold(network: Network, demands: DemandTable, formula: str = "paper") -> float:
    """60th percentile of free-flow trip times, measured with the same time formula."""
    return float(np.percentile(_free_flow_od_times(network, demands, formula), THRESHOLD_PERCENTILE))


def thresholds(params: MemParams, network: Network, demands: DemandTable, modes: ModeSet,
               formula: str = "paper") -> dict:
    auto = None
    out = {}
    for name in modes.names:
        if name in params.threshold:
            out[name] = float(params.threshold[name])
        else:
            auto = auto_threshold(network, demands, formula) if auto is None else auto
            out[name] = auto
    return out


def sigma(times: TravelTimes, demands: DemandTable, mode: int, destinations, params: MemParams,
          tau: float) -> float:
    """Demand-weighted average, over origins, of services reachable within ``tau``.

    Trips of the mode with no travel time (no demand) count as unreachable.
    """
    dests = set(destinations)
    weight = {}
    count = {}
    for n, trip in enumerate(demands.trips):
        weight[trip.origin] = weight.get(trip.origin, 0.0) + demands.compliant[mode, n]
        if trip.destination not in dests:
            continue
        t = times.modes.get((mode, n))
        if t is None:
            hit = 0.0
        elif params.indicator == "exact":
            hit = 1.0 if t <= tau else 0.0
        else:
            hit = smooth_indicator(t, tau, params.slope)
        count[trip.origin] = count.get(trip.origin, 0.0) + hit
    total = sum(weight.values())
    if total <= 0:
        raise ValueError(f"mode {mode} has no compliant demand; its accessibility is undefined")
    return sum(weight[o] * count.get(o, 0.0) for o in weight) / total


def mem(sigmas: dict, params: MemParams, modes=None) -> float:
    """Sum over modes of ``exp(-kappa c_m) * sum_s beta_s sigma_{m,s}``.

    ``sigmas`` maps (mode name, service name) to accessibility.
    """
    names = modes.names if modes is not None else sorted({m for m, _ in sigmas})
    total = 0.0
    for m in names:
        inner = sum(params.priority.get(s, 0.0) * v for (mm, s), v in sigmas.items() if mm == m)
        total += math.exp(-params.kappa * params.cost.get(m, 1.0)) * inner
    return total


def evaluate_mem(times: TravelTimes, network: Network, demands: DemandTable, modes: ModeSet,
                 params: MemParams, formula: str = "paper") -> tuple[float, dict]:
    taus = thresholds(params, network, demands, modes, formula)
    sigmas = {}
    for m, name in enumerate(modes.names):
        if demands.compliant[m].sum() <= 0:
            continue  # a mode nobody uses offers no accessibility
        for service, dests in params.service_map(network).items():
            sigmas[(name, service)] = sigma(times, demands, m, dests, params, taus[name])
    return mem(sigmas, params, modes), sigmas


@dataclass(frozen=True)
class SweepRecord:
    weights: tuple
    ncr: float | None
    mem: float
    delta_pv: float
    times: TravelTimes | None
    status: str
    feasible: bool
    iterations: int = 0


class InfeasibleSweep(RuntimeError):
    def __init__(self, message, records):
        super().__init__(message)
        self.records = records


def weight_grid(n_modes: int, step: float) -> list[tuple]:
    """All weight vectors on the simplex with coordinates in multiples of ``step``."""
    parts = round(1.0 / step)
    if parts <= 0 or abs(parts * step - 1.0) > 1e-9:
        raise ValueError(f"grid step {step} must divide 1")
    grid = []
    for combo in itertools.product(range(parts + 1), repeat=n_modes - 1):
        if sum(combo) <= parts:
            counts = (*combo, parts - sum(combo))
            grid.append(tuple(c / parts for c in counts))
    return grid


def evaluate_point(network, demands, modes, params, gap_limit, config, weights, ncr=None) -> SweepRecord:
    try:
        result = play_game(network, demands, weights, config)
    except RedistributionError as exc:
        result = exc.result
        status = "redistribution_failed"
    else:
        status = result.status
    times = travel_times(result, demands, config.time_formula)
    value, _ = evaluate_mem(times, network, demands, modes, params, config.time_formula)
    gap = delta_pv(times, demands, modes, paired=config.paired_delta)
    feasible = status != "redistribution_failed" and gap <= gap_limit
    return SweepRecord(tuple(float(v) for v in weights), ncr, value, gap, times, status, feasible,
                       len(result.trace))


def _evaluate_star(args):
    return evaluate_point(*args)


def best_record(records, modes: ModeSet):
    """Feasible record with the largest MEM; ties go to the smaller public weight."""
    pub = modes.index(modes.public) if modes.public is not None else None
    feasible = [r for r in records if r.feasible]
    if not feasible:
        return None
    top = max(r.mem for r in feasible)
    tied = [r for r in feasible if r.mem == top]
    return min(tied, key=lambda r: r.weights[pub]) if pub is not None else tied[0]


def maximize_mem(network: Network, demands: DemandTable, modes: ModeSet, params: MemParams,
                 gap_limit: float, grid, game_config: GameConfig = GameConfig(), ncr=None, jobs: int = 1):
    """Evaluate every grid point and return (best weights, all records).

    Raises :class:`InfeasibleSweep` carrying all records when no point meets
    ``gap_limit``.
    """
    grid = [tuple(g) for g in grid]
    if not grid:
        raise ValueError("weight grid is empty")
    config = replace(game_config, gap_limit=gap_limit)
    tasks = [(network, demands, modes, params, gap_limit, config, w, ncr) for w in grid]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            records = list(pool.map(_evaluate_star, tasks))
    else:
        records = [_evaluate_star(t) for t in tasks]
    best = best_record(records, modes)
    if best is None:
        raise InfeasibleSweep(f"no weight vector keeps delta_pv within {gap_limit}", records)
    return best.weights, records
