"""Alternating play between system routing and level-k NPVs.

Each outer iteration solves the weighted system problem against the current
NPV flows, then lets NPV levels 0, 1, 2 respond to the new compliant flows.
Play stops at a fixed point, when the edge totals start cycling (chattering),
or at the iteration cap. Chattering is resolved once by pinning compliant
edge totals and re-optimizing the mode mix underneath them.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .assignment import (CompliantFlows, SolveReport, check_weights, frozen_objective,
                         redistribute_fixed_totals, solve_system_optimal)
from .cognitive import NpvAssignment, NpvFlows, npv_phase
from .network import DemandTable, ModeSet, Network

log = logging.getLogger(__name__)

CONVERGED = "converged"
CHATTER_RESOLVED = "chatter_resolved"
MAX_ITERATIONS = "max_iterations"

TIME_FORMULAS = ("paper", "path")


class RedistributionError(RuntimeError):
    """NPV best responses changed after the flow-fixing redistribution."""

    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


@dataclass(frozen=True)
class GameConfig:
    max_iterations: int = 50
    flow_tolerance: float = 1e-4  # relative to total network demand
    chatter_window: int = 6
    gap_limit: float = math.inf
    time_formula: str = "paper"
    paired_delta: bool = False
    fw_tolerance: float = 1e-6
    fw_max_iterations: int = 10_000

    def __post_init__(self):
        if self.max_iterations < 2:
            raise ValueError("max_iterations must be at least 2")
        if not self.flow_tolerance > 0:
            raise ValueError("flow_tolerance must be positive")
        if self.chatter_window < 2:
            raise ValueError("chatter_window must be at least 2")
        if self.time_formula not in TIME_FORMULAS:
            raise ValueError(f"time_formula must be one of {TIME_FORMULAS}")


@dataclass(frozen=True, eq=False)
class IterationRecord:
    compliant_totals: np.ndarray
    npv_totals: np.ndarray
    objective: float
    solve: SolveReport

    @property
    def totals(self) -> np.ndarray:
        return self.compliant_totals + self.npv_totals


@dataclass(frozen=True)
class RedistributionReport:
    objective_before: float  # frozen-time weighted objective
    objective_after: float
    totals_deviation: float  # max |x_after - x_before| over edges
    paths_unchanged: bool
    before: CompliantFlows = field(repr=False)


@dataclass(frozen=True, eq=False)
class EquilibriumResult:
    network: Network
    demands: DemandTable
    weights: np.ndarray
    compliant: CompliantFlows
    npv_assignment: NpvAssignment
    npv_flows: NpvFlows
    trace: list
    status: str
    redistribution: RedistributionReport | None = None

    @property
    def totals(self) -> np.ndarray:
        return self.compliant.totals + self.npv_flows.total

    @property
    def link_times(self) -> np.ndarray:
        return self.network.link_times(self.totals)


def detect_chatter(trace, window: int, tolerance: float) -> bool:
    """True if the newest vector recurs within ``window`` without being a repeat of its predecessor."""
    vectors = [np.asarray(v.totals if isinstance(v, IterationRecord) else v) for v in trace]
    if len(vectors) < 2:
        return False
    latest = vectors[-1]
    if np.max(np.abs(latest - vectors[-2])) < tolerance:
        return False
    earlier = vectors[max(0, len(vectors) - window):-2]
    return any(np.max(np.abs(latest - v)) < tolerance for v in earlier)


def play_game(network: Network, demands: DemandTable, weights, config: GameConfig = GameConfig()) -> EquilibriumResult:
    w = check_weights(weights, demands.compliant.shape[0])
    tolerance = config.flow_tolerance * max(demands.total, 1e-300)
    npv = NpvFlows.zeros(network)
    trace = []
    status = MAX_ITERATIONS
    redistribution = None
    for k in range(1, config.max_iterations + 1):
        q_in = npv.total
        flows, report = solve_system_optimal(network, demands, w, q_in, config.fw_tolerance,
                                             config.fw_max_iterations)
        assignment, npv = npv_phase(network, flows.totals, demands)
        trace.append(IterationRecord(flows.totals, npv.total, report.objective, report))
        log.debug("iteration %d: objective %.6g, FW gap %.3g", k, report.objective, report.gap)

        if len(trace) >= 2 and np.max(np.abs(trace[-1].totals - trace[-2].totals)) < tolerance:
            status = CONVERGED
            break
        if len(trace) == 1 and not demands.noncompliant.any():
            status = CONVERGED  # nothing reacts to the system solve
            break
        # NPV flows reproduce the ones the system solved against: the next
        # solve sees the same inputs, so wait for it rather than call chatter
        settled = np.max(np.abs(npv.total - q_in), initial=0.0) < tolerance
        if not settled and detect_chatter(trace, config.chatter_window, tolerance):
            log.info("chattering detected at iteration %d; fixing compliant edge totals", k)
            fixed = flows.totals
            redistributed = redistribute_fixed_totals(network, demands, w, fixed, npv.total)
            again, _ = npv_phase(network, redistributed.totals, demands)
            redistribution = RedistributionReport(
                objective_before=frozen_objective(network, flows, w, npv.total, fixed),
                objective_after=frozen_objective(network, redistributed, w, npv.total, fixed),
                totals_deviation=float(np.max(np.abs(redistributed.totals - fixed), initial=0.0)),
                paths_unchanged=again.paths == assignment.paths,
                before=flows,
            )
            result = EquilibriumResult(network, demands, w, redistributed, assignment, npv, trace,
                                       CHATTER_RESOLVED, redistribution)
            if not redistribution.paths_unchanged:
                raise RedistributionError("NPV best responses changed after redistribution", result)
            return result
    else:
        log.warning("routing game hit the %d-iteration cap", config.max_iterations)
    return EquilibriumResult(network, demands, w, flows, assignment, npv, trace, status, redistribution)


@dataclass(frozen=True)
class TravelTimes:
    """Average travel time per (mode, trip) and per (NPV level, trip)."""

    modes: dict  # (mode index, trip index) -> time
    levels: dict  # (level, trip index) -> time
    formula: str = "paper"


def travel_times(result: EquilibriumResult, demands: DemandTable | None = None,
                 formula: str = "paper") -> TravelTimes:
    """Per-trip times under final link times.

    ``paper``: flow-weighted mean edge time of each (mode, trip); an NPV path
    is a unit flow, so its time is the mean edge time along it.
    ``path``: experienced time per unit demand, i.e. the path-time sum.
    Pairs without flow are omitted.
    """
    if formula not in TIME_FORMULAS:
        raise ValueError(f"unknown time formula {formula!r}")
    demands = result.demands if demands is None else demands
    times = result.link_times
    x = result.compliant.x
    modes = {}
    for m in range(x.shape[1]):
        for n in range(x.shape[2]):
            flow = x[:, m, n]
            if demands.compliant[m, n] <= 0 or flow.sum() <= 0:
                continue
            denom = flow.sum() if formula == "paper" else demands.compliant[m, n]
            modes[(m, n)] = float(times @ flow / denom)
    levels = {}
    for (level, n), path in sorted(result.npv_assignment.paths.items()):
        edges = result.network.path_edges(path)
        total = float(times[edges].sum())
        levels[(level, n)] = total / len(edges) if formula == "paper" else total
    return TravelTimes(modes, levels, formula)


def delta_pv(times: TravelTimes, demands: DemandTable, modes: ModeSet, paired: bool = False) -> float:
    """Average CPV travel time minus average NPV travel time.

    Default: difference of demand-weighted means over all trips. ``paired``:
    per-trip differences averaged with the trip's private demand as weight.
    Zero when either group carries no demand.
    """
    if modes.cpv is None:
        raise ValueError("delta_pv needs a CPV mode")
    c = modes.index(modes.cpv)
    cpv = {n: t for (m, n), t in times.modes.items() if m == c}
    npv_rate = {}
    npv_time = {}
    for (level, n), t in times.levels.items():
        rate = demands.noncompliant[level, n]
        npv_rate[n] = npv_rate.get(n, 0.0) + rate
        npv_time[n] = npv_time.get(n, 0.0) + rate * t
    if not cpv or sum(npv_rate.values()) <= 0:
        return 0.0
    if paired:
        num = den = 0.0
        for n in sorted(set(cpv) & set(npv_rate)):
            if npv_rate[n] <= 0:
                continue
            weight = demands.compliant[c, n] + npv_rate[n]
            num += weight * (cpv[n] - npv_time[n] / npv_rate[n])
            den += weight
        return num / den if den > 0 else 0.0
    cpv_mean = sum(demands.compliant[c, n] * t for n, t in cpv.items()) / sum(demands.compliant[c, n] for n in cpv)
    npv_mean = sum(npv_time.values()) / sum(npv_rate.values())
    return float(cpv_mean - npv_mean)
