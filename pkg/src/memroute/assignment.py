"""Weighted system-centric assignment of compliant flow.

The objective is ``sum_m w_m sum_n sum_e t_e(x_e + q_e) * x_{e,m,n}`` where
``t_e`` is the BPR time, ``x_e`` the compliant edge total and ``q_e`` the
(fixed) NPV flow. It is minimized by Frank-Wolfe over per-(mode, trip)
flow-conservation polytopes.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .cognitive import dijkstra, tree_path_edges
from . import _kernels
from .network import DemandTable, Network, ScenarioError, reachable
from .simplex import InfeasibleLP, solve_lp

log = logging.getLogger(__name__)

FW_TOLERANCE = 1e-6
FW_MAX_ITERATIONS = 10_000


class InfeasibleAssignment(ScenarioError):
    pass


@dataclass(frozen=True, eq=False)
class CompliantFlows:
    x: np.ndarray  # shape (edges, modes, trips)

    @property
    def totals(self) -> np.ndarray:
        return self.x.sum(axis=(1, 2))

    @property
    def by_mode(self) -> np.ndarray:
        return self.x.sum(axis=2)


@dataclass(frozen=True)
class SolveReport:
    objective: float
    gap: float
    iterations: int
    converged: bool

    def as_dict(self) -> dict:
        return {"objective": self.objective, "gap": self.gap,
                "iterations": self.iterations, "converged": self.converged}


def check_weights(weights, n_modes: int) -> np.ndarray:
    w = np.asarray(weights, dtype=float)
    if w.shape != (n_modes,):
        raise ValueError(f"expected {n_modes} mode weights, got {w.shape}")
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ValueError(f"weights must be finite and nonnegative: {w.tolist()}")
    if abs(w.sum() - 1.0) > 1e-9:
        raise ValueError(f"weights must sum to 1, got {w.sum()!r}")
    return w


def objective(network: Network, flows, weights, npv_flows) -> float:
    x = flows.x if isinstance(flows, CompliantFlows) else np.asarray(flows)
    times = network.link_times(x.sum(axis=(1, 2)) + npv_flows)
    return float(times @ (x.sum(axis=2) @ weights))


def gradient_matrix(network: Network, flows, weights, npv_flows) -> np.ndarray:
    """Marginal cost for every (edge, mode): ``w_m t(X) + t'(X) sum_m' w_m' x_m'``."""
    x = flows.x if isinstance(flows, CompliantFlows) else np.asarray(flows)
    X = x.sum(axis=(1, 2)) + npv_flows
    weighted = x.sum(axis=2) @ weights
    return (np.outer(network.link_times(X), weights)
            + (network.link_time_derivatives(X) * weighted)[:, None])


def objective_gradient(network: Network, flows, weights, npv_flows, edge: int, mode: int) -> float:
    """Partial derivative of the objective along x_{edge, mode, n}, for any trip n."""
    return float(gradient_matrix(network, flows, weights, npv_flows)[edge, mode])


def all_or_nothing(network: Network, edge_costs, demands: DemandTable) -> CompliantFlows:
    """Put each (mode, trip) demand on one minimum-cost path.

    ``edge_costs`` is either one cost per edge or one per (edge, mode).
    """
    costs = np.asarray(edge_costs, dtype=float)
    n_modes = demands.compliant.shape[0]
    if costs.ndim == 1:
        costs = np.repeat(costs[:, None], n_modes, axis=1)
    if np.any(costs < 0):
        raise ValueError("edge costs must be nonnegative")
    x = np.zeros((network.n_edges, n_modes, demands.n_trips))
    by_origin = {}
    for n, trip in enumerate(demands.trips):
        by_origin.setdefault(trip.origin, []).append(n)
    for m in range(n_modes):
        for origin, trip_ids in by_origin.items():
            active = [n for n in trip_ids if demands.compliant[m, n] > 0]
            if not active:
                continue
            dist, pred = dijkstra(network, costs[:, m], origin)
            for n in active:
                dest = demands.trips[n].destination
                if not np.isfinite(dist[network.node_index[dest]]):
                    raise InfeasibleAssignment(
                        f"trip {demands.trips[n].id}: destination {dest} unreachable from {origin}")
                x[tree_path_edges(network, pred, dest), m, n] = demands.compliant[m, n]
    return CompliantFlows(x)


def _csr(network: Network) -> tuple[np.ndarray, np.ndarray]:
    ptr = np.zeros(len(network.nodes) + 1, dtype=np.int64)
    ptr[1:] = np.cumsum([len(v) for v in network.out_edges])
    flat = np.array([k for v in network.out_edges for k in v], dtype=np.int64)
    return ptr, flat


def solve_system_optimal(network: Network, demands: DemandTable, weights, npv_flows=None,
                         tolerance: float = FW_TOLERANCE,
                         max_iterations: int = FW_MAX_ITERATIONS) -> tuple[CompliantFlows, SolveReport]:
    """Pairwise Frank-Wolfe with exact line search.

    Each commodity (mode, trip) keeps the paths its flow is spread over. An
    iteration computes the Frank-Wolfe target (a shortest path per commodity
    under the marginal costs), takes one joint step moving every commodity's
    costliest path toward its target, and then, commodity by commodity, shifts
    flow from each active path to the target with an exact line search.
    Stops when the Frank-Wolfe linearization gap falls to ``tolerance`` times
    the objective; hitting ``max_iterations`` returns the current flows with
    ``converged=False``.
    """
    w = check_weights(weights, demands.compliant.shape[0])
    q = np.zeros(network.n_edges) if npv_flows is None else np.asarray(npv_flows, dtype=float)
    if np.any(q < 0):
        raise ValueError("NPV flows must be nonnegative")
    alpha = demands.compliant
    commodities = [(m, n) for m in range(len(w)) for n in range(demands.n_trips) if alpha[m, n] > 0]
    if not commodities:
        x = np.zeros((network.n_edges, len(w), demands.n_trips))
        return CompliantFlows(x), SolveReport(0.0, 0.0, 0, True)
    for m, n in commodities:
        trip = demands.trips[n]
        if trip.destination not in reachable(network, trip.origin):
            raise InfeasibleAssignment(f"trip {trip.id}: destination {trip.destination} unreachable from {trip.origin}")

    ptr, flat = _csr(network)
    idx = network.node_index
    cm = np.array([m for m, _ in commodities], dtype=np.int64)
    cn = np.array([n for _, n in commodities], dtype=np.int64)
    co = np.array([idx[demands.trips[n].origin] for _, n in commodities], dtype=np.int64)
    cd = np.array([idx[demands.trips[n].destination] for _, n in commodities], dtype=np.int64)
    ca = np.array([alpha[c] for c in commodities])
    slots = 32
    while True:
        x, value, gap, iterations, status = _kernels.pairwise_frank_wolfe(
            network.free_flow, network.capacity, float(network.bpr_coefficient), float(network.bpr_exponent),
            q.astype(float), w, ptr, flat, network.heads.astype(np.int64), network.tails.astype(np.int64),
            len(network.nodes), cm, cn, co, cd, ca, demands.n_trips, float(tolerance), int(max_iterations), slots)
        if status != _kernels.SLOTS_EXHAUSTED:
            break
        slots *= 4
    converged = status == _kernels.CONVERGED
    if not converged:
        log.warning("Frank-Wolfe stopped after %d iterations with gap %.3g", iterations, gap)
    return CompliantFlows(x), SolveReport(float(value), float(gap), int(iterations), converged)


def frozen_objective(network: Network, flows, weights, npv_flows, fixed_totals) -> float:
    """Weighted objective with link times frozen at ``t(fixed_totals + npv_flows)``."""
    x = flows.x if isinstance(flows, CompliantFlows) else np.asarray(flows)
    times = network.link_times(np.asarray(fixed_totals) + npv_flows)
    return float(times @ (x.sum(axis=2) @ weights))


def redistribute_fixed_totals(network: Network, demands: DemandTable, weights, fixed_totals,
                              npv_flows=None) -> CompliantFlows:
    """Reassign compliant flow across modes and trips with edge totals pinned.

    Pinning every edge total freezes link times, so the weighted objective is
    linear and the problem is solved exactly as an arc-flow LP.
    """
    w = check_weights(weights, demands.compliant.shape[0])
    f = np.asarray(fixed_totals, dtype=float)
    q = np.zeros(network.n_edges) if npv_flows is None else np.asarray(npv_flows, dtype=float)
    costs = network.link_times(f + q)

    edges = np.flatnonzero(f > 0)
    commodities = [(m, n) for m in range(len(w)) for n in range(demands.n_trips)
                   if demands.compliant[m, n] > 0]
    n_e, n_nodes = len(edges), len(network.nodes)
    n_vars = n_e * len(commodities)
    rows, rhs = [], []
    for c, (m, n) in enumerate(commodities):
        trip = demands.trips[n]
        o, d = network.node_index[trip.origin], network.node_index[trip.destination]
        block = np.zeros((n_nodes, n_vars))
        cols = c * n_e + np.arange(n_e)
        block[network.tails[edges], cols] += 1.0
        block[network.heads[edges], cols] -= 1.0
        b = np.zeros(n_nodes)
        b[o] = demands.compliant[m, n]
        for v in range(n_nodes):
            if v == d:
                continue
            if not block[v].any():
                if b[v] != 0:
                    raise InfeasibleAssignment(f"trip {trip.id}: fixed totals give no path out of {trip.origin}")
                continue
            rows.append(block[v])
            rhs.append(b[v])
    for k in range(n_e):
        row = np.zeros(n_vars)
        row[k::n_e] = 1.0
        rows.append(row)
        rhs.append(f[edges[k]])
    cost = np.concatenate([w[m] * costs[edges] for m, _ in commodities]) if commodities else np.zeros(0)

    x = np.zeros((network.n_edges, len(w), demands.n_trips))
    if not commodities:
        if np.any(f > 0):
            raise InfeasibleAssignment("positive fixed totals but no compliant demand")
        return CompliantFlows(x)
    try:
        solution, _ = solve_lp(cost, np.array(rows), np.array(rhs))
    except InfeasibleLP as exc:
        raise InfeasibleAssignment(f"fixed edge totals are not attainable: {exc}") from None
    for c, (m, n) in enumerate(commodities):
        x[edges, m, n] = solution[c * n_e:(c + 1) * n_e]
    return CompliantFlows(x)
