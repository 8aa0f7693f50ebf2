"""Level-k routing of noncompliant private vehicles (NPVs).

A level-0 NPV sees only compliant traffic; a level-l NPV also anticipates
the paths chosen by levels below l. Every NPV of one (level, trip) pair
takes the same path, so each pair contributes its whole rate to one path.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass

import numpy as np

from .network import LEVELS, DemandTable, Network, ScenarioError

TIE_RTOL = 1e-10


class UnreachableError(ScenarioError):
    """Destination cannot be reached from the origin."""


def dijkstra(network: Network, costs: np.ndarray, origin) -> tuple[np.ndarray, np.ndarray]:
    """One-to-all shortest distances and predecessor edges from ``origin``.

    Costs must be nonnegative. Heap entries are ordered by (distance, node
    position), and a label is only replaced on strict improvement, so the
    predecessor tree is deterministic.
    """
    n = len(network.nodes)
    dist = np.full(n, np.inf)
    pred = np.full(n, -1, dtype=int)
    src = network.node_index[origin]
    dist[src] = 0.0
    heap = [(0.0, src)]
    done = np.zeros(n, dtype=bool)
    heads = network.heads
    while heap:
        d, i = heapq.heappop(heap)
        if done[i]:
            continue
        done[i] = True
        for k in network.out_edges[i]:
            j = heads[k]
            nd = d + costs[k]
            if nd < dist[j]:
                dist[j] = nd
                pred[j] = k
                heapq.heappush(heap, (nd, j))
    return dist, pred


def tree_path_edges(network: Network, pred: np.ndarray, destination) -> list[int]:
    """Edge positions from the tree root to ``destination``."""
    j = network.node_index[destination]
    edges = []
    while pred[j] >= 0:
        k = pred[j]
        edges.append(k)
        j = network.tails[k]
    edges.reverse()
    return edges


def shortest_path(network: Network, edge_costs, origin, destination) -> list:
    """Minimum-cost node path; among equal-cost paths the lexicographically smallest.

    Costs equal within a relative 1e-10 count as ties.
    """
    costs = np.asarray(edge_costs, dtype=float)
    if np.any(costs <= 0):
        raise ValueError("shortest_path needs strictly positive edge costs")
    dist, _ = dijkstra(network, costs, origin)
    dst = network.node_index[destination]
    if not np.isfinite(dist[dst]):
        raise UnreachableError(f"destination {destination} unreachable from origin {origin}")

    tails, heads = network.tails, network.heads
    tight = np.isfinite(dist[tails]) & (
        dist[tails] + costs <= dist[heads] + TIE_RTOL * np.maximum(1.0, dist[heads]))
    # nodes from which the destination is reachable along tight edges
    useful = np.zeros(len(network.nodes), dtype=bool)
    useful[dst] = True
    stack = [dst]
    while stack:
        j = stack.pop()
        for k in network.in_edges[j]:
            i = tails[k]
            if tight[k] and not useful[i]:
                useful[i] = True
                stack.append(i)

    i = network.node_index[origin]
    path = [i]
    while i != dst:
        i = min(heads[k] for k in network.out_edges[i] if tight[k] and useful[heads[k]])
        path.append(i)
    return [network.nodes[v] for v in path]


@dataclass(frozen=True, eq=False)
class NpvAssignment:
    """Chosen node path per (level, trip) with positive demand."""

    paths: dict  # (level, trip index) -> list of nodes

    def incidence(self, network: Network, level: int, trip: int) -> np.ndarray:
        a = np.zeros(network.n_edges)
        path = self.paths.get((level, trip))
        if path is not None:
            a[network.path_edges(path)] = 1.0
        return a


@dataclass(frozen=True, eq=False)
class NpvFlows:
    level: np.ndarray  # shape (edges, 3)

    @property
    def total(self) -> np.ndarray:
        return self.level.sum(axis=1)

    @classmethod
    def zeros(cls, network: Network) -> "NpvFlows":
        return cls(np.zeros((network.n_edges, len(LEVELS))))


def best_response(network: Network, compliant_totals, lower_level_flows, trip) -> list:
    """Path of one NPV class anticipating compliant plus lower-level NPV flows."""
    x = np.asarray(compliant_totals, dtype=float)
    lower = np.zeros_like(x) if lower_level_flows is None else np.asarray(lower_level_flows, dtype=float)
    if np.any(x < 0) or np.any(lower < 0):
        raise ValueError("anticipated flows must be nonnegative")
    return shortest_path(network, network.link_times(x + lower), trip.origin, trip.destination)


def npv_phase(network: Network, compliant_totals, demands: DemandTable) -> tuple[NpvAssignment, NpvFlows]:
    """Best responses of levels 0, 1, 2 in order, and the aggregated NPV flows."""
    x = np.asarray(compliant_totals, dtype=float)
    paths = {}
    q = np.zeros((network.n_edges, len(LEVELS)))
    for level in LEVELS:
        lower = q[:, :level].sum(axis=1)
        for n, trip in enumerate(demands.trips):
            rate = demands.noncompliant[level, n]
            if rate <= 0:
                continue
            path = best_response(network, x, lower, trip)
            paths[(level, n)] = path
            q[network.path_edges(path), level] += rate
    return NpvAssignment(paths), NpvFlows(q)
