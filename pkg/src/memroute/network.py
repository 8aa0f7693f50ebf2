"""Road network, trips and demand tables, plus the BPR link performance curve."""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field
from typing import Hashable, Sequence

import numpy as np

BPR_COEFFICIENT = 0.15
BPR_EXPONENT = 4.0
LEVELS = (0, 1, 2)


class ScenarioError(ValueError):
    """Raised when a scenario or network violates its invariants."""


@dataclass(frozen=True)
class Edge:
    tail: Hashable
    head: Hashable
    free_flow_time: float
    capacity: float


@dataclass(frozen=True)
class Trip:
    id: int
    origin: Hashable
    destination: Hashable


@dataclass(frozen=True)
class ModeSet:
    """Ordered system-routed modes.

    ``public`` and ``cpv`` name the public-transport mode and the compliant
    private-vehicle mode; either may be None for scenarios without one.
    """

    names: tuple[str, ...]
    display: tuple[str, ...] = ()
    public: str | None = None
    cpv: str | None = None

    def __post_init__(self):
        if not self.names:
            raise ScenarioError("mode set is empty")
        if len(set(self.names)) != len(self.names):
            raise ScenarioError(f"duplicate mode names in {list(self.names)}")
        if not self.display:
            object.__setattr__(self, "display", tuple(self.names))
        if len(self.display) != len(self.names):
            raise ScenarioError("display names must match modes one-to-one")
        for role in (self.public, self.cpv):
            if role is not None and role not in self.names:
                raise ScenarioError(f"mode role {role!r} is not a declared mode")

    def __len__(self):
        return len(self.names)

    def index(self, name: str) -> int:
        return self.names.index(name)


@dataclass(frozen=True, eq=False)
class Network:
    """Directed road graph with origin and destination sets.

    Edges keep their input order; arrays ``tails``/``heads`` hold positions in
    ``nodes``, which is sorted so node order is also the tie-break order.
    """

    nodes: tuple
    edges: tuple[Edge, ...]
    origins: tuple
    destinations: tuple
    bpr_coefficient: float = BPR_COEFFICIENT
    bpr_exponent: float = BPR_EXPONENT
    node_index: dict = field(init=False, repr=False)
    edge_index: dict = field(init=False, repr=False)
    tails: np.ndarray = field(init=False, repr=False)
    heads: np.ndarray = field(init=False, repr=False)
    free_flow: np.ndarray = field(init=False, repr=False)
    capacity: np.ndarray = field(init=False, repr=False)
    out_edges: tuple = field(init=False, repr=False)
    in_edges: tuple = field(init=False, repr=False)

    def __post_init__(self):
        try:
            nodes = tuple(sorted(set(self.nodes)))
        except TypeError as exc:
            raise ScenarioError("node identifiers must be mutually comparable") from exc
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "edges", tuple(self.edges))
        object.__setattr__(self, "origins", tuple(self.origins))
        object.__setattr__(self, "destinations", tuple(self.destinations))
        index = {v: k for k, v in enumerate(nodes)}
        object.__setattr__(self, "node_index", index)
        object.__setattr__(self, "edge_index", {(e.tail, e.head): k for k, e in enumerate(self.edges)})

        tails = np.array([index.get(e.tail, -1) for e in self.edges], dtype=int)
        heads = np.array([index.get(e.head, -1) for e in self.edges], dtype=int)
        t0 = np.array([float(e.free_flow_time) for e in self.edges])
        cap = np.array([float(e.capacity) for e in self.edges])
        out_edges = [[] for _ in nodes]
        in_edges = [[] for _ in nodes]
        for k, (i, j) in enumerate(zip(tails, heads)):
            if i >= 0 and j >= 0:
                out_edges[i].append(k)
                in_edges[j].append(k)
        for name, arr in (("tails", tails), ("heads", heads), ("free_flow", t0), ("capacity", cap)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "out_edges", tuple(tuple(v) for v in out_edges))
        object.__setattr__(self, "in_edges", tuple(tuple(v) for v in in_edges))

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def link_times(self, totals: np.ndarray) -> np.ndarray:
        """BPR travel time of every edge for a vector of total edge flows."""
        ratio = np.asarray(totals, dtype=float) / self.capacity
        return self.free_flow * (1.0 + self.bpr_coefficient * ratio ** self.bpr_exponent)

    def link_time_derivatives(self, totals: np.ndarray) -> np.ndarray:
        ratio = np.asarray(totals, dtype=float) / self.capacity
        p = self.bpr_exponent
        return self.free_flow * self.bpr_coefficient * p * ratio ** (p - 1.0) / self.capacity

    def path_edges(self, path: Sequence) -> list[int]:
        """Edge positions along a node path."""
        try:
            return [self.edge_index[(a, b)] for a, b in zip(path[:-1], path[1:])]
        except KeyError as exc:
            raise ScenarioError(f"path {list(path)} uses a missing edge {exc.args[0]}") from None


@dataclass(frozen=True, eq=False)
class DemandTable:
    """Compliant rates per (mode, trip) and noncompliant rates per (level, trip)."""

    trips: tuple[Trip, ...]
    compliant: np.ndarray  # shape (modes, trips)
    noncompliant: np.ndarray  # shape (3, trips)

    def __post_init__(self):
        comp = np.array(self.compliant, dtype=float, ndmin=2)
        npv = np.array(self.noncompliant, dtype=float, ndmin=2)
        n = len(self.trips)
        if comp.shape[1] != n or npv.shape != (len(LEVELS), n):
            raise ScenarioError(
                f"demand shapes {comp.shape}/{npv.shape} do not match {n} trips and {len(LEVELS)} levels"
            )
        for name, arr in (("compliant", comp), ("noncompliant", npv)):
            if not np.all(np.isfinite(arr)) or np.any(arr < 0):
                raise ScenarioError(f"{name} demand rates must be finite and nonnegative")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "trips", tuple(self.trips))
        seen = set()
        for trip in self.trips:
            if trip.origin == trip.destination:
                raise ScenarioError(f"trip {trip.id} has origin equal to destination")
            if (trip.origin, trip.destination) in seen:
                raise ScenarioError(f"trip {trip.id} duplicates pair ({trip.origin}, {trip.destination})")
            seen.add((trip.origin, trip.destination))

    @property
    def n_trips(self) -> int:
        return len(self.trips)

    @property
    def total(self) -> float:
        return float(self.compliant.sum() + self.noncompliant.sum())

    def with_rates(self, compliant=None, noncompliant=None) -> "DemandTable":
        return DemandTable(
            self.trips,
            self.compliant if compliant is None else compliant,
            self.noncompliant if noncompliant is None else noncompliant,
        )

    def with_ncr(self, modes: ModeSet, ncr: float, level_split=(0.5, 0.3, 0.2)) -> "DemandTable":
        """Re-split each trip's private demand into (1 - ncr) CPV and ncr NPV.

        The private base of a trip is its CPV rate plus all its NPV rates.
        """
        if not 0.0 <= ncr <= 1.0:
            raise ScenarioError(f"noncompliance rate {ncr} outside [0, 1]")
        split = np.asarray(level_split, dtype=float)
        if split.shape != (len(LEVELS),) or np.any(split < 0) or abs(split.sum() - 1.0) > 1e-9:
            raise ScenarioError(f"level split {list(level_split)} must be 3 nonnegative fractions summing to 1")
        if modes.cpv is None:
            raise ScenarioError("an NCR split needs a CPV mode")
        c = modes.index(modes.cpv)
        base = self.compliant[c] + self.noncompliant.sum(axis=0)
        compliant = self.compliant.copy()
        compliant[c] = (1.0 - ncr) * base
        return self.with_rates(compliant, np.outer(split, ncr * base))


def bpr_time(edge: Edge, total_flow: float, coefficient: float = BPR_COEFFICIENT,
             exponent: float = BPR_EXPONENT) -> float:
    """t0 * (1 + coefficient * (flow / capacity) ** exponent)."""
    if total_flow < 0:
        raise ValueError(f"negative flow {total_flow} on edge ({edge.tail}, {edge.head})")
    return edge.free_flow_time * (1.0 + coefficient * (total_flow / edge.capacity) ** exponent)


def reachable(network: Network, source) -> set:
    seen = {source}
    stack = [source]
    while stack:
        i = network.node_index[stack.pop()]
        for k in network.out_edges[i]:
            head = network.edges[k].head
            if head not in seen:
                seen.add(head)
                stack.append(head)
    return seen


def validate(network: Network) -> list[str]:
    """Return one message per violated network invariant (empty if valid)."""
    problems = []
    nodes = set(network.nodes)
    pairs = set()
    for e in network.edges:
        name = f"edge ({e.tail}, {e.head})"
        if e.tail not in nodes or e.head not in nodes:
            missing = [v for v in (e.tail, e.head) if v not in nodes]
            problems.append(f"{name}: references unknown node(s) {missing}")
        if e.tail == e.head:
            problems.append(f"{name}: self-loop")
        if (e.tail, e.head) in pairs:
            problems.append(f"{name}: duplicated edge")
        pairs.add((e.tail, e.head))
        if not e.capacity > 0:
            problems.append(f"{name}: capacity {e.capacity} must be positive")
        if not e.free_flow_time > 0:
            problems.append(f"{name}: free-flow time {e.free_flow_time} must be positive")
    for label, group in (("origin", network.origins), ("destination", network.destinations)):
        for v in group:
            if v not in nodes:
                problems.append(f"{label} {v}: unknown node")
    for o in network.origins:
        if o not in nodes:
            continue
        seen = reachable(network, o)
        for d in network.destinations:
            if d in nodes and d not in seen:
                problems.append(f"destination {d}: unreachable from origin {o}")
    return problems


def free_flow_distances(network: Network, origin) -> np.ndarray:
    """Free-flow shortest travel time from ``origin`` to every node (inf if unreachable)."""
    dist = np.full(len(network.nodes), np.inf)
    src = network.node_index[origin]
    dist[src] = 0.0
    heap = [(0.0, src)]
    while heap:
        d, i = heapq.heappop(heap)
        if d > dist[i]:
            continue
        for k in network.out_edges[i]:
            j = network.heads[k]
            nd = d + network.free_flow[k]
            if nd < dist[j]:
                dist[j] = nd
                heapq.heappush(heap, (nd, j))
    return dist


# Sample network: a 3x4 grid (ids 1..12, row-major) with bidirectional
# streets and ten bidirectional diagonal shortcuts, 54 directed edges in all.
SAMPLE_ORIGINS = (1, 9)
SAMPLE_DESTINATIONS = (3, 6, 8, 11, 12)
SAMPLE_ROWS, SAMPLE_COLS = 3, 4


def _sample_edges() -> list[Edge]:
    def node(r, c):
        return SAMPLE_COLS * r + c + 1

    links = []
    for r in range(SAMPLE_ROWS):
        for c in range(SAMPLE_COLS - 1):
            # the middle row is an arterial: faster and wider
            if r == 1:
                links.append((node(r, c), node(r, c + 1), 1.0, 28.0))
            else:
                links.append((node(r, c), node(r, c + 1), 1.2, 16.0))
    for r in range(SAMPLE_ROWS - 1):
        for c in range(SAMPLE_COLS):
            links.append((node(r, c), node(r + 1, c), 1.0, 16.0))
    for r in range(SAMPLE_ROWS - 1):
        for c in range(SAMPLE_COLS - 1):
            links.append((node(r, c), node(r + 1, c + 1), 1.5, 12.0))
    for r, c in ((0, 0), (0, 2), (1, 1), (1, 2)):
        links.append((node(r, c + 1), node(r + 1, c), 1.5, 12.0))
    edges = []
    for a, b, t0, cap in links:
        edges.append(Edge(a, b, t0, cap))
        edges.append(Edge(b, a, t0, cap))
    return edges


def generate_sample_network(seed: int = 0, rate_range=(1.0, 5.0), ncr: float = 0.2,
                            level_split=(0.5, 0.3, 0.2)) -> tuple[Network, DemandTable, ModeSet]:
    """Build the 12-node, 54-edge sample network with seeded demand rates.

    Topology is fixed; the seed only drives the public and private demand
    rates, each uniform on ``rate_range``. Private demand is split into CPV
    and NPV rates with ``ncr`` and ``level_split``.
    """
    network = Network(
        nodes=range(1, SAMPLE_ROWS * SAMPLE_COLS + 1),
        edges=_sample_edges(),
        origins=SAMPLE_ORIGINS,
        destinations=SAMPLE_DESTINATIONS,
    )
    trips = [Trip(n, o, d) for n, (o, d) in
             enumerate((o, d) for o in SAMPLE_ORIGINS for d in SAMPLE_DESTINATIONS)]
    rng = np.random.default_rng(seed)
    lo, hi = rate_range
    public = np.round(rng.uniform(lo, hi, len(trips)), 3)
    private = np.round(rng.uniform(lo, hi, len(trips)), 3)
    modes = ModeSet(("public", "cpv"), ("public transportation", "CPVs"), public="public", cpv="cpv")
    demands = DemandTable(trips, np.vstack([public, private]), np.zeros((len(LEVELS), len(trips))))
    return network, demands.with_ncr(modes, ncr, level_split), modes
