"""Scenario documents (JSON) to and from validated model objects."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .equity import MemParams
from .network import (BPR_COEFFICIENT, BPR_EXPONENT, LEVELS, DemandTable, Edge, ModeSet, Network,
                      ScenarioError, Trip, generate_sample_network, validate)

PRESETS = ("sample", "chatter")


@dataclass(frozen=True, eq=False)
class Scenario:
    network: Network
    demands: DemandTable
    modes: ModeSet
    mem: MemParams
    weights: tuple | None = None  # suggested weights, used by presets

    def to_dict(self) -> dict:
        return scenario_to_dict(self)

    def dumps(self) -> str:
        return dump_scenario(self)

    @property
    def digest(self) -> str:
        return hashlib.sha256(self.dumps().encode("utf-8")).hexdigest()


def _number(value, what: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ScenarioError(f"{what}: expected a number, got {value!r}")
    return float(value)


def _parse_modes(raw) -> ModeSet:
    if not isinstance(raw, list) or not raw:
        raise ScenarioError("'modes' must be a nonempty list")
    names, display, roles = [], [], {}
    for entry in raw:
        if isinstance(entry, str):
            name, label, role = entry, entry, entry if entry in ("public", "cpv") else None
        elif isinstance(entry, dict) and "name" in entry:
            name = str(entry["name"])
            label = str(entry.get("display", name))
            role = entry.get("role")
        else:
            raise ScenarioError(f"bad mode entry {entry!r}")
        if role is not None:
            if role not in ("public", "cpv"):
                raise ScenarioError(f"mode {name!r}: unknown role {role!r}")
            if role in roles:
                raise ScenarioError(f"two modes claim role {role!r}")
            roles[role] = name
        names.append(name)
        display.append(label)
    return ModeSet(tuple(names), tuple(display), public=roles.get("public"), cpv=roles.get("cpv"))


def _rate_table(raw, keys, n_trips: int, what: str) -> np.ndarray:
    table = np.zeros((len(keys), n_trips))
    if not isinstance(raw, dict):
        raise ScenarioError(f"{what}: expected a mapping")
    for key, rates in raw.items():
        if key not in keys:
            raise ScenarioError(f"{what}: unknown key {key!r}")
        if not isinstance(rates, dict):
            raise ScenarioError(f"{what}[{key}]: expected a mapping of trip index to rate")
        for trip, rate in rates.items():
            try:
                n = int(trip)
            except ValueError:
                raise ScenarioError(f"{what}[{key}]: bad trip index {trip!r}") from None
            if not 0 <= n < n_trips:
                raise ScenarioError(f"{what}[{key}]: trip {n} does not exist")
            value = _number(rate, f"{what}[{key}][{trip}]")
            if not math.isfinite(value) or value < 0:
                raise ScenarioError(f"{what}[{key}][{trip}]: rate must be finite and >= 0")
            table[keys.index(key), n] = value
    return table


def _parse_mem(raw) -> MemParams:
    raw = dict(raw or {})
    unknown = set(raw) - {"kappa", "cost", "priority", "threshold", "slope", "indicator", "services"}
    if unknown:
        raise ScenarioError(f"mem: unknown fields {sorted(unknown)}")
    kwargs = {}
    if "kappa" in raw:
        kwargs["kappa"] = _number(raw["kappa"], "mem.kappa")
    if "slope" in raw:
        kwargs["slope"] = _number(raw["slope"], "mem.slope")
    if "indicator" in raw:
        kwargs["indicator"] = raw["indicator"]
    for key in ("cost", "priority", "threshold"):
        if key in raw:
            kwargs[key] = {str(k): _number(v, f"mem.{key}.{k}") for k, v in raw[key].items()}
    if "services" in raw:
        kwargs["services"] = {str(k): tuple(v) for k, v in raw["services"].items()}
    return MemParams(**kwargs)


def parse_scenario(data: dict) -> Scenario:
    """Build and validate a scenario from an already-decoded document."""
    if not isinstance(data, dict):
        raise ScenarioError("scenario document must be a JSON object")
    missing = [k for k in ("nodes", "edges", "origins", "destinations", "trips", "demand", "modes")
               if k not in data]
    if missing:
        raise ScenarioError(f"scenario is missing keys {missing}")
    bpr = data.get("bpr") or {}
    edges = []
    for k, e in enumerate(data["edges"]):
        try:
            edges.append(Edge(e["from"], e["to"], _number(e["t0"], f"edge {k} t0"),
                              _number(e["capacity"], f"edge {k} capacity")))
        except (KeyError, TypeError):
            raise ScenarioError(f"edge {k}: needs from, to, t0 and capacity") from None
    network = Network(
        nodes=data["nodes"], edges=edges, origins=data["origins"], destinations=data["destinations"],
        bpr_coefficient=_number(bpr.get("coefficient", BPR_COEFFICIENT), "bpr.coefficient"),
        bpr_exponent=_number(bpr.get("exponent", BPR_EXPONENT), "bpr.exponent"),
    )
    if len(network.nodes) != len(data["nodes"]):
        raise ScenarioError("duplicate node identifiers")
    problems = validate(network)
    if problems:
        raise ScenarioError("; ".join(problems))

    trips = []
    for n, t in enumerate(data["trips"]):
        try:
            trip = Trip(n, t["origin"], t["dest"])
        except (KeyError, TypeError):
            raise ScenarioError(f"trip {n}: needs origin and dest") from None
        if trip.origin not in network.origins:
            raise ScenarioError(f"trip {n}: origin {trip.origin} is not in the origin set")
        if trip.destination not in network.destinations:
            raise ScenarioError(f"trip {n}: destination {trip.destination} is not in the destination set")
        trips.append(trip)

    modes = _parse_modes(data["modes"])
    demand = data["demand"]
    if not isinstance(demand, dict):
        raise ScenarioError("'demand' must be a mapping")
    compliant = _rate_table(demand.get("compliant", {}), list(modes.names), len(trips), "demand.compliant")
    noncompliant = _rate_table(demand.get("noncompliant", {}), [str(v) for v in LEVELS], len(trips),
                               "demand.noncompliant")
    demands = DemandTable(trips, compliant, noncompliant)
    mem = _parse_mem(data.get("mem"))
    mem.service_map(network)
    weights = data.get("weights")
    if weights is not None:
        weights = tuple(_number(w, "weights") for w in weights)
    return Scenario(network, demands, modes, mem, weights)


def load_scenario(document: str) -> Scenario:
    """Parse a JSON scenario document."""
    try:
        data = json.loads(document)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"parse failure: {exc}") from None
    return parse_scenario(data)


def read_scenario(path) -> Scenario:
    """Load a scenario file, or a shipped preset given as ``preset:<name>``."""
    path = str(path)
    if path.startswith("preset:"):
        return preset(path.split(":", 1)[1])
    return load_scenario(Path(path).read_text(encoding="utf-8"))


def _rates(table: np.ndarray, keys) -> dict:
    out = {}
    for key, row in zip(keys, table):
        nonzero = {str(n): float(v) for n, v in enumerate(row) if v != 0}
        if nonzero:
            out[str(key)] = nonzero
    return out


def scenario_to_dict(scenario: Scenario) -> dict:
    net, dem, modes, mem = scenario.network, scenario.demands, scenario.modes, scenario.mem
    roles = {modes.public: "public", modes.cpv: "cpv"}
    data = {
        "nodes": list(net.nodes),
        "edges": [{"from": e.tail, "to": e.head, "t0": float(e.free_flow_time), "capacity": float(e.capacity)}
                  for e in net.edges],
        "origins": list(net.origins),
        "destinations": list(net.destinations),
        "trips": [{"origin": t.origin, "dest": t.destination} for t in dem.trips],
        "demand": {
            "compliant": _rates(dem.compliant, modes.names),
            "noncompliant": _rates(dem.noncompliant, LEVELS),
        },
        "modes": [{"name": n, "display": d, **({"role": roles[n]} if n in roles else {})}
                  for n, d in zip(modes.names, modes.display)],
        "mem": {
            "kappa": mem.kappa,
            "cost": dict(mem.cost),
            "priority": dict(mem.priority),
            "threshold": dict(mem.threshold),
            "slope": mem.slope,
            "indicator": mem.indicator,
            "services": {k: list(v) for k, v in mem.services.items()},
        },
        "bpr": {"coefficient": net.bpr_coefficient, "exponent": net.bpr_exponent},
    }
    if scenario.weights is not None:
        data["weights"] = list(scenario.weights)
    return data


def dump_scenario(scenario: Scenario) -> str:
    """Canonical JSON text: sorted keys, fixed indentation, trailing newline."""
    return json.dumps(scenario_to_dict(scenario), sort_keys=True, indent=1) + "\n"


def sample_scenario(seed: int = 0) -> Scenario:
    network, demands, modes = generate_sample_network(seed)
    return Scenario(network, demands, modes, MemParams())


def preset(name: str) -> Scenario:
    if name not in PRESETS:
        raise ScenarioError(f"unknown preset {name!r}; choose from {PRESETS}")
    text = resources.files("memroute").joinpath("presets", f"{name}.json").read_text(encoding="utf-8")
    return load_scenario(text)
