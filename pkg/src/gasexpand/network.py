"""Pipeline network domain types, parameter derivation and instance I/O.

All quantities are SI: squared pressures in Pa^2, mass flows in kg/s,
lengths and diameters in metres.  The only exception is the construction
cost model, which consumes the diameter in millimetres.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from functools import cached_property
from importlib import resources
from typing import IO, Any, Iterable, Mapping

import jsonschema

ROLES = frozenset({"generation", "receipt", "delivery"})
STATUSES = frozenset({"existing", "candidate"})

# Cost model constants (per metre of length, diameter in mm).
COST_DIAMETER_COEF = 1.04081e-6
COST_DIAMETER_EXP = 2.5
COST_PER_METRE = 11.2155


class InstanceError(ValueError):
    """Raised when an instance document or network fails validation.

    ``path`` points into the document (``"pipes[3].to_node"``) when known.
    """

    def __init__(self, message: str, path: str = "", findings: list[Finding] | None = None):
        self.path = path
        self.findings = findings or []
        super().__init__(f"{path}: {message}" if path else message)


@dataclass(frozen=True)
class Finding:
    path: str
    message: str

    def __str__(self) -> str:
        return f"{self.path}: {self.message}"


@dataclass(frozen=True)
class Node:
    id: str
    pressure_sq_min: float
    pressure_sq_max: float
    roles: frozenset[str] = frozenset()
    nominal_demand: float = 0.0
    supply_min: float = 0.0
    supply_max: float = math.inf

    @property
    def is_receipt(self) -> bool:
        return "receipt" in self.roles

    @property
    def is_delivery(self) -> bool:
        return "delivery" in self.roles

    @property
    def pressure_sq_mid(self) -> float:
        return 0.5 * (self.pressure_sq_min + self.pressure_sq_max)


@dataclass(frozen=True)
class Pipe:
    id: str
    from_node: str
    to_node: str
    length: float
    diameter: float
    friction_factor: float
    flow_max: float
    status: str = "existing"
    build_cost: float | None = None

    @property
    def is_candidate(self) -> bool:
        return self.status == "candidate"


@dataclass(frozen=True)
class Compressor:
    id: str
    from_node: str
    to_node: str
    ratio_sq_min: float
    ratio_sq_max: float
    flow_max: float
    status: str = "existing"
    build_cost: float | None = None
    length: float | None = None
    diameter: float | None = None

    @property
    def is_candidate(self) -> bool:
        return self.status == "candidate"


Edge = Pipe | Compressor


@dataclass(frozen=True)
class Network:
    """Immutable pipeline network.

    Derived quantities (resistances, default construction costs, adjacency)
    are computed lazily once and cached on the instance.
    """

    nodes: tuple[Node, ...]
    pipes: tuple[Pipe, ...] = ()
    compressors: tuple[Compressor, ...] = ()
    sound_speed: float = 350.0
    slack_nodes: tuple[str, ...] = ()
    meta: Mapping[str, Any] = field(default_factory=dict, compare=False)

    @cached_property
    def node_by_id(self) -> dict[str, Node]:
        return {n.id: n for n in self.nodes}

    @cached_property
    def edge_by_id(self) -> dict[str, Edge]:
        return {e.id: e for e in (*self.pipes, *self.compressors)}

    def node(self, node_id: str) -> Node:
        return self.node_by_id[node_id]

    @property
    def edges(self) -> tuple[Edge, ...]:
        return (*self.pipes, *self.compressors)

    @cached_property
    def candidates(self) -> tuple[Edge, ...]:
        return tuple(e for e in self.edges if e.is_candidate)

    @cached_property
    def candidate_ids(self) -> tuple[str, ...]:
        return tuple(e.id for e in self.candidates)

    @cached_property
    def receipt_nodes(self) -> tuple[str, ...]:
        return tuple(n.id for n in self.nodes if n.is_receipt)

    @cached_property
    def delivery_nodes(self) -> tuple[str, ...]:
        return tuple(n.id for n in self.nodes if n.is_delivery)

    def edges_from(self, node_id: str) -> list[Edge]:
        """Edges oriented from ``node_id``."""
        return [e for e in self.edges if e.from_node == node_id]

    def edges_to(self, node_id: str) -> list[Edge]:
        """Edges oriented to ``node_id``."""
        return [e for e in self.edges if e.to_node == node_id]

    @cached_property
    def resistances(self) -> dict[str, float]:
        return {p.id: resistance(p, self.sound_speed) for p in self.pipes}

    @cached_property
    def costs(self) -> dict[str, float]:
        return {e.id: expansion_cost(e) for e in self.candidates}

    @cached_property
    def pressure_sq_ref(self) -> float:
        return max(n.pressure_sq_max for n in self.nodes)

    def counts(self) -> dict[str, int]:
        return {
            "nodes": len(self.nodes),
            "pipes_existing": sum(not p.is_candidate for p in self.pipes),
            "compressors_existing": sum(not c.is_candidate for c in self.compressors),
            "pipes_candidate": sum(p.is_candidate for p in self.pipes),
            "compressors_candidate": sum(c.is_candidate for c in self.compressors),
        }

    @property
    def name(self) -> str:
        return str(self.meta.get("name", ""))


def resistance(pipe: Pipe, sound_speed: float) -> float:
    """Lumped friction resistance ``4 beta l a^2 / (pi^2 D^5)`` in Pa^2 s^2/kg^2."""
    if pipe.length <= 0 or pipe.diameter <= 0:
        raise InstanceError(f"pipe {pipe.id!r} needs positive length and diameter")
    if sound_speed <= 0:
        raise InstanceError("sound speed must be positive")
    if pipe.friction_factor < 0:
        raise InstanceError(f"pipe {pipe.id!r} has negative friction factor")
    return (
        4.0 * pipe.friction_factor * pipe.length * sound_speed**2
        / (math.pi**2 * pipe.diameter**5)
    )


def expansion_cost(component: Edge) -> float:
    """Construction cost of a candidate pipe or compressor.

    An explicit ``build_cost`` wins; otherwise the length/diameter cost
    curve is evaluated with the diameter converted to millimetres.
    """
    if not component.is_candidate:
        raise InstanceError(f"{component.id!r} is not a candidate component")
    if component.build_cost is not None:
        return float(component.build_cost)
    length, diameter = component.length, component.diameter
    if length is None or diameter is None:
        raise InstanceError(f"candidate {component.id!r} has neither build_cost nor geometry")
    d_mm = 1000.0 * diameter
    return length * (COST_DIAMETER_COEF * d_mm**COST_DIAMETER_EXP + COST_PER_METRE)


# --------------------------------------------------------------------------
# validation


def validate(network: Network) -> list[Finding]:
    """Check every type invariant; an empty list means the network is valid."""
    out: list[Finding] = []
    seen: dict[str, str] = {}

    if not network.sound_speed > 0:
        out.append(Finding("sound_speed", "must be positive"))

    for k, n in enumerate(network.nodes):
        path = f"nodes[{k}]"
        if n.id in seen:
            out.append(Finding(f"{path}.id", f"duplicate id {n.id!r}"))
        seen[n.id] = "node"
        if not 0 < n.pressure_sq_min <= n.pressure_sq_max:
            out.append(Finding(path, f"node {n.id!r} needs 0 < pressure_sq_min <= pressure_sq_max"))
        if not n.roles <= ROLES:
            out.append(Finding(f"{path}.roles", f"unknown roles {sorted(n.roles - ROLES)}"))
        if n.nominal_demand < 0:
            out.append(Finding(f"{path}.nominal_demand", "must be non-negative"))
        if n.nominal_demand > 0 and not n.is_delivery:
            out.append(Finding(f"{path}.nominal_demand", f"node {n.id!r} has demand but no delivery role"))
        if n.supply_min > n.supply_max:
            out.append(Finding(path, f"node {n.id!r} has supply_min > supply_max"))
        if n.supply_max > 0 and not n.is_receipt:
            out.append(Finding(f"{path}.supply_max", f"node {n.id!r} supplies gas but has no receipt role"))

    edge_ids: set[str] = set()
    for kind, records in (("pipes", network.pipes), ("compressors", network.compressors)):
        for k, e in enumerate(records):
            path = f"{kind}[{k}]"
            if e.id in edge_ids:
                out.append(Finding(f"{path}.id", f"duplicate id {e.id!r}"))
            edge_ids.add(e.id)
            for end in ("from_node", "to_node"):
                ref = getattr(e, end)
                if ref not in network.node_by_id:
                    out.append(Finding(f"{path}.{end}", f"{kind[:-1]} {e.id!r} references unknown node {ref!r}"))
            if e.from_node == e.to_node:
                out.append(Finding(path, f"{e.id!r} is a self-loop"))
            if e.status not in STATUSES:
                out.append(Finding(f"{path}.status", f"unknown status {e.status!r}"))
            if not e.flow_max > 0:
                out.append(Finding(f"{path}.flow_max", "must be positive"))
            if e.is_candidate:
                if e.build_cost is not None and e.build_cost < 0:
                    out.append(Finding(f"{path}.build_cost", "must be non-negative"))
                if e.build_cost is None and (e.length is None or e.diameter is None):
                    out.append(Finding(path, f"candidate {e.id!r} has neither build_cost nor geometry"))
            elif e.build_cost is not None:
                out.append(Finding(f"{path}.build_cost", f"existing {e.id!r} must not carry a build cost"))
            if isinstance(e, Pipe):
                for attr in ("length", "diameter", "friction_factor"):
                    if not getattr(e, attr) > 0:
                        out.append(Finding(f"{path}.{attr}", "must be positive"))
            else:
                if not 1 <= e.ratio_sq_min <= e.ratio_sq_max:
                    out.append(Finding(path, f"compressor {e.id!r} needs 1 <= ratio_sq_min <= ratio_sq_max"))

    for k, s in enumerate(network.slack_nodes):
        node = network.node_by_id.get(s)
        if node is None:
            out.append(Finding(f"slack_nodes[{k}]", f"unknown node {s!r}"))
        elif not node.is_receipt:
            out.append(Finding(f"slack_nodes[{k}]", f"slack node {s!r} must be a receipt node"))

    out.extend(_connectivity_findings(network))
    return out


def _connectivity_findings(network: Network) -> list[Finding]:
    # Nodes reachable only through candidates may float; every node touched by
    # an existing component, carrying demand, or acting as slack must be
    # connected through existing components.
    ids = network.node_by_id
    parent = {n: n for n in ids}

    def find(a: str) -> str:
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    anchored: set[str] = set(network.slack_nodes) & set(ids)
    for e in network.edges:
        if e.is_candidate or e.from_node not in ids or e.to_node not in ids:
            continue
        anchored.update((e.from_node, e.to_node))
        parent[find(e.from_node)] = find(e.to_node)
    anchored.update(n.id for n in network.nodes if n.nominal_demand > 0)
    roots = {find(n) for n in anchored}
    if len(roots) > 1:
        return [Finding("pipes", f"existing components form {len(roots)} disconnected parts")]
    return []


# --------------------------------------------------------------------------
# instance documents


def _schema() -> dict:
    text = resources.files("gasexpand").joinpath("data/instance.schema.json").read_text()
    return json.loads(text)


def _num(x: Any) -> float:
    return math.inf if x is None else float(x)


def load_instance(source: bytes | str | IO) -> Network:
    """Parse and validate one instance document.

    ``source`` is the raw document (bytes or text) or a readable file object.
    Raises :class:`InstanceError` naming the offending document path.
    """
    if hasattr(source, "read"):
        source = source.read()
    if isinstance(source, bytes):
        source = source.decode("utf-8")
    try:
        doc = json.loads(source)
    except json.JSONDecodeError as exc:
        raise InstanceError(f"not a JSON document ({exc.msg})", f"line {exc.lineno}") from exc

    errors = sorted(jsonschema.Draft202012Validator(_schema()).iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        first = errors[0]
        path = "".join(f"[{p}]" if isinstance(p, int) else f".{p}" for p in first.absolute_path).lstrip(".")
        raise InstanceError(first.message, path or "$")

    nodes = tuple(
        Node(
            id=r["id"],
            pressure_sq_min=float(r["pressure_sq_min"]),
            pressure_sq_max=float(r["pressure_sq_max"]),
            roles=frozenset(r.get("roles", ())),
            nominal_demand=float(r.get("nominal_demand", 0.0)),
            supply_min=float(r.get("supply_min", 0.0)),
            supply_max=_num(r["supply_max"]) if "supply_max" in r else (math.inf if "receipt" in r.get("roles", ()) else 0.0),
        )
        for r in doc["nodes"]
    )
    pipes = tuple(
        Pipe(
            id=r["id"],
            from_node=r["from_node"],
            to_node=r["to_node"],
            length=float(r["length"]),
            diameter=float(r["diameter"]),
            friction_factor=float(r["friction_factor"]),
            flow_max=float(r["flow_max"]),
            status=r["status"],
            build_cost=None if r.get("build_cost") is None else float(r["build_cost"]),
        )
        for r in doc.get("pipes", [])
    )
    compressors = tuple(
        Compressor(
            id=r["id"],
            from_node=r["from_node"],
            to_node=r["to_node"],
            ratio_sq_min=float(r["ratio_sq_min"]),
            ratio_sq_max=float(r["ratio_sq_max"]),
            flow_max=float(r["flow_max"]),
            status=r["status"],
            build_cost=None if r.get("build_cost") is None else float(r["build_cost"]),
            length=None if r.get("length") is None else float(r["length"]),
            diameter=None if r.get("diameter") is None else float(r["diameter"]),
        )
        for r in doc.get("compressors", [])
    )
    network = Network(
        nodes=nodes,
        pipes=pipes,
        compressors=compressors,
        sound_speed=float(doc["sound_speed"]),
        slack_nodes=tuple(doc.get("slack_nodes", ())),
        meta=dict(doc.get("meta", {})),
    )
    findings = validate(network)
    if findings:
        raise InstanceError(findings[0].message, findings[0].path, findings)
    # warm the caches so shared read-only use never mutates
    network.resistances, network.costs, network.edge_by_id
    return network


def read_instance(path: str | os.PathLike) -> Network:
    """Load an instance from a file path or the name of a bundled instance."""
    p = os.fspath(path)
    if not os.path.exists(p) and p in bundled_instances():
        return load_instance(resources.files("gasexpand").joinpath(f"data/{p}.json").read_bytes())
    with open(p, "rb") as fh:
        return load_instance(fh)


def bundled_instances() -> list[str]:
    names = []
    for entry in resources.files("gasexpand").joinpath("data").iterdir():
        if entry.name.endswith(".json") and not entry.name.endswith(".schema.json"):
            names.append(entry.name[:-5])
    return sorted(names)


def serialize(network: Network) -> dict:
    """Document form of ``network``; ``load_instance`` inverts it."""

    def opt(x: float | None) -> float | None:
        return None if x is None or math.isinf(x) else x

    return {
        "meta": dict(network.meta),
        "sound_speed": network.sound_speed,
        "slack_nodes": list(network.slack_nodes),
        "nodes": [
            {
                "id": n.id,
                "pressure_sq_min": n.pressure_sq_min,
                "pressure_sq_max": n.pressure_sq_max,
                "roles": sorted(n.roles),
                "nominal_demand": n.nominal_demand,
                "supply_min": n.supply_min,
                "supply_max": opt(n.supply_max),
            }
            for n in network.nodes
        ],
        "pipes": [
            _drop_none(
                {
                    "id": p.id,
                    "from_node": p.from_node,
                    "to_node": p.to_node,
                    "length": p.length,
                    "diameter": p.diameter,
                    "friction_factor": p.friction_factor,
                    "flow_max": p.flow_max,
                    "status": p.status,
                    "build_cost": p.build_cost,
                }
            )
            for p in network.pipes
        ],
        "compressors": [
            _drop_none(
                {
                    "id": c.id,
                    "from_node": c.from_node,
                    "to_node": c.to_node,
                    "ratio_sq_min": c.ratio_sq_min,
                    "ratio_sq_max": c.ratio_sq_max,
                    "flow_max": c.flow_max,
                    "status": c.status,
                    "build_cost": c.build_cost,
                    "length": c.length,
                    "diameter": c.diameter,
                }
            )
            for c in network.compressors
        ],
    }


def dumps_instance(network: Network) -> str:
    return json.dumps(serialize(network), indent=1)


def _drop_none(d: dict) -> dict:
    return {k: v for k, v in d.items() if v is not None}


def subnetwork(network: Network, edges: Iterable[str]) -> Network:
    """Copy of ``network`` restricted to the given edge ids (all nodes kept)."""
    keep = set(edges)
    return Network(
        nodes=network.nodes,
        pipes=tuple(p for p in network.pipes if p.id in keep),
        compressors=tuple(c for c in network.compressors if c.id in keep),
        sound_speed=network.sound_speed,
        slack_nodes=network.slack_nodes,
        meta=network.meta,
    )


__all__ = [
    "Compressor",
    "Edge",
    "Finding",
    "InstanceError",
    "Network",
    "Node",
    "Pipe",
    "bundled_instances",
    "dumps_instance",
    "expansion_cost",
    "load_instance",
    "read_instance",
    "resistance",
    "serialize",
    "validate",
]

