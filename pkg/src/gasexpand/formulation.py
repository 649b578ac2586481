"""Solver-agnostic mixed-integer conic model for robust expansion planning.

One block of rows is emitted per demand scenario.  Row tags name the
equation family that produced them:

    mc_a-mc_d   McCormick envelope of gamma = (2y - 1)(pi_i - pi_j)
    pipe_dir    direction/flow linking on pipes
    flow_build  -fmax z <= f <= fmax z on candidate pipes
    comp_*      existing compressor disjunction
    cand_*      candidate compressor disjunction
    balance     nodal mass balance
    policy      compression policy pi_j - pi_i = eta (big-M relaxed on candidates)
    slack_coupling  equal slack pressures across the scenarios of a profile
"""

from __future__ import annotations

import json
import math
from collections import defaultdict
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Sequence

from .network import Compressor, Network, Pipe
from .uncertainty import DemandProfile, Scenario, ScenarioSet, check_scenarios, extremal_scenarios

KIND_ORDER = {k: i for i, k in enumerate(("z", "pi", "supply", "flow", "gamma", "eta", "y"))}
POLICIES = ("monotone", "general")
MCCORMICK_TAGS = ("mc_a", "mc_b", "mc_c", "mc_d")
COMPRESSOR_TAGS = ("comp_drop", "comp_ratio_lo", "comp_ratio_hi", "comp_dir", "cand_drop_lo", "cand_drop_hi", "cand_ratio_lo", "cand_ratio_hi", "cand_dir", "cand_build")


class FormulationError(ValueError):
    pass


@dataclass(frozen=True)
class VariableRef:
    """Model variable.  Identity is ``(kind, owner, scenario)``; bounds ride along."""

    kind: str
    owner: str
    scenario: str | None = None
    lo: float = field(default=-math.inf, compare=False)
    hi: float = field(default=math.inf, compare=False)
    binary: bool = field(default=False, compare=False)

    def __str__(self) -> str:
        at = f"@{self.scenario}" if self.scenario is not None else ""
        return f"{self.kind}[{self.owner}]{at}"

    @property
    def sort_key(self) -> tuple:
        return (self.scenario or "", KIND_ORDER[self.kind], self.owner)

    def with_bounds(self, lo: float, hi: float) -> VariableRef:
        return replace(self, lo=lo, hi=hi)


@dataclass(frozen=True)
class LinearRow:
    coefficients: Mapping[VariableRef, float]
    sense: str
    rhs: float
    tag: str
    owner: str | None = None
    scenario: str | None = None

    def __post_init__(self) -> None:
        if self.sense not in ("<=", "=", ">="):
            raise FormulationError(f"bad sense {self.sense!r}")
        coefs = {v: float(c) for v, c in self.coefficients.items() if c != 0}
        if not coefs:
            raise FormulationError(f"row {self.tag} ({self.owner}) has no nonzero coefficient")
        if not math.isfinite(self.rhs):
            raise FormulationError(f"row {self.tag} ({self.owner}) has non-finite rhs")
        object.__setattr__(self, "coefficients", coefs)

    def activity(self, values: Mapping[VariableRef, float]) -> float:
        return sum(c * values[v] for v, c in self.coefficients.items())

    def violation(self, values: Mapping[VariableRef, float]) -> float:
        a = self.activity(values)
        if self.sense == "<=":
            return max(0.0, a - self.rhs)
        if self.sense == ">=":
            return max(0.0, self.rhs - a)
        return abs(a - self.rhs)

    def __str__(self) -> str:
        terms = " ".join(f"{c:+.6g}*{v}" for v, c in self.coefficients.items())
        where = f" {self.owner}" if self.owner else ""
        at = f"@{self.scenario}" if self.scenario else ""
        return f"[{self.tag}{where}{at}] {terms} {self.sense} {self.rhs:.6g}"


@dataclass(frozen=True)
class ConicRow:
    """``gamma >= w f^2`` (soc) or ``z gamma >= w f^2`` (rsoc)."""

    form: str
    gamma: VariableRef
    flow: VariableRef
    w: float
    z: VariableRef | None = None
    owner: str | None = None
    scenario: str | None = None

    def __post_init__(self) -> None:
        if self.form not in ("soc", "rsoc"):
            raise FormulationError(f"bad conic form {self.form!r}")
        if not self.w > 0:
            raise FormulationError(f"conic row on {self.owner} needs w > 0")
        if (self.form == "rsoc") != (self.z is not None):
            raise FormulationError("rsoc rows and only rsoc rows reference z")
        if self.z is not None and not self.z.binary:
            raise FormulationError("rsoc row must reference a binary z")

    def __str__(self) -> str:
        lhs = f"{self.z}*{self.gamma}" if self.z is not None else str(self.gamma)
        return f"[{self.form} {self.owner}@{self.scenario}] {lhs} >= {self.w:.6g}*{self.flow}^2"


@dataclass(frozen=True)
class ExpansionPlan:
    built: frozenset[str]
    cost: float

    @classmethod
    def from_ids(cls, network: Network, ids: Iterable[str]) -> ExpansionPlan:
        built = frozenset(ids)
        unknown = sorted(built - set(network.candidate_ids))
        if unknown:
            raise FormulationError(f"unknown candidate ids {unknown}")
        return cls(built, sum(network.costs[i] for i in sorted(built)))

    @classmethod
    def empty(cls) -> ExpansionPlan:
        return cls(frozenset(), 0.0)

    def to_doc(self) -> dict:
        return {"built": sorted(self.built), "cost": self.cost}


@dataclass
class ConstraintSystem:
    network: Network
    variables: list[VariableRef]
    linear_rows: list[LinearRow]
    conic_rows: list[ConicRow]
    objective: dict[VariableRef, float] = field(default_factory=dict)
    objective_constant: float = 0.0
    scenarios: list[Scenario] = field(default_factory=list)
    policy: str = "monotone"
    coupling: list[tuple[str, ...]] = field(default_factory=list)
    fixed_plan: ExpansionPlan | None = None

    def __post_init__(self) -> None:
        self.variables = sorted(self.variables, key=lambda v: v.sort_key)
        self._index = {v: k for k, v in enumerate(self.variables)}

    def index(self, var: VariableRef) -> int:
        return self._index[var]

    def var(self, kind: str, owner: str, scenario: str | None = None) -> VariableRef:
        """Authoritative declared copy (with bounds) of a variable."""
        return self.variables[self._index[VariableRef(kind, owner, scenario)]]

    def has_var(self, kind: str, owner: str, scenario: str | None = None) -> bool:
        return VariableRef(kind, owner, scenario) in self._index

    @property
    def scenario_ids(self) -> list[str]:
        return [s.scenario_id for s in self.scenarios]

    def binaries(self) -> list[VariableRef]:
        return [v for v in self.variables if v.binary]

    def check(self) -> None:
        """Raise if a row references an undeclared variable or the objective strays off z."""
        for row in self.linear_rows:
            for v in row.coefficients:
                if v not in self._index:
                    raise FormulationError(f"row {row.tag} references undeclared {v}")
        for row in self.conic_rows:
            for v in (row.gamma, row.flow, row.z):
                if v is not None and v not in self._index:
                    raise FormulationError(f"conic row references undeclared {v}")
        for v in self.objective:
            if v.kind != "z":
                raise FormulationError(f"objective touches non-z variable {v}")

    def census(self, scenario: str | None = None) -> dict[str, int]:
        """Row counts per equation family; multi-row families count once per component."""
        labels: dict[str, set] = defaultdict(set)
        for row in self.linear_rows:
            if scenario is not None and row.scenario != scenario:
                continue
            if row.tag in MCCORMICK_TAGS:
                labels["mccormick"].add((row.tag, row.owner, row.scenario))
            elif row.tag in COMPRESSOR_TAGS:
                labels["compressor"].add((row.tag, row.owner, row.scenario))
            elif row.tag == "balance":
                labels["balance"].add((row.owner, row.scenario))
            elif row.tag == "policy":
                labels["policy"].add((row.owner, row.scenario))
            else:
                labels[row.tag].add((row.tag, row.owner, row.scenario))
        out = {k: len(v) for k, v in labels.items()}
        for row in self.conic_rows:
            if scenario is None or row.scenario == scenario:
                out[row.form] = out.get(row.form, 0) + 1
        return out

    def dump_text(self) -> str:
        lines = ["minimize " + " ".join(f"{c:+.6g}*{v}" for v, c in self.objective.items())
                 + (f" {self.objective_constant:+.6g}" if self.objective_constant else "")]
        lines += [f"var {v} in [{v.lo:.6g}, {v.hi:.6g}]" + (" binary" if v.binary else "") for v in self.variables]
        lines += [str(r) for r in self.linear_rows]
        lines += [str(r) for r in self.conic_rows]
        return "\n".join(lines) + "\n"

    def to_document(self) -> dict:
        def ref(v: VariableRef) -> list:
            return [v.kind, v.owner, v.scenario]

        def num(x: float) -> float | None:
            return None if math.isinf(x) else x

        return {
            "policy": self.policy,
            "scenarios": self.scenario_ids,
            "coupling": [list(g) for g in self.coupling],
            "variables": [
                {"ref": ref(v), "lo": num(v.lo), "hi": num(v.hi), "binary": v.binary} for v in self.variables
            ],
            "linear_rows": [
                {"tag": r.tag, "owner": r.owner, "scenario": r.scenario, "sense": r.sense, "rhs": r.rhs,
                 "coefficients": [[ref(v), c] for v, c in r.coefficients.items()]}
                for r in self.linear_rows
            ],
            "conic_rows": [
                {"form": r.form, "gamma": ref(r.gamma), "flow": ref(r.flow), "w": r.w,
                 "z": ref(r.z) if r.z is not None else None, "owner": r.owner, "scenario": r.scenario}
                for r in self.conic_rows
            ],
            "objective": [[ref(v), c] for v, c in self.objective.items()],
            "objective_constant": self.objective_constant,
        }

    def dumps(self) -> str:
        return json.dumps(self.to_document(), indent=1)


# --------------------------------------------------------------------------
# row generators


def _row(coefs: Mapping[VariableRef, float], sense: str, rhs: float, tag: str, owner: str, scenario: str | None) -> LinearRow:
    return LinearRow(dict(coefs), sense, float(rhs), tag, owner, scenario)


def mccormick_rows(
    pi_i: VariableRef,
    pi_j: VariableRef,
    y: VariableRef,
    gamma: VariableRef,
    bounds: tuple[float, float, float, float],
    owner: str | None = None,
    scenario: str | None = None,
) -> list[LinearRow]:
    """Envelope of ``gamma = (2y - 1)(pi_i - pi_j)``; ``bounds`` is (lo_i, hi_i, lo_j, hi_j)."""
    lo_i, hi_i, lo_j, hi_j = bounds
    if not all(map(math.isfinite, bounds)):
        raise FormulationError("McCormick rows need finite pressure bounds")
    low, up = lo_i - hi_j, hi_i - lo_j
    return [
        # gamma >= pi_j - pi_i + 2y(lo_i - hi_j)
        _row({gamma: -1, pi_j: 1, pi_i: -1, y: 2 * low}, "<=", 0.0, "mc_a", owner, scenario),
        # gamma >= pi_i - pi_j + 2(y - 1)(hi_i - lo_j)
        _row({gamma: -1, pi_i: 1, pi_j: -1, y: 2 * up}, "<=", 2 * up, "mc_b", owner, scenario),
        # gamma <= pi_j - pi_i + 2y(hi_i - lo_j)
        _row({gamma: 1, pi_j: -1, pi_i: 1, y: -2 * up}, "<=", 0.0, "mc_c", owner, scenario),
        # gamma <= pi_i - pi_j + 2(y - 1)(lo_i - hi_j)
        _row({gamma: 1, pi_i: -1, pi_j: 1, y: -2 * low}, "<=", -2 * low, "mc_d", owner, scenario),
    ]


def _direction_rows(f: VariableRef, y: VariableRef, fmax: float, tag: str, owner: str, sc: str) -> list[LinearRow]:
    # -fmax (1 - y) <= f <= fmax y
    return [
        _row({f: 1, y: -fmax}, "<=", 0.0, tag, owner, sc),
        _row({f: -1, y: fmax}, "<=", fmax, tag, owner, sc),
    ]


def _build_rows(f: VariableRef, z: VariableRef, fmax: float, tag: str, owner: str, sc: str) -> list[LinearRow]:
    # -fmax z <= f <= fmax z
    return [
        _row({f: 1, z: -fmax}, "<=", 0.0, tag, owner, sc),
        _row({f: -1, z: -fmax}, "<=", 0.0, tag, owner, sc),
    ]


def _compressor_rows(c: Compressor, pi_i, pi_j, f, y, z, bnd, sc: str) -> list[LinearRow]:
    lo_i, hi_i, lo_j, hi_j = bnd
    a_lo, a_hi = c.ratio_sq_min, c.ratio_sq_max
    # big-M constants clamped so a relaxed row never cuts a feasible point
    low = min(0.0, lo_i - hi_j)
    up = max(0.0, hi_i - lo_j)
    b = min(0.0, lo_j - a_lo * hi_i)
    d = max(0.0, hi_j - a_hi * lo_i)
    cid = c.id
    if z is None:
        return [
            # y (lo_i - hi_j) <= pi_i - pi_j <= y (hi_i - lo_j)
            _row({y: low, pi_i: -1, pi_j: 1}, "<=", 0.0, "comp_drop", cid, sc),
            _row({pi_i: 1, pi_j: -1, y: -up}, "<=", 0.0, "comp_drop", cid, sc),
            # a_lo pi_i + (1 - y) b <= pi_j
            _row({pi_i: a_lo, pi_j: -1, y: -b}, "<=", -b, "comp_ratio_lo", cid, sc),
            # pi_j <= a_hi pi_i + (1 - y) d
            _row({pi_j: 1, pi_i: -a_hi, y: d}, "<=", d, "comp_ratio_hi", cid, sc),
            *_direction_rows(f, y, c.flow_max, "comp_dir", cid, sc),
        ]
    return [
        # (1 + y - z)(lo_i - hi_j) <= pi_i - pi_j
        _row({y: low, z: -low, pi_i: -1, pi_j: 1}, "<=", -low, "cand_drop_lo", cid, sc),
        # pi_i - pi_j <= (1 + y - z)(hi_i - lo_j)
        _row({pi_i: 1, pi_j: -1, y: -up, z: up}, "<=", up, "cand_drop_hi", cid, sc),
        # a_lo pi_i + (2 - y - z) b <= pi_j
        _row({pi_i: a_lo, pi_j: -1, y: -b, z: -b}, "<=", -2 * b, "cand_ratio_lo", cid, sc),
        # pi_j <= a_hi pi_i + (2 - y - z) d
        _row({pi_j: 1, pi_i: -a_hi, y: d, z: d}, "<=", 2 * d, "cand_ratio_hi", cid, sc),
        *_direction_rows(f, y, c.flow_max, "cand_dir", cid, sc),
        *_build_rows(f, z, c.flow_max, "cand_build", cid, sc),
    ]


def _policy_rows(c: Compressor, pi_i, pi_j, eta, z, bnd, sc: str) -> list[LinearRow]:
    if z is None:
        return [_row({pi_j: 1, pi_i: -1, eta: -1}, "=", 0.0, "policy", c.id, sc)]
    lo_i, hi_i, lo_j, hi_j = bnd
    # |pi_j - pi_i - eta| <= M (1 - z)
    big_m = max(abs(lo_j - hi_i - eta.hi), abs(hi_j - lo_i - eta.lo))
    return [
        _row({pi_j: 1, pi_i: -1, eta: -1, z: big_m}, "<=", big_m, "policy", c.id, sc),
        _row({pi_j: -1, pi_i: 1, eta: 1, z: big_m}, "<=", big_m, "policy", c.id, sc),
    ]


# --------------------------------------------------------------------------
# builders


def _z_vars(network: Network) -> dict[str, VariableRef]:
    return {e.id: VariableRef("z", e.id, None, 0.0, 1.0, True) for e in network.candidates}


def build_scenario_block(network: Network, scenario: Scenario, policy: str = "monotone") -> ConstraintSystem:
    """Rows and variables of the conic constraint set for one demand scenario."""
    if policy not in POLICIES:
        raise FormulationError(f"unknown policy {policy!r}")
    try:
        check_scenarios(network, [scenario])
    except ValueError as exc:
        raise FormulationError(str(exc)) from exc
    sc = scenario.scenario_id
    nodes = network.node_by_id
    pi = {n.id: VariableRef("pi", n.id, sc, n.pressure_sq_min, n.pressure_sq_max) for n in network.nodes}
    supply = {
        n.id: VariableRef("supply", n.id, sc, n.supply_min, n.supply_max) for n in network.nodes if n.is_receipt
    }
    zs = _z_vars(network)
    flows: dict[str, VariableRef] = {}
    variables: list[VariableRef] = [*pi.values(), *supply.values(), *zs.values()]
    rows: list[LinearRow] = []
    cones: list[ConicRow] = []

    def bounds_of(e) -> tuple[float, float, float, float]:
        ni, nj = nodes[e.from_node], nodes[e.to_node]
        return ni.pressure_sq_min, ni.pressure_sq_max, nj.pressure_sq_min, nj.pressure_sq_max

    for p in network.pipes:
        bnd = bounds_of(p)
        f = VariableRef("flow", p.id, sc, -p.flow_max, p.flow_max)
        y = VariableRef("y", p.id, sc, 0.0, 1.0, True)
        g_hi = max(0.0, bnd[1] - bnd[2], bnd[3] - bnd[0])
        gamma = VariableRef("gamma", p.id, sc, 0.0, g_hi)
        flows[p.id] = f
        variables += [f, y, gamma]
        rows += mccormick_rows(pi[p.from_node], pi[p.to_node], y, gamma, bnd, p.id, sc)
        rows += _direction_rows(f, y, p.flow_max, "pipe_dir", p.id, sc)
        w = network.resistances[p.id]
        if p.is_candidate:
            z = zs[p.id]
            rows += _build_rows(f, z, p.flow_max, "flow_build", p.id, sc)
            cones.append(ConicRow("rsoc", gamma, f, w, z, p.id, sc))
        else:
            cones.append(ConicRow("soc", gamma, f, w, None, p.id, sc))

    for c in network.compressors:
        bnd = bounds_of(c)
        f = VariableRef("flow", c.id, sc, -c.flow_max, c.flow_max)
        y = VariableRef("y", c.id, sc, 0.0, 1.0, True)
        flows[c.id] = f
        variables += [f, y]
        z = zs.get(c.id)
        rows += _compressor_rows(c, pi[c.from_node], pi[c.to_node], f, y, z, bnd, sc)
        if policy == "monotone":
            eta = VariableRef("eta", c.id, sc, 0.0, max(0.0, bnd[3] - bnd[0]))
            variables.append(eta)
            rows += _policy_rows(c, pi[c.from_node], pi[c.to_node], eta, z, bnd, sc)

    for n in network.nodes:
        coefs: dict[VariableRef, float] = {}
        for e in network.edges_from(n.id):
            coefs[flows[e.id]] = coefs.get(flows[e.id], 0.0) + 1.0
        for e in network.edges_to(n.id):
            coefs[flows[e.id]] = coefs.get(flows[e.id], 0.0) - 1.0
        if n.id in supply:
            coefs[supply[n.id]] = -1.0
        d = scenario.demand(n.id)
        if not any(coefs.values()):
            if d != 0:
                raise FormulationError(f"node {n.id!r} has demand but no incident component")
            continue
        rows.append(_row(coefs, "=", -d, "balance", n.id, sc))

    return ConstraintSystem(network, variables, rows, cones, scenarios=[scenario], policy=policy)


def _merge(network: Network, blocks: Sequence[ConstraintSystem], policy: str) -> ConstraintSystem:
    variables: dict[VariableRef, VariableRef] = {}
    rows: list[LinearRow] = []
    cones: list[ConicRow] = []
    scenarios: list[Scenario] = []
    for b in blocks:
        for v in b.variables:
            variables.setdefault(v, v)
        rows += b.linear_rows
        cones += b.conic_rows
        scenarios += b.scenarios
    return ConstraintSystem(network, list(variables.values()), rows, cones, scenarios=scenarios, policy=policy)


def _objective(network: Network) -> dict[VariableRef, float]:
    zs = _z_vars(network)
    return {zs[i]: network.costs[i] for i in network.candidate_ids}


def _unique_ids(scenarios: Sequence[Scenario]) -> list[Scenario]:
    seen: dict[str, int] = {}
    out = []
    for s in scenarios:
        k = seen.get(s.scenario_id, 0)
        seen[s.scenario_id] = k + 1
        out.append(s if k == 0 else replace(s, scenario_id=f"{s.scenario_id}#{k + 1}"))
    return out


def build_robust_model(
    network: Network,
    scenarios: ScenarioSet | Sequence[DemandProfile] | Sequence[Scenario],
    policy: str = "monotone",
    use_extremal: bool = True,
) -> ConstraintSystem:
    """Expansion model over the extremal pair of every profile (or an explicit scenario list).

    Scenarios of the same profile share the pressure at every slack node.
    """
    items = list(scenarios.profiles if isinstance(scenarios, ScenarioSet) else scenarios)
    if not items:
        raise FormulationError("empty scenario set")
    if use_extremal:
        if not all(isinstance(p, DemandProfile) for p in items):
            raise FormulationError("use_extremal expects demand profiles")
        points = [s for p in items for s in extremal_scenarios(p)]
    else:
        if not all(isinstance(s, Scenario) for s in items):
            raise FormulationError("explicit mode expects scenarios")
        points = _unique_ids(items)
    blocks = [build_scenario_block(network, s, policy) for s in points]
    system = _merge(network, blocks, policy)

    groups: dict[str, list[str]] = {}
    for s in points:
        groups.setdefault(s.profile_id, []).append(s.scenario_id)
    coupling = []
    for members in groups.values():
        if len(members) < 2:
            continue
        coupling.append(tuple(members))
        head = members[0]
        for other in members[1:]:
            for node in network.slack_nodes:
                a, b = system.var("pi", node, head), system.var("pi", node, other)
                system.linear_rows.append(_row({a: 1, b: -1}, "=", 0.0, "slack_coupling", node, other))
    system.coupling = coupling
    system.objective = _objective(network)
    system.check()
    return system


def build_deterministic_model(network: Network, scenario: Scenario, policy: str = "monotone") -> ConstraintSystem:
    """Single-block expansion model for one point scenario."""
    system = build_scenario_block(network, scenario, policy)
    system.objective = _objective(network)
    system.check()
    return system


def _rebound(system: ConstraintSystem, bounds: Mapping[VariableRef, tuple[float, float]]) -> ConstraintSystem:
    variables = [v.with_bounds(*bounds[v]) if v in bounds else v for v in system.variables]
    return ConstraintSystem(
        system.network,
        variables,
        list(system.linear_rows),
        list(system.conic_rows),
        dict(system.objective),
        system.objective_constant,
        list(system.scenarios),
        system.policy,
        list(system.coupling),
        system.fixed_plan,
    )


def fix_plan(system: ConstraintSystem, plan: ExpansionPlan | Iterable[str]) -> ConstraintSystem:
    """Copy of ``system`` with every z fixed to the plan and a constant objective."""
    network = system.network
    if not isinstance(plan, ExpansionPlan):
        plan = ExpansionPlan.from_ids(network, plan)
    unknown = sorted(plan.built - set(network.candidate_ids))
    if unknown:
        raise FormulationError(f"plan references unknown candidate ids {unknown}")
    bounds = {}
    for v in system.variables:
        if v.kind == "z":
            val = 1.0 if v.owner in plan.built else 0.0
            bounds[v] = (val, val)
    out = _rebound(system, bounds)
    out.objective = {}
    out.objective_constant = plan.cost
    out.fixed_plan = plan
    return out


def fix_pressures(system: ConstraintSystem, pressures: Mapping[str, float], scenarios: Iterable[str] | None = None) -> ConstraintSystem:
    """Pin squared pressures at the given nodes in every (or the listed) scenario block."""
    targets = set(system.scenario_ids if scenarios is None else scenarios)
    bounds = {}
    for v in system.variables:
        if v.kind == "pi" and v.scenario in targets and v.owner in pressures:
            val = float(pressures[v.owner])
            if not v.lo - 1e-9 * abs(v.hi) <= val <= v.hi + 1e-9 * abs(v.hi):
                raise FormulationError(f"pinned pressure at {v.owner!r} lies outside its bounds")
            val = min(max(val, v.lo), v.hi)
            bounds[v] = (val, val)
    return _rebound(system, bounds)
