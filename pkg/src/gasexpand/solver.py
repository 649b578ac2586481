"""Branch-and-cut for the mixed-integer conic expansion model.

Conic rows never enter the LP directly; they are represented by tangent
(outer-approximation) cuts kept in one global pool.  Nodes are explored
best-bound first, diving depth-first once an incumbent exists.  As soon as
the expansion variables are integral the plan is handed to the physics
module, which also picks every compressor's mode; a plan it cannot realise
is excluded with a no-good row over the expansion variables and the node is
re-solved.
"""

from __future__ import annotations

import heapq
import math
import time
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .formulation import ConicRow, ConstraintSystem, ExpansionPlan, LinearRow, VariableRef
from .lp import LinearProgram, LPWorkspace
from .physics import Controls, Infeasible, NetworkState, search_states
from .uncertainty import Scenario

STATUSES = ("optimal", "infeasible", "gap_limit", "node_limit")


@dataclass(frozen=True)
class SolverOptions:
    gap_tol: float = 1e-6
    cut_tol: float = 1e-6  # conic violation, relative to the reference squared pressure
    int_tol: float = 1e-6
    verify_tol: float = 1e-6
    node_limit: int = 100_000
    time_limit: float = math.inf
    max_cut_rounds: int = 8


@dataclass
class SolveStats:
    nodes: int = 0
    cuts: int = 0
    nogoods: int = 0
    lp_solves: int = 0
    lp_iterations: int = 0
    verifications: int = 0
    wall_time: float = field(default=0.0, compare=False)

    def to_doc(self, timing: bool = False) -> dict:
        doc = {
            "nodes": self.nodes,
            "cuts": self.cuts,
            "nogoods": self.nogoods,
            "lp_solves": self.lp_solves,
            "lp_iterations": self.lp_iterations,
            "verifications": self.verifications,
        }
        if timing:
            doc["wall_time"] = self.wall_time
        return doc


@dataclass
class SolveResult:
    status: str
    plan: ExpansionPlan | None
    objective: float
    bound: float
    gap: float
    states: dict[str, NetworkState]
    stats: SolveStats

    def to_doc(self, timing: bool = False) -> dict:
        return {
            "status": self.status,
            "plan": self.plan.to_doc() if self.plan is not None else None,
            "objective": self.objective if math.isfinite(self.objective) else None,
            "bound": self.bound if math.isfinite(self.bound) else None,
            "gap": self.gap if math.isfinite(self.gap) else None,
            "statistics": self.stats.to_doc(timing),
        }


@dataclass(order=True)
class BnBNode:
    bound: float
    neg_depth: int
    seq: int
    fixings: dict[int, int] = field(compare=False, default_factory=dict)
    local_cuts: list[LinearRow] = field(compare=False, default_factory=list)  # unused: every cut is global

    @property
    def depth(self) -> int:
        return -self.neg_depth


@dataclass(frozen=True)
class Verified:
    states: dict[str, NetworkState]


@dataclass(frozen=True)
class Rejected:
    reason: str

    def __bool__(self) -> bool:
        return False


def oa_cut(conic: ConicRow, f_hat: float) -> LinearRow:
    """Tangent of ``gamma >= w f^2`` at ``f_hat``: ``gamma >= 2 w f_hat f - w f_hat^2``.

    For the rotated form the constant is multiplied by ``z`` (the
    perspective), which coincides with the tangent once ``z = 1`` and stays
    valid at every ``z`` because unbuilt components carry no flow.
    """
    w = conic.w
    coefs = {conic.gamma: 1.0, conic.flow: -2.0 * w * f_hat}
    if conic.form == "soc":
        return LinearRow(coefs, ">=", -w * f_hat * f_hat, "oa", conic.owner, conic.scenario)
    coefs[conic.z] = w * f_hat * f_hat
    return LinearRow(coefs, ">=", 0.0, "oa", conic.owner, conic.scenario)


def _groups(system: ConstraintSystem) -> list[list[Scenario]]:
    by_id = {s.scenario_id: s for s in system.scenarios}
    grouped = {sid for g in system.coupling for sid in g}
    out = [[by_id[sid] for sid in g] for g in system.coupling]
    out += [[s] for s in system.scenarios if s.scenario_id not in grouped]
    return out


def _pinned_slack(system: ConstraintSystem, scenarios: Sequence[Scenario]) -> dict[str, float] | None:
    pins = {}
    for node in system.network.slack_nodes:
        vals = []
        for s in scenarios:
            v = system.var("pi", node, s.scenario_id)
            if v.hi - v.lo > 1e-12 * max(1.0, abs(v.hi)):
                return None
            vals.append(v.lo)
        pins[node] = vals[0]
    return pins or None


def _lp_controls(system: ConstraintSystem, values: Mapping[VariableRef, float], scenario: str,
                 directions: Mapping[str, int], plan: ExpansionPlan) -> Controls:
    net = system.network
    ctl = Controls()
    for s in net.slack_nodes:
        ctl.slack_pressure[s] = values[system.var("pi", s, scenario)]
    for r in net.receipt_nodes:
        if r not in net.slack_nodes:
            ctl.supply[r] = values[system.var("supply", r, scenario)]
    for c in net.compressors:
        if (c.is_candidate and c.id not in plan.built) or directions.get(c.id, 1) != 1:
            continue
        gain = values[system.var("pi", c.to_node, scenario)] - values[system.var("pi", c.from_node, scenario)]
        ctl.boost[c.id] = max(0.0, gain)
    return ctl


def _lp_directions(system: ConstraintSystem, values: Mapping[VariableRef, float], scenario: str,
                   plan: ExpansionPlan) -> dict[str, int]:
    out = {}
    for c in system.network.compressors:
        if c.is_candidate and c.id not in plan.built:
            continue
        out[c.id] = 1 if values[system.var("y", c.id, scenario)] >= 0.5 else 0
    return out


def incumbent_verify(
    plan: ExpansionPlan,
    directions: Mapping[str, Mapping[str, int]] | None,
    system: ConstraintSystem,
    scenarios: Sequence[str] | None = None,
    values: Mapping[VariableRef, float] | None = None,
    tol: float = 1e-6,
) -> Verified | Rejected:
    """Restore ``gamma = w f^2`` by solving the physics of ``plan`` in every block.

    ``directions`` maps scenario id to compressor direction (1 forward); with
    ``None`` the physics chooses each compressor's mode itself, falling back
    to the directions rounded from ``values`` when that search fails.
    Coupled scenarios are searched jointly so they share slack pressures.
    ``values`` (a relaxation point) seeds the control search.
    """
    wanted = set(system.scenario_ids if scenarios is None else scenarios)
    states: dict[str, NetworkState] = {}
    for group in _groups(system):
        group = [s for s in group if s.scenario_id in wanted]
        if not group:
            continue
        pins = _pinned_slack(system, group)
        attempts: list[list[dict[str, int]] | None] = []
        if directions is not None:
            attempts.append([dict(directions.get(s.scenario_id, {})) for s in group])
        else:
            attempts.append(None)
            if values is not None:
                attempts.append([_lp_directions(system, values, s.scenario_id, plan) for s in group])
        found: list[NetworkState] | Infeasible = Infeasible("no attempt")
        for dirs in attempts:
            starts = []
            if values is not None:
                seed_dirs = dirs or [{} for _ in group]
                starts.append([_lp_controls(system, values, s.scenario_id, d, plan) for s, d in zip(group, seed_dirs)])
            found = search_states(system.network, plan, group, dirs, starts, pins, tol=tol)
            if not isinstance(found, Infeasible):
                break
        if isinstance(found, Infeasible):
            return Rejected(f"{'/'.join(s.scenario_id for s in group)}: {found.reason}")
        for st in found:
            states[st.scenario_id] = st
    return Verified({sid: states[sid] for sid in system.scenario_ids if sid in states})


def _core(system: ConstraintSystem, plan: ExpansionPlan) -> ExpansionPlan:
    """``plan`` without built candidates that can only sit in flowless pendant trees.

    A tree of nodes with zero demand in every scenario, no supply and no slack
    hanging off the rest of the built graph at a single node carries no flow,
    so it only adds limits: if the core cannot be realised, neither can the plan.
    """
    net = system.network
    quiet = {
        n.id for n in net.nodes
        if not n.is_receipt and n.id not in net.slack_nodes and all(s.demand(n.id) == 0.0 for s in system.scenarios)
    }
    alive = {e.id: e for e in net.edges if not e.is_candidate or e.id in plan.built}
    degree: dict[str, int] = {}
    for e in alive.values():
        for end in (e.from_node, e.to_node):
            degree[end] = degree.get(end, 0) + 1
    leaves = [v for v, d in degree.items() if d == 1 and v in quiet]
    while leaves:
        v = leaves.pop()
        if degree.get(v) != 1:
            continue
        eid = next(k for k, e in alive.items() if v in (e.from_node, e.to_node))
        e = alive.pop(eid)
        for end in (e.from_node, e.to_node):
            degree[end] -= 1
            if degree[end] == 1 and end in quiet:
                leaves.append(end)
    return ExpansionPlan.from_ids(net, [k for k, e in alive.items() if e.is_candidate])


class _BranchAndCut:
    def __init__(self, system: ConstraintSystem, options: SolverOptions) -> None:
        system.check()
        self.system = system
        self.opts = options
        net = system.network
        self.ref = net.pressure_sq_ref
        vs = system.variables
        self.vars = vs
        n = len(vs)
        self.lo = np.array([v.lo for v in vs])
        self.hi = np.array([v.hi for v in vs])
        cost = np.zeros(n)
        for v, c in system.objective.items():
            cost[system.index(v)] = c
        self.cost = cost
        incident: dict[str, float] = {}
        for e in net.edges:
            for end in (e.from_node, e.to_node):
                incident[end] = incident.get(end, 0.0) + e.flow_max
        scale = np.ones(n)
        for k, v in enumerate(vs):
            if v.kind in ("pi", "gamma", "eta"):
                scale[k] = self.ref
            elif v.kind == "flow":
                scale[k] = net.edge_by_id[v.owner].flow_max
            elif v.kind == "supply":
                scale[k] = max(1.0, incident.get(v.owner, 1.0))
        lp = LinearProgram(cost, self.lo, self.hi, col_scale=scale)
        for row in system.linear_rows:
            self._append(lp, row)
        self.conics = system.conic_rows
        self.cg = np.array([system.index(c.gamma) for c in self.conics], dtype=int)
        self.cf = np.array([system.index(c.flow) for c in self.conics], dtype=int)
        self.cz = np.array([system.index(c.z) if c.z is not None else -1 for c in self.conics], dtype=int)
        self.cw = np.array([c.w for c in self.conics])
        self.stats = SolveStats()
        for k, c in enumerate(self.conics):
            if c.form != "soc":
                continue
            reach = min(c.flow.hi, math.sqrt(max(c.gamma.hi, 0.0) / c.w))
            for frac in (-1.0, -0.5, 0.5, 1.0):
                self._append(lp, oa_cut(c, frac * reach))
                self.stats.cuts += 1
        self.ws = LPWorkspace(lp)
        self.z_cols = [k for k, v in enumerate(vs) if v.kind == "z"]
        comp_ids = {c.id for c in net.compressors}
        self.cy_cols = [k for k, v in enumerate(vs) if v.kind == "y" and v.owner in comp_ids]
        self.py_cols = [k for k, v in enumerate(vs) if v.kind == "y" and v.owner not in comp_ids]
        self.binary_cols = [k for k, v in enumerate(vs) if v.binary]
        self.applied: dict[int, int] = {}
        self.verify_cache: dict[tuple, Verified | Rejected] = {}

    def _append(self, target, row: LinearRow) -> None:
        idx = [self.system.index(v) for v in row.coefficients]
        val = list(row.coefficients.values())
        lo, hi = {"<=": (-math.inf, row.rhs), ">=": (row.rhs, math.inf), "=": (row.rhs, row.rhs)}[row.sense]
        target.add_row(idx, val, lo, hi)

    def _apply(self, fixings: Mapping[int, int]) -> None:
        cols, lo, hi = [], [], []
        for k in set(self.applied) | set(fixings):
            want = fixings.get(k)
            if self.applied.get(k) == want:
                continue
            cols.append(k)
            if want is None:
                lo.append(self.lo[k])
                hi.append(self.hi[k])
            else:
                lo.append(float(want))
                hi.append(float(want))
        order = np.argsort(cols, kind="stable")
        self.ws.set_bounds([cols[i] for i in order], [lo[i] for i in order], [hi[i] for i in order])
        self.applied = dict(fixings)

    def _lp(self):
        res = self.ws.solve()
        self.stats.lp_solves += 1
        self.stats.lp_iterations += res.iterations
        return res

    def _fixed_one(self, col: int, fixings: Mapping[int, int]) -> bool:
        return fixings.get(col) == 1 or self.lo[col] >= 1.0

    def _separate(self, x: np.ndarray, fixings: Mapping[int, int]) -> int:
        added = 0
        tol = self.opts.cut_tol * self.ref
        for k, c in enumerate(self.conics):
            if self.cz[k] >= 0 and not self._fixed_one(self.cz[k], fixings) and x[self.cz[k]] < 1.0 - self.opts.int_tol:
                continue
            f = x[self.cf[k]]
            if self.cw[k] * f * f - x[self.cg[k]] > tol:
                self._append(self.ws, oa_cut(c, float(f)))
                added += 1
        self.stats.cuts += added
        return added

    def _most_fractional(self, cols: Sequence[int], x: np.ndarray) -> int | None:
        best, best_key = None, None
        for k in cols:
            frac = min(x[k], 1.0 - x[k])
            if frac <= self.opts.int_tol:
                continue
            v = self.vars[k]
            key = (-round(frac, 12), -self.cost[k], v.owner, v.scenario or "")
            if best_key is None or key < best_key:
                best, best_key = k, key
        return best

    def _nogood(self, x: np.ndarray) -> LinearRow | None:
        """Exclude the current expansion vector; z fixed by the model itself is left out."""
        coefs: dict[VariableRef, float] = {}
        ones = 0
        for k in self.z_cols:
            if self.lo[k] == self.hi[k]:
                continue
            v = self.vars[k]
            if x[k] >= 0.5:
                coefs[v] = -1.0
                ones += 1
            else:
                coefs[v] = 1.0
        if not coefs:
            return None
        return LinearRow(coefs, ">=", 1.0 - ones, "nogood")

    def _verify(self, plan: ExpansionPlan, values: Mapping[VariableRef, float]) -> Verified | Rejected:
        verdict = self.verify_cache.get(plan.built)
        if verdict is None:
            self.stats.verifications += 1
            verdict = incumbent_verify(plan, None, self.system, None, values, self.opts.verify_tol)
            self.verify_cache[plan.built] = verdict
        return verdict

    def run(self) -> SolveResult:
        opts = self.opts
        t0 = time.perf_counter()
        heap: list[BnBNode] = []
        seq = 0
        heapq.heappush(heap, BnBNode(-math.inf, 0, seq, {}))
        inc_obj = math.inf
        inc_plan: ExpansionPlan | None = None
        inc_states: dict[str, NetworkState] = {}
        status = None
        dive: BnBNode | None = None
        const = self.system.objective_constant

        def threshold() -> float:
            return inc_obj - opts.gap_tol * max(1.0, abs(inc_obj))

        while heap or dive is not None:
            if self.stats.nodes >= opts.node_limit:
                status = "node_limit"
                break
            if time.perf_counter() - t0 > opts.time_limit:
                status = "gap_limit"
                break
            if dive is not None:
                node, dive = dive, None
            else:
                node = heapq.heappop(heap)
            if node.bound >= threshold():
                continue
            self.stats.nodes += 1
            self._apply(node.fixings)

            bound, x = None, None
            while True:
                res = self._lp()
                for _ in range(opts.max_cut_rounds):
                    if res.status != "optimal" or res.objective + const >= threshold():
                        break
                    if not self._separate(res.x, node.fixings):
                        break
                    res = self._lp()
                if res.status == "unbounded":
                    raise RuntimeError(f"unbounded relaxation at node {node.seq}")
                if res.status != "optimal":
                    break
                bound = max(res.objective + const, node.bound)
                if bound >= threshold():
                    break
                x = res.x
                zf = self._most_fractional(self.z_cols, x)
                if zf is not None:
                    break
                plan = ExpansionPlan.from_ids(self.system.network, [self.vars[k].owner for k in self.z_cols if x[k] >= 0.5])
                verdict = self.verify_cache.get(plan.built)
                if verdict is None:
                    values = {v: float(x[k]) for k, v in enumerate(self.vars)}
                    core = _core(self.system, plan)
                    if core.built != plan.built:
                        verdict = self._verify(core, values)
                    if verdict is None or isinstance(verdict, Verified):
                        verdict = self._verify(plan, values)
                    else:
                        verdict = Rejected(f"core {sorted(core.built)} rejected: {verdict.reason}")
                        self.verify_cache[plan.built] = verdict
                if isinstance(verdict, Verified):
                    cost = plan.cost if self.system.fixed_plan is None else const
                    if cost < inc_obj:
                        inc_obj, inc_plan, inc_states = cost, plan, verdict.states
                    x = None
                    break
                cut = self._nogood(x)
                if cut is None:
                    # every z is fixed by the model: all leaves share this rejected plan
                    heap.clear()
                    dive = None
                    x = None
                    break
                self._append(self.ws, cut)
                self.stats.nogoods += 1

            if x is None or bound is None or bound >= threshold():
                continue
            col = self._most_fractional(self.z_cols, x)
            if col is None:
                col = self._most_fractional(self.cy_cols, x)
            if col is None:
                col = self._most_fractional(self.py_cols, x)
            if col is None:
                continue  # integral and handled above
            first = 1 if x[col] >= 0.5 else 0
            kids = []
            for val in (first, 1 - first):
                seq += 1
                fx = dict(node.fixings)
                fx[col] = val
                kids.append(BnBNode(bound, node.neg_depth - 1, seq, fx))
            if inc_plan is not None:
                dive = kids[0]
                heapq.heappush(heap, kids[1])
            else:
                for kid in kids:
                    heapq.heappush(heap, kid)

        self.stats.wall_time = time.perf_counter() - t0
        open_bounds = [n.bound for n in heap] + ([dive.bound] if dive is not None else [])
        if status is None:
            status = "optimal" if inc_plan is not None else "infeasible"
            bound = inc_obj
        else:
            bound = min(open_bounds + [inc_obj]) if open_bounds else inc_obj
            if status == "gap_limit" and inc_plan is None:
                bound = min(open_bounds) if open_bounds else -math.inf
        if inc_plan is None:
            return SolveResult(status, None, math.inf, bound, math.inf, {}, self.stats)
        bound = min(bound, inc_obj)
        gap = (inc_obj - bound) / max(1.0, abs(inc_obj)) if math.isfinite(bound) else math.inf
        return SolveResult(status, inc_plan, inc_obj, bound, gap, inc_states, self.stats)


def solve(system: ConstraintSystem, options: SolverOptions | None = None) -> SolveResult:
    """Minimise expansion cost subject to the conic model and physical realisability."""
    return _BranchAndCut(system, options or SolverOptions()).run()
