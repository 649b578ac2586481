"""Steady-state gas flow on a fixed topology, bound checking and control search.

Pipes obey ``pi_i - pi_j = w f|f|``.  Compressors are zero-resistance arcs
that add a squared-pressure boost ``eta`` in their forward direction
(``pi_j = pi_i + eta``) and pass gas backwards with ``eta = 0``.  Nodes joined
by built compressors are contracted into super-nodes whose pressures differ
by fixed offsets, so Newton's unknowns are one potential per non-slack
super-node.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.optimize import least_squares

from .formulation import ExpansionPlan
from .network import Compressor, Network, Pipe
from .uncertainty import Scenario

NEWTON_TOL = 1e-8
NEWTON_POLISH = 1e-14
NEWTON_MAX_ITER = 100
FLOW_FLOOR = 1e-9  # relative to the largest injection; keeps the law derivative invertible
VERIFY_TOL = 1e-6
SEARCH_FTOL = 1e-8  # relative merit decrease below which the control search gives up
SEARCH_STALL = 40  # evaluations without a SEARCH_STALL_GAIN relative improvement end a search
SEARCH_STALL_GAIN = 0.01


@dataclass(frozen=True)
class NetworkState:
    scenario_id: str
    pi: Mapping[str, float]
    flow: Mapping[str, float]
    supply: Mapping[str, float]
    boost: Mapping[str, float]
    directions: Mapping[str, int]

    def to_doc(self) -> dict:
        return {
            "scenario_id": self.scenario_id,
            "pi": dict(self.pi),
            "flow": dict(self.flow),
            "supply": dict(self.supply),
            "boost": dict(self.boost),
            "directions": dict(self.directions),
        }

    @classmethod
    def from_doc(cls, doc: Mapping) -> NetworkState:
        return cls(
            str(doc["scenario_id"]),
            {k: float(v) for k, v in doc["pi"].items()},
            {k: float(v) for k, v in doc["flow"].items()},
            {k: float(v) for k, v in doc["supply"].items()},
            {k: float(v) for k, v in doc["boost"].items()},
            {k: int(v) for k, v in doc["directions"].items()},
        )


@dataclass(frozen=True)
class Infeasible:
    reason: str
    kind: str = "bounds"  # bounds | nonconvergence | topology

    def __bool__(self) -> bool:
        return False


@dataclass(frozen=True)
class Violation:
    kind: str
    owner: str
    amount: float  # scaled: pressures by the reference pressure, flows by their capacity


@dataclass
class Controls:
    """Operator set-points: slack pressures, non-slack receipt supplies, forward boosts."""

    slack_pressure: dict[str, float] = field(default_factory=dict)
    supply: dict[str, float] = field(default_factory=dict)
    boost: dict[str, float] = field(default_factory=dict)

    def copy(self) -> Controls:
        return Controls(dict(self.slack_pressure), dict(self.supply), dict(self.boost))


def built_edges(network: Network, plan: ExpansionPlan | Iterable[str] | None) -> frozenset[str]:
    built = plan.built if isinstance(plan, ExpansionPlan) else frozenset(plan or ())
    return frozenset(e.id for e in network.edges if not e.is_candidate or e.id in built)


def boost_bounds(network: Network, compressor: Compressor) -> tuple[float, float]:
    ni, nj = network.node(compressor.from_node), network.node(compressor.to_node)
    return 0.0, max(0.0, nj.pressure_sq_max - ni.pressure_sq_min)


# --------------------------------------------------------------------------
# topology


class _Topology:
    """Contracted view of the built subgraph, reused across control evaluations."""

    def __init__(self, network: Network, built: frozenset[str]) -> None:
        self.network = network
        self.built = built
        self.ref = network.pressure_sq_ref
        ids = [n.id for n in network.nodes]
        self.node_ids = ids
        self.pos = {n: k for k, n in enumerate(ids)}
        self.pipes = [p for p in network.pipes if p.id in built]
        self.comps = [c for c in network.compressors if c.id in built]
        self.slack = [s for s in network.slack_nodes]
        slack_set = set(self.slack)
        self.free_receipts = [n.id for n in network.nodes if n.is_receipt and n.id not in slack_set]

        parent = list(range(len(ids)))

        def find(a: int) -> int:
            while parent[a] != a:
                parent[a] = parent[parent[a]]
                a = parent[a]
            return a

        for c in self.comps:
            a, b = find(self.pos[c.from_node]), find(self.pos[c.to_node])
            if a != b:
                parent[max(a, b)] = min(a, b)
        roots = sorted({find(k) for k in range(len(ids))})
        self.super_of = [roots.index(find(k)) for k in range(len(ids))]
        self.n_super = len(roots)
        self.members: list[list[int]] = [[] for _ in roots]
        for k in range(len(ids)):
            self.members[self.super_of[k]].append(k)
        self.comps_in: list[list[Compressor]] = [[] for _ in roots]
        for c in self.comps:
            self.comps_in[self.super_of[self.pos[c.from_node]]].append(c)

        # components of the contracted graph through pipes
        cparent = list(range(self.n_super))

        def cfind(a: int) -> int:
            while cparent[a] != a:
                cparent[a] = cparent[cparent[a]]
                a = cparent[a]
            return a

        for p in self.pipes:
            a, b = cfind(self.super_of[self.pos[p.from_node]]), cfind(self.super_of[self.pos[p.to_node]])
            if a != b:
                cparent[max(a, b)] = min(a, b)
        self.component = [cfind(s) for s in range(self.n_super)]
        anchored = {self.component[self.super_of[self.pos[s]]] for s in self.slack}
        # super-nodes whose potential is fixed: those holding a slack node, or a
        # pseudo-anchor (lowest index) in every slack-free component
        self.anchor_slack: dict[int, int] = {}
        for s in self.slack:
            sup = self.super_of[self.pos[s]]
            self.anchor_slack.setdefault(sup, self.pos[s])
        self.pseudo: dict[int, int] = {}
        for s in range(self.n_super):
            comp = self.component[s]
            if comp not in anchored and comp not in self.pseudo:
                self.pseudo[comp] = s
        fixed = set(self.anchor_slack) | set(self.pseudo.values())
        self.unknown = [s for s in range(self.n_super) if s not in fixed]
        self.unknown_pos = {s: k for k, s in enumerate(self.unknown)}
        self.pipe_ends = np.array(
            [(self.pos[p.from_node], self.pos[p.to_node]) for p in self.pipes], dtype=int
        ).reshape(-1, 2)
        self.pipe_w = np.array([network.resistances[p.id] / self.ref for p in self.pipes])
        self.lo = np.array([network.node(n).pressure_sq_min for n in ids]) / self.ref
        self.hi = np.array([network.node(n).pressure_sq_max for n in ids]) / self.ref
        # incidence of pipes on unknown super-nodes (+1 at the tail, -1 at the head)
        self.incidence = np.zeros((len(self.unknown), len(self.pipes)))
        for e, (i, j) in enumerate(self.pipe_ends):
            a, b = self.super_of[i], self.super_of[j]
            if a != b:
                if a in self.unknown_pos:
                    self.incidence[self.unknown_pos[a], e] += 1.0
                if b in self.unknown_pos:
                    self.incidence[self.unknown_pos[b], e] -= 1.0
        self.warm: dict[str, tuple[np.ndarray, np.ndarray]] = {}  # last (potential, flow) per scenario id
        self.demand_cache: dict[str, tuple[Scenario, np.ndarray]] = {}
        self.comp_col = {c.id: k for k, c in enumerate(self.comps)}
        self.supply_ids = sorted(set(self.free_receipts) | set(self.slack))
        self.supply_pos = {r: k for k, r in enumerate(self.supply_ids)}
        self.node_pipe = np.zeros((len(ids), len(self.pipes)))
        for e, (i, j) in enumerate(self.pipe_ends):
            self.node_pipe[i, e] += 1.0
            self.node_pipe[j, e] -= 1.0
        self.sa = np.array([self.super_of[i] for i in self.pipe_ends[:, 0]], dtype=int)
        self.sb = np.array([self.super_of[j] for j in self.pipe_ends[:, 1]], dtype=int)
        self.mid = (self.lo + self.hi) / 2
        self.counts = np.bincount(self.super_of, minlength=self.n_super).astype(float)

        # offsets are linear in the boosts: walk each super-node's compressor
        # tree once, recording coefficients; extra compressors close loops
        coef: list[np.ndarray | None] = [None] * len(ids)
        self.loop_rows: list[tuple[str, np.ndarray]] = []
        for s in range(self.n_super):
            root = self.members[s][0]
            coef[root] = np.zeros(len(self.comps))
            adj: dict[int, list[tuple[int, int, int, str]]] = {}
            for c in self.comps_in[s]:
                i, j = self.pos[c.from_node], self.pos[c.to_node]
                adj.setdefault(i, []).append((j, self.comp_col[c.id], 1, c.id))
                adj.setdefault(j, []).append((i, self.comp_col[c.id], -1, c.id))
            stack = [root]
            while stack:
                a = stack.pop()
                for b, col, sign, cid in adj.get(a, ()):
                    want = coef[a].copy()
                    want[col] += sign
                    if coef[b] is None:
                        coef[b] = want
                        stack.append(b)
                    else:
                        self.loop_rows.append((cid, coef[b] - want))
        self.offset_map = np.array(coef).reshape(len(ids), len(self.comps))

        # compressor and slack flows inside each super-node solve a fixed
        # linear system; keep its pseudo-inverse
        slack_pos = {self.pos[s] for s in self.slack}
        self.local: list[tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray]] = []
        for s in range(self.n_super):
            mems = self.members[s]
            comps = self.comps_in[s]
            slacks = [k for k in mems if k in slack_pos]
            m_row = {k: r for r, k in enumerate(mems)}
            a = np.zeros((len(mems), len(comps) + len(slacks)))
            for col, c in enumerate(comps):
                a[m_row[self.pos[c.from_node]], col] += 1.0
                a[m_row[self.pos[c.to_node]], col] -= 1.0
            for col, k in enumerate(slacks):
                a[m_row[k], len(comps) + col] = -1.0
            pinv = np.linalg.pinv(a) if a.shape[1] else np.zeros((0, len(mems)))
            cols = np.array([self.comp_col[c.id] for c in comps], dtype=int)
            rows = np.array([self.supply_pos[self.node_ids[k]] for k in slacks], dtype=int)
            self.local.append((np.array(mems, dtype=int), cols, rows, a, pinv))

    def demands(self, scenario: Scenario) -> np.ndarray:
        hit = self.demand_cache.get(scenario.scenario_id)
        if hit is not None and hit[0] is scenario:
            return hit[1]
        arr = np.array([scenario.demand(v) for v in self.node_ids])
        self.demand_cache[scenario.scenario_id] = (scenario, arr)
        return arr


def _flows(delta: np.ndarray, w: np.ndarray) -> np.ndarray:
    return np.sign(delta) * np.sqrt(np.abs(delta) / w)


@dataclass
class _Solution:
    """Array form of a solved state; pressures are scaled by the reference."""

    scenario_id: str
    directions: dict[str, int]
    eta: np.ndarray  # per built compressor, raw units, zero when passing gas backwards
    slack: np.ndarray  # raw set-point per slack node
    off: np.ndarray
    pi: np.ndarray
    pipe_flow: np.ndarray
    comp_flow: np.ndarray
    supply: np.ndarray  # per entry of ``topo.supply_ids``
    fscale: float


def _solve(topo: _Topology, scenario: Scenario, controls: Controls, directions: Mapping[str, int]) -> _Solution | Infeasible:
    eta_vec = np.array(
        [controls.boost.get(c.id, 0.0) if directions.get(c.id, 1) == 1 else 0.0 for c in topo.comps]
    )
    off = topo.offset_map @ (eta_vec / topo.ref) if len(eta_vec) else np.zeros(len(topo.node_ids))
    inject = -topo.demands(scenario)
    for r in topo.free_receipts:
        k = topo.pos[r]
        if topo.component[topo.super_of[k]] in topo.pseudo:
            continue  # a floating receipt cannot deliver anywhere
        inject[k] += controls.supply.get(r, 0.0)
    fscale = max(1.0, float(np.max(np.abs(inject), initial=0.0)))

    potential = np.bincount(topo.super_of, weights=topo.mid - off, minlength=topo.n_super) / topo.counts
    for sup, k in topo.anchor_slack.items():
        potential[sup] = controls.slack_pressure[topo.node_ids[k]] / topo.ref - off[k]

    sup_inject = np.zeros(topo.n_super)
    np.add.at(sup_inject, topo.super_of, inject)
    ends = topo.pipe_ends
    sa, sb = topo.sa, topo.sb
    oa, ob = off[ends[:, 0]], off[ends[:, 1]]
    unk = topo.unknown
    w = topo.pipe_w
    inc = topo.incidence
    f_floor = FLOW_FLOOR * fscale

    def residuals(p: np.ndarray, f: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        law = w * f * np.abs(f) - ((p[sa] + oa) - (p[sb] + ob))
        net = np.zeros(topo.n_super)
        np.add.at(net, sa, f)
        np.add.at(net, sb, -f)
        return law, (net - sup_inject)[unk] / fscale

    def merit(law: np.ndarray, bal: np.ndarray) -> float:
        return float(np.dot(law, law) + np.dot(bal, bal))

    def newton(p: np.ndarray, f: np.ndarray) -> tuple[np.ndarray, np.ndarray, float]:
        # joint Newton on (potential, flow): balance rows are linear, so every
        # full step restores mass balance; the law rows stay smooth at f = 0
        law, bal = residuals(p, f)
        m = merit(law, bal)
        for _ in range(NEWTON_MAX_ITER):
            if max(float(np.max(np.abs(law), initial=0.0)), float(np.max(np.abs(bal), initial=0.0))) <= NEWTON_POLISH:
                break
            dinv = 1.0 / (2.0 * w * np.maximum(np.abs(f), f_floor))
            schur = (inc * dinv) @ inc.T
            rhs = inc @ (dinv * law) - bal * fscale
            try:
                dp = np.linalg.solve(schur, rhs) if len(unk) else np.zeros(0)
            except np.linalg.LinAlgError:
                dp = np.linalg.lstsq(schur, rhs, rcond=None)[0]
            df = dinv * (inc.T @ dp - law)
            t = 1.0
            improved = False
            for _ in range(40 if m > NEWTON_TOL**2 else 3):
                p_new = p.copy()
                p_new[unk] += t * dp
                f_new = f + t * df
                law_new, bal_new = residuals(p_new, f_new)
                m_new = merit(law_new, bal_new)
                if m_new <= (1 - 1e-4 * t) * m:
                    improved = True
                    break
                t *= 0.5
            if not improved:
                break
            p, f, law, bal, m = p_new, f_new, law_new, bal_new, m_new
        worst = max(float(np.max(np.abs(law), initial=0.0)), float(np.max(np.abs(bal), initial=0.0)))
        return p, f, worst

    warm = topo.warm.get(scenario.scenario_id)
    worst = math.inf
    if warm is not None:
        start = potential.copy()
        start[unk] = warm[0][unk]
        solved, pipe_flow, worst = newton(start, warm[1].copy())
    if worst > NEWTON_TOL:
        delta0 = (potential[sa] + oa) - (potential[sb] + ob)
        solved, pipe_flow, worst = newton(potential, _flows(delta0, w))
    if worst > NEWTON_TOL:
        return Infeasible(f"Newton iteration stalled at residual {worst:.3g}", "nonconvergence")
    potential = solved
    topo.warm[scenario.scenario_id] = (potential.copy(), pipe_flow.copy())

    # shift floating components into their pressure windows
    for comp, anchor in topo.pseudo.items():
        sups = [s for s in range(topo.n_super) if topo.component[s] == comp]
        ks = [k for s in sups for k in topo.members[s]]
        rel = np.array([potential[topo.super_of[k]] + off[k] for k in ks])
        lo = float(np.max(topo.lo[ks] - rel))
        hi = float(np.min(topo.hi[ks] - rel))
        potential[sups] += (lo + hi) / 2

    pi = potential[topo.super_of] + off

    supply = np.zeros(len(topo.supply_ids))
    for r in topo.free_receipts:
        if topo.component[topo.super_of[topo.pos[r]]] not in topo.pseudo:
            supply[topo.supply_pos[r]] = controls.supply.get(r, 0.0)
    comp_flow = np.zeros(len(topo.comps))
    need = inject - topo.node_pipe @ pipe_flow  # what compressors and slack supply must carry away
    for s, (mems, cols, slacks, a, pinv) in enumerate(topo.local):
        b = need[mems]
        if a.shape[1]:
            x = pinv @ b
            resid = float(np.max(np.abs(a @ x - b)))
        else:
            x = np.zeros(0)
            resid = float(np.max(np.abs(b)))
        if resid > 1e-6 * fscale:
            if topo.component[s] in topo.pseudo:
                return Infeasible(f"demand at {topo.node_ids[mems[0]]!r} is not connected to a slack node", "topology")
            return Infeasible(f"mass balance residual {resid:.3g} at {topo.node_ids[mems[0]]!r}", "nonconvergence")
        comp_flow[cols] = x[: len(cols)]
        supply[slacks] = x[len(cols):]

    slack = np.array([controls.slack_pressure.get(s, math.nan) for s in topo.slack])
    return _Solution(scenario.scenario_id, dict(directions), eta_vec, slack, off, pi, pipe_flow, comp_flow, supply, fscale)


def _state_of(network: Network, topo: _Topology, sol: _Solution) -> NetworkState:
    flow: dict[str, float] = {}
    dirs: dict[str, int] = {}
    for e, p in enumerate(topo.pipes):
        flow[p.id] = float(sol.pipe_flow[e])
        dirs[p.id] = 1 if sol.pipe_flow[e] >= 0 else 0
    for k, c in enumerate(topo.comps):
        flow[c.id] = float(sol.comp_flow[k])
        dirs[c.id] = int(sol.directions.get(c.id, 1))
    return NetworkState(
        sol.scenario_id,
        {v: float(sol.pi[k] * topo.ref) for k, v in enumerate(topo.node_ids)},
        {e.id: flow.get(e.id, 0.0) for e in network.edges},
        {r: float(sol.supply[k]) for k, r in enumerate(topo.supply_ids)},
        {c.id: float(sol.eta[k]) for k, c in enumerate(topo.comps)},
        {e.id: dirs[e.id] for e in network.edges if e.id in dirs},
    )


def flow_state(
    network: Network,
    plan: ExpansionPlan | Iterable[str] | None,
    scenario: Scenario,
    controls: Controls,
    directions: Mapping[str, int] | None = None,
    topology: _Topology | None = None,
) -> NetworkState | Infeasible:
    """Unique physical state for the given controls; no bound checks."""
    topo = topology or _Topology(network, built_edges(network, plan))
    sol = _solve(topo, scenario, controls, directions or {})
    return sol if isinstance(sol, Infeasible) else _state_of(network, topo, sol)


def _sensitivity(topo: _Topology, sol: _Solution, params: Sequence[tuple[str, str]]) -> tuple[np.ndarray, ...]:
    """Derivatives of the solved state with respect to raw control values.

    Differentiates the converged pipe-law and balance equations implicitly;
    floating components follow their re-centring shift.
    """
    n_par = len(params)
    n_nodes, n_pipes = len(topo.node_ids), len(topo.pipes)
    d_off = np.zeros((n_nodes, n_par))
    d_fixed = np.zeros((topo.n_super, n_par))
    d_inject = np.zeros((n_nodes, n_par))
    d_eta = np.zeros((len(topo.comps), n_par))
    d_slack = np.zeros((len(topo.slack), n_par))
    anchors = {topo.node_ids[k]: sup for sup, k in topo.anchor_slack.items()}
    for col, (kind, owner) in enumerate(params):
        if kind == "supply":
            if topo.component[topo.super_of[topo.pos[owner]]] not in topo.pseudo:
                d_inject[topo.pos[owner], col] = 1.0
        elif kind == "slack":
            d_slack[topo.slack.index(owner), col] = 1.0
            if owner in anchors:
                d_fixed[anchors[owner], col] = 1.0 / topo.ref
        elif sol.directions.get(owner, 1) == 1:
            k = topo.comp_col[owner]
            d_eta[k, col] = 1.0
            d_off[:, col] = topo.offset_map[:, k] / topo.ref
    for sup, k in topo.anchor_slack.items():
        d_fixed[sup] -= d_off[k]
    for sup in topo.pseudo.values():
        d_fixed[sup] = -d_off[topo.members[sup]].mean(axis=0)
    ends = topo.pipe_ends
    d_law = -((d_fixed[topo.sa] + d_off[ends[:, 0]]) - (d_fixed[topo.sb] + d_off[ends[:, 1]]))
    d_sup = np.zeros((topo.n_super, n_par))
    np.add.at(d_sup, topo.super_of, d_inject)
    d_bal = -d_sup[topo.unknown] / sol.fscale
    n_unk = len(topo.unknown)
    jac = np.zeros((n_pipes + n_unk, n_pipes + n_unk))
    jac[:n_pipes, :n_pipes] = np.diag(2.0 * topo.pipe_w * np.maximum(np.abs(sol.pipe_flow), FLOW_FLOOR * sol.fscale))
    jac[:n_pipes, n_pipes:] = -topo.incidence.T
    jac[n_pipes:, :n_pipes] = topo.incidence / sol.fscale
    rhs = -np.vstack((d_law, d_bal))
    try:
        step = np.linalg.solve(jac, rhs)
    except np.linalg.LinAlgError:
        step = np.linalg.lstsq(jac, rhs, rcond=None)[0]
    d_flow = step[:n_pipes]
    d_pot = d_fixed
    d_pot[topo.unknown] = step[n_pipes:]
    for comp in topo.pseudo:
        sups = [s for s in range(topo.n_super) if topo.component[s] == comp]
        ks = [k for s in sups for k in topo.members[s]]
        rel = sol.pi[ks]
        d_rel = d_pot[[topo.super_of[k] for k in ks]] + d_off[ks]
        lo, hi = int(np.argmax(topo.lo[ks] - rel)), int(np.argmin(topo.hi[ks] - rel))
        d_pot[sups] += -(d_rel[lo] + d_rel[hi]) / 2
    d_pi = d_pot[topo.super_of] + d_off
    d_need = d_inject - topo.node_pipe @ d_flow
    d_comp = np.zeros((len(topo.comps), n_par))
    d_supply = np.zeros((len(topo.supply_ids), n_par))
    for r in topo.free_receipts:
        d_supply[topo.supply_pos[r]] = d_inject[topo.pos[r]]
    for mems, cols, slacks, a, pinv in topo.local:
        if a.shape[1]:
            x = pinv @ d_need[mems]
            d_comp[cols] = x[: len(cols)]
            d_supply[slacks] = x[len(cols):]
    return d_pi, d_flow, d_comp, d_supply, d_eta, d_slack


# --------------------------------------------------------------------------
# bound checks


def _forward_excess(network: Network, c: Compressor, state: NetworkState, ref: float) -> float:
    f = state.flow[c.id]
    pi_i, pi_j = state.pi[c.from_node], state.pi[c.to_node]
    return max(-f / c.flow_max, (c.ratio_sq_min * pi_i - pi_j) / ref, (pi_j - c.ratio_sq_max * pi_i) / ref)


def _reverse_excess(c: Compressor, state: NetworkState, ref: float) -> float:
    return max(state.flow[c.id] / c.flow_max, abs(state.boost.get(c.id, 0.0)) / ref)


class _Terms:
    """Every limit of one scenario as a vector of signed scaled excesses (positive = violated).

    ``directions=None`` lets each compressor either compress forward or pass
    gas backwards unboosted; its term is the smaller of the two excesses.
    With ``controls`` the loop and slack consistency of the set-points is
    checked first.
    """

    def __init__(self, topo: _Topology, directions: Mapping[str, int] | None, controls: bool = False) -> None:
        net = topo.network
        self.topo = topo
        self.controls = controls
        labels: list[tuple[str, str]] = []
        self.loop_mat = np.array([row for _, row in topo.loop_rows]).reshape(len(topo.loop_rows), len(topo.comps))
        pairs = []
        if controls:
            labels += [("compressor_loop", cid) for cid, _ in topo.loop_rows]
            for sup, anchor in topo.anchor_slack.items():
                for k in topo.members[sup]:
                    name = topo.node_ids[k]
                    if k != anchor and name in topo.slack:
                        pairs.append((topo.slack.index(topo.node_ids[anchor]), anchor, topo.slack.index(name), k))
                        labels.append(("slack_mismatch", name))
        self.pairs = np.array(pairs, dtype=int).reshape(-1, 4)
        for n in topo.node_ids:
            labels += [("pressure_min", n), ("pressure_max", n)]
        edges = [*topo.pipes, *topo.comps]
        labels += [("flow_max", e.id) for e in edges]
        self.edge_cap = np.array([e.flow_max for e in edges])
        comps = topo.comps
        self.ci = np.array([topo.pos[c.from_node] for c in comps], dtype=int)
        self.cj = np.array([topo.pos[c.to_node] for c in comps], dtype=int)
        self.ccap = np.array([c.flow_max for c in comps])
        self.rmin = np.array([c.ratio_sq_min for c in comps])
        self.rmax = np.array([c.ratio_sq_max for c in comps])
        bounds = [boost_bounds(net, c) for c in comps]
        self.blo = np.array([b[0] for b in bounds])
        self.bhi = np.array([b[1] for b in bounds])
        self.free = directions is None
        pick: list[int] = []  # flat index into the per-compressor table below
        for k, c in enumerate(comps):
            if self.free:
                pick += [6 * k + 5, 6 * k + 3]
                labels += [("compressor_mode", c.id), ("boost_bounds", c.id)]
            elif directions.get(c.id, 1) == 1:
                pick += [6 * k, 6 * k + 1, 6 * k + 2, 6 * k + 3]
                labels += [("compressor_direction", c.id), ("ratio_min", c.id), ("ratio_max", c.id), ("boost_bounds", c.id)]
            else:
                pick.append(6 * k + 4)
                labels.append(("compressor_direction", c.id))
        self.pick = np.array(pick, dtype=int)
        rpick, rsign, rbound, rscale = [], [], [], []
        for r in net.receipt_nodes:
            n = net.node(r)
            scale = max(1.0, n.supply_min, n.supply_max if math.isfinite(n.supply_max) else 0.0)
            idx = topo.supply_pos.get(r, -1)
            rpick.append(idx), rsign.append(-1.0), rbound.append(n.supply_min), rscale.append(scale)
            labels.append(("supply_min", r))
            if math.isfinite(n.supply_max):
                rpick.append(idx), rsign.append(1.0), rbound.append(n.supply_max), rscale.append(scale)
                labels.append(("supply_max", r))
        self.rpick = np.array(rpick, dtype=int)
        self.rsign = np.array(rsign)
        self.rbound = np.array(rbound)
        self.rscale = np.array(rscale)
        self.labels = labels

    def values(self, pi, pipe_flow, comp_flow, supply, eta, slack) -> np.ndarray:
        topo = self.topo
        parts = []
        if self.controls:
            e = eta / topo.ref
            parts.append(np.abs(self.loop_mat @ e) - 1e-12)
            if len(self.pairs):
                off = topo.offset_map @ e
                sa, ka, sk, k = self.pairs.T
                parts.append(np.abs(slack[sk] / topo.ref - off[k] - (slack[sa] / topo.ref - off[ka])) - 1e-12)
        parts.append(np.column_stack((topo.lo - pi, pi - topo.hi)).ravel())
        flows = np.concatenate((pipe_flow, comp_flow))
        parts.append((np.abs(flows) - self.edge_cap) / self.edge_cap)
        if len(self.pick):
            fi = comp_flow / self.ccap
            pii, pij = pi[self.ci], pi[self.cj]
            r_lo = self.rmin * pii - pij
            r_hi = pij - self.rmax * pii
            bb = np.maximum(self.blo - eta, eta - self.bhi) / topo.ref
            fwd = np.maximum(np.maximum(-fi, r_lo), r_hi)
            rev = np.maximum(fi, np.abs(eta) / topo.ref)
            table = np.column_stack((-fi, r_lo, r_hi, bb, fi, np.minimum(fwd, rev)))
            parts.append(table.ravel()[self.pick])
        s = np.where(self.rpick >= 0, supply[np.maximum(self.rpick, 0)] if len(supply) else 0.0, 0.0)
        parts.append(self.rsign * (s - self.rbound) / self.rscale)
        return np.concatenate(parts)

    def of(self, sol: _Solution) -> np.ndarray:
        return self.values(sol.pi, sol.pipe_flow, sol.comp_flow, sol.supply, sol.eta, sol.slack)

    def moved(self, sol: _Solution, sens: tuple[np.ndarray, ...], col: int, step: float) -> np.ndarray:
        d_pi, d_flow, d_comp, d_supply, d_eta, d_slack = (d[:, col] * step for d in sens)
        return self.values(
            sol.pi + d_pi, sol.pipe_flow + d_flow, sol.comp_flow + d_comp,
            sol.supply + d_supply, sol.eta + d_eta, sol.slack + d_slack,
        )

    def violations(self, amounts: np.ndarray) -> list[Violation]:
        return [Violation(kind, owner, float(a)) for (kind, owner), a in zip(self.labels, amounts)]


def check_terms(
    network: Network,
    state: NetworkState,
    directions: Mapping[str, int] | None,
    topo: _Topology,
) -> list[Violation]:
    """Every limit as a signed scaled excess, in a fixed order (positive = violated).

    With ``directions=None`` each compressor may either compress forward or
    pass gas backwards unboosted; its term is the smaller of the two excesses.
    """
    terms = _Terms(topo, directions)
    amounts = terms.values(
        np.array([state.pi[n] for n in topo.node_ids]) / topo.ref,
        np.array([state.flow[p.id] for p in topo.pipes]),
        np.array([state.flow[c.id] for c in topo.comps]),
        np.array([state.supply.get(r, 0.0) for r in topo.supply_ids]),
        np.array([state.boost.get(c.id, 0.0) for c in topo.comps]),
        np.zeros(len(topo.slack)),
    )
    return terms.violations(amounts)


def check_state(
    network: Network,
    plan: ExpansionPlan | Iterable[str] | None,
    state: NetworkState,
    directions: Mapping[str, int] | None = None,
    topology: _Topology | None = None,
) -> list[Violation]:
    """Violated pressure, flow, compressor and supply limits (positive amounts only)."""
    topo = topology or _Topology(network, built_edges(network, plan))
    return [v for v in check_terms(network, state, directions if directions is not None else {}, topo) if v.amount > 0]


def state_residuals(network: Network, plan, scenario: Scenario, state: NetworkState) -> tuple[float, float]:
    """(worst balance residual / max(1,|d|), worst pipe-law residual / max(1, pi_max_i))."""
    built = built_edges(network, plan)
    bal = 0.0
    for n in network.nodes:
        out = sum(state.flow[e.id] for e in network.edges_from(n.id) if e.id in built)
        inn = sum(state.flow[e.id] for e in network.edges_to(n.id) if e.id in built)
        r = out - inn - state.supply.get(n.id, 0.0) + scenario.demand(n.id)
        bal = max(bal, abs(r) / max(1.0, abs(scenario.demand(n.id))))
    law = 0.0
    for p in network.pipes:
        if p.id not in built:
            continue
        f = state.flow[p.id]
        r = state.pi[p.from_node] - state.pi[p.to_node] - network.resistances[p.id] * f * abs(f)
        law = max(law, abs(r) / max(1.0, network.node(p.from_node).pressure_sq_max))
    return bal, law


# --------------------------------------------------------------------------
# control search


def neutral_controls(network: Network, plan, scenario: Scenario, directions: Mapping[str, int] | None = None) -> Controls:
    """Deterministic starting set-points that depend only on the data."""
    directions = directions or {}
    built = built_edges(network, plan)
    ctl = Controls()
    for s in network.slack_nodes:
        ctl.slack_pressure[s] = network.node(s).pressure_sq_max
    total = sum(scenario.demand(n.id) for n in network.nodes)
    share = total / max(1, len(network.receipt_nodes))
    for r in network.receipt_nodes:
        if r in network.slack_nodes:
            continue
        n = network.node(r)
        ctl.supply[r] = min(max(share, n.supply_min), n.supply_max)
    for c in network.compressors:
        if c.id not in built or directions.get(c.id, 1) != 1:
            continue
        ni, nj = network.node(c.from_node), network.node(c.to_node)
        lo, hi = boost_bounds(network, c)
        mid = ni.pressure_sq_mid
        target = 0.5 * (max(c.ratio_sq_min * mid, mid) + min(c.ratio_sq_max * mid, nj.pressure_sq_max)) - mid
        ctl.boost[c.id] = min(max(target, lo, (c.ratio_sq_min - 1) * mid), hi)
    return ctl


@dataclass
class _Slot:
    kind: str  # slack | supply | boost
    owner: str
    block: int | None
    lo: float
    hi: float
    scale: float


class _Found(Exception):
    def __init__(self, states: list[NetworkState]) -> None:
        self.states = states


class _Stalled(Exception):
    pass


def search_states(
    network: Network,
    plan: ExpansionPlan | Iterable[str] | None,
    scenarios: Sequence[Scenario],
    directions: Sequence[Mapping[str, int]] | None = None,
    starts: Sequence[Sequence[Controls]] = (),
    slack_pressures: Mapping[str, float] | None = None,
    fixed: Sequence[Controls | None] | None = None,
    tol: float = VERIFY_TOL,
    max_evals: int = 400,
) -> list[NetworkState] | Infeasible:
    """Find controls making every scenario's state respect all limits.

    All scenarios share the slack pressures (pinned when ``slack_pressures``
    is given).  Each entry of ``starts`` is one control per scenario; a
    data-only neutral start is always tried last.  Controls given in ``fixed``
    are held, the rest are searched by bounded least squares on the
    violation vector.  Without ``directions`` every compressor chooses
    between forward compression and unboosted reverse flow; the returned
    states record the choice.
    """
    topo = _Topology(network, built_edges(network, plan))
    m = len(scenarios)
    free = directions is None
    directions = list(directions) if directions is not None else [{} for _ in scenarios]
    fixed = list(fixed) if fixed is not None else [None] * m
    ref = topo.ref

    shared = any(slack_pressures is None or s not in slack_pressures for s in network.slack_nodes)
    if m > 1 and not shared:
        # with the slack pinned the scenarios share nothing: search them one at a time
        out: list[NetworkState] = []
        for b, sc in enumerate(scenarios):
            part = search_states(
                network, plan, [sc], None if free else [directions[b]],
                [[st[b]] for st in starts], slack_pressures, [fixed[b]], tol, max_evals,
            )
            if isinstance(part, Infeasible):
                return Infeasible(f"{sc.scenario_id}: {part.reason}", part.kind)
            out += part
        return out

    slots: list[_Slot] = []
    for s in network.slack_nodes:
        n = network.node(s)
        if slack_pressures is None or s not in slack_pressures:
            slots.append(_Slot("slack", s, None, n.pressure_sq_min, n.pressure_sq_max, ref))
    total = max(1.0, max((sum(sc.demands.values()) for sc in scenarios), default=1.0))
    for b, sc in enumerate(scenarios):
        hold = fixed[b]
        for r in topo.free_receipts:
            n = network.node(r)
            if hold is not None and r in hold.supply:
                continue
            slots.append(_Slot("supply", r, b, n.supply_min, n.supply_max, total))
        for c in topo.comps:
            if (not free and directions[b].get(c.id, 1) != 1) or (hold is not None and c.id in hold.boost):
                continue
            lo, hi = boost_bounds(network, c)
            slots.append(_Slot("boost", c.id, b, lo, hi, ref))
    open_slots = [k for k, sl in enumerate(slots) if sl.hi - sl.lo > 1e-12 * sl.scale]

    def assemble(u: np.ndarray, base: Sequence[Controls]) -> list[Controls]:
        ctl = [c.copy() for c in base]
        for k, sl in enumerate(slots):
            v = float(u[k]) * sl.scale
            if sl.kind == "slack":
                for c in ctl:
                    c.slack_pressure[sl.owner] = v
            elif sl.kind == "supply":
                ctl[sl.block].supply[sl.owner] = v
            else:
                ctl[sl.block].boost[sl.owner] = v
        for c in ctl:
            if slack_pressures is not None:
                c.slack_pressure.update(slack_pressures)
        for b, hold in enumerate(fixed):
            if hold is not None:
                ctl[b].supply.update(hold.supply)
                ctl[b].boost.update(hold.boost)
        return ctl

    terms = [_Terms(topo, None if free else directions[b], controls=True) for b in range(m)]
    labels = [lab for t in terms for lab in t.labels]
    width = len(labels)
    spans = np.cumsum([0] + [len(t.labels) for t in terms])

    def evaluate(ctl: Sequence[Controls]) -> tuple[list[_Solution] | Infeasible, np.ndarray]:
        sols = []
        parts = []
        for b, sc in enumerate(scenarios):
            sol = _solve(topo, sc, ctl[b], directions[b])
            if isinstance(sol, Infeasible):
                return sol, np.zeros(0)
            sols.append(sol)
            parts.append(terms[b].of(sol))
        return sols, np.concatenate(parts) if parts else np.zeros(0)

    def settle(ctl: Sequence[Controls], sols: list[_Solution]) -> list[NetworkState] | None:
        """Fix each free compressor to its better mode and re-check strictly."""
        states = [_state_of(network, topo, s) for s in sols]
        if not free:
            return states
        out = []
        for b, (sc, st) in enumerate(zip(scenarios, states)):
            dirs = {c.id: int(_forward_excess(network, c, st, ref) <= _reverse_excess(c, st, ref)) for c in topo.comps}
            fixed_sol = _solve(topo, sc, ctl[b], dirs)
            if isinstance(fixed_sol, Infeasible):
                return None
            if max(_Terms(topo, dirs, controls=True).of(fixed_sol), default=0.0) > tol:
                return None
            out.append(_state_of(network, topo, fixed_sol))
        return out

    def vector(base: Sequence[Controls]) -> np.ndarray:
        u = np.zeros(len(slots))
        for k, sl in enumerate(slots):
            if sl.kind == "slack":
                vals = [c.slack_pressure.get(sl.owner, network.node(sl.owner).pressure_sq_max) for c in base]
                v = float(np.mean(vals))
            elif sl.kind == "supply":
                v = base[sl.block].supply.get(sl.owner, sl.lo)
            else:
                v = base[sl.block].boost.get(sl.owner, 0.0)
            u[k] = min(max(v, sl.lo), sl.hi) / sl.scale
        return u

    neutral = [neutral_controls(network, plan, sc, d) for sc, d in zip(scenarios, directions)]
    candidates = [list(s) for s in starts] + [neutral]
    best: tuple[float, str] = (math.inf, "no start evaluated")
    margin = 0.1 * tol
    step = 1e-7  # in scaled control units

    for base in candidates:
        u0 = vector(base)
        ctl0 = assemble(u0, base)
        result, amounts = evaluate(ctl0)
        worst = float(np.max(amounts, initial=0.0))
        if not isinstance(result, Infeasible) and worst <= tol:
            settled = settle(ctl0, result)
            if settled is not None:
                return settled
        if not isinstance(result, Infeasible) and worst < best[0]:
            top = int(np.argmax(amounts))
            kind, owner = labels[top]
            best = (worst, f"{kind} at {owner!r} by {amounts[top]:.3g}")
        if not open_slots:
            if isinstance(result, Infeasible) and best[0] == math.inf:
                best = (math.inf, result.reason)
            continue

        lo = np.array([slots[k].lo / slots[k].scale for k in open_slots])
        hi = np.array([slots[k].hi / slots[k].scale for k in open_slots])

        def controls_at(x: np.ndarray) -> tuple[np.ndarray, list[Controls]]:
            u = u0.copy()
            u[open_slots] = x
            return u, assemble(u, base)

        track = {"evals": 0, "best": math.inf, "since": 0}

        def fun(x: np.ndarray) -> np.ndarray:
            _, ctl = controls_at(x)
            res, am = evaluate(ctl)
            track["evals"] += 1
            if isinstance(res, Infeasible):
                out = np.full(width + 1, 10.0)
            else:
                if float(np.max(am, initial=0.0)) <= tol:
                    settled = settle(ctl, res)
                    if settled is not None:
                        raise _Found(settled)
                out = np.zeros(width + 1)
                out[:width] = np.maximum(0.0, am + margin)
            merit = float(out @ out)
            if merit < (1.0 - SEARCH_STALL_GAIN) * track["best"]:
                track["best"], track["since"] = merit, track["evals"]
            elif track["evals"] - track["since"] >= SEARCH_STALL:
                raise _Stalled
            return out

        def jac(x: np.ndarray) -> np.ndarray:
            # block b's rows depend only on its own controls and the shared slack
            _, ctl = controls_at(x)
            out = np.zeros((width + 1, len(open_slots)))
            for b, sc in enumerate(scenarios):
                sol = _solve(topo, sc, ctl[b], directions[b])
                if isinstance(sol, Infeasible):
                    continue
                rows = slice(spans[b], spans[b + 1])
                here = terms[b].of(sol)
                active = here + margin > 0
                cols = [i for i, k in enumerate(open_slots) if slots[k].block in (None, b)]
                sens = _sensitivity(topo, sol, [(slots[open_slots[i]].kind, slots[open_slots[i]].owner) for i in cols])
                for j, i in enumerate(cols):
                    h = step if x[i] + step <= hi[i] else -step
                    moved = terms[b].moved(sol, sens, j, h * slots[open_slots[i]].scale)
                    out[rows, i] = np.where(active, (moved - here) / h, 0.0)
            return out

        x0 = np.clip(u0[open_slots], lo, hi)
        try:
            least_squares(fun, x0, jac=jac, bounds=(lo, hi), method="trf", max_nfev=max_evals,
                          xtol=1e-12, ftol=SEARCH_FTOL, gtol=1e-12)
        except _Found as found:
            return found.states
        except _Stalled:
            pass
    return Infeasible(f"no admissible controls found; closest miss: {best[1]}", "bounds")


# --------------------------------------------------------------------------
# public operations


def steady_state_solve(
    network: Network,
    plan: ExpansionPlan | Iterable[str] | None,
    scenario: Scenario,
    directions: Mapping[str, int] | None = None,
    boosts: Mapping[str, float] | None = None,
    policy: str = "monotone",
    slack_pressures: Mapping[str, float] | None = None,
    supplies: Mapping[str, float] | None = None,
    start: Controls | None = None,
    tol: float = VERIFY_TOL,
) -> NetworkState | Infeasible:
    """Physical state on the built subgraph that respects every limit.

    Given boosts and supplies are held; anything omitted is searched within
    its bounds.  Under either policy a forward compressor realises
    ``pi_j = pi_i + eta`` with ``eta >= 0``; the two policies only differ in
    the relaxation, not in the physics.
    """
    if policy not in ("monotone", "general"):
        raise ValueError(f"unknown policy {policy!r}")
    hold = Controls(boost=dict(boosts or {}), supply=dict(supplies or {}))
    out = search_states(
        network,
        plan,
        [scenario],
        [dict(directions or {})],
        [[start]] if start is not None else (),
        slack_pressures,
        [hold],
        tol,
    )
    return out if isinstance(out, Infeasible) else out[0]


def controls_of(state: NetworkState, network: Network) -> Controls:
    return Controls(
        {s: state.pi[s] for s in network.slack_nodes},
        {r: state.supply.get(r, 0.0) for r in network.receipt_nodes if r not in network.slack_nodes},
        dict(state.boost),
    )


def feasibility(
    network: Network,
    plan: ExpansionPlan | Iterable[str] | None,
    scenario: Scenario | Sequence[Scenario],
    policy: str = "monotone",
    slack_pressures: Mapping[str, float] | None = None,
    hints: Sequence[NetworkState] = (),
    options=None,
) -> bool:
    """True iff some direction assignment and state satisfy every limit.

    Scenarios of one profile must share slack pressures.  States in
    ``hints`` seed a direct search first; the decisive check fixes the plan
    in the conic model and runs branch-and-cut over directions.
    """
    from .formulation import build_robust_model, fix_plan, fix_pressures
    from .solver import SolverOptions, solve

    scenarios = [scenario] if isinstance(scenario, Scenario) else list(scenario)
    if not isinstance(plan, ExpansionPlan):
        plan = ExpansionPlan.from_ids(network, plan or ())
    if hints:
        starts = [[controls_of(h, network) for _ in scenarios] for h in hints]
        found = search_states(network, plan, scenarios, None, starts, slack_pressures)
        if not isinstance(found, Infeasible):
            return True
    system = fix_plan(build_robust_model(network, scenarios, policy, use_extremal=False), plan)
    if slack_pressures:
        system = fix_pressures(system, slack_pressures)
    return solve(system, options or SolverOptions()).status == "optimal"


@dataclass(frozen=True)
class MonotonicityReport:
    pressure_order: Mapping[str, bool]
    ratio_order: Mapping[str, bool]
    worst_pressure_gap: float  # max over nodes of (pi_high - pi_low) / reference pressure
    low: NetworkState | None
    high: NetworkState | None

    @property
    def holds(self) -> bool:
        return all(self.pressure_order.values()) and all(self.ratio_order.values())


def monotonicity_check(
    network: Network,
    plan: ExpansionPlan | Iterable[str] | None,
    policy: str,
    scenario_low: Scenario,
    scenario_high: Scenario,
    controls: Controls | None = None,
    tol: float = 1e-9,
) -> MonotonicityReport:
    """Compare pressures and compression ratios of a nested demand pair.

    Both states share slack pressures, non-slack supplies and boosts (the
    non-decreasing policy ``pi_j = pi_i + eta``).  Without explicit controls
    they are taken from an admissible state of the high scenario when one
    exists, else from the neutral start.
    """
    for n in network.nodes:
        if scenario_low.demand(n.id) > scenario_high.demand(n.id):
            raise ValueError(f"scenarios are not nested at {n.id!r}")
    if controls is None:
        st = steady_state_solve(network, plan, scenario_high, policy=policy)
        controls = controls_of(st, network) if not isinstance(st, Infeasible) else neutral_controls(network, plan, scenario_high)
    topo = _Topology(network, built_edges(network, plan))
    low = flow_state(network, None, scenario_low, controls, None, topo)
    high = flow_state(network, None, scenario_high, controls, None, topo)
    for st in (low, high):
        if isinstance(st, Infeasible):
            raise RuntimeError(f"monotonicity check could not solve a state: {st.reason}")
    ref = network.pressure_sq_ref
    order = {n: low.pi[n] >= high.pi[n] - tol * ref for n in low.pi}
    gap = max((high.pi[n] - low.pi[n]) / ref for n in low.pi)
    ratios = {}
    for c in topo.comps:
        eta = low.boost[c.id]
        a_low = math.sqrt((low.pi[c.from_node] + eta) / low.pi[c.from_node])
        a_high = math.sqrt((high.pi[c.from_node] + eta) / high.pi[c.from_node])
        ratios[c.id] = a_low <= a_high * (1 + tol)
    return MonotonicityReport(order, ratios, gap, low, high)
