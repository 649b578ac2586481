"""Small instance builders shared by the tests."""

from __future__ import annotations

import json
import math

import numpy as np

from gasexpand.network import load_instance

SOUND = 350.0
BAR2 = 1e10  # (1 bar)^2 in Pa^2


def node(nid, lo=1.0, hi=200.0, roles=(), demand=0.0, supply_max=None):
    rec = {"id": nid, "pressure_sq_min": lo, "pressure_sq_max": hi, "roles": list(roles), "nominal_demand": demand}
    if "receipt" in roles:
        rec["supply_min"] = 0.0
        rec["supply_max"] = supply_max
    return rec


def pipe(pid, a, b, length=1000.0, diameter=0.5, friction=0.0025, flow_max=100.0, status="existing", cost=None):
    rec = {
        "id": pid, "from_node": a, "to_node": b, "length": length, "diameter": diameter,
        "friction_factor": friction, "flow_max": flow_max, "status": status,
    }
    if cost is not None:
        rec["build_cost"] = cost
    return rec


def compressor(cid, a, b, ratio=(1.0, 2.0), flow_max=100.0, status="existing", cost=None):
    rec = {
        "id": cid, "from_node": a, "to_node": b, "ratio_sq_min": ratio[0], "ratio_sq_max": ratio[1],
        "flow_max": flow_max, "status": status,
    }
    if cost is not None:
        rec["build_cost"] = cost
    return rec


def document(nodes, pipes=(), compressors=(), slack=("n1",), name="test"):
    return {
        "meta": {"name": name},
        "sound_speed": SOUND,
        "slack_nodes": list(slack),
        "nodes": list(nodes),
        "pipes": list(pipes),
        "compressors": list(compressors),
    }


def network(doc):
    return load_instance(json.dumps(doc))


def unit_resistance_length(diameter=0.5, friction=0.0025, w=1.0):
    """Pipe length giving resistance ``w`` for the given geometry."""
    return w * math.pi**2 * diameter**5 / (4 * friction * SOUND**2)


def two_node(demand=5.0, w=1.0, slack_hi=100.0, lo=1.0, flow_max=100.0, candidates=()):
    length = unit_resistance_length(w=w)
    doc = document(
        [node("n1", lo, slack_hi, ("receipt",)), node("n2", lo, slack_hi, ("delivery",), demand)],
        [pipe("p1", "n1", "n2", length=length, flow_max=flow_max), *candidates],
    )
    return network(doc)


def random_instance(rng: np.random.Generator, max_nodes: int = 12, max_candidates: int = 4) -> dict:
    """A random connected instance in realistic units.

    A spanning tree of existing pipes from the slack node plus an optional
    chord, an optional existing compressor, and up to ``max_candidates``
    candidate pipes or compressors with random costs.  Demands are scaled so
    that the smallest plans are usually infeasible.
    """
    n = int(rng.integers(3, max_nodes + 1))
    ids = [f"n{k + 1}" for k in range(n)]
    lo, hi = 30.0**2 * BAR2, 70.0**2 * BAR2
    pipes, compressors = [], []
    parents = {}
    for k in range(1, n):
        parents[k] = int(rng.integers(0, k))
    comp_at = int(rng.integers(1, n)) if rng.random() < 0.4 else None
    for k, p in parents.items():
        if k == comp_at:
            compressors.append(compressor(f"c{k}", ids[p], ids[k], (1.0, 1.5), 300.0))
        else:
            length = float(rng.uniform(10e3, 60e3))
            pipes.append(pipe(f"p{k}", ids[p], ids[k], length, float(rng.uniform(0.4, 0.7)), 0.012, 300.0))
    if n >= 4 and rng.random() < 0.5:
        a, b = sorted(rng.choice(n, 2, replace=False).tolist())
        pipes.append(pipe("pchord", ids[a], ids[b], float(rng.uniform(20e3, 60e3)), 0.5, 0.012, 300.0))
    demands = {}
    leaves = [k for k in range(1, n) if k not in parents.values()]
    for k in range(1, n):
        if k in leaves or rng.random() < 0.3:
            demands[k] = float(rng.uniform(20.0, 60.0))
    n_cand = int(rng.integers(1, max_candidates + 1))
    for c in range(n_cand):
        cost = float(rng.integers(1, 50)) * 1000.0
        if rng.random() < 0.25:
            k = int(rng.integers(1, n))
            compressors.append(compressor(f"cc{c}", ids[parents[k]], ids[k], (1.0, 1.5), 300.0, "candidate", cost))
        else:
            k = int(rng.integers(1, n))
            other = parents[k] if rng.random() < 0.6 else int(rng.integers(0, n))
            if other == k:
                other = parents[k]
            pipes.append(pipe(f"pc{c}", ids[other], ids[k], float(rng.uniform(10e3, 60e3)),
                              float(rng.uniform(0.4, 0.7)), 0.012, 300.0, "candidate", cost))
    scale = float(rng.uniform(0.8, 3.0))
    nodes = []
    for k, nid in enumerate(ids):
        if k == 0:
            nodes.append(node(nid, lo, hi, ("receipt",)))
        elif k in demands:
            nodes.append(node(nid, lo, hi, ("delivery",), round(demands[k] * scale, 3)))
        else:
            nodes.append(node(nid, lo, hi))
    return document(nodes, pipes, compressors, name="random")


def row_range(rows, target, bounds):
    """(min, max) of ``target`` over ``rows`` with column bounds ``bounds`` (var -> (lo, hi)).

    Solved by the independent tableau oracle; returns None when infeasible.
    """
    import _tableau

    cols = sorted({v for r in rows for v in r.coefficients} | {target}, key=str)
    k = {v: i for i, v in enumerate(cols)}
    a = np.zeros((len(rows), len(cols)))
    lo_r, hi_r = [], []
    for i, r in enumerate(rows):
        for v, c in r.coefficients.items():
            a[i, k[v]] = c
        lo_r.append(r.rhs if r.sense in (">=", "=") else -math.inf)
        hi_r.append(r.rhs if r.sense in ("<=", "=") else math.inf)
    col_lo = [bounds[v][0] for v in cols]
    col_hi = [bounds[v][1] for v in cols]
    out = []
    for sign in (1.0, -1.0):
        c = np.zeros(len(cols))
        c[k[target]] = sign
        status, obj = _tableau.solve(c, a, lo_r, hi_r, col_lo, col_hi)
        if status != "optimal":
            return None
        out.append(sign * obj)
    return out[0], out[1]


def random_lp(rng: np.random.Generator, m: int = 20, n: int = 20):
    """A random bounded LP around a random point, with mixed row senses.

    Returns ``(cost, a, row_lo, row_hi, col_lo, col_hi)``.  Roughly one in
    ten instances gets an inconsistent pair of rows and is infeasible.
    """
    cost = rng.normal(size=n)
    a = rng.normal(size=(m, n)) * (rng.random((m, n)) < 0.6)
    for i in np.nonzero(~a.any(axis=1))[0]:
        a[i, rng.integers(n)] = rng.normal()
    col_lo = -rng.uniform(1.0, 10.0, n)
    col_hi = rng.uniform(1.0, 10.0, n)
    x0 = rng.uniform(col_lo, col_hi)
    act = a @ x0
    row_lo = np.full(m, -math.inf)
    row_hi = np.full(m, math.inf)
    for i in range(m):
        kind = rng.integers(4)
        if kind == 0:
            row_hi[i] = act[i] + rng.uniform(0, 2)
        elif kind == 1:
            row_lo[i] = act[i] - rng.uniform(0, 2)
        elif kind == 2:
            row_lo[i] = row_hi[i] = act[i]
        else:
            row_lo[i], row_hi[i] = act[i] - rng.uniform(0, 1), act[i] + rng.uniform(0, 1)
    if rng.random() < 0.1:
        a[1] = a[0]
        row_lo[0], row_hi[0] = -math.inf, act[0] - 1.0
        row_lo[1], row_hi[1] = act[0] + 1.0, math.inf
    return cost, a, row_lo, row_hi, col_lo, col_hi


def lp_of(cost, a, row_lo, row_hi, col_lo, col_hi):
    from gasexpand.lp import LinearProgram

    lp = LinearProgram(cost, col_lo, col_hi)
    for i in range(a.shape[0]):
        idx = np.nonzero(a[i])[0]
        lp.add_row(idx, a[i, idx], row_lo[i], row_hi[i])
    return lp


DEMAND_GRID = (4.0, 3.0, 2.2, 1.6, 1.2, 0.9, 0.6, 0.4, 0.25)


def scaled(doc: dict, factor: float) -> dict:
    out = json.loads(json.dumps(doc))
    for n in out["nodes"]:
        n["nominal_demand"] = round(n["nominal_demand"] * factor, 6)
    return out


def calibrated_instance(rng: np.random.Generator, epsilon: float = 0.05, max_nodes: int = 12,
                        max_candidates: int = 4, refine: int = 4):
    """A random instance scaled close to the largest demand the full expansion can carry.

    The first feasible grid factor is refined by ``refine`` bisection steps
    towards the next infeasible one, so the cheapest plans tend to fail.
    Returns ``(network, profile)`` or ``None`` when no grid value works.
    """
    from gasexpand import extremal_scenarios, feasibility, scale_profile

    doc = random_instance(rng, max_nodes, max_candidates)

    def attempt(factor):
        net = network(scaled(doc, factor))
        prof = scale_profile(net, 1.0, epsilon)
        return (net, prof) if feasibility(net, net.candidate_ids, list(extremal_scenarios(prof))) else None

    bad = None
    for factor in DEMAND_GRID:
        good = attempt(factor)
        if good is not None:
            break
        bad = factor
    else:
        return None
    lo = factor
    for _ in range(refine if bad is not None else 0):
        mid = 0.5 * (lo + bad)
        got = attempt(mid)
        if got is not None:
            lo, good = mid, got
        else:
            bad = mid
    return good
