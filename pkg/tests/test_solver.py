import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import helpers as H
from gasexpand import (
    ConicRow,
    ExpansionPlan,
    Scenario,
    SolverOptions,
    VariableRef,
    build_deterministic_model,
    build_robust_model,
    extremal_scenarios,
    feasibility,
    incumbent_verify,
    oa_cut,
    read_instance,
    scale_profile,
    solve,
)
from gasexpand.solver import Rejected, Verified, _core

GAMMA = VariableRef("gamma", "p", "s")
FLOW = VariableRef("flow", "p", "s")
Z = VariableRef("z", "p", lo=0.0, hi=1.0, binary=True)


def _soc(w):
    return ConicRow("soc", GAMMA, FLOW, w, owner="p", scenario="s")


def _rsoc(w):
    return ConicRow("rsoc", GAMMA, FLOW, w, Z, owner="p", scenario="s")


def test_oa_cut_unit_resistance():
    cut = oa_cut(_soc(1.0), 2.0)
    assert cut.sense == ">="
    assert dict(cut.coefficients) == {GAMMA: 1.0, FLOW: -4.0}
    assert cut.rhs == -4.0


def test_oa_cut_at_zero_flow():
    cut = oa_cut(_soc(1.0), 0.0)
    assert dict(cut.coefficients) == {GAMMA: 1.0}
    assert cut.rhs == 0.0


def test_oa_cut_realistic_resistance():
    w = 3.97e6
    cut = oa_cut(_soc(w), 45.0)
    assert -cut.coefficients[FLOW] == pytest.approx(3.573e8, rel=1e-12)
    assert -cut.rhs == pytest.approx(8.039e9, rel=1e-3)


def test_oa_cut_perspective_moves_constant_onto_z():
    cut = oa_cut(_rsoc(2.0), 3.0)
    assert dict(cut.coefficients) == {GAMMA: 1.0, FLOW: -12.0, Z: 18.0}
    assert cut.rhs == 0.0


@given(w=st.floats(1e-3, 1e7), f_hat=st.floats(-100, 100), f=st.floats(-100, 100))
def test_oa_cut_supports_the_parabola(w, f_hat, f):
    for cut in (oa_cut(_soc(w), f_hat), oa_cut(_rsoc(w), f_hat)):
        on = {GAMMA: w * f * f, FLOW: f, Z: 1.0}
        scale = max(1.0, w * (f * f + f_hat * f_hat))
        assert cut.violation(on) <= 1e-9 * scale
        tight = {GAMMA: w * f_hat * f_hat, FLOW: f_hat, Z: 1.0}
        assert abs(cut.activity(tight) - cut.rhs) <= 1e-9 * scale


@given(w=st.floats(1e-3, 1e7), f_hat=st.floats(-100, 100), gamma=st.floats(0, 1e9))
def test_perspective_cut_idle_when_unbuilt(w, f_hat, gamma):
    assert oa_cut(_rsoc(w), f_hat).violation({GAMMA: gamma, FLOW: 0.0, Z: 0.0}) <= 0.0


def _parallel(cost=50.0, w=1.0):
    return H.pipe("pc", "n1", "n2", length=H.unit_resistance_length(w=w), status="candidate", cost=cost)


def _deterministic(net, demand):
    return build_deterministic_model(net, Scenario("s", "k", {"n2": demand}))


def test_no_candidates_costs_nothing():
    res = solve(_deterministic(H.two_node(), 5.0))
    assert res.status == "optimal"
    assert res.objective == 0.0
    assert res.plan == ExpansionPlan.empty()
    st_ = res.states["s"]
    assert st_.pi["n1"] - st_.pi["n2"] == pytest.approx(25.0, rel=1e-9)


def test_light_load_leaves_candidate_unbuilt():
    res = solve(_deterministic(H.two_node(candidates=[_parallel()]), 5.0))
    assert res.status == "optimal"
    assert res.plan.built == frozenset()


def test_heavy_load_builds_parallel_pipe():
    # one unit pipe carries at most sqrt(99); two share 12 as 6 + 6
    res = solve(_deterministic(H.two_node(candidates=[_parallel(50.0)]), 12.0))
    assert res.status == "optimal"
    assert res.plan.built == {"pc"}
    assert res.objective == 50.0
    st_ = res.states["s"]
    assert st_.flow["p1"] == pytest.approx(6.0, rel=1e-6)
    assert st_.flow["pc"] == pytest.approx(6.0, rel=1e-6)


def test_cheaper_of_two_sufficient_candidates():
    cands = [_parallel(70.0), {**_parallel(30.0), "id": "pd"}]
    res = solve(_deterministic(H.two_node(candidates=cands), 12.0))
    assert res.plan.built == {"pd"}
    assert res.objective == 30.0


def test_overload_is_infeasible():
    res = solve(_deterministic(H.two_node(candidates=[_parallel()]), 25.0))
    assert res.status == "infeasible"
    assert res.plan is None
    assert math.isinf(res.objective)


def test_incumbent_verify_single_pipe():
    system = _deterministic(H.two_node(), 7.0)
    verdict = incumbent_verify(ExpansionPlan.empty(), None, system)
    assert isinstance(verdict, Verified)
    st_ = verdict.states["s"]
    assert st_.flow["p1"] == pytest.approx(7.0, rel=1e-9)
    assert st_.pi["n1"] - st_.pi["n2"] == pytest.approx(49.0, rel=1e-9)
    assert 1.0 <= st_.pi["n2"] and st_.pi["n1"] <= 100.0


def test_incumbent_verify_rejects_overload():
    verdict = incumbent_verify(ExpansionPlan.empty(), None, _deterministic(H.two_node(), 12.0))
    assert isinstance(verdict, Rejected)
    assert not verdict
    assert verdict.reason


def _enumerate(net, prof):
    pair = list(extremal_scenarios(prof))
    best = math.inf
    for k in range(len(net.candidate_ids) + 1):
        for ids in itertools.combinations(net.candidate_ids, k):
            plan = ExpansionPlan.from_ids(net, ids)
            if plan.cost < best and feasibility(net, plan, pair):
                best = plan.cost
    return best


def test_rejected_integral_point_gets_a_nogood_and_optimum_survives():
    net = H.network(H.random_instance(np.random.default_rng(26), 6, 3))
    prof = scale_profile(net, 1.0, 0.05)
    res = solve(build_robust_model(net, [prof]))
    assert res.stats.nogoods >= 1
    assert res.status == "optimal"
    assert res.objective == _enumerate(net, prof)


def test_solve_is_deterministic():
    net = read_instance("a1")
    system = build_robust_model(net, [scale_profile(net, 0.95, 0.02)])
    a, b = solve(system), solve(system)
    assert a.to_doc() == b.to_doc()
    assert {k: v.to_doc() for k, v in a.states.items()} == {k: v.to_doc() for k, v in b.states.items()}


def test_result_invariants_on_a1():
    net = read_instance("a1")
    res = solve(build_robust_model(net, [scale_profile(net, 0.95, 0.02)]))
    assert res.status == "optimal"
    assert res.bound <= res.objective + 1e-9 * abs(res.objective)
    assert 0.0 <= res.gap <= SolverOptions().gap_tol
    assert res.objective == pytest.approx(res.plan.cost)
    assert set(res.states) == {"d0.95/low", "d0.95/high"}
    pins = {sid: st_.pi[s] for sid, st_ in res.states.items() for s in net.slack_nodes}
    assert len(set(pins.values())) == 1


def test_node_limit_stops_early():
    net = read_instance("a1")
    system = build_robust_model(net, [scale_profile(net, 0.95, 0.05)])
    res = solve(system, SolverOptions(node_limit=1))
    assert res.status in ("node_limit", "optimal")
    assert res.stats.nodes <= 1
    if res.plan is not None:
        assert res.bound <= res.objective


def test_time_limit_reports_gap_limit():
    net = read_instance("a1")
    res = solve(build_robust_model(net, [scale_profile(net, 0.95, 0.05)]), SolverOptions(time_limit=0.0))
    assert res.status == "gap_limit"


def test_core_strips_candidates_in_flowless_pendant_trees():
    doc = H.document(
        [
            H.node("n1", 1.0, 100.0, ("receipt",)),
            H.node("n2", 1.0, 100.0, ("delivery",), 5.0),
            H.node("n3", 1.0, 100.0),
            H.node("n4", 1.0, 100.0),
        ],
        [
            H.pipe("p1", "n1", "n2"),
            H.pipe("pa", "n2", "n3", status="candidate", cost=1.0),
            H.pipe("pb", "n3", "n4", status="candidate", cost=1.0),
            H.pipe("pc", "n1", "n2", status="candidate", cost=1.0),
        ],
    )
    net = H.network(doc)
    system = _deterministic(net, 5.0)
    core = _core(system, ExpansionPlan.from_ids(net, ["pa", "pb", "pc"]))
    assert core.built == {"pc"}
    # a quiet node that closes a loop is not pendant
    looped = H.network({**doc, "pipes": doc["pipes"] + [H.pipe("pd", "n4", "n1", status="candidate", cost=1.0)]})
    ring = _core(_deterministic(looped, 5.0), ExpansionPlan.from_ids(looped, ["pa", "pb", "pd"]))
    assert ring.built == {"pa", "pb", "pd"}
