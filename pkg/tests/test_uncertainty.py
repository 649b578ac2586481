import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import helpers as H
from gasexpand import DemandProfile, ScenarioSet, extremal_scenarios, nominal_scenario, read_instance, sample, scale_profile
from gasexpand.uncertainty import load_profiles, make_rng, profile_from_doc, profile_to_doc


def _one_node_net(nominal):
    return H.network(H.document(
        [H.node("n1", 1.0, 100.0, ("receipt",)), H.node("n2", 1.0, 100.0, ("delivery",), nominal)],
        [H.pipe("p1", "n1", "n2")],
    ))


def test_extremal_componentwise_bounds():
    low, high = extremal_scenarios(DemandProfile("k", {"n1": (10, 12), "n2": (3, 3)}))
    assert low.demands == {"n1": 10.0, "n2": 3.0}
    assert high.demands == {"n1": 12.0, "n2": 3.0}
    assert low.profile_id == high.profile_id == "k"


def test_extremal_degenerate_profile():
    low, high = extremal_scenarios(DemandProfile("k", {"n1": (4, 4)}))
    assert low.demands == high.demands


def test_extremal_of_scaled_a1_profile():
    net = read_instance("a1")
    low, high = extremal_scenarios(scale_profile(net, 0.95, 0.05))
    for n in net.nodes:
        if n.is_delivery:
            assert low.demand(n.id) == pytest.approx(0.95 * 0.95 * n.nominal_demand, rel=1e-14)
            assert high.demand(n.id) == pytest.approx(0.95 * 1.05 * n.nominal_demand, rel=1e-14)
        else:
            assert low.demand(n.id) == high.demand(n.id) == 0.0


@pytest.mark.parametrize("delta,eps,expect", [(0.95, 0.05, (90.25, 99.75)), (1.11, 0.01, (109.89, 112.11))])
def test_scale_profile_arithmetic(delta, eps, expect):
    prof = scale_profile(_one_node_net(100.0), delta, eps)
    lo, hi = prof.interval("n2")
    assert (lo, hi) == pytest.approx(expect, rel=1e-12)
    assert prof.interval("n1") == (0.0, 0.0)


def test_scale_profile_zero_width():
    prof = scale_profile(_one_node_net(100.0), 1.2, 0.0)
    assert prof.interval("n2") == pytest.approx((120.0, 120.0))
    nom = nominal_scenario(_one_node_net(100.0), 1.2)
    assert nom.demand("n2") == pytest.approx(120.0)


@pytest.mark.parametrize("delta,eps", [(0.0, 0.1), (-1.0, 0.1), (1.0, 1.0), (1.0, -0.1)])
def test_scale_profile_rejects_bad_arguments(delta, eps):
    with pytest.raises(ValueError):
        scale_profile(_one_node_net(1.0), delta, eps)


def test_profile_interval_invariants():
    with pytest.raises(ValueError):
        DemandProfile("k", {"n": (2, 1)})
    with pytest.raises(ValueError):
        DemandProfile("k", {"n": (-1, 1)})


def test_profile_ids_unique():
    with pytest.raises(ValueError):
        ScenarioSet((DemandProfile("k"), DemandProfile("k")))


def test_sample_degenerate_profile():
    draws = sample(DemandProfile("k", {"n1": (7, 7)}), 5, seed=3)
    assert len(draws) == 5
    assert all(s.demands == {"n1": 7.0} for s in draws)


def test_sample_same_seed_same_output():
    prof = DemandProfile("k", {"a": (0, 1), "b": (2, 5)})
    assert sample(prof, 20, 11) == sample(prof, 20, 11)
    assert sample(prof, 20, 11) != sample(prof, 20, 12)


def test_sample_mean_of_unit_intervals():
    prof = DemandProfile("k", {f"n{i}": (0, 1) for i in range(6)})
    draws = sample(prof, 1000, 2024)
    for node in prof.intervals:
        assert abs(np.mean([s.demand(node) for s in draws]) - 0.5) < 0.05


def test_sample_rejects_zero_count():
    with pytest.raises(ValueError):
        sample(DemandProfile("k"), 0, 1)


def test_named_streams_are_independent():
    a = make_rng(5, "x").random(4)
    b = make_rng(5, "y").random(4)
    assert not np.allclose(a, b)
    assert np.array_equal(a, make_rng(5, "x").random(4))


boxes = st.dictionaries(
    st.sampled_from([f"n{i}" for i in range(8)]),
    st.tuples(st.floats(0, 100), st.floats(0, 50)).map(lambda t: (t[0], t[0] + t[1])),
    max_size=8,
)


@given(boxes, st.integers(0, 2**32 - 1))
def test_samples_lie_between_extremal_points(intervals, seed):
    prof = DemandProfile("k", intervals)
    low, high = extremal_scenarios(prof)
    assert prof.contains(low) and prof.contains(high)
    for s in sample(prof, 25, seed):
        assert prof.contains(s)
        for n in intervals:
            assert low.demand(n) <= s.demand(n) <= high.demand(n)


@given(boxes)
def test_profile_document_round_trip(intervals):
    prof = DemandProfile("k", intervals)
    assert profile_from_doc(json.loads(json.dumps(profile_to_doc(prof)))) == prof


def test_load_profiles_accepts_three_layouts():
    one = profile_to_doc(DemandProfile("a", {"n": (1, 2)}))
    two = profile_to_doc(DemandProfile("b", {"n": (3, 4)}))
    assert len(load_profiles(json.dumps(one))) == 1
    assert len(load_profiles(json.dumps([one, two]))) == 2
    assert [p.profile_id for p in load_profiles(json.dumps({"profiles": [one, two]}))] == ["a", "b"]
