import copy
import dataclasses
import json

import pytest
from hypothesis import given
from hypothesis import strategies as st

import helpers as H
from gasexpand import InstanceError, Pipe, expansion_cost, load_instance, read_instance, resistance, validate
from gasexpand.network import Compressor, Node, bundled_instances, dumps_instance, serialize


def _pipe(**kw):
    base = dict(id="p", from_node="a", to_node="b", length=1000.0, diameter=0.5, friction_factor=0.0025, flow_max=10.0)
    base.update(kw)
    return Pipe(**base)


def test_resistance_reference_value():
    assert resistance(_pipe(), 350.0) == pytest.approx(3.9717e6, rel=1e-4)


def test_resistance_zero_friction_is_zero():
    assert resistance(_pipe(friction_factor=0.0), 350.0) == 0.0


def test_resistance_scaling():
    w = resistance(_pipe(), 350.0)
    assert resistance(_pipe(length=2000.0), 350.0) == pytest.approx(2 * w, rel=1e-12)
    assert resistance(_pipe(diameter=0.25), 350.0) == pytest.approx(32 * w, rel=1e-12)


@pytest.mark.parametrize("field", ["length", "diameter"])
def test_resistance_rejects_non_positive_geometry(field):
    with pytest.raises(InstanceError):
        resistance(_pipe(**{field: 0.0}), 350.0)


@given(
    beta=st.floats(1e-4, 0.1), length=st.floats(10.0, 1e5), sound=st.floats(100.0, 500.0),
    diameter=st.floats(0.05, 2.0), bump=st.floats(1.01, 3.0),
)
def test_resistance_monotone_in_every_argument(beta, length, sound, diameter, bump):
    w = resistance(_pipe(friction_factor=beta, length=length, diameter=diameter), sound)
    assert resistance(_pipe(friction_factor=beta * bump, length=length, diameter=diameter), sound) > w
    assert resistance(_pipe(friction_factor=beta, length=length * bump, diameter=diameter), sound) > w
    assert resistance(_pipe(friction_factor=beta, length=length, diameter=diameter), sound * bump) > w
    assert resistance(_pipe(friction_factor=beta, length=length, diameter=diameter * bump), sound) < w


def _candidate_station(**kw):
    base = dict(id="c", from_node="a", to_node="b", ratio_sq_min=1.0, ratio_sq_max=2.0, flow_max=10.0,
                status="candidate", length=1000.0, diameter=0.5)
    base.update(kw)
    return Compressor(**base)


def test_cost_curve_reference_value():
    assert expansion_cost(_candidate_station()) == pytest.approx(17033.8, rel=1e-5)


def test_cost_zero_length_is_zero():
    assert expansion_cost(_candidate_station(length=0.0)) == 0.0


def test_cost_override_wins():
    assert expansion_cost(_candidate_station(build_cost=42.0)) == 42.0
    assert expansion_cost(_pipe(status="candidate", build_cost=42.0)) == 42.0


def test_cost_needs_geometry_or_override():
    with pytest.raises(InstanceError):
        expansion_cost(_candidate_station(length=None))


@given(length=st.floats(0.0, 1e5), diameter=st.floats(0.01, 2.0), override=st.none() | st.floats(0.0, 1e9))
def test_cost_non_negative_and_override_exact(length, diameter, override):
    c = expansion_cost(_candidate_station(length=length, diameter=diameter, build_cost=override))
    assert c >= 0.0
    if override is not None:
        assert c == override


def _minimal_doc():
    return H.document(
        [H.node("n1", 1.0, 100.0, ("receipt",)), H.node("n2", 1.0, 100.0, ("delivery",), 5.0)],
        [H.pipe("p1", "n1", "n2")],
    )


def test_load_minimal_document():
    net = load_instance(json.dumps(_minimal_doc()))
    assert len(net.nodes) == 2
    assert net.counts()["pipes_existing"] == 1
    assert net.resistances["p1"] == pytest.approx(resistance(net.pipes[0], 350.0))


def test_load_accepts_bytes_and_file_objects(tmp_path):
    text = json.dumps(_minimal_doc())
    path = tmp_path / "x.json"
    path.write_text(text)
    assert load_instance(text.encode()) == load_instance(text)
    with open(path, "rb") as fh:
        assert load_instance(fh) == read_instance(path)


def test_unknown_endpoint_names_the_pipe():
    doc = _minimal_doc()
    doc["pipes"][0]["to_node"] = "nowhere"
    with pytest.raises(InstanceError) as err:
        load_instance(json.dumps(doc))
    assert "p1" in str(err.value)
    assert "pipes[0]" in err.value.path


def test_duplicate_id_rejected():
    doc = _minimal_doc()
    doc["nodes"].append(copy.deepcopy(doc["nodes"][1]))
    with pytest.raises(InstanceError, match="duplicate"):
        load_instance(json.dumps(doc))


def test_schema_violation_reports_path():
    doc = _minimal_doc()
    doc["nodes"][1]["pressure_sq_min"] = "low"
    with pytest.raises(InstanceError) as err:
        load_instance(json.dumps(doc))
    assert err.value.path.startswith("nodes[1]")


def test_malformed_json_rejected():
    with pytest.raises(InstanceError):
        load_instance("{not json")


def test_a3_component_counts():
    assert read_instance("a3").counts() == {
        "nodes": 29, "pipes_existing": 24, "compressors_existing": 3, "pipes_candidate": 12, "compressors_candidate": 5,
    }


@pytest.mark.parametrize("name", ["base", "a1", "a2", "a3"])
def test_shipped_instances_validate(name):
    assert name in bundled_instances()
    assert validate(read_instance(name)) == []


def test_validate_bound_violation_gives_one_finding():
    net = load_instance(json.dumps(_minimal_doc()))
    bad = dataclasses.replace(net.nodes[1], pressure_sq_min=200.0)
    findings = validate(dataclasses.replace(net, nodes=(net.nodes[0], bad)))
    assert len(findings) == 1
    assert "pressure_sq_min" in findings[0].message


def test_validate_disconnected_existing_graph():
    net = load_instance(json.dumps(_minimal_doc()))
    extra = (Node("n3", 1.0, 100.0, frozenset({"delivery"}), 1.0), Node("n4", 1.0, 100.0))
    split = dataclasses.replace(net, nodes=net.nodes + extra, pipes=net.pipes + (_pipe(id="p2", from_node="n3", to_node="n4"),))
    assert any("connect" in f.message for f in validate(split))


def test_nodes_reached_only_by_candidates_may_float():
    doc = _minimal_doc()
    doc["nodes"].append(H.node("n3", 1.0, 100.0))
    doc["pipes"].append(H.pipe("pc", "n2", "n3", status="candidate", cost=10.0))
    assert validate(load_instance(json.dumps(doc))) == []


@pytest.mark.parametrize("name", ["base", "a1", "a3"])
def test_serialize_round_trip(name):
    net = read_instance(name)
    assert load_instance(dumps_instance(net)) == net
    assert serialize(load_instance(dumps_instance(net))) == serialize(net)


def test_adjacency_queries():
    net = read_instance("a1")
    for n in net.nodes:
        assert all(e.from_node == n.id for e in net.edges_from(n.id))
        assert all(e.to_node == n.id for e in net.edges_to(n.id))
    assert sum(len(net.edges_from(n.id)) for n in net.nodes) == len(net.edges)
