from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ceci.errors import CeciError, OntologyError
from ceci.oracle import (
    context_of,
    expectation_scores,
    fit,
    load_table,
    predict_eq1,
    predict_graph,
    save_table,
)
from ceci.scene_graph import Node, SceneGraph, read_corpus
from oracles import exhaustive_eq1, read_raw_corpus

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture(scope="module")
def toy_graphs():
    return read_corpus(FIXTURES / "toy_corpus.jsonl")


@pytest.fixture(scope="module")
def toy_table(toy_graphs, toy_ontology):
    return fit(toy_graphs, toy_ontology, alpha=1.0)


def one_room(*labels):
    nodes = [Node(0, "Building", "building"), Node(1, "Rooms", "room")]
    for label in labels:
        nodes.append(Node(len(nodes), "Objects", label))
    return SceneGraph(tuple(nodes), ((0, 1),) + tuple((1, i) for i in range(2, len(nodes))))


def test_two_rooms_with_desk(toy_ontology):
    g = SceneGraph(
        (Node(0, "Building", "building"), Node(1, "Rooms", "room"), Node(2, "Rooms", "room"),
         Node(3, "Objects", "desk"), Node(4, "Objects", "desk")),
        ((0, 1), (0, 2), (1, 3), (2, 4)),
    )
    for alpha in (1.0, 0.5):
        t = fit([g], toy_ontology, alpha)
        assert t.p_class[t.class_index("desk")] == (2 + alpha) / (2 + 2 * alpha)


def test_absent_class_four_rooms(toy_ontology):
    graphs = [one_room("desk") for _ in range(4)]
    t = fit(graphs, toy_ontology, alpha=1.0)
    assert t.room_count == 4
    assert t.p_class[t.class_index("sink")] == 1 / 6


def test_toy_table_matches_counting_script(toy_table, toy_ontology):
    import json

    raw = read_raw_corpus(FIXTURES / "toy_corpus.jsonl")
    onto_raw = json.loads((FIXTURES / "toy_ontology.json").read_text())
    _, p_b, p_ab, slots = exhaustive_eq1(onto_raw, raw)
    for c, p in p_b.items():
        assert toy_table.p_class[toy_table.class_index(c)] == pytest.approx(float(p), abs=1e-15)
    for (s, c), p in p_ab.items():
        assert toy_table.p_joint[s, toy_table.class_index(c)] == pytest.approx(float(p), abs=1e-15)
    assert toy_ontology.slot_names() == slots


def test_probabilities_in_unit_interval(toy_table):
    for arr in (toy_table.p_class, toy_table.p_joint):
        assert np.all(arr > 0) and np.all(arr <= 1)
    assert toy_table.p_joint.shape == (5, 6)


def test_equal_scores_give_uniform(toy_ontology, toy_table):
    flat = replace(toy_table, p_joint=np.full_like(toy_table.p_joint, 0.25))
    np.testing.assert_array_equal(predict_eq1(flat, toy_ontology, "chair", {"room", "desk"}), [1 / 3] * 3)


def test_room_only_context(toy_ontology, toy_table):
    slots = toy_ontology.slot_layout["chair"]
    j = toy_table.class_index("room")
    manual = toy_table.p_joint[slots.start:slots.stop, j] / toy_table.p_class[j]
    got = predict_eq1(toy_table, toy_ontology, "chair", {"room"})
    np.testing.assert_allclose(got, manual / manual.sum(), rtol=0, atol=1e-15)


def test_toy_predictions_match_exhaustive(toy_graphs, toy_ontology, toy_table):
    import json

    onto_raw = json.loads((FIXTURES / "toy_ontology.json").read_text())
    expected, *_ = exhaustive_eq1(onto_raw, read_raw_corpus(FIXTURES / "toy_corpus.jsonl"))
    got = {(gi, nid): v for gi, g in enumerate(toy_graphs) for nid, v in predict_graph(toy_table, toy_ontology, g).items()}
    assert set(got) == set(expected)
    for key, vec in expected.items():
        np.testing.assert_allclose(got[key], vec, rtol=0, atol=1e-12)


def test_office_chair_context(toy_graphs, toy_ontology, toy_table):
    # G0's office chair: the room also holds a desk, a dining chair and a mug
    ctx = context_of(toy_graphs[0], 3)
    assert ctx == {"room", "desk", "chair", "cup"}
    pred = predict_eq1(toy_table, toy_ontology, "chair", ctx)
    assert abs(pred.sum() - 1) <= 1e-12 and np.all(pred >= 0)


def test_context_excludes_node_itself(toy_ontology):
    g = one_room("chair", "desk")
    assert context_of(g, 2) == {"room", "desk"}
    assert context_of(one_room("chair"), 2) == {"room"}


def test_class_without_group(toy_ontology, toy_table):
    with pytest.raises(OntologyError):
        predict_eq1(toy_table, toy_ontology, "desk", {"room"})
    with pytest.raises(OntologyError):
        predict_eq1(toy_table, toy_ontology, "sofa", {"room"})


def test_empty_corpus(toy_ontology):
    with pytest.raises(CeciError, match="empty corpus"):
        fit([], toy_ontology)


def test_table_round_trip(tmp_path, toy_table):
    save_table(toy_table, tmp_path / "t.json")
    back = load_table(tmp_path / "t.json")
    np.testing.assert_array_equal(back.p_joint, toy_table.p_joint)
    np.testing.assert_array_equal(back.p_class, toy_table.p_class)
    assert back.alpha == toy_table.alpha and back.room_count == toy_table.room_count


def test_doubling_marginals_divides_scores(toy_ontology, toy_table):
    ctx = {"room", "desk", "cup"}
    slots = toy_ontology.slot_layout["chair"]
    doubled = replace(toy_table, p_class=toy_table.p_class * 2)
    a = expectation_scores(toy_table, slots, ctx)
    b = expectation_scores(doubled, slots, ctx)
    # powers of two are exact in binary floating point
    np.testing.assert_array_equal(b, a / 2 ** len(ctx))
    np.testing.assert_array_equal(
        predict_eq1(doubled, toy_ontology, "chair", ctx), predict_eq1(toy_table, toy_ontology, "chair", ctx)
    )


@settings(max_examples=60, deadline=None)
@given(
    st.integers(0, 4),
    st.sampled_from(["room", "desk", "sink", "cup", "chair", "building"]),
    st.floats(0.0, 0.5),
    st.sets(st.sampled_from(["desk", "sink", "cup", "chair"])),
)
def test_monotone_in_joint(toy_ontology, toy_table, slot, col, bump, extra):
    ctx = {"room"} | extra | {col}
    label = "chair" if slot < 3 else "cup"
    slots = toy_ontology.slot_layout[label]
    before = predict_eq1(toy_table, toy_ontology, label, ctx)
    joint = toy_table.p_joint.copy()
    joint[slot, toy_table.class_index(col)] += bump
    after = predict_eq1(replace(toy_table, p_joint=joint), toy_ontology, label, ctx)
    k = slot - slots.start
    assert after[k] >= before[k] - 1e-15


@settings(max_examples=40, deadline=None)
@given(st.floats(1e-3, 1e3), st.sets(st.sampled_from(["desk", "sink", "cup", "chair"])))
def test_invariant_to_uniform_rescaling(toy_ontology, toy_table, scale, extra):
    ctx = {"room"} | extra
    a = predict_eq1(toy_table, toy_ontology, "cup", ctx)
    b = predict_eq1(replace(toy_table, p_class=toy_table.p_class * scale), toy_ontology, "cup", ctx)
    np.testing.assert_allclose(a, b, rtol=0, atol=1e-12)


def test_underflowing_denominator_still_normalizes(toy_ontology, toy_table):
    tiny = replace(toy_table, p_class=np.full_like(toy_table.p_class, 1e-200))
    pred = predict_eq1(tiny, toy_ontology, "chair", {"room", "desk", "cup", "sink"})
    assert np.all(np.isfinite(pred)) and abs(pred.sum() - 1) <= 1e-12
