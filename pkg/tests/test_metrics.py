import math
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ceci.errors import MetricError
from ceci.metrics import (
    HM3D_REFERENCE_DISTANCES,
    HM3D_REFERENCE_FROBENIUS,
    CorrelationMatrix,
    correlation_matrix,
    distance_samples,
    energy_distance,
    frobenius_by_class,
    frobenius_diff,
    moment_stats,
    wasserstein_1d,
)
from ceci.scene_graph import Node, SceneGraph, read_corpus
from oracles import cdf_wasserstein_exact, cdf_wasserstein_loop, raw_rooms, read_raw_corpus

FIXTURES = Path(__file__).parent / "fixtures"


@st.composite
def dists(draw, n=None):
    n = n or draw(st.integers(1, 6))
    w = draw(st.lists(st.integers(0, 1000), min_size=n, max_size=n).filter(lambda v: sum(v) > 0))
    a = np.array(w, dtype=np.float64)
    return a / a.sum()


@st.composite
def pairs(draw):
    n = draw(st.integers(1, 6))
    return draw(dists(n)), draw(dists(n))


def test_wasserstein_examples():
    assert wasserstein_1d([0.2, 0.3, 0.5], [0.2, 0.3, 0.5]) == 0.0
    assert wasserstein_1d([1, 0, 0], [0, 1, 0]) == 1.0
    assert wasserstein_1d([0.5, 0.5, 0], [0, 0.5, 0.5]) == 1.0


def test_energy_examples():
    assert energy_distance([0.2, 0.3, 0.5], [0.2, 0.3, 0.5]) == 0.0
    assert energy_distance([1, 0, 0], [0, 1, 0]) == pytest.approx(math.sqrt(2), abs=1e-15)
    # two point masses two apart: sqrt(2 * 2)
    assert energy_distance([1, 0, 0], [0, 0, 1]) == pytest.approx(2.0, abs=1e-15)


@pytest.mark.parametrize("fn", [wasserstein_1d, energy_distance])
def test_input_errors(fn):
    with pytest.raises(MetricError, match="length"):
        fn([1, 0], [1, 0, 0])
    with pytest.raises(MetricError, match="normalized"):
        fn([0.5, 0.4], [1, 0])
    with pytest.raises(MetricError):
        fn([1.5, -0.5], [1, 0])
    # within the 1e-6 normalization tolerance
    fn([0.5, 0.5 + 5e-7], [1, 0])


@settings(max_examples=200, deadline=None)
@given(pairs())
def test_wasserstein_matches_cdf_oracle(pq):
    p, q = pq
    assert wasserstein_1d(p, q) == cdf_wasserstein_loop(p, q)
    assert abs(wasserstein_1d(p, q) - float(cdf_wasserstein_exact(p, q))) <= 1e-12


@settings(max_examples=200, deadline=None)
@given(pairs())
def test_symmetry_exact(pq):
    p, q = pq
    assert wasserstein_1d(p, q) == wasserstein_1d(q, p)
    assert energy_distance(p, q) == energy_distance(q, p)


@settings(max_examples=100, deadline=None)
@given(dists())
def test_identity(p):
    assert wasserstein_1d(p, p) <= 1e-12
    assert energy_distance(p, p) <= 1e-12


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 6).flatmap(lambda n: st.tuples(dists(n), dists(n), dists(n))))
def test_wasserstein_triangle(pqr):
    p, q, r = pqr
    assert wasserstein_1d(p, r) <= wasserstein_1d(p, q) + wasserstein_1d(q, r) + 1e-9


@settings(max_examples=100, deadline=None)
@given(pairs())
def test_distances_nonnegative_and_positive_when_different(pq):
    p, q = pq
    w, e = wasserstein_1d(p, q), energy_distance(p, q)
    assert w >= 0 and e >= 0
    if np.max(np.abs(p - q)) > 1e-6:
        assert w > 1e-12 and e > 1e-12


def test_moments_constant():
    m = moment_stats([0.3, 0.3, 0.3])
    assert (m.mean, m.variance, m.skewness, m.kurtosis) == (0.3, 0.0, None, None)


def test_moments_two_points():
    m = moment_stats([0.0, 1.0])
    assert (m.mean, m.variance) == (0.5, 0.25)
    assert m.skewness is None and m.kurtosis is None


def test_moments_degenerate():
    assert moment_stats([]).mean is None
    m = moment_stats([2.0])
    assert m.mean == 2.0 and m.variance is None


def test_moments_known_values():
    # population moments of 1..5: variance 2, skew 0, excess kurtosis -1.3
    m = moment_stats([1, 2, 3, 4, 5])
    assert m.mean == 3 and m.variance == 2
    assert m.skewness == pytest.approx(0, abs=1e-15)
    assert m.kurtosis == pytest.approx(-1.3, abs=1e-12)
    skewed = moment_stats([0, 0, 0, 1])
    # Bernoulli(1/4): skew (1-2p)/sqrt(p(1-p)), excess kurtosis (1-6p(1-p))/(p(1-p))
    p = 0.25
    assert skewed.skewness == pytest.approx((1 - 2 * p) / math.sqrt(p * (1 - p)), rel=1e-12)
    assert skewed.kurtosis == pytest.approx((1 - 6 * p * (1 - p)) / (p * (1 - p)), rel=1e-12)


def test_reference_values():
    assert HM3D_REFERENCE_DISTANCES["wasserstein"] == {"mean": 0.1517, "variance": 0.01371, "skewness": 0.5635, "kurtosis": -0.9086}
    assert HM3D_REFERENCE_DISTANCES["energy"] == {"mean": 0.3205, "variance": 0.02245, "skewness": 0.0491, "kurtosis": -0.8878}
    assert HM3D_REFERENCE_FROBENIUS == {
        "chair": 0.0605, "fabric": 0.0606, "container_solids": 0.2062, "container_liquids": 0.1697,
    }


def one_chair_graph():
    nodes = (
        Node(0, "Building", "building"), Node(1, "Rooms", "room"),
        Node(2, "Objects", "desk"), Node(3, "Objects", "chair"), Node(4, "Objects", "cup"),
    )
    return SceneGraph(nodes, ((0, 1), (1, 2), (1, 3), (1, 4)))


def test_single_chair(toy_ontology):
    g = one_chair_graph()
    pred = {3: np.array([0.0, 1.0, 0.0]), 4: np.array([0.5, 0.5])}
    m = correlation_matrix([(g, pred)], toy_ontology, ["chair"])
    assert m.rows == (("chair", "carried"), ("chair", "dragged"), ("chair", "stepped"))
    for c in ("chair", "desk", "cup", "room", "building"):
        np.testing.assert_array_equal(m.column(c), [0, 1, 0])
    assert np.all(np.isnan(m.column("sink")))


def test_no_target_nodes(toy_ontology):
    g = SceneGraph((Node(0, "Building", "building"),), ())
    with pytest.raises(MetricError, match="no target-class"):
        correlation_matrix([(g, {})], toy_ontology, ["chair"])


def brute_force_correlation(raw_graphs, classes, target_classes, groups):
    """Group (class X node, co-occurring label) pairs in plain dicts, then average."""
    buckets = {}
    for g in raw_graphs:
        for _, objs in raw_rooms(g):
            present = {"room", "building"} | {o["label"] for o in objs}
            for o in objs:
                if o["label"] in target_classes and "gt" in o:
                    for c in present:
                        buckets.setdefault((o["label"], c), []).append(o["gt"])
    out = {}
    for x in target_classes:
        for k, aff in enumerate(groups[x]):
            for c in classes:
                vals = buckets.get((x, c))
                out[(x, aff, c)] = None if vals is None else sum(v[k] for v in vals) / len(vals)
    return out


def test_matches_brute_force_grouping(toy_ontology):
    import json

    graphs = read_corpus(FIXTURES / "toy_corpus.jsonl")
    raw = read_raw_corpus(FIXTURES / "toy_corpus.jsonl")
    onto_raw = json.loads((FIXTURES / "toy_ontology.json").read_text())
    m = correlation_matrix([(g, g.targets()) for g in graphs], toy_ontology, ["chair", "cup"])
    expected = brute_force_correlation(raw, onto_raw["classes"], ["chair", "cup"], onto_raw["groups"])
    for i, (x, aff) in enumerate(m.rows):
        for j, c in enumerate(m.cols):
            want = expected[(x, aff, c)]
            if want is None:
                assert math.isnan(m.values[i, j])
            else:
                assert m.values[i, j] == pytest.approx(want, abs=1e-15)


def test_ground_truth_own_column_sums_to_one(toy_ontology):
    graphs = read_corpus(FIXTURES / "toy_corpus.jsonl")
    m = correlation_matrix([(g, g.targets()) for g in graphs], toy_ontology, ["chair", "cup"])
    for label in ("chair", "cup"):
        assert abs(m.for_class(label).column(label).sum() - 1.0) <= 1e-15


def test_frobenius_examples():
    rows, cols = (("a", "x"), ("a", "y")), ("a", "b")
    a = CorrelationMatrix(rows, cols, np.array([[0.2, 0.4], [0.8, np.nan]]))
    assert frobenius_diff(a, a) == 0.0
    b = CorrelationMatrix(rows, cols, np.array([[1.2, 0.4], [0.8, 0.3]]))
    assert frobenius_diff(a, b) == 1.0
    assert frobenius_by_class(a, b) == {"a": 1.0}
    c = CorrelationMatrix(rows, ("b", "a"), a.values)
    with pytest.raises(MetricError, match="shape or label order"):
        frobenius_diff(a, c)


def test_correlation_serialization(toy_ontology):
    g = one_chair_graph()
    m = correlation_matrix([(g, {3: np.array([0.25, 0.5, 0.25])})], toy_ontology, ["chair"])
    back = CorrelationMatrix.from_dict(m.to_dict())
    np.testing.assert_array_equal(back.values, m.values)
    assert back.rows == m.rows and back.cols == m.cols
    csv = m.to_csv().splitlines()
    assert csv[0] == "class,affordance,chair,cup,desk,sink,room,building"
    assert csv[1].startswith("chair,carried,0.25,")
    assert csv[1].split(",")[5] == ""  # sink never co-occurs


def test_distance_samples_only_targets():
    g = one_chair_graph()
    pred = {3: np.array([0.0, 1.0, 0.0]), 4: np.array([0.5, 0.5])}
    targets = {3: np.array([1.0, 0.0, 0.0])}
    s = distance_samples([(0, g, pred, targets)])
    assert len(s) == 1 and s[0].node == 3 and s[0].label == "chair"
    assert s[0].wasserstein == 1.0 and s[0].energy == pytest.approx(math.sqrt(2))
