"""Distances between affordance distributions, moment summaries and correlation matrices.

Affordance slots are treated as points 0, 1, ..., n-1 on a line with unit
spacing; both distances are computed exactly on that support.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import MetricError
from .ontology import BUILDING, ROOM, Ontology
from .scene_graph import SceneGraph

# Values reported for the HM3D-derived corpus with human annotations; kept for
# side-by-side display only, synthetic corpora are not expected to reproduce them.
HM3D_REFERENCE_DISTANCES = {
    "wasserstein": {"mean": 0.1517, "variance": 0.01371, "skewness": 0.5635, "kurtosis": -0.9086},
    "energy": {"mean": 0.3205, "variance": 0.02245, "skewness": 0.0491, "kurtosis": -0.8878},
}
HM3D_REFERENCE_FROBENIUS = {
    "chair": 0.0605,
    "fabric": 0.0606,
    "container_solids": 0.2062,
    "container_liquids": 0.1697,
}

_NORM_TOL = 1e-6


def _check_pair(p, q):
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.ndim != 1 or p.shape != q.shape:
        raise MetricError(f"length mismatch: {p.shape} vs {q.shape}")
    for name, d in (("p", p), ("q", q)):
        if not np.all(np.isfinite(d)) or np.any(d < -1e-12):
            raise MetricError(f"{name} has negative or non-finite entries")
        if abs(math.fsum(d) - 1.0) > _NORM_TOL:
            raise MetricError(f"{name} is not normalized (sums to {math.fsum(d)!r})")
    return p, q


def wasserstein_1d(p, q) -> float:
    """Earth mover's distance on unit-spaced points: sum of absolute CDF differences."""
    p, q = _check_pair(p, q)
    return float(np.sum(np.abs(np.cumsum(p) - np.cumsum(q))))


def energy_distance(p, q) -> float:
    """sqrt(2 E|X-Y| - E|X-X'| - E|Y-Y'|) via exact double sums over the support."""
    p, q = _check_pair(p, q)
    idx = np.arange(p.size, dtype=np.float64)
    gaps = np.abs(idx[:, None] - idx[None, :])
    # symmetrized so that swapping p and q is bit-identical
    exy = 0.5 * (float(p @ gaps @ q) + float(q @ gaps @ p))
    radicand = 2.0 * exy - (float(p @ gaps @ p) + float(q @ gaps @ q))
    if radicand < 0:
        if radicand < -1e-12:
            raise MetricError(f"internal error: negative energy radicand {radicand!r}")
        radicand = 0.0
    return math.sqrt(radicand)


@dataclass(frozen=True)
class Moments:
    n: int
    mean: float | None
    variance: float | None
    skewness: float | None
    kurtosis: float | None  # excess (Fisher)

    def as_dict(self):
        return {
            "n": self.n, "mean": self.mean, "variance": self.variance,
            "skewness": self.skewness, "kurtosis": self.kurtosis,
        }


def moment_stats(samples: Sequence[float]) -> Moments:
    """Population mean, variance, skewness and excess kurtosis; undefined moments are None."""
    x = np.asarray(samples, dtype=np.float64)
    n = x.size
    if n == 0:
        return Moments(0, None, None, None, None)
    mean = float(x.mean())
    if n < 2:
        return Moments(n, mean, None, None, None)
    if np.ptp(x) == 0:
        return Moments(n, float(x[0]), 0.0, None, None)
    dev = x - mean
    m2 = float(np.mean(dev**2))
    if n < 3 or m2 == 0:
        return Moments(n, mean, m2, None, None)
    m3 = float(np.mean(dev**3))
    m4 = float(np.mean(dev**4))
    return Moments(n, mean, m2, m3 / m2**1.5, m4 / m2**2 - 3.0)


@dataclass(frozen=True)
class DistanceSample:
    graph: int
    node: int
    label: str
    wasserstein: float
    energy: float


def distance_samples(items) -> list[DistanceSample]:
    """``items``: iterable of (graph index, graph, predictions, targets), vectors keyed by node id."""
    out = []
    for gi, graph, pred, target in items:
        for nid in sorted(target):
            if nid not in pred:
                continue
            p, q = pred[nid], target[nid]
            out.append(DistanceSample(gi, nid, graph.nodes[nid].label, wasserstein_1d(p, q), energy_distance(p, q)))
    return out


@dataclass(frozen=True, eq=False)
class CorrelationMatrix:
    rows: tuple[tuple[str, str], ...]  # (target class, affordance)
    cols: tuple[str, ...]
    values: np.ndarray  # NaN where undefined

    def for_class(self, label: str) -> "CorrelationMatrix":
        keep = [i for i, (c, _) in enumerate(self.rows) if c == label]
        if not keep:
            raise MetricError(f"class {label!r} not in correlation matrix")
        return CorrelationMatrix(tuple(self.rows[i] for i in keep), self.cols, self.values[keep])

    def column(self, label: str) -> np.ndarray:
        return self.values[:, self.cols.index(label)]

    def to_dict(self) -> dict:
        return {
            "rows": [list(r) for r in self.rows],
            "cols": list(self.cols),
            "values": [[None if math.isnan(v) else float(v) for v in row] for row in self.values],
        }

    @classmethod
    def from_dict(cls, data) -> "CorrelationMatrix":
        vals = np.array(
            [[np.nan if v is None else float(v) for v in row] for row in data["values"]], dtype=np.float64
        ).reshape(len(data["rows"]), len(data["cols"]))
        return cls(tuple(tuple(r) for r in data["rows"]), tuple(data["cols"]), vals)

    def to_csv(self) -> str:
        lines = ["class,affordance," + ",".join(self.cols)]
        for (c, a), row in zip(self.rows, self.values):
            cells = ["" if math.isnan(v) else repr(float(v)) for v in row]
            lines.append(f"{c},{a}," + ",".join(cells))
        return "\n".join(lines) + "\n"


def room_observations(graph: SceneGraph):
    """Per room: the labels observed there (objects, the room, its building) and its object nodes."""
    for room, objs in graph.rooms():
        yield {ROOM, BUILDING} | {n.label for n in objs}, objs


def correlation_matrix(
    items: Iterable[tuple[SceneGraph, dict[int, np.ndarray]]],
    ontology: Ontology,
    target_classes: Sequence[str],
) -> CorrelationMatrix:
    """Mean predicted probability of each target-class affordance given co-occurrence with each class.

    Entry (affordance k of class X, class c) averages slot k over every class-X
    node whose room also holds a c instance (a node counts for its own class).
    Columns a class-X node never co-occurs with are NaN.
    """
    cols = tuple(ontology.class_labels)
    col_index = {c: j for j, c in enumerate(cols)}
    rows, offsets = [], {}
    for label in target_classes:
        group = ontology.group(label)
        offsets[label] = len(rows)
        rows.extend((label, a) for a in group)
    sums = np.zeros((len(rows), len(cols)))
    counts = np.zeros((len(target_classes), len(cols)))
    cls_pos = {c: i for i, c in enumerate(target_classes)}
    for graph, pred in items:
        for present, objs in room_observations(graph):
            js = sorted(col_index[c] for c in present)
            for n in objs:
                if n.label not in offsets or n.id not in pred:
                    continue
                r0 = offsets[n.label]
                vec = np.asarray(pred[n.id], dtype=np.float64)
                for j in js:
                    sums[r0:r0 + len(vec), j] += vec
                    counts[cls_pos[n.label], j] += 1
    if not counts.any():
        raise MetricError("no target-class nodes in corpus")
    values = np.full_like(sums, np.nan)
    for label in target_classes:
        r0 = offsets[label]
        k = len(ontology.group(label))
        c = counts[cls_pos[label]]
        defined = c > 0
        values[r0:r0 + k, defined] = sums[r0:r0 + k, defined] / c[defined]
    return CorrelationMatrix(tuple(rows), cols, values)


def frobenius_diff(pred: CorrelationMatrix, gt: CorrelationMatrix) -> float:
    """Frobenius norm of the difference over entries defined in both matrices."""
    if pred.rows != gt.rows or pred.cols != gt.cols:
        raise MetricError("correlation matrices differ in shape or label order")
    both = ~(np.isnan(pred.values) | np.isnan(gt.values))
    diff = pred.values[both] - gt.values[both]
    return float(math.sqrt(float(np.sum(diff * diff))))


def frobenius_by_class(pred: CorrelationMatrix, gt: CorrelationMatrix) -> dict[str, float]:
    classes = list(dict.fromkeys(c for c, _ in pred.rows))
    return {c: frobenius_diff(pred.for_class(c), gt.for_class(c)) for c in classes}
