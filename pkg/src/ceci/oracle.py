"""Closed-form co-occurrence expectation baseline.

Room-level frequencies are counted from ground-truth graphs; a node's affordance
scores are then ``sum_j P(a_i, b_j) / prod_j P(b_j)`` over the observations
``b_j`` in its room, normalized within the node's affordance group.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

from .errors import CeciError, ConfigError, OntologyError
from .ontology import ROOM, Ontology
from .scene_graph import OBJECTS, SceneGraph

FORMAT_TAG = "ceci-frequency-table/1"


@dataclass(frozen=True, eq=False)
class FrequencyTable:
    alpha: float
    room_count: int
    class_labels: tuple[str, ...]
    p_class: np.ndarray  # (V,) P(b_j)
    p_joint: np.ndarray  # (S, V) P(a_i and b_j)

    def class_index(self, label):
        try:
            return self.class_labels.index(label)
        except ValueError:
            raise OntologyError(f"unknown label {label!r}") from None

    def to_dict(self) -> dict:
        return {
            "format": FORMAT_TAG,
            "alpha": float(self.alpha),
            "rooms": int(self.room_count),
            "classes": list(self.class_labels),
            "p_class": [float(x) for x in self.p_class],
            "p_joint": [[float(x) for x in row] for row in self.p_joint],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "FrequencyTable":
        if data.get("format") != FORMAT_TAG:
            raise ConfigError("not a frequency table")
        return cls(
            alpha=float(data["alpha"]),
            room_count=int(data["rooms"]),
            class_labels=tuple(data["classes"]),
            p_class=np.array(data["p_class"], dtype=np.float64),
            p_joint=np.array(data["p_joint"], dtype=np.float64).reshape(-1, len(data["classes"])),
        )


def room_contexts(graph: SceneGraph):
    """(set of labels observed in the room, object nodes of the room) per room."""
    for room, objs in graph.rooms():
        yield {ROOM} | {n.label for n in objs}, objs


def fit(graphs: Iterable[SceneGraph], ontology: Ontology, alpha: float = 1.0) -> FrequencyTable:
    if not alpha > 0:
        raise ConfigError(f"smoothing constant must be positive, got {alpha}")
    labels = ontology.class_labels
    col = {c: j for j, c in enumerate(labels)}
    n_slots = ontology.n_slots
    presence = np.zeros(len(labels))
    joint_mass = np.zeros((n_slots, len(labels)))
    rooms = 0
    for g in graphs:
        for present, objs in room_contexts(g):
            rooms += 1
            # mean ground-truth mass per slot over the room's nodes owning that slot
            mass = np.zeros(n_slots)
            owners = np.zeros(n_slots)
            for n in objs:
                rng = ontology.slot_layout.get(n.label)
                if rng is None or n.gt is None:
                    continue
                mass[rng.start:rng.stop] += n.gt
                owners[rng.start:rng.stop] += 1
            mean_mass = np.divide(mass, owners, out=np.zeros(n_slots), where=owners > 0)
            for label in present:
                j = col[label]
                presence[j] += 1
                joint_mass[:, j] += mean_mass
    if rooms == 0:
        raise CeciError("empty corpus: no rooms to count")
    denom = rooms + 2 * alpha
    return FrequencyTable(
        alpha=float(alpha),
        room_count=rooms,
        class_labels=tuple(labels),
        p_class=(presence + alpha) / denom,
        p_joint=(joint_mass + alpha) / denom,
    )


def context_of(graph: SceneGraph, node_id: int) -> set[str]:
    """Labels observed in the node's room, excluding the node itself."""
    parents = graph.parents()
    if node_id not in parents:
        raise CeciError(f"node {node_id} has no enclosing room")
    room = parents[node_id]
    kids = graph.children()[room]
    index = {n.id: n for n in graph.nodes}
    return {ROOM} | {index[k].label for k in kids if k != node_id and index[k].layer == OBJECTS}


def _terms(table, slots, context):
    cols = sorted(table.class_index(b) for b in set(context))
    if not cols:
        raise CeciError("empty observation context")
    numer = np.array([sum(table.p_joint[i, j] for j in cols) for i in slots], dtype=np.float64)
    denom = 1.0
    for j in cols:
        denom *= table.p_class[j]
    return numer, denom


def expectation_scores(table: FrequencyTable, slots: range, context: Iterable[str]) -> np.ndarray:
    """Unnormalized scores for the given slots: sum of joints over the product of marginals."""
    numer, denom = _terms(table, slots, context)
    return numer / denom


def predict_eq1(table: FrequencyTable, ontology: Ontology, label: str, context: Iterable[str]) -> np.ndarray:
    slots = ontology.slot_layout.get(label)
    if slots is None:
        ontology.index(label)
        raise OntologyError(f"class {label!r} owns no affordance group")
    numer, denom = _terms(table, slots, context)
    scores = numer / denom if denom > 0 else np.full(numer.shape, np.inf)
    if not np.all(np.isfinite(scores)):
        # marginal product underflowed; it is a common factor of every slot
        scores = numer
    return scores / scores.sum()


def predict_graph(table: FrequencyTable, ontology: Ontology, graph: SceneGraph) -> dict[int, np.ndarray]:
    out = {}
    for n in graph.nodes:
        if n.layer == OBJECTS and n.label in ontology.slot_layout:
            out[n.id] = predict_eq1(table, ontology, n.label, context_of(graph, n.id))
    return out


def save_table(table: FrequencyTable, path) -> None:
    Path(path).write_text(json.dumps(table.to_dict(), separators=(",", ":")) + "\n", encoding="utf-8")


def load_table(path) -> FrequencyTable:
    path = Path(path)
    try:
        return FrequencyTable.from_dict(json.loads(path.read_text(encoding="utf-8")))
    except (OSError, json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: unreadable frequency table: {exc}") from exc
