"""Layered scene graphs (building -> rooms -> objects), validation and corpus I/O.

Corpus files hold one JSON record per line (UTF-8, LF)::

    {"nodes":[{"id":0,"layer":"Building","label":"building"},
              {"id":1,"layer":"Rooms","label":"room","sub":"office"},
              {"id":2,"layer":"Objects","label":"chair","sub":"office-chair","gt":[0.0,1.0,0.0]}],
     "edges":[[0,1],[1,2]]}

Node keys appear in the fixed order ``id, layer, label, sub, gt``; optional keys
are omitted when unset. Edges point parent -> child. Floats are written with
``repr`` so records round-trip exactly and bytes are stable.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import GraphFormatError
from .ontology import Ontology

BUILDING = "Building"
ROOMS = "Rooms"
OBJECTS = "Objects"
LAYERS = (BUILDING, ROOMS, OBJECTS)


@dataclass(frozen=True)
class Node:
    id: int
    layer: str
    label: str
    subcategory: str | None = None
    gt: tuple[float, ...] | None = None


@dataclass(frozen=True)
class SceneGraph:
    nodes: tuple[Node, ...]
    edges: tuple[tuple[int, int], ...]

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))
        object.__setattr__(self, "edges", tuple(tuple(e) for e in self.edges))

    def __len__(self):
        return len(self.nodes)

    def parents(self) -> dict[int, int]:
        return {c: p for p, c in self.edges}

    def children(self) -> dict[int, list[int]]:
        out: dict[int, list[int]] = {n.id: [] for n in self.nodes}
        for p, c in self.edges:
            out.setdefault(p, []).append(c)
        return out

    def by_layer(self, layer: str) -> list[Node]:
        return [n for n in self.nodes if n.layer == layer]

    def objects(self) -> list[Node]:
        return self.by_layer(OBJECTS)

    def rooms(self) -> list[tuple[Node, list[Node]]]:
        """Each room node with its object children, in node order."""
        kids = self.children()
        index = {n.id: n for n in self.nodes}
        return [(r, [index[c] for c in kids[r.id] if index[c].layer == OBJECTS]) for r in self.by_layer(ROOMS)]

    def strip_ground_truth(self) -> "SceneGraph":
        """Input-graph view: only ids, layers and class labels survive."""
        return SceneGraph(tuple(Node(n.id, n.layer, n.label) for n in self.nodes), self.edges)

    def targets(self) -> dict[int, np.ndarray]:
        return {n.id: np.array(n.gt, dtype=np.float64) for n in self.nodes if n.gt is not None}

    def undirected_edges(self) -> list[tuple[int, int]]:
        out = []
        for p, c in self.edges:
            out.append((p, c))
            out.append((c, p))
        return out


def validate(graph: SceneGraph, ontology: Ontology | None = None) -> list[str]:
    """Return every violated structural invariant; an empty list means the graph is valid."""
    problems = []
    ids = [n.id for n in graph.nodes]
    if ids != list(range(len(ids))):
        problems.append(f"node ids are not dense 0..{len(ids) - 1} in order: {ids}")
    index = {n.id: n for n in graph.nodes}

    for n in graph.nodes:
        if n.layer not in LAYERS:
            problems.append(f"node {n.id}: unknown layer {n.layer!r}")

    roots = [n.id for n in graph.nodes if n.layer == BUILDING]
    if not roots:
        problems.append("no root: graph has no Building node")
    elif len(roots) > 1:
        problems.append(f"multiple roots: Building nodes {roots}")

    parent_of: dict[int, int] = {}
    seen_edges = set()
    for p, c in graph.edges:
        if (p, c) in seen_edges:
            problems.append(f"edge ({p},{c}): duplicate edge")
            continue
        seen_edges.add((p, c))
        if p not in index or c not in index:
            problems.append(f"edge ({p},{c}): references unknown node")
            continue
        if c in parent_of:
            problems.append(f"node {c}: multiple parents {parent_of[c]} and {p}")
            continue
        parent_of[c] = p

    expected_parent = {ROOMS: BUILDING, OBJECTS: ROOMS}
    for n in graph.nodes:
        if n.layer == BUILDING:
            if n.id in parent_of:
                problems.append(f"node {n.id}: Building node has a parent {parent_of[n.id]}")
            continue
        if n.layer not in expected_parent:
            continue
        if n.id not in parent_of:
            problems.append(f"node {n.id}: orphan {n.layer} node")
            continue
        parent = index[parent_of[n.id]]
        if parent.layer != expected_parent[n.layer]:
            problems.append(
                f"node {n.id}: layer skip, {n.layer} node has {parent.layer} parent {parent.id}"
            )

    for n in graph.nodes:
        if n.gt is None:
            continue
        if n.layer != OBJECTS:
            problems.append(f"node {n.id}: ground truth on a {n.layer} node")
        if any(not math.isfinite(x) or x < 0 for x in n.gt):
            problems.append(f"node {n.id}: ground truth has negative or non-finite entries")
        elif abs(math.fsum(n.gt) - 1.0) > 1e-9:
            problems.append(f"node {n.id}: ground truth sums to {math.fsum(n.gt)!r}, not 1")

    if ontology is not None:
        for n in graph.nodes:
            if n.label not in ontology._index:
                problems.append(f"node {n.id}: unknown label {n.label!r}")
                continue
            if n.gt is not None:
                rng = ontology.slot_layout.get(n.label)
                if rng is None:
                    problems.append(f"node {n.id}: class {n.label!r} owns no group but has ground truth")
                elif len(n.gt) != len(rng):
                    problems.append(
                        f"node {n.id}: ground truth length {len(n.gt)} != group size {len(rng)}"
                    )
    return problems


def encode_features(graph: SceneGraph, ontology: Ontology) -> np.ndarray:
    """One-hot rows over the full label vocabulary, in node order."""
    x = np.zeros((len(graph.nodes), ontology.vocab_size), dtype=np.float64)
    for row, n in enumerate(graph.nodes):
        x[row, ontology.index(n.label)] = 1.0
    return x


def relabel(graph: SceneGraph, keep: Sequence[int] | None = None, order: Sequence[int] | None = None) -> SceneGraph:
    """Subset and/or reorder nodes, renumbering ids densely in the new order.

    ``keep`` drops nodes (and their edges); ``order`` lists old ids in their new
    positions. Edges keep their relative order, remapped.
    """
    old_ids = list(order) if order is not None else [n.id for n in graph.nodes]
    if keep is not None:
        kept = set(keep)
        old_ids = [i for i in old_ids if i in kept]
    index = {n.id: n for n in graph.nodes}
    remap = {old: new for new, old in enumerate(old_ids)}
    nodes = tuple(replace(index[old], id=remap[old]) for old in old_ids)
    edges = tuple((remap[p], remap[c]) for p, c in graph.edges if p in remap and c in remap)
    return SceneGraph(nodes, edges)


def _node_record(n: Node) -> dict:
    rec = {"id": n.id, "layer": n.layer, "label": n.label}
    if n.subcategory is not None:
        rec["sub"] = n.subcategory
    if n.gt is not None:
        rec["gt"] = [float(x) for x in n.gt]
    return rec


def serialize(graph: SceneGraph) -> str:
    rec = {"nodes": [_node_record(n) for n in graph.nodes], "edges": [[p, c] for p, c in graph.edges]}
    return json.dumps(rec, separators=(",", ":"), ensure_ascii=False, allow_nan=False)


def _field_error(where, msg):
    raise GraphFormatError(f"{where}: {msg}")


def deserialize(text: str, where: str = "record") -> SceneGraph:
    try:
        rec = json.loads(text)
    except json.JSONDecodeError as exc:
        raise GraphFormatError(f"{where}: parse error at column {exc.colno} (char {exc.pos}): {exc.msg}") from exc
    if not isinstance(rec, dict):
        _field_error(where, "expected an object")
    for key in ("nodes", "edges"):
        if key not in rec:
            _field_error(where, f"missing field {key!r}")
        if not isinstance(rec[key], list):
            _field_error(where, f"field {key!r} must be a list")
    nodes = []
    for i, item in enumerate(rec["nodes"]):
        loc = f"{where}, nodes[{i}]"
        if not isinstance(item, dict):
            _field_error(loc, "expected an object")
        extra = set(item) - {"id", "layer", "label", "sub", "gt"}
        if extra:
            _field_error(loc, f"unknown field(s) {sorted(extra)}")
        try:
            nid, layer, label = item["id"], item["layer"], item["label"]
        except KeyError as exc:
            _field_error(loc, f"missing field {exc.args[0]!r}")
        if not isinstance(nid, int) or isinstance(nid, bool):
            _field_error(loc + ".id", "expected an integer")
        if not isinstance(layer, str) or not isinstance(label, str):
            _field_error(loc, "layer and label must be strings")
        sub = item.get("sub")
        if sub is not None and not isinstance(sub, str):
            _field_error(loc + ".sub", "expected a string")
        gt = item.get("gt")
        if gt is not None:
            if not isinstance(gt, list) or not all(
                isinstance(x, (int, float)) and not isinstance(x, bool) for x in gt
            ):
                _field_error(loc + ".gt", "expected a list of numbers")
            gt = tuple(float(x) for x in gt)
        nodes.append(Node(nid, layer, label, sub, gt))
    edges = []
    for i, e in enumerate(rec["edges"]):
        if (
            not isinstance(e, list) or len(e) != 2
            or not all(isinstance(x, int) and not isinstance(x, bool) for x in e)
        ):
            _field_error(f"{where}, edges[{i}]", "expected [parent, child] integer pair")
        edges.append((e[0], e[1]))
    return SceneGraph(tuple(nodes), tuple(edges))


def write_corpus(graphs: Iterable[SceneGraph], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for g in graphs:
            fh.write(serialize(g))
            fh.write("\n")


def read_corpus(path) -> list[SceneGraph]:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise GraphFormatError(f"{path}: cannot read: {exc.strerror}") from exc
    graphs = []
    for lineno, line in enumerate(text.split("\n"), start=1):
        if not line.strip():
            continue
        graphs.append(deserialize(line, where=f"{path}:{lineno}"))
    return graphs
