"""Procedural ground-truth corpora, node-deletion augmentation and base-level splits.

Generator configs are JSON::

    {
      "format": "ceci-generator/1",
      "n_graphs": 300,
      "augment_ratio": 0.2,
      "rooms_per_building": {"2": 0.3, "3": 0.4, "4": 0.3},
      "archetypes": [
        {"name": "office", "weight": 1.0,
         "objects": {"desk": [0.0, 0.6, 0.4], "chair": [0.0, 0.3, 0.4, 0.3]},
         "subcategories": {"chair": {"office-chair": 0.95, "dining-chair": 0.05}}}
      ]
    }

``objects`` maps a class to a distribution over instance counts 0, 1, 2, ...
Each room records its archetype name as the room node's subcategory.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError
from .ontology import ROOM, BUILDING, Ontology, RESERVED_LABELS
from .scene_graph import OBJECTS, ROOMS, Node, SceneGraph, relabel

FORMAT_TAG = "ceci-generator/1"
INDEX_FORMAT = "ceci-corpus-index/1"
SPLITS_FORMAT = "ceci-splits/1"
SPLIT_NAMES = ("train", "val", "test")
_PROB_TOL = 1e-9


@dataclass(frozen=True)
class Archetype:
    name: str
    weight: float
    objects: tuple[tuple[str, tuple[float, ...]], ...]
    subcategories: dict[str, tuple[tuple[str, float], ...]]


@dataclass(frozen=True)
class GeneratorConfig:
    archetypes: tuple[Archetype, ...]
    rooms_per_building: tuple[tuple[int, float], ...]
    n_graphs: int = 100
    augment_ratio: float = 0.2

    def archetype_probs(self) -> np.ndarray:
        w = np.array([a.weight for a in self.archetypes], dtype=np.float64)
        return w / w.sum()


def _normalized(values, where):
    vals = [float(v) for v in values]
    if not vals or any(not math.isfinite(v) or v < 0 for v in vals):
        raise ConfigError(f"{where}: probabilities must be finite and nonnegative")
    if abs(math.fsum(vals) - 1.0) > _PROB_TOL:
        raise ConfigError(f"{where}: probabilities sum to {math.fsum(vals)!r}, not 1")
    return tuple(vals)


def parse_generator_config(data: dict, ontology: Ontology, source: str = "<config>") -> GeneratorConfig:
    if not isinstance(data, dict):
        raise ConfigError(f"{source}: expected an object")
    if data.get("format", FORMAT_TAG) != FORMAT_TAG:
        raise ConfigError(f"{source}: format: unsupported {data.get('format')!r}")
    try:
        rooms_raw = data["rooms_per_building"]
        arch_raw = data["archetypes"]
    except KeyError as exc:
        raise ConfigError(f"{source}: missing field {exc.args[0]!r}") from None

    if not isinstance(rooms_raw, dict) or not rooms_raw:
        raise ConfigError(f"{source}: rooms_per_building: expected a non-empty object")
    try:
        counts = [int(k) for k in rooms_raw]
    except ValueError:
        raise ConfigError(f"{source}: rooms_per_building: keys must be integers") from None
    if any(c < 0 for c in counts):
        raise ConfigError(f"{source}: rooms_per_building: negative room count")
    probs = _normalized(rooms_raw.values(), f"{source}: rooms_per_building")
    rooms = tuple(zip(counts, probs))

    if not isinstance(arch_raw, list) or not arch_raw:
        raise ConfigError(f"{source}: archetypes: expected a non-empty list")
    archetypes = []
    for i, a in enumerate(arch_raw):
        where = f"{source}: archetypes[{i}]"
        name = a.get("name")
        if not isinstance(name, str) or not name:
            raise ConfigError(f"{where}.name: expected a string")
        where = f"{source}: archetypes.{name}"
        weight = float(a.get("weight", 1.0))
        if not math.isfinite(weight) or weight <= 0:
            raise ConfigError(f"{where}.weight: must be positive")
        objects = []
        for label, dist in a.get("objects", {}).items():
            if label not in ontology._index or label in RESERVED_LABELS:
                raise ConfigError(f"{where}.objects.{label}: unknown object class")
            objects.append((label, _normalized(dist, f"{where}.objects.{label}")))
        subs = {}
        for label, table in a.get("subcategories", {}).items():
            if label not in ontology._index:
                raise ConfigError(f"{where}.subcategories.{label}: unknown class")
            for sub_name in table:
                if not any(s.name == sub_name for s in ontology.subcategories.get(label, ())):
                    raise ConfigError(f"{where}.subcategories.{label}.{sub_name}: unknown subcategory")
            p = _normalized(table.values(), f"{where}.subcategories.{label}")
            entries = tuple(zip(table.keys(), p))
            subs[label] = entries
        for label, dist in objects:
            if label in ontology.slot_layout and label not in subs and any(p > 0 for p in dist[1:]):
                raise ConfigError(f"{where}.subcategories.{label}: required for affordance-bearing class")
        archetypes.append(Archetype(name, weight, tuple(objects), subs))

    n_graphs = int(data.get("n_graphs", 100))
    ratio = float(data.get("augment_ratio", 0.2))
    if n_graphs < 1:
        raise ConfigError(f"{source}: n_graphs must be >= 1")
    if not 0 <= ratio < 1:
        raise ConfigError(f"{source}: augment_ratio must be in [0, 1)")
    return GeneratorConfig(tuple(archetypes), rooms, n_graphs, ratio)


def load_generator_config(path, ontology: Ontology) -> GeneratorConfig:
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: parse error at line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    return parse_generator_config(data, ontology, str(path))


def graph_rng(seed: int, index: int) -> np.random.Generator:
    """Per-graph generator; independent of how graphs are distributed over workers."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(index)]))


def sample_graph(config: GeneratorConfig, ontology: Ontology, rng: np.random.Generator) -> SceneGraph:
    counts = [c for c, _ in config.rooms_per_building]
    probs = [p for _, p in config.rooms_per_building]
    n_rooms = counts[rng.choice(len(counts), p=probs)]
    arch_p = config.archetype_probs()

    nodes = [Node(0, "Building", BUILDING)]
    edges = []
    for _ in range(n_rooms):
        arch = config.archetypes[rng.choice(len(config.archetypes), p=arch_p)]
        room_id = len(nodes)
        nodes.append(Node(room_id, ROOMS, ROOM, arch.name))
        edges.append((0, room_id))
        for label, dist in arch.objects:
            k = int(rng.choice(len(dist), p=dist))
            for _ in range(k):
                sub = gt = None
                if label in arch.subcategories:
                    table = arch.subcategories[label]
                    sub = table[rng.choice(len(table), p=[p for _, p in table])][0]
                    if label in ontology.slot_layout:
                        gt = ontology.subcategory(label, sub).vector
                oid = len(nodes)
                nodes.append(Node(oid, OBJECTS, label, sub, gt))
                edges.append((room_id, oid))
    return SceneGraph(tuple(nodes), tuple(edges))


def deletion_count(n_objects: int, ratio: float = 0.2) -> int:
    # exact decimal arithmetic: a float product like ratio * n can land just below an integer
    return math.floor(Fraction(str(ratio)) * n_objects)


def augment(graph: SceneGraph, ratio: float = 0.2, rng: np.random.Generator | None = None) -> list[SceneGraph]:
    """Nested random deletions of object nodes: variant d has d objects removed, d = 1..D."""
    if not 0 <= ratio < 1:
        raise ConfigError(f"augment ratio must be in [0, 1), got {ratio}")
    rng = rng if rng is not None else np.random.default_rng(0)
    object_ids = [n.id for n in graph.objects()]
    depth = deletion_count(len(object_ids), ratio)
    if depth == 0:
        return []
    order = [object_ids[i] for i in rng.permutation(len(object_ids))[:depth]]
    all_ids = [n.id for n in graph.nodes]
    out = []
    for d in range(1, depth + 1):
        gone = set(order[:d])
        out.append(relabel(graph, keep=[i for i in all_ids if i not in gone]))
    return out


@dataclass(frozen=True)
class CorpusEntry:
    base: int
    deleted: int


def generate_corpus(config: GeneratorConfig, ontology: Ontology, seed: int, n_graphs: int | None = None):
    """Ground-truth graphs (each base followed by its augmentations) plus their index entries."""
    n = config.n_graphs if n_graphs is None else n_graphs
    graphs, entries = [], []
    for i in range(n):
        rng = graph_rng(seed, i)
        g = sample_graph(config, ontology, rng)
        graphs.append(g)
        entries.append(CorpusEntry(i, 0))
        for d, aug in enumerate(augment(g, config.augment_ratio, rng), start=1):
            graphs.append(aug)
            entries.append(CorpusEntry(i, d))
    return graphs, entries


def write_index(entries: Sequence[CorpusEntry], path, seed: int) -> None:
    data = {"format": INDEX_FORMAT, "seed": int(seed), "entries": [[e.base, e.deleted] for e in entries]}
    Path(path).write_text(json.dumps(data, separators=(",", ":")) + "\n", encoding="utf-8")


def read_index(path) -> list[CorpusEntry]:
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
        if data.get("format") != INDEX_FORMAT:
            raise ConfigError(f"{path}: not a corpus index")
        return [CorpusEntry(int(b), int(d)) for b, d in data["entries"]]
    except (OSError, json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: unreadable corpus index: {exc}") from exc


def index_path_for(corpus_path) -> Path:
    p = Path(corpus_path)
    return p.with_name(p.name + ".index.json")


def split_counts(n: int, fractions: Sequence[float]) -> list[int]:
    """Largest-remainder apportionment of n items over the fractions."""
    exact = [Fraction(str(f)) * n for f in fractions]
    counts = [math.floor(x) for x in exact]
    leftovers = sorted(range(len(exact)), key=lambda i: (-(exact[i] - counts[i]), i))
    for i in leftovers[: n - sum(counts)]:
        counts[i] += 1
    return counts


def split(base_ids: Sequence[int], fractions=(0.8, 0.1, 0.1), seed: int = 0) -> dict[int, str]:
    """Assign each base graph to train/val/test; augmentations inherit their base's tag."""
    if len(fractions) != 3 or any(f < 0 for f in fractions):
        raise ConfigError("fractions must be three nonnegative numbers")
    if abs(math.fsum(fractions) - 1.0) > 1e-9:
        raise ConfigError(f"split fractions sum to {math.fsum(fractions)!r}, not 1")
    ids = sorted(set(int(b) for b in base_ids))
    counts = split_counts(len(ids), fractions)
    perm = np.random.default_rng(np.random.SeedSequence([int(seed), 0x5B117])).permutation(len(ids))
    tags = {}
    pos = 0
    for name, count in zip(SPLIT_NAMES, counts):
        for k in perm[pos : pos + count]:
            tags[ids[k]] = name
        pos += count
    return tags


def write_splits(tags: dict[int, str], path, seed: int, fractions) -> None:
    data = {
        "format": SPLITS_FORMAT,
        "seed": int(seed),
        "fractions": [float(f) for f in fractions],
        "splits": {name: sorted(b for b, t in tags.items() if t == name) for name in SPLIT_NAMES},
    }
    Path(path).write_text(json.dumps(data, separators=(",", ":")) + "\n", encoding="utf-8")


def read_splits(path) -> dict[int, str]:
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
        if data.get("format") != SPLITS_FORMAT:
            raise ConfigError(f"{path}: not a splits file")
        return {int(b): name for name in SPLIT_NAMES for b in data["splits"][name]}
    except (OSError, json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: unreadable splits file: {exc}") from exc


@dataclass(frozen=True)
class Example:
    graph: SceneGraph  # input view, no ground truth
    targets: dict[int, np.ndarray]
    base: int
    deleted: int
    split: str | None
    source: SceneGraph | None = None  # ground-truth graph the example was derived from


class Dataset(list):
    """List of Examples with split helpers."""

    def of_split(self, name: str) -> "Dataset":
        return Dataset(e for e in self if e.split == name)


def build_dataset(graphs: Sequence[SceneGraph], entries: Sequence[CorpusEntry], tags: dict[int, str] | None = None) -> Dataset:
    if len(graphs) != len(entries):
        raise ConfigError(f"corpus has {len(graphs)} graphs but index lists {len(entries)}")
    out = Dataset()
    for g, e in zip(graphs, entries):
        tag = None if tags is None else tags.get(e.base)
        out.append(Example(g.strip_ground_truth(), g.targets(), e.base, e.deleted, tag, g))
    return out
