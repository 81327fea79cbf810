"""Class vocabulary, affordance groups and ground-truth subcategory vectors.

Ontology files are UTF-8 JSON::

    {
      "format": "ceci-ontology/1",
      "classes": ["chair", "desk", ..., "room", "building"],
      "groups": {"chair": ["carried", "dragged", "stepped"]},
      "subcategories": {"chair": {"office-chair": [0, 1, 0]}}
    }

``classes`` fixes the one-hot feature order and the slot layout. Subcategory
weights are raw, nonnegative annotations; they are normalized on load and the
raw weights are kept so that saving and reloading is exact.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from types import MappingProxyType
from typing import Mapping

import numpy as np

from .errors import OntologyError

FORMAT_TAG = "ceci-ontology/1"
ROOM = "room"
BUILDING = "building"
RESERVED_LABELS = (ROOM, BUILDING)


@dataclass(frozen=True)
class Subcategory:
    name: str
    weights: tuple[float, ...]
    vector: tuple[float, ...]


@dataclass(frozen=True, eq=False)
class Ontology:
    class_labels: tuple[str, ...]
    affordance_groups: Mapping[str, tuple[str, ...]]
    subcategories: Mapping[str, tuple[Subcategory, ...]]
    slot_layout: Mapping[str, range] = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        layout = {}
        offset = 0
        for label in self.class_labels:
            group = self.affordance_groups.get(label)
            if group:
                layout[label] = range(offset, offset + len(group))
                offset += len(group)
        object.__setattr__(self, "slot_layout", MappingProxyType(layout))
        object.__setattr__(self, "_index", {c: i for i, c in enumerate(self.class_labels)})
        object.__setattr__(self, "n_slots", offset)

    def __eq__(self, other):
        if not isinstance(other, Ontology):
            return NotImplemented
        return self.to_dict() == other.to_dict()

    def __hash__(self):
        return hash(json.dumps(self.to_dict(), sort_keys=True))

    @property
    def object_classes(self) -> tuple[str, ...]:
        return tuple(c for c in self.class_labels if c not in RESERVED_LABELS)

    @property
    def vocab_size(self) -> int:
        return len(self.class_labels)

    def index(self, label: str) -> int:
        try:
            return self._index[label]
        except KeyError:
            raise OntologyError(f"unknown label {label!r}") from None

    def has_group(self, label: str) -> bool:
        self.index(label)
        return label in self.slot_layout

    def group(self, label: str) -> tuple[str, ...]:
        self.index(label)
        if label not in self.affordance_groups:
            raise OntologyError(f"class {label!r} owns no affordance group")
        return self.affordance_groups[label]

    def slot_names(self) -> list[tuple[str, str]]:
        """(class, affordance) for every global slot, in slot order."""
        out = []
        for label, rng in self.slot_layout.items():
            out.extend((label, a) for a in self.affordance_groups[label])
        return out

    def subcategory(self, label: str, name: str) -> Subcategory:
        self.index(label)
        for sub in self.subcategories.get(label, ()):
            if sub.name == name:
                return sub
        raise OntologyError(f"unknown subcategory {name!r} for class {label!r}")

    def to_dict(self) -> dict:
        return {
            "format": FORMAT_TAG,
            "classes": list(self.class_labels),
            "groups": {c: list(g) for c, g in self.affordance_groups.items()},
            "subcategories": {
                c: {s.name: list(s.weights) for s in subs}
                for c, subs in self.subcategories.items()
            },
        }

    @classmethod
    def from_dict(cls, data: dict, source: str = "<dict>") -> "Ontology":
        return _build(data, source)


def _fail(source, key, msg):
    raise OntologyError(f"{source}: {key}: {msg}")


def _build(data, source):
    if not isinstance(data, dict):
        _fail(source, "<root>", "expected an object")
    fmt = data.get("format", FORMAT_TAG)
    if fmt != FORMAT_TAG:
        _fail(source, "format", f"unsupported format {fmt!r}")

    classes = data.get("classes")
    if not isinstance(classes, list) or not all(isinstance(c, str) and c for c in classes):
        _fail(source, "classes", "expected a list of non-empty strings")
    seen = set()
    for c in classes:
        if c in seen:
            _fail(source, f"classes.{c}", "duplicate class label")
        seen.add(c)
    for reserved in RESERVED_LABELS:
        if reserved not in seen:
            _fail(source, "classes", f"reserved label {reserved!r} missing")

    groups_raw = data.get("groups", {})
    if not isinstance(groups_raw, dict):
        _fail(source, "groups", "expected an object")
    groups = {}
    # key order follows the class order so that equal ontologies serialize identically
    for label in classes:
        if label not in groups_raw:
            continue
        names = groups_raw[label]
        key = f"groups.{label}"
        if label in RESERVED_LABELS:
            _fail(source, key, "reserved labels cannot own an affordance group")
        if not isinstance(names, list) or not names or not all(isinstance(a, str) for a in names):
            _fail(source, key, "expected a non-empty list of affordance names")
        if len(set(names)) != len(names):
            _fail(source, key, "duplicate affordance name")
        groups[label] = tuple(names)
    for label in groups_raw:
        if label not in seen:
            _fail(source, f"groups.{label}", "unknown class label")

    subs_raw = data.get("subcategories", {})
    if not isinstance(subs_raw, dict):
        _fail(source, "subcategories", "expected an object")
    subcats = {}
    for label in subs_raw:
        if label not in seen:
            _fail(source, f"subcategories.{label}", "unknown class label")
    for label in classes:
        if label not in subs_raw:
            continue
        table = subs_raw[label]
        if label not in groups:
            _fail(source, f"subcategories.{label}", "class owns no affordance group")
        if not isinstance(table, dict):
            _fail(source, f"subcategories.{label}", "expected an object")
        entries = []
        for name, weights in table.items():
            key = f"subcategories.{label}.{name}"
            if not isinstance(weights, list) or not all(
                isinstance(w, (int, float)) and not isinstance(w, bool) for w in weights
            ):
                _fail(source, key, "expected a list of numbers")
            if len(weights) != len(groups[label]):
                _fail(
                    source, key,
                    f"vector length mismatch: got {len(weights)}, group size {len(groups[label])}",
                )
            w = [float(x) for x in weights]
            if any(not np.isfinite(x) for x in w):
                _fail(source, key, "non-finite affordance weight")
            if any(x < 0 for x in w):
                _fail(source, key, "negative affordance weight")
            total = float(np.sum(w))
            if total <= 0:
                _fail(source, key, "unnormalizable all-zero annotation")
            entries.append(Subcategory(name, tuple(w), tuple(float(x) / total for x in w)))
        subcats[label] = tuple(entries)

    return Ontology(
        class_labels=tuple(classes),
        affordance_groups=MappingProxyType(groups),
        subcategories=MappingProxyType(subcats),
    )


def load_ontology(path) -> Ontology:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise OntologyError(f"{path}: cannot read: {exc.strerror}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise OntologyError(f"{path}: parse error at line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    return _build(data, str(path))


def dumps_ontology(ontology: Ontology) -> str:
    return json.dumps(ontology.to_dict(), indent=2) + "\n"


def save_ontology(ontology: Ontology, path) -> None:
    Path(path).write_text(dumps_ontology(ontology), encoding="utf-8")


def gt_vector(ontology: Ontology, label: str, subcategory: str) -> np.ndarray:
    """Normalized ground-truth distribution of a subcategory over its class's group."""
    return np.array(ontology.subcategory(label, subcategory).vector, dtype=np.float64)


def slot_range(ontology: Ontology, label: str) -> range | None:
    ontology.index(label)
    return ontology.slot_layout.get(label)


def default_ontology_path() -> Path:
    return Path(str(resources.files("ceci") / "data" / "default_ontology.json"))


def desk_ontology_path() -> Path:
    return Path(str(resources.files("ceci") / "data" / "desk_ontology.json"))
