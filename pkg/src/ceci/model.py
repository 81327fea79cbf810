"""The CECI network: stacked GCN blocks with a per-group softmax head, plus training and checkpoints.

Checkpoint layout (all integers little-endian)::

    offset  size  content
    0       8     magic b"CECICKPT"
    8       4     uint32 format version (1)
    12      4     uint32 header length H
    16      H     UTF-8 JSON header: config, ontology, tensor table, best epoch, history
    16+H    ...   float64 little-endian tensors, C order, concatenated in tensor-table order
    end-32  32    SHA-256 of every preceding byte
"""

from __future__ import annotations

import hashlib
import json
import logging
import struct
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .datagen import Example
from .errors import CheckpointError, ConfigError, NonFiniteError, TrainingError
from .ontology import Ontology
from .scene_graph import SceneGraph, encode_features
from .tensor_engine import (
    Adam, BatchNorm, Context, Dropout, GCNConv, GroupSoftmax, Linear, ReLU, Sequential,
    mse_loss, normalize_adjacency,
)

log = logging.getLogger(__name__)

MAGIC = b"CECICKPT"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class CeciConfig:
    depth: int = 9
    hidden: int = 64
    dropout: float = 0.5
    epochs: int = 5000
    batch_size: int = 50
    lr: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    decay: float = 5e-6
    decay_mode: str = "weight_decay"
    bn_momentum: float = 0.1
    bn_eps: float = 1e-5
    seed: int = 0

    def __post_init__(self):
        if self.depth < 1 or self.hidden < 1 or self.batch_size < 1 or self.epochs < 1:
            raise ConfigError("depth, hidden width, batch size and epochs must be >= 1")
        if not 0 <= self.dropout < 1:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.lr < 0 or self.decay < 0 or self.adam_eps <= 0 or self.bn_eps <= 0:
            raise ConfigError("learning rate and decay must be >= 0; epsilons > 0")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1 and 0 < self.bn_momentum <= 1):
            raise ConfigError("betas must be in [0, 1) and batchnorm momentum in (0, 1]")
        if self.decay_mode not in ("weight_decay", "schedule"):
            raise ConfigError(f"decay_mode must be 'weight_decay' or 'schedule', got {self.decay_mode!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "CeciConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown model config key(s): {sorted(unknown)}")
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def replace(self, **kw) -> "CeciConfig":
        return CeciConfig.from_dict({**self.to_dict(), **kw})


def load_config(path) -> CeciConfig:
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: parse error at line {exc.lineno}: {exc.msg}") from exc
    return CeciConfig.from_dict(data)


# --- batching -----------------------------------------------------------------

@dataclass(frozen=True)
class GraphTensors:
    adj: sp.csr_matrix
    x: np.ndarray
    target: np.ndarray
    mask: np.ndarray
    labels: np.ndarray  # vocabulary index per node


def graph_tensors(graph: SceneGraph, ontology: Ontology, targets: dict | None = None) -> GraphTensors:
    n = len(graph.nodes)
    x = encode_features(graph, ontology)
    adj = normalize_adjacency(graph.undirected_edges(), n)
    target = np.zeros((n, ontology.n_slots))
    mask = np.zeros((n, ontology.n_slots))
    for node in graph.nodes:
        rng = ontology.slot_layout.get(node.label)
        if rng is None:
            continue
        if targets is None:
            mask[node.id, rng.start:rng.stop] = 1.0
        elif node.id in targets:
            vec = np.asarray(targets[node.id], dtype=np.float64)
            if vec.shape != (len(rng),):
                raise ConfigError(f"node {node.id}: target length {vec.size} != group size {len(rng)}")
            target[node.id, rng.start:rng.stop] = vec
            mask[node.id, rng.start:rng.stop] = 1.0
    labels = np.array([ontology.index(node.label) for node in graph.nodes], dtype=np.int64)
    return GraphTensors(adj, x, target, mask, labels)


@dataclass(frozen=True)
class Batch:
    adj: sp.csr_matrix
    x: np.ndarray
    target: np.ndarray
    mask: np.ndarray
    groups: tuple[tuple[np.ndarray, range], ...]
    offsets: tuple[int, ...]
    sizes: tuple[int, ...]

    @property
    def n_nodes(self):
        return self.x.shape[0]


def collate(parts: Sequence[GraphTensors], ontology: Ontology) -> Batch:
    sizes = tuple(p.x.shape[0] for p in parts)
    offsets = tuple(int(o) for o in np.concatenate([[0], np.cumsum(sizes)[:-1]])) if parts else ()
    adj = sp.block_diag([p.adj for p in parts], format="csr") if parts else sp.csr_matrix((0, 0))
    labels = np.concatenate([p.labels for p in parts]) if parts else np.zeros(0, dtype=np.int64)
    groups = []
    for label, slots in ontology.slot_layout.items():
        rows = np.flatnonzero(labels == ontology.index(label))
        if rows.size:
            groups.append((rows, slots))
    cat = lambda name, width: np.concatenate([getattr(p, name) for p in parts]) if parts else np.zeros((0, width))
    return Batch(
        adj=adj,
        x=cat("x", ontology.vocab_size),
        target=cat("target", ontology.n_slots),
        mask=cat("mask", ontology.n_slots),
        groups=tuple(groups),
        offsets=offsets,
        sizes=sizes,
    )


def batch_graphs(graphs: Sequence[SceneGraph], ontology: Ontology, targets: Sequence[dict] | None = None) -> Batch:
    """Disjoint union of graphs: block-diagonal adjacency, stacked features, targets and mask."""
    if targets is None:
        targets = [None] * len(graphs)
    return collate([graph_tensors(g, ontology, t) for g, t in zip(graphs, targets)], ontology)


# --- model --------------------------------------------------------------------

class CeciModel:
    def __init__(self, ontology: Ontology, config: CeciConfig | None = None):
        self.ontology = ontology
        self.config = config or CeciConfig()
        cfg = self.config
        if ontology.n_slots == 0:
            raise ConfigError("ontology defines no affordance slots")
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 1]))
        layers = []
        fan_in = ontology.vocab_size
        for i in range(cfg.depth):
            layers += [
                (f"gcn{i}", GCNConv(fan_in, cfg.hidden, rng)),
                (f"bn{i}", BatchNorm(cfg.hidden, cfg.bn_momentum, cfg.bn_eps)),
                (f"relu{i}", ReLU()),
                (f"drop{i}", Dropout(cfg.dropout)),
            ]
            fan_in = cfg.hidden
        layers += [("head", Linear(fan_in, ontology.n_slots, rng)), ("softmax", GroupSoftmax())]
        self.net = Sequential(layers)

    def parameters(self) -> dict[str, np.ndarray]:
        return self.net.parameters()

    def buffers(self) -> dict[str, np.ndarray]:
        return self.net.state_buffers()

    def tensors(self) -> dict[str, np.ndarray]:
        return {**self.parameters(), **self.buffers()}

    def forward(self, batch: Batch, train: bool = False, rng: np.random.Generator | None = None) -> np.ndarray:
        ctx = Context(adj=batch.adj, groups=batch.groups, train=train, rng=rng)
        return self.net.forward(batch.x, ctx)

    def backward(self, grad: np.ndarray) -> np.ndarray:
        return self.net.backward(grad)

    def split_predictions(self, batch: Batch, out: np.ndarray) -> list[dict[int, np.ndarray]]:
        """Per graph: node id -> distribution over the node's own slot range."""
        owned = {int(r): slots for rows, slots in batch.groups for r in rows}
        preds = []
        for off, size in zip(batch.offsets, batch.sizes):
            preds.append({
                r - off: out[r, owned[r].start:owned[r].stop].copy()
                for r in range(off, off + size) if r in owned
            })
        return preds

    def predict_batch(self, graphs: Sequence[SceneGraph]) -> list[dict[int, np.ndarray]]:
        batch = batch_graphs(graphs, self.ontology)
        return self.split_predictions(batch, self.forward(batch, train=False))

    def predict(self, graph: SceneGraph) -> dict[int, np.ndarray]:
        return self.predict_batch([graph])[0]

    def snapshot(self) -> dict[str, np.ndarray]:
        return {k: v.copy() for k, v in self.tensors().items()}

    def restore(self, state: dict[str, np.ndarray]) -> None:
        current = self.tensors()
        if set(state) != set(current):
            raise CheckpointError("tensor names do not match the model architecture")
        for k, v in state.items():
            if current[k].shape != v.shape:
                raise CheckpointError(f"{k}: shape {v.shape} != expected {current[k].shape}")
            current[k][...] = v


def masked_mse(model: CeciModel, batch: Batch) -> float:
    """Eval-mode masked MSE over a batch."""
    loss, _ = mse_loss(model.forward(batch, train=False), batch.target, batch.mask)
    return loss


# --- training -----------------------------------------------------------------

@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float | None


@dataclass
class TrainResult:
    model: CeciModel
    history: list[EpochRecord]
    best_epoch: int


def _batches(order, size):
    for start in range(0, len(order), size):
        yield order[start:start + size]


def train(config: CeciConfig, dataset: Sequence[Example], ontology: Ontology, progress=None) -> TrainResult:
    train_ex = [e for e in dataset if e.split == "train"]
    val_ex = [e for e in dataset if e.split == "val"]
    if not train_ex:
        raise TrainingError("empty split: no training examples")

    model = CeciModel(ontology, config)
    train_parts = [graph_tensors(e.graph, ontology, e.targets) for e in train_ex]
    val_batch = collate([graph_tensors(e.graph, ontology, e.targets) for e in val_ex], ontology) if val_ex else None

    opt = Adam(config.lr, config.beta1, config.beta2, config.adam_eps, config.decay, config.decay_mode)
    order_rng = np.random.default_rng(np.random.SeedSequence([config.seed, 2]))
    drop_rng = np.random.default_rng(np.random.SeedSequence([config.seed, 3]))
    params = model.parameters()

    history: list[EpochRecord] = []
    best_state, best_val, best_epoch = model.snapshot(), None, 0
    for epoch in range(1, config.epochs + 1):
        total, weight = 0.0, 0.0
        for idx in _batches(order_rng.permutation(len(train_parts)), config.batch_size):
            batch = collate([train_parts[i] for i in idx], ontology)
            out = model.forward(batch, train=True, rng=drop_rng)
            loss, grad = mse_loss(out, batch.target, batch.mask)
            if not np.isfinite(loss):
                raise _diverged(model, best_state, history, best_epoch, f"non-finite training loss at epoch {epoch}")
            model.backward(grad)
            try:
                opt.step(params, model.net.gradients())
            except NonFiniteError as exc:
                raise _diverged(model, best_state, history, best_epoch, f"epoch {epoch}: {exc}") from exc
            count = float(batch.mask.sum())
            total += loss * count
            weight += count
        train_loss = total / weight if weight else 0.0
        val_loss = masked_mse(model, val_batch) if val_batch is not None else None
        if val_loss is not None and not np.isfinite(val_loss):
            raise _diverged(model, best_state, history, best_epoch, f"non-finite validation loss at epoch {epoch}")
        history.append(EpochRecord(epoch, train_loss, val_loss))
        score = val_loss if val_loss is not None else train_loss
        if best_val is None or score < best_val:
            best_val, best_epoch, best_state = score, epoch, model.snapshot()
        if progress is not None:
            progress(history[-1])
    model.restore(best_state)
    return TrainResult(model, history, best_epoch)


def _diverged(model, best_state, history, best_epoch, msg):
    model.restore(best_state)
    err = TrainingError(msg + "; model reset to the last finite checkpoint")
    err.result = TrainResult(model, history, best_epoch)
    return err


# --- checkpoints --------------------------------------------------------------

def checkpoint_bytes(model: CeciModel, history: Sequence[EpochRecord] = (), best_epoch: int = 0) -> bytes:
    tensors = model.tensors()
    names = list(tensors)
    header = {
        "config": model.config.to_dict(),
        "ontology": model.ontology.to_dict(),
        "tensors": [{"name": k, "shape": list(tensors[k].shape)} for k in names],
        "best_epoch": int(best_epoch),
        "history": [[r.epoch, r.train_loss, r.val_loss] for r in history],
    }
    head = json.dumps(header, separators=(",", ":")).encode("utf-8")
    body = b"".join(np.ascontiguousarray(tensors[k], dtype="<f8").tobytes() for k in names)
    blob = MAGIC + struct.pack("<II", CHECKPOINT_VERSION, len(head)) + head + body
    return blob + hashlib.sha256(blob).digest()


def save_checkpoint(model: CeciModel, path, history: Sequence[EpochRecord] = (), best_epoch: int = 0) -> None:
    Path(path).write_bytes(checkpoint_bytes(model, history, best_epoch))


@dataclass
class Checkpoint:
    model: CeciModel
    history: list[EpochRecord]
    best_epoch: int


def parse_checkpoint(blob: bytes, source: str = "<bytes>") -> Checkpoint:
    if len(blob) < 16 + 32 or blob[:8] != MAGIC:
        raise CheckpointError(f"{source}: not a checkpoint (bad magic or truncated)")
    version, head_len = struct.unpack("<II", blob[8:16])
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{source}: unsupported checkpoint version {version}")
    if hashlib.sha256(blob[:-32]).digest() != blob[-32:]:
        raise CheckpointError(f"{source}: checksum mismatch, file is corrupt")
    try:
        header = json.loads(blob[16:16 + head_len].decode("utf-8"))
        ontology = Ontology.from_dict(header["ontology"], f"{source}:ontology")
        config = CeciConfig.from_dict(header["config"])
    except (ValueError, KeyError) as exc:
        raise CheckpointError(f"{source}: unreadable header: {exc}") from exc
    model = CeciModel(ontology, config)
    pos = 16 + head_len
    state = {}
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        size = int(np.prod(shape)) * 8
        if pos + size > len(blob) - 32:
            raise CheckpointError(f"{source}: tensor {entry['name']} runs past end of file")
        state[entry["name"]] = np.frombuffer(blob, dtype="<f8", count=size // 8, offset=pos).reshape(shape).astype(np.float64)
        pos += size
    if pos != len(blob) - 32:
        raise CheckpointError(f"{source}: {len(blob) - 32 - pos} trailing bytes after tensors")
    model.restore(state)
    history = [EpochRecord(int(e), t, v) for e, t, v in header.get("history", [])]
    return Checkpoint(model, history, int(header.get("best_epoch", 0)))


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise CheckpointError(f"{path}: cannot read: {exc.strerror}") from exc
    return parse_checkpoint(blob, str(path))
