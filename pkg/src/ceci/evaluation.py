"""Report assembly: distances, moment tables, baselines and correlation comparisons."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from . import metrics
from .datagen import Example
from .model import CeciModel, collate, graph_tensors
from .ontology import Ontology
from .oracle import FrequencyTable, predict_graph
from .tensor_engine import mse_loss

REPORT_FORMAT = "ceci-report/1"
NOTES = {
    "wasserstein_ground_metric": "affordance slots placed at integer points 0..n-1 in group order, unit spacing",
    "energy_distance": "exact double sums over the same integer support",
    "correlation_estimator": (
        "entry (affordance k of class X, class c) = mean predicted probability of k over "
        "class-X nodes whose room holds a c instance; the room and building count as present "
        "in every room; null where undefined"
    ),
    "moments": "population estimators; kurtosis is excess (Fisher)",
}


def uniform_predictions(example: Example, ontology: Ontology) -> dict[int, np.ndarray]:
    out = {}
    for n in example.graph.nodes:
        rng = ontology.slot_layout.get(n.label)
        if rng is not None and n.layer == "Objects":
            out[n.id] = np.full(len(rng), 1.0 / len(rng))
    return out


def class_priors(train: Sequence[Example], ontology: Ontology) -> dict[str, np.ndarray]:
    """Mean ground-truth vector per class over the training targets."""
    sums: dict[str, np.ndarray] = {}
    counts: dict[str, int] = {}
    for e in train:
        for nid in sorted(e.targets):
            label = e.graph.nodes[nid].label
            sums[label] = sums.get(label, 0) + e.targets[nid]
            counts[label] = counts.get(label, 0) + 1
    priors = {}
    for label, rng in ontology.slot_layout.items():
        if label in sums:
            v = sums[label] / counts[label]
            priors[label] = v / v.sum()
        else:
            priors[label] = np.full(len(rng), 1.0 / len(rng))
    return priors


def prior_predictions(example: Example, priors) -> dict[int, np.ndarray]:
    return {n.id: priors[n.label].copy() for n in example.graph.nodes if n.label in priors and n.layer == "Objects"}


def _masked_mse_of(preds, examples, ontology):
    parts = [graph_tensors(e.graph, ontology, e.targets) for e in examples]
    batch = collate(parts, ontology)
    full = np.zeros_like(batch.target)
    for off, pred, e in zip(batch.offsets, preds, examples):
        for nid, vec in pred.items():
            label = e.graph.nodes[nid].label
            rng = ontology.slot_layout[label]
            full[off + nid, rng.start:rng.stop] = vec
    loss, _ = mse_loss(full, batch.target, batch.mask)
    return loss


def _summary(samples):
    return {
        "wasserstein": metrics.moment_stats([s.wasserstein for s in samples]).as_dict(),
        "energy": metrics.moment_stats([s.energy for s in samples]).as_dict(),
    }


def model_predictions(model: CeciModel, examples: Sequence[Example]) -> list[dict[int, np.ndarray]]:
    batch = collate([graph_tensors(e.graph, model.ontology, e.targets) for e in examples], model.ontology)
    return model.split_predictions(batch, model.forward(batch, train=False))


def correlation_pair(examples, preds, ontology, target_classes):
    pred_items = [(e.graph, p) for e, p in zip(examples, preds)]
    gt_items = [(e.graph, e.targets) for e in examples]
    return (
        metrics.correlation_matrix(pred_items, ontology, target_classes),
        metrics.correlation_matrix(gt_items, ontology, target_classes),
    )


def evaluate(
    model: CeciModel,
    examples: Sequence[Example],
    train_examples: Sequence[Example],
    table: FrequencyTable | None = None,
    target_classes: Sequence[str] | None = None,
    split_name: str = "test",
) -> dict:
    ontology = model.ontology
    examples = list(examples)
    if not examples:
        raise metrics.MetricError(f"no examples in split {split_name!r}")
    target_classes = list(target_classes or ontology.slot_layout)

    preds = model_predictions(model, examples)
    untrained = CeciModel(ontology, model.config)
    priors = class_priors(train_examples, ontology)
    predictors = {
        "model": preds,
        "untrained": model_predictions(untrained, examples),
        "uniform": [uniform_predictions(e, ontology) for e in examples],
        "class_prior": [prior_predictions(e, priors) for e in examples],
    }
    if table is not None:
        predictors["oracle"] = [predict_graph(table, ontology, e.graph) for e in examples]

    summaries, mse, samples_out = {}, {}, None
    for name, pr in predictors.items():
        samples = metrics.distance_samples(
            (i, e.graph, p, e.targets) for i, (e, p) in enumerate(zip(examples, pr))
        )
        summaries[name] = _summary(samples)
        mse[name] = _masked_mse_of(pr, examples, ontology)
        if name == "model":
            samples_out = samples

    corr_pred, corr_gt = correlation_pair(examples, preds, ontology, target_classes)
    model_moments = summaries["model"]
    table_rows = [
        ["Wasserstein"] + [model_moments["wasserstein"][k] for k in ("mean", "variance", "skewness", "kurtosis")],
        ["Energy"] + [model_moments["energy"][k] for k in ("mean", "variance", "skewness", "kurtosis")],
    ]
    return {
        "format": REPORT_FORMAT,
        "notes": NOTES,
        "split": split_name,
        "n_graphs": len(examples),
        "n_nodes": len(samples_out),
        "moment_table": {"columns": ["Metric", "Mean", "Variance", "Skewness", "Kurtosis"], "rows": table_rows},
        "moments": summaries,
        "masked_mse": mse,
        "correlation": {"predicted": corr_pred.to_dict(), "ground_truth": corr_gt.to_dict()},
        "frobenius": {
            "per_class": metrics.frobenius_by_class(corr_pred, corr_gt),
            "overall": metrics.frobenius_diff(corr_pred, corr_gt),
        },
        "hm3d_reference": {
            "distances": metrics.HM3D_REFERENCE_DISTANCES,
            "frobenius": metrics.HM3D_REFERENCE_FROBENIUS,
        },
        "samples": [
            {"graph": s.graph, "node": s.node, "label": s.label, "wasserstein": s.wasserstein, "energy": s.energy}
            for s in samples_out
        ],
    }
