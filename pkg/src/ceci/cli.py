"""``ceci`` command line: generate, split, fit baselines, train, predict, evaluate.

Exit codes: 0 success, 1 domain error (message on stderr), 2 usage error.
Every command that writes files also writes ``<output>.manifest.json`` recording
the resolved configuration, seed and SHA-256 of every input.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from pathlib import Path

from . import __version__
from . import datagen, evaluation, metrics, oracle
from .errors import CeciError, ConfigError
from .model import CeciConfig, load_checkpoint, load_config, save_checkpoint, train
from .ontology import default_ontology_path, load_ontology
from .scene_graph import read_corpus, validate, write_corpus

log = logging.getLogger("ceci")

PIPELINE_FORMAT = "ceci-pipeline/1"


# --- helpers ------------------------------------------------------------------

def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def dump_json(data, path, indent=None) -> None:
    text = json.dumps(data, indent=indent, separators=None if indent else (",", ":"), allow_nan=False)
    Path(path).write_text(text + "\n", encoding="utf-8")


def write_manifest(out_path, subcommand, inputs, config, seed=None, outputs=()) -> Path:
    manifest = {
        "subcommand": subcommand,
        "tool_version": __version__,
        "seed": seed,
        "config": config,
        "inputs": {str(p): sha256_file(p) for p in inputs if p is not None},
        "outputs": [str(p) for p in ([out_path] + list(outputs))],
    }
    path = Path(str(out_path) + ".manifest.json")
    dump_json(manifest, path, indent=2)
    return path


def _ontology(args):
    return Path(args.ontology) if args.ontology else default_ontology_path()


def _load_dataset(corpus, splits_path=None):
    graphs = read_corpus(corpus)
    entries = datagen.read_index(datagen.index_path_for(corpus))
    tags = datagen.read_splits(splits_path) if splits_path else None
    return datagen.build_dataset(graphs, entries, tags)


def _prediction_record(index, graph, pred, ontology):
    nodes = []
    for nid in sorted(pred):
        label = graph.nodes[nid].label
        nodes.append({
            "id": nid,
            "label": label,
            "affordances": list(ontology.affordance_groups[label]),
            "p": [float(x) for x in pred[nid]],
        })
    return json.dumps({"graph": index, "nodes": nodes}, separators=(",", ":"))


# --- subcommands --------------------------------------------------------------

def cmd_validate(args):
    ontology = load_ontology(args.ontology) if args.ontology else None
    graphs = read_corpus(args.corpus)
    bad = 0
    for i, g in enumerate(graphs):
        for problem in validate(g, ontology):
            print(f"graph {i}: {problem}")
            bad += 1
    print(f"{len(graphs)} graphs, {bad} violations")
    return 1 if bad else 0


def do_gen(ontology_path, config_path, out, seed, n_graphs=None):
    ontology = load_ontology(ontology_path)
    config = datagen.load_generator_config(config_path, ontology)
    graphs, entries = datagen.generate_corpus(config, ontology, seed, n_graphs)
    write_corpus(graphs, out)
    index = datagen.index_path_for(out)
    datagen.write_index(entries, index, seed)
    write_manifest(
        out, "gen", [ontology_path, config_path],
        {"n_graphs": n_graphs or config.n_graphs, "augment_ratio": config.augment_ratio},
        seed, [index],
    )
    return graphs, entries


def cmd_gen(args):
    graphs, entries = do_gen(_ontology(args), args.config, args.out, args.seed, args.n_graphs)
    print(f"wrote {len(graphs)} graphs ({len({e.base for e in entries})} base) to {args.out}")
    return 0


def do_split(corpus, out, seed, fractions):
    entries = datagen.read_index(datagen.index_path_for(corpus))
    tags = datagen.split([e.base for e in entries], fractions, seed)
    datagen.write_splits(tags, out, seed, fractions)
    write_manifest(out, "split", [corpus, datagen.index_path_for(corpus)], {"fractions": list(fractions)}, seed)
    return tags


def cmd_split(args):
    tags = do_split(args.corpus, args.out, args.seed, args.fractions)
    counts = {name: sum(1 for t in tags.values() if t == name) for name in datagen.SPLIT_NAMES}
    print(" ".join(f"{k}={v}" for k, v in counts.items()))
    return 0


def do_oracle_fit(ontology_path, corpus, splits, out, alpha):
    ontology = load_ontology(ontology_path)
    dataset = _load_dataset(corpus, splits)
    # counts come from the ground-truth base graphs only; augmentations repeat their rooms
    train_graphs = [e.source for e in dataset.of_split("train") if e.deleted == 0]
    if not train_graphs:
        raise CeciError("empty split: no training graphs for the frequency table")
    table = oracle.fit(train_graphs, ontology, alpha)
    oracle.save_table(table, out)
    write_manifest(out, "oracle-fit", [ontology_path, corpus, splits], {"alpha": alpha})
    return table


def cmd_oracle_fit(args):
    table = do_oracle_fit(_ontology(args), args.corpus, args.splits, args.out, args.alpha)
    print(f"frequency table over {table.room_count} rooms written to {args.out}")
    return 0


def _select(dataset, split_name):
    return dataset.of_split(split_name) if split_name else dataset


def cmd_oracle_predict(args):
    ontology = load_ontology(_ontology(args))
    table = oracle.load_table(args.table)
    if tuple(ontology.class_labels) != table.class_labels:
        raise ConfigError("frequency table was fitted with a different ontology")
    if args.splits:
        dataset = _select(_load_dataset(args.corpus, args.splits), args.split)
        graphs = [e.graph for e in dataset]
    else:
        graphs = [g.strip_ground_truth() for g in read_corpus(args.corpus)]
    lines = [_prediction_record(i, g, oracle.predict_graph(table, ontology, g), ontology) for i, g in enumerate(graphs)]
    _emit_lines(lines, args.out)
    if args.out:
        write_manifest(args.out, "oracle-predict", [_ontology(args), args.table, args.corpus, args.splits], {"split": args.split})
    return 0


def _emit_lines(lines, out):
    text = "".join(line + "\n" for line in lines)
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def do_train(ontology_path, corpus, splits, config_path, out, seed, epochs=None):
    ontology = load_ontology(ontology_path)
    config = load_config(config_path) if config_path else CeciConfig()
    overrides = {"seed": seed}
    if epochs is not None:
        overrides["epochs"] = epochs
    config = config.replace(**overrides)
    dataset = _load_dataset(corpus, splits)

    def progress(rec):
        if rec.epoch == 1 or rec.epoch % 50 == 0 or rec.epoch == config.epochs:
            log.info("epoch %d train %.6f val %s", rec.epoch, rec.train_loss, rec.val_loss)

    result = train(config, dataset, ontology, progress)
    save_checkpoint(result.model, out, result.history, result.best_epoch)
    write_manifest(out, "train", [ontology_path, corpus, splits, config_path], config.to_dict(), seed)
    return result


def cmd_train(args):
    result = do_train(_ontology(args), args.corpus, args.splits, args.config, args.out, args.seed, args.epochs)
    last = result.history[-1] if result.history else None
    print(f"trained {len(result.history)} epochs, best epoch {result.best_epoch}"
          + (f", final train loss {last.train_loss:.6f}" if last else ""))
    return 0


def cmd_predict(args):
    ckpt = load_checkpoint(args.model)
    model = ckpt.model
    graphs = [g.strip_ground_truth() for g in read_corpus(args.graph)]
    for i, g in enumerate(graphs):
        problems = validate(g, model.ontology)
        if problems:
            raise CeciError(f"graph {i}: " + "; ".join(problems))
    preds = model.predict_batch(graphs) if graphs else []
    _emit_lines([_prediction_record(i, g, p, model.ontology) for i, (g, p) in enumerate(zip(graphs, preds))], args.out)
    if args.out:
        write_manifest(args.out, "predict", [args.model, args.graph], {})
    return 0


def do_eval(model_path, corpus, splits, out, table_path=None, split_name="test", target_classes=None):
    model = load_checkpoint(model_path).model
    dataset = _load_dataset(corpus, splits)
    table = oracle.load_table(table_path) if table_path else None
    report = evaluation.evaluate(
        model, dataset.of_split(split_name), dataset.of_split("train"), table, target_classes, split_name,
    )
    dump_json(report, out, indent=1)
    write_manifest(out, "eval", [model_path, corpus, splits, table_path], {"split": split_name, "target_classes": target_classes})
    return report


def cmd_eval(args):
    report = do_eval(args.model, args.corpus, args.splits, args.out, args.oracle, args.split, args.classes)
    for row in report["moment_table"]["rows"]:
        print(row[0], " ".join("-" if v is None else f"{v:.4f}" for v in row[1:]))
    return 0


def cmd_correlate(args):
    model = load_checkpoint(args.model).model
    dataset = _select(_load_dataset(args.corpus, args.splits), args.split)
    if not dataset:
        raise CeciError(f"no examples in split {args.split!r}")
    examples = list(dataset)
    preds = evaluation.model_predictions(model, examples)
    classes = args.classes or list(model.ontology.slot_layout)
    pred_m, gt_m = evaluation.correlation_pair(examples, preds, model.ontology, classes)
    data = {
        "format": "ceci-correlation/1",
        "predicted": pred_m.to_dict(),
        "ground_truth": gt_m.to_dict(),
        "frobenius": {"per_class": metrics.frobenius_by_class(pred_m, gt_m), "overall": metrics.frobenius_diff(pred_m, gt_m)},
    }
    dump_json(data, args.out, indent=1)
    write_manifest(args.out, "correlate", [args.model, args.corpus, args.splits], {"split": args.split, "classes": classes})
    for c, v in data["frobenius"]["per_class"].items():
        print(f"{c} {v:.4f}")
    return 0


def export_heatmaps(source, out_dir) -> list[Path]:
    data = json.loads(Path(source).read_text(encoding="utf-8"))
    corr = data.get("correlation", data)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for kind in ("predicted", "ground_truth"):
        if kind not in corr:
            raise ConfigError(f"{source}: no {kind!r} correlation matrix")
        matrix = metrics.CorrelationMatrix.from_dict(corr[kind])
        for label in dict.fromkeys(c for c, _ in matrix.rows):
            path = out_dir / f"{label}.{kind}.csv"
            path.write_text(matrix.for_class(label).to_csv(), encoding="utf-8")
            written.append(path)
    return written


def cmd_export_heatmap(args):
    written = export_heatmaps(args.report, args.out)
    write_manifest(Path(args.out) / "heatmaps", "export-heatmap", [args.report], {}, outputs=written)
    print(f"wrote {len(written)} CSV matrices to {args.out}")
    return 0


def run_pipeline(config_path, out_dir, seed) -> dict[str, Path]:
    config_path = Path(config_path)
    try:
        cfg = json.loads(config_path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"{config_path}: unreadable pipeline config: {exc}") from exc
    if cfg.get("format") != PIPELINE_FORMAT:
        raise ConfigError(f"{config_path}: not a pipeline config")
    base = config_path.parent

    def ref(key):
        if key not in cfg:
            raise ConfigError(f"{config_path}: missing {key!r}")
        return base / cfg[key]

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "corpus": out / "corpus.jsonl",
        "splits": out / "splits.json",
        "oracle": out / "oracle.json",
        "model_config": out / "model_config.json",
        "model": out / "model.ckpt",
        "report": out / "report.json",
        "heatmaps": out / "heatmaps",
    }
    fractions = tuple(cfg.get("split", (0.8, 0.1, 0.1)))
    model_cfg = load_config(ref("model")).replace(seed=seed, **cfg.get("model_overrides", {}))
    dump_json(model_cfg.to_dict(), paths["model_config"], indent=2)

    stages = [
        ("gen", lambda: do_gen(ref("ontology"), ref("generator"), paths["corpus"], seed, cfg.get("n_graphs"))),
        ("split", lambda: do_split(paths["corpus"], paths["splits"], seed, fractions)),
        ("oracle-fit", lambda: do_oracle_fit(ref("ontology"), paths["corpus"], paths["splits"], paths["oracle"], float(cfg.get("alpha", 1.0)))),
        ("train", lambda: do_train(ref("ontology"), paths["corpus"], paths["splits"], paths["model_config"], paths["model"], seed)),
        ("eval", lambda: do_eval(paths["model"], paths["corpus"], paths["splits"], paths["report"], paths["oracle"], "test", cfg.get("target_classes"))),
        ("correlate", lambda: export_heatmaps(paths["report"], paths["heatmaps"])),
    ]
    for name, stage in stages:
        log.info("pipeline stage %s", name)
        try:
            stage()
        except CeciError as exc:
            raise CeciError(f"pipeline stage {name}: {exc}") from exc
    write_manifest(
        out / "pipeline", "pipeline", [config_path, ref("ontology"), ref("generator"), ref("model")],
        cfg, seed, [p for p in paths.values()],
    )
    return paths


def cmd_pipeline(args):
    paths = run_pipeline(args.config, args.out, args.seed)
    report = json.loads(paths["report"].read_text(encoding="utf-8"))
    for row in report["moment_table"]["rows"]:
        print(row[0], " ".join("-" if v is None else f"{v:.4f}" for v in row[1:]))
    print("frobenius", " ".join(f"{k}={v:.4f}" for k, v in report["frobenius"]["per_class"].items()))
    return 0


# --- parser -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ceci", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"ceci {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_text):
        p = sub.add_parser(name, help=help_text)
        p.set_defaults(func=func)
        return p

    def ontology_flag(p):
        p.add_argument("--ontology", help="ontology JSON (default: the shipped 45-class ontology)")

    p = add("validate", cmd_validate, "check every graph of a corpus against the structural invariants")
    p.add_argument("corpus")
    ontology_flag(p)

    p = add("gen", cmd_gen, "sample a ground-truth corpus with augmentations")
    ontology_flag(p)
    p.add_argument("--config", required=True, help="generator config JSON")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--n-graphs", type=int, help="override the config's base graph count")

    p = add("split", cmd_split, "assign base graphs to train/val/test")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--fractions", type=float, nargs=3, default=(0.8, 0.1, 0.1), metavar=("TRAIN", "VAL", "TEST"))

    p = add("oracle-fit", cmd_oracle_fit, "count room co-occurrence frequencies on the train split")
    ontology_flag(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--splits", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--alpha", type=float, default=1.0, help="additive smoothing constant")

    p = add("oracle-predict", cmd_oracle_predict, "co-occurrence expectation predictions")
    ontology_flag(p)
    p.add_argument("--table", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--splits")
    p.add_argument("--split", choices=datagen.SPLIT_NAMES)
    p.add_argument("--out")

    p = add("train", cmd_train, "train the CECI model")
    ontology_flag(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--splits", required=True)
    p.add_argument("--config", help="model config JSON (default: 9 layers, width 64, 5000 epochs)")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--epochs", type=int)

    p = add("predict", cmd_predict, "predict affordance distributions for every graph in a file")
    p.add_argument("--model", required=True)
    p.add_argument("--graph", required=True, help="corpus-format file with one or more graphs")
    p.add_argument("--out")

    p = add("eval", cmd_eval, "distance statistics, baselines and correlation comparison")
    p.add_argument("--model", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--splits", required=True)
    p.add_argument("--oracle", help="frequency table to include as a baseline")
    p.add_argument("--split", default="test", choices=datagen.SPLIT_NAMES)
    p.add_argument("--classes", nargs="+", help="target classes for correlation matrices")
    p.add_argument("--out", required=True)

    p = add("correlate", cmd_correlate, "affordance-vs-class correlation matrices")
    p.add_argument("--model", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--splits", required=True)
    p.add_argument("--split", default="test", choices=datagen.SPLIT_NAMES)
    p.add_argument("--classes", nargs="+")
    p.add_argument("--out", required=True)

    p = add("export-heatmap", cmd_export_heatmap, "write correlation matrices as CSV")
    p.add_argument("--report", required=True, help="eval report or correlate output")
    p.add_argument("--out", required=True, help="output directory")

    p = add("pipeline", cmd_pipeline, "gen, split, oracle-fit, train, eval and heatmaps in one go")
    p.add_argument("--config", required=True, help="pipeline config JSON")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, required=True)
    return parser


def run(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        return args.func(args)
    except CeciError as exc:
        print(f"ceci {args.command}: error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"ceci {args.command}: error: {exc}", file=sys.stderr)
        return 1


def main(argv=None):
    sys.exit(run(argv))
