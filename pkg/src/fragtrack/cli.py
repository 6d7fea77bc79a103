"""Command-line pipeline driver.

Subcommands cover the full pipeline: simulate ground-truth sequences,
composite synthetic detector-training images, detect, featurize pairs, train
and compare relation classifiers, predict, reconstruct lineage, compute
breakup statistics, and evaluate. `run-all` chains everything under one output
directory with derived seeds.

Every stochastic command requires --seed and records a manifest (version,
seed, resolved flags, input hashes); artifacts are deterministic functions of
the manifest. Exit codes: 1 usage, 2 I/O, 3 validation, 4 internal invariant
violation. Errors print one JSON line on stderr.
"""

from __future__ import annotations

import argparse
import json
import os
import re
import sys
from pathlib import Path

OUT_ROOT_ENV = "FRAGTRACK_OUT_ROOT"  # default output root; flags still win

import numpy as np

from . import __version__, serialization as ser
from .core import Frame, InvariantError, RelationLabel, ValidationError
from .detect import DetectParams, detect_objects
from .lineage import (
    Edge,
    LineageGraph,
    LinkThresholds,
    build_graph,
    compute_stats,
    fragmentation_trees,
)
from .metrics import map_range, match_detections, relation_report, feature_correlation
from .nn import (
    ModelConfig,
    RelationModel,
    TrainConfig,
    compare_models,
    derive_seed,
    stratified_kfold,
    stratified_split,
    train,
)
from .relate import FEATURE_NAMES, GateParams, build_pair_dataset
from .synthgen import SimConfig, compose_synthetic, sample_bank, simulate_sequence


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _emit_error(category: str, message: str):
    sys.stderr.write(json.dumps({"error": category, "message": message}) + "\n")


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        parser, subparsers = build_parser()
        _apply_config_file(argv, subparsers)
        args = parser.parse_args(argv)
        if not hasattr(args, "handler"):
            raise UsageError("a subcommand is required")
        if getattr(args, "out", "") is None:
            root = os.environ.get(OUT_ROOT_ENV)
            if not root:
                raise UsageError(f"--out is required (or set {OUT_ROOT_ENV})")
            args.out = str(Path(root) / args.command)
        args.handler(args)
        return 0
    except UsageError as exc:
        _emit_error("usage", str(exc))
        return 1
    except OSError as exc:
        _emit_error("io", str(exc))
        return 2
    except ValidationError as exc:
        _emit_error("validation", str(exc))
        return 3
    except InvariantError as exc:
        _emit_error("internal", str(exc))
        return 4
    except Exception as exc:  # unexpected: still an internal failure
        _emit_error("internal", f"{type(exc).__name__}: {exc}")
        return 4


def _apply_config_file(argv, subparsers):
    """key=value config files act as subcommand defaults; flags still win."""
    if "--config" not in argv:
        return
    position = argv.index("--config")
    if position + 1 >= len(argv):
        raise UsageError("--config requires a file path")
    path = Path(argv[position + 1])
    if not path.exists():
        raise UsageError(f"config file {path} not found")
    overrides = {}
    for line_number, line in enumerate(path.read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{line_number}: expected key=value")
        key, _, value = line.partition("=")
        overrides[key.strip().replace("-", "_")] = value.strip()
    command = next((a for a in argv if not a.startswith("-")), None)
    if command not in subparsers:
        raise UsageError("--config requires a known subcommand")
    sub = subparsers[command]
    typed = {}
    for action in sub._actions:
        if action.dest in overrides:
            raw = overrides.pop(action.dest)
            if action.type is not None:
                typed[action.dest] = action.type(raw)
            elif isinstance(action, (argparse._StoreTrueAction, argparse.BooleanOptionalAction)):
                typed[action.dest] = raw.lower() in ("1", "true", "yes")
            else:
                typed[action.dest] = raw
    if overrides:
        raise UsageError(f"unknown config keys: {sorted(overrides)}")
    sub.set_defaults(**typed)


def _relative_flags(args, out_dir: Path) -> dict:
    """Resolved flags with paths relativized so reruns are byte-identical."""
    flags = {}
    for key, value in vars(args).items():
        if key in ("handler", "config"):
            continue
        if isinstance(value, Path) or (isinstance(value, str) and key in _PATH_FLAGS):
            p = Path(value).resolve()
            try:
                value = p.relative_to(out_dir.resolve()).as_posix() or "."
            except ValueError:
                value = p.name  # content is hashed separately
        flags[key] = value
    return flags


_PATH_FLAGS = {
    "out", "data", "images", "features", "model", "scored", "annotations",
    "graph", "pred", "truth", "splits",
}


def _manifest(args, out_dir: Path, inputs: dict[str, str], name="manifest.json"):
    out_dir.mkdir(parents=True, exist_ok=True)
    ser.write_manifest(
        out_dir / name,
        command=args.handler.__name__.removeprefix("cmd_").replace("_", "-"),
        seed=getattr(args, "seed", None),
        flags=_relative_flags(args, out_dir),
        inputs=inputs,
    )


# ---------------------------------------------------------------------------
# Subcommand implementations
# ---------------------------------------------------------------------------


def _sim_config_from_args(args) -> SimConfig:
    return SimConfig(
        n_frames=args.frames,
        n_ligaments=args.n_ligaments,
        n_droplets=args.n_droplets,
        p_breakup=args.p_breakup,
        fragment_range=(args.fragment_min, args.fragment_max),
        speed_range=(args.speed_min, args.speed_max),
        area_noise=args.area_noise,
        dt_s=args.dt,
    )


def _write_sequence(seq_dir: Path, packet, image_format: str):
    seq_dir.mkdir(parents=True, exist_ok=True)
    for i, image in enumerate(packet.frames):
        ser.write_image(seq_dir / f"frame{i:03d}.{image_format}", image, image_format)
    objects = [o for frame in packet.truth_frames for o in frame.objects]
    ser.write_annotations(seq_dir / "annotations.jsonl", objects)
    ser.write_relations(seq_dir / "relations.jsonl", packet.truth_relations)
    ser.write_json(
        seq_dir / "sequence.json",
        {
            "width": packet.config.width,
            "height": packet.config.height,
            "dt_s": packet.config.dt_s,
            "n_frames": packet.config.n_frames,
            "seed": packet.seed,
        },
    )


def cmd_simulate(args):
    out = Path(args.out)
    config = _sim_config_from_args(args)
    config.validate()
    for index in range(args.sequences):
        packet = simulate_sequence(config, derive_seed(args.seed, index))
        _write_sequence(out / f"seq{index:03d}", packet, args.image_format)
    _manifest(args, out, inputs={})


def cmd_synth_gen(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    bank_seed = args.bank_seed if args.bank_seed is not None else derive_seed(args.seed, 999)
    bank = sample_bank(bank_seed, n_ligaments=args.bank_ligaments, n_droplets=args.bank_droplets)
    all_annotations = []
    for index in range(args.count):
        image, annotations = compose_synthetic(
            bank, derive_seed(args.seed, index), frame_index=index
        )
        ser.write_image(out / f"comp{index:03d}.{args.image_format}", image, args.image_format)
        all_annotations.extend(annotations)
    ser.write_annotations(out / "annotations.jsonl", all_annotations)
    _manifest(args, out, inputs={})


def _frame_number(path: Path) -> int:
    match = re.search(r"(\d+)$", path.stem)
    if match is None:
        raise ValidationError(f"cannot infer a frame number from {path.name}")
    return int(match.group(1))


def cmd_detect(args):
    images_dir = Path(args.images)
    paths = sorted(
        [p for p in images_dir.iterdir() if p.suffix.lower() in (".png", ".pgm")],
        key=_frame_number,
    )
    if not paths:
        raise ValidationError(f"no .png/.pgm images in {images_dir}")
    params = DetectParams(
        threshold=args.threshold,
        min_area=args.min_area,
        sheet_fraction=args.sheet_fraction,
        eccentricity_threshold=args.eccentricity_threshold,
        aspect_threshold=args.aspect_threshold,
    )
    objects = []
    for path in paths:
        image = ser.read_image(path)
        objects.extend(detect_objects(image, params, frame_index=_frame_number(path)))
    out = Path(args.out)
    ser.write_annotations(out / "annotations.jsonl", objects)
    _manifest(args, out, inputs={p.name: str(p) for p in paths})


def _sequence_dirs(data_dir: Path) -> list[Path]:
    if (data_dir / "annotations.jsonl").exists():
        return [data_dir]
    seq_dirs = sorted(p for p in data_dir.iterdir() if p.is_dir() and p.name.startswith("seq"))
    if not seq_dirs:
        raise ValidationError(f"{data_dir} has neither annotations.jsonl nor seq*/ dirs")
    return seq_dirs


def _load_sequence(seq_dir: Path, args) -> tuple[list[Frame], list]:
    meta_path = seq_dir / "sequence.json"
    if meta_path.exists():
        meta = ser.read_json(meta_path)
        width, height, dt = int(meta["width"]), int(meta["height"]), float(meta["dt_s"])
    else:
        width, height, dt = args.width, args.height, args.dt
    objects = ser.read_annotations(seq_dir / "annotations.jsonl")
    frames = ser.frames_from_annotations(objects, width, height, dt)
    relations_path = seq_dir / "relations.jsonl"
    relations = ser.read_relations(relations_path) if relations_path.exists() else []
    return frames, relations


def cmd_featurize(args):
    data_dir = Path(args.data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    gate_params = GateParams(max_dist_px=args.max_dist_px, max_dist_norm=args.max_dist_norm)

    all_samples = []
    gated_truth_report = []
    counts = {label: 0 for label in RelationLabel}
    labeled = False
    frame_offset = 0
    inputs = {}
    for seq_dir in _sequence_dirs(data_dir):
        frames, relations = _load_sequence(seq_dir, args)
        inputs[f"{seq_dir.name}/annotations.jsonl"] = str(seq_dir / "annotations.jsonl")
        if not frames:
            continue
        dataset = build_pair_dataset(
            frames, relations, gate_params, labeled=bool(relations) or args.force_labels
        )
        if relations:
            labeled = True
        for label, n in dataset.class_counts.items():
            counts[label] += n
        gated_truth_report.extend(
            {"sequence": seq_dir.name, "frame": f, "parent": p, "child": c, "label": int(l)}
            for f, p, c, l in dataset.gated_truth
        )
        if frame_offset:
            samples = [_offset_sample(s, frame_offset) for s in dataset.samples]
        else:
            samples = dataset.samples
        all_samples.extend(samples)
        frame_offset += frames[-1].index + 2  # +2 keeps sequences non-adjacent

    ser.write_feature_csv(out / "features.csv", all_samples)
    ser.write_json(out / "gated_truth.json", gated_truth_report)

    splits_doc = {"seed": args.seed, "class_counts": {l.name: counts[l] for l in RelationLabel}}
    if labeled:
        labels = np.array(
            [int(s.label) for s in all_samples if s.label is not None], dtype=np.int64
        )
        train_idx, val_idx, test_idx = stratified_split(
            labels,
            (1.0 - args.val_fraction - args.test_fraction, args.val_fraction, args.test_fraction),
            args.seed,
        )
        folds = stratified_kfold(labels, args.k_folds, args.seed)
        splits_doc.update(
            {
                "train_idx": train_idx.tolist(),
                "val_idx": val_idx.tolist(),
                "test_idx": test_idx.tolist(),
                "folds": [f.tolist() for f in folds],
            }
        )
    ser.write_json(out / "splits.json", splits_doc)
    _manifest(args, out, inputs=inputs)


def _offset_sample(sample, offset):
    from dataclasses import replace

    parent = replace(sample.parent, frame_index=sample.parent.frame_index + offset)
    child = replace(sample.child, frame_index=sample.child.frame_index + offset)
    return replace(sample, parent=parent, child=child)


def _train_config_from_args(args, seed) -> TrainConfig:
    return TrainConfig(
        learning_rate=args.lr,
        weight_decay=args.weight_decay,
        batch_size=args.batch_size,
        patience=args.patience,
        max_epochs=args.max_epochs,
        seed=seed,
    )


def cmd_train(args):
    features_path = Path(args.features)
    _, features, labels = ser.read_feature_csv(features_path)
    if labels is None:
        raise ValidationError("training requires a labeled feature CSV")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    model = RelationModel(ModelConfig(architecture=args.arch, seed=args.seed))
    config = _train_config_from_args(args, args.seed)
    val_data = None
    train_features, train_labels = features, labels
    inputs = {"features.csv": str(features_path)}
    if args.splits:
        splits = ser.read_json(args.splits)
        inputs["splits.json"] = str(args.splits)
        train_idx = np.array(splits["train_idx"], dtype=np.int64)
        val_idx = np.array(splits["val_idx"], dtype=np.int64)
        train_features, train_labels = features[train_idx], labels[train_idx]
        val_data = (features[val_idx], labels[val_idx])
    train(model, train_features, train_labels, config, val_data=val_data)

    ser.write_json(out / "model.json", model.to_checkpoint())
    log_rows = [
        (h["epoch"], "" if h.get("train_loss") is None else repr(h["train_loss"]),
         repr(h["val_f1"]))
        for h in model.history
        if "best" not in h
    ]
    ser.write_csv_rows(out / "training_log.csv", ("epoch", "train_loss", "val_f1"), log_rows)
    _manifest(args, out, inputs=inputs)


def cmd_compare_models(args):
    features_path = Path(args.features)
    _, features, labels = ser.read_feature_csv(features_path)
    if labels is None:
        raise ValidationError("model comparison requires a labeled feature CSV")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = compare_models(
        features,
        labels,
        k_folds=args.k_folds,
        seed=args.seed,
        train_config=_train_config_from_args(args, args.seed),
    )
    header = (
        "model", "avg_accuracy", "avg_precision", "avg_recall",
        "avg_f1", "std_f1", "overall_f1", "avg_f1_macro", "overall_f1_macro",
    )
    csv_rows = [
        (
            r["architecture"], repr(r["avg_accuracy"]), repr(r["avg_precision"]),
            repr(r["avg_recall"]), repr(r["avg_f1"]), repr(r["std_f1"]),
            repr(r["overall_f1"]), repr(r["avg_f1_macro"]), repr(r["overall_f1_macro"]),
        )
        for r in rows
    ]
    ser.write_csv_rows(out / "model_comparison.csv", header, csv_rows)
    ser.write_json(out / "model_comparison.json", rows)
    _manifest(args, out, inputs={"features.csv": str(features_path)})


def cmd_predict(args):
    features_path = Path(args.features)
    meta, features, labels = ser.read_feature_csv(features_path)
    model = RelationModel.from_checkpoint(ser.read_json(args.model))
    probabilities = model.predict_proba(features)

    annotations = ser.read_annotations(args.annotations)
    by_key = {(o.frame_index, o.id): o for o in annotations}
    from .relate import RelationSample, compute_features

    samples = []
    for (frame, parent_id, child_id), label in zip(
        meta, labels if labels is not None else [None] * len(meta)
    ):
        parent = by_key.get((frame, parent_id))
        child = by_key.get((frame + 1, child_id))
        if parent is None or child is None:
            raise ValidationError(
                f"feature row ({frame}, {parent_id}, {child_id}) missing from annotations"
            )
        samples.append(
            RelationSample(
                parent, child, compute_features(parent, child),
                None if label is None else RelationLabel(int(label)),
            )
        )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ser.write_scored_csv(out / "scored.csv", samples, probabilities)
    _manifest(
        args, out,
        inputs={"features.csv": str(features_path), "model.json": str(args.model),
                "annotations.jsonl": str(args.annotations)},
    )


def cmd_lineage(args):
    annotations = ser.read_annotations(args.annotations)
    frames = ser.frames_from_annotations(annotations, args.width, args.height, args.dt)
    pairs, _ = ser.read_scored_csv(args.scored)
    thresholds = LinkThresholds(tau_move=args.tau_move, tau_break=args.tau_break)
    graph = build_graph(frames, pairs, thresholds)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ser.write_json(out / "graph.json", ser.graph_to_json(graph))
    if args.dot:
        ser.atomic_write_text(out / "graph.dot", ser.graph_to_dot(graph))
    _manifest(
        args, out,
        inputs={"annotations.jsonl": str(args.annotations), "scored.csv": str(args.scored)},
    )


def _graph_from_files(annotations_path, graph_path, width, height, dt):
    annotations = ser.read_annotations(annotations_path)
    frames = ser.frames_from_annotations(annotations, width, height, dt)
    doc = ser.read_json(graph_path)
    nodes = {obj.key: obj for frame in frames for obj in frame.objects}
    edges = [
        Edge(
            parent=tuple(e["from"]),
            child=tuple(e["to"]),
            kind=RelationLabel[e["type"]],
            probability=float(e["prob"]),
        )
        for e in doc["edges"]
    ]
    graph = LineageGraph(nodes=nodes, edges=edges)
    graph.validate()
    return graph


def cmd_stats(args):
    graph = _graph_from_files(args.annotations, args.graph, args.width, args.height, args.dt)
    trees = fragmentation_trees(graph)
    stats = compute_stats(graph, trees, px_size_m=args.px_size, dt_s=args.dt)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name, (header, rows) in ser.stats_to_csv_rows(stats).items():
        ser.write_csv_rows(out / f"stats_{name}.csv", header, rows)
    ser.write_json(out / "stats_summary.json", stats.summary())
    if args.svg:
        ser.atomic_write_text(
            out / "diameter_histogram.svg",
            ser.diameter_histogram_svg(stats.droplet_diameters_m),
        )
    _manifest(
        args, out,
        inputs={"annotations.jsonl": str(args.annotations), "graph.json": str(args.graph)},
    )


def cmd_eval_detect(args):
    pred = ser.read_annotations(args.pred)
    truth = ser.read_annotations(args.truth)
    result = match_detections(pred, truth, iou_thr=args.iou)
    ap = map_range(pred, truth)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    header = ("mAP50", "mAP50_95", "precision", "recall", "f1",
              "AP50_D", "AP50_L", "AP50_95_D", "AP50_95_L")
    row = [
        repr(ap.get("mAP50", 0.0)), repr(ap.get("mAP50_95", 0.0)),
        repr(result.precision), repr(result.recall), repr(result.f1),
        repr(ap.get("AP50_D", 0.0)), repr(ap.get("AP50_L", 0.0)),
        repr(ap.get("AP50_95_D", 0.0)), repr(ap.get("AP50_95_L", 0.0)),
    ]
    ser.write_csv_rows(out / "detection_report.csv", header, [row])
    ser.write_json(
        out / "detection_report.json",
        {
            "iou_threshold": args.iou,
            "tp": result.tp, "fp": result.fp, "fn": result.fn,
            "precision": result.precision, "recall": result.recall, "f1": result.f1,
            **{k: float(v) for k, v in ap.items()},
        },
    )
    _manifest(args, out, inputs={"pred": str(args.pred), "truth": str(args.truth)})


def cmd_eval_relate(args):
    pairs, labels = ser.read_scored_csv(args.scored)
    if labels is None:
        raise ValidationError("eval-relate requires a scored CSV with labels")
    probs = np.array([[p.p_none, p.p_move, p.p_break] for p in pairs])
    preds = np.argmax(probs, axis=1) - 1
    report = relation_report(preds, labels)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = [(name, value if isinstance(value, str) else repr(value))
            for name, value in report.rows()]
    rows.append(("gate_dist_px", repr(args.note_gate_px)))
    rows.append(("gate_dist_norm", repr(args.note_gate_norm)))
    ser.write_csv_rows(out / "relation_report.csv", ("metric", "value"), rows)
    ser.write_csv_rows(
        out / "confusion.csv",
        ("true\\pred", "NONE", "MOVE", "BREAKUP"),
        [
            (name, *[int(v) for v in row])
            for name, row in zip(("NONE", "MOVE", "BREAKUP"), report.confusion)
        ],
    )
    ser.write_json(
        out / "relation_report.json",
        {
            "accuracy": report.accuracy,
            "precision_weighted": report.precision_weighted,
            "recall_weighted": report.recall_weighted,
            "f1_weighted": report.f1_weighted,
            "precision_macro": report.precision_macro,
            "recall_macro": report.recall_macro,
            "f1_macro": report.f1_macro,
            "per_class_recall": {
                k.name: v for k, v in report.per_class_recall.items()
            },
            "confusion": report.confusion.tolist(),
        },
    )
    _manifest(args, out, inputs={"scored.csv": str(args.scored)})


def cmd_feature_report(args):
    _, features, labels = ser.read_feature_csv(args.features)
    matrix = feature_correlation(features, labels)
    names = list(FEATURE_NAMES) + (["label"] if labels is not None else [])
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = [(names[i], *[repr(v) for v in matrix[i]]) for i in range(len(names))]
    ser.write_csv_rows(out / "feature_correlation.csv", ("feature", *names), rows)
    _manifest(args, out, inputs={"features.csv": str(args.features)})


def cmd_run_all(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    # 1. simulated training corpus
    corpus_dir = out / "corpus"
    sim_args = argparse.Namespace(
        out=corpus_dir, seed=derive_seed(args.seed, 1), sequences=args.sequences,
        frames=args.frames, n_ligaments=args.n_ligaments, n_droplets=args.n_droplets,
        p_breakup=args.p_breakup, fragment_min=2, fragment_max=3,
        speed_min=2.0, speed_max=9.0, area_noise=args.area_noise, dt=args.dt,
        image_format=args.image_format, handler=cmd_simulate,
    )
    cmd_simulate(sim_args)

    # 2. featurize the corpus (dataset gate)
    features_dir = out / "features"
    feat_args = argparse.Namespace(
        data=corpus_dir, out=features_dir, seed=derive_seed(args.seed, 2),
        max_dist_px=64.0, max_dist_norm=5.0, val_fraction=0.15, test_fraction=0.15,
        k_folds=5, width=256, height=256, dt=args.dt, force_labels=False,
        handler=cmd_featurize,
    )
    cmd_featurize(feat_args)

    # 3. train the transformer relation classifier
    model_dir = out / "model"
    train_args = argparse.Namespace(
        features=features_dir / "features.csv", splits=features_dir / "splits.json",
        out=model_dir, arch="transformer_mlp", seed=derive_seed(args.seed, 3),
        lr=1e-3, weight_decay=1e-4, batch_size=64, patience=args.patience,
        max_epochs=args.max_epochs, handler=cmd_train,
    )
    cmd_train(train_args)

    # 4. architecture comparison table
    if args.compare:
        compare_args = argparse.Namespace(
            features=features_dir / "features.csv", out=out / "comparison",
            seed=derive_seed(args.seed, 4), k_folds=3, lr=1e-3, weight_decay=1e-4,
            batch_size=64, patience=min(args.patience, 8),
            max_epochs=min(args.max_epochs, 25), handler=cmd_compare_models,
        )
        cmd_compare_models(compare_args)

    # 5. held-out relation evaluation on the test split
    splits = ser.read_json(features_dir / "splits.json")
    meta, features, labels = ser.read_feature_csv(features_dir / "features.csv")
    test_idx = np.array(splits["test_idx"], dtype=np.int64)
    model = RelationModel.from_checkpoint(ser.read_json(model_dir / "model.json"))
    test_probs = model.predict_proba(features[test_idx])
    eval_dir = out / "eval_relate"
    eval_dir.mkdir(parents=True, exist_ok=True)
    preds = np.argmax(test_probs, axis=1) - 1
    report = relation_report(preds, labels[test_idx])
    rows = [(name, value if isinstance(value, str) else repr(value))
            for name, value in report.rows()]
    rows.append(("gate_dist_px", repr(64.0)))
    rows.append(("gate_dist_norm", repr(5.0)))
    ser.write_csv_rows(eval_dir / "relation_report.csv", ("metric", "value"), rows)
    ser.write_json(eval_dir / "confusion.json", report.confusion.tolist())

    # 6. feature correlation table
    corr_args = argparse.Namespace(
        features=features_dir / "features.csv", out=out / "feature_report",
        handler=cmd_feature_report,
    )
    cmd_feature_report(corr_args)

    # 7. compositor images, detection, detection evaluation
    synth_dir = out / "composites"
    synth_args = argparse.Namespace(
        out=synth_dir, seed=derive_seed(args.seed, 5), count=args.composites,
        bank_seed=None, bank_ligaments=8, bank_droplets=24,
        image_format=args.image_format, handler=cmd_synth_gen,
    )
    cmd_synth_gen(synth_args)
    detect_dir = out / "detections"
    detect_args = argparse.Namespace(
        images=synth_dir, out=detect_dir, threshold=128, min_area=4,
        sheet_fraction=0.25, eccentricity_threshold=0.92, aspect_threshold=2.5,
        handler=cmd_detect,
    )
    cmd_detect(detect_args)
    eval_det_args = argparse.Namespace(
        pred=detect_dir / "annotations.jsonl", truth=synth_dir / "annotations.jsonl",
        out=out / "eval_detect", iou=0.5, handler=cmd_eval_detect,
    )
    cmd_eval_detect(eval_det_args)

    # 8. fresh inference sequence: featurize (inference gate), predict,
    #    lineage, statistics
    infer_dir = out / "inference_sequence"
    infer_sim_args = argparse.Namespace(
        out=infer_dir, seed=derive_seed(args.seed, 6), sequences=1,
        frames=args.frames, n_ligaments=args.n_ligaments, n_droplets=args.n_droplets,
        p_breakup=args.p_breakup, fragment_min=2, fragment_max=3,
        speed_min=2.0, speed_max=9.0, area_noise=args.area_noise, dt=args.dt,
        image_format=args.image_format, handler=cmd_simulate,
    )
    cmd_simulate(infer_sim_args)
    seq_dir = infer_dir / "seq000"
    infer_feat_args = argparse.Namespace(
        data=seq_dir, out=out / "inference_features", seed=derive_seed(args.seed, 7),
        max_dist_px=64.0, max_dist_norm=GateParams.INFERENCE_DIST_NORM,
        val_fraction=0.15, test_fraction=0.15, k_folds=5,
        width=256, height=256, dt=args.dt, force_labels=False, handler=cmd_featurize,
    )
    cmd_featurize(infer_feat_args)
    predict_args = argparse.Namespace(
        features=out / "inference_features" / "features.csv",
        model=model_dir / "model.json",
        annotations=seq_dir / "annotations.jsonl",
        out=out / "scored", handler=cmd_predict,
    )
    cmd_predict(predict_args)
    lineage_args = argparse.Namespace(
        annotations=seq_dir / "annotations.jsonl", scored=out / "scored" / "scored.csv",
        out=out / "lineage", tau_move=args.tau_move, tau_break=args.tau_break,
        width=256, height=256, dt=args.dt, dot=True, handler=cmd_lineage,
    )
    cmd_lineage(lineage_args)
    stats_args = argparse.Namespace(
        annotations=seq_dir / "annotations.jsonl", graph=out / "lineage" / "graph.json",
        out=out / "stats", px_size=args.px_size, dt=args.dt, width=256, height=256,
        svg=True, handler=cmd_stats,
    )
    cmd_stats(stats_args)

    _manifest(args, out, inputs={})


# ---------------------------------------------------------------------------
# Parser construction
# ---------------------------------------------------------------------------


def _add_common_sim_flags(p):
    p.add_argument("--frames", type=int, default=8)
    p.add_argument("--n-ligaments", type=int, default=4)
    p.add_argument("--n-droplets", type=int, default=14)
    p.add_argument("--p-breakup", type=float, default=0.12)
    p.add_argument("--area-noise", type=float, default=0.0)
    p.add_argument("--dt", type=float, default=1.0 / 5120.0)
    p.add_argument("--image-format", choices=("png", "pgm"), default="png")


def _add_dims_flags(p):
    p.add_argument("--width", type=int, default=256)
    p.add_argument("--height", type=int, default=256)
    p.add_argument("--dt", type=float, default=1.0 / 5120.0)


def build_parser():
    parser = _Parser(prog="fragtrack", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command")
    registry = {}

    def register(name, handler, **kwargs):
        p = sub.add_parser(name, **kwargs)
        p.add_argument("--config", default=None, help="key=value defaults file")
        p.set_defaults(handler=handler)
        registry[name] = p
        return p

    p = register("simulate", cmd_simulate, help="generate ground-truth breakup sequences")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--sequences", type=int, default=1)
    p.add_argument("--fragment-min", type=int, default=2)
    p.add_argument("--fragment-max", type=int, default=4)
    p.add_argument("--speed-min", type=float, default=2.0)
    p.add_argument("--speed-max", type=float, default=9.0)
    _add_common_sim_flags(p)

    p = register("synth-gen", cmd_synth_gen, help="composite synthetic detector images")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--count", type=int, default=50)
    p.add_argument("--bank-seed", type=int, default=None)
    p.add_argument("--bank-ligaments", type=int, default=8)
    p.add_argument("--bank-droplets", type=int, default=24)
    p.add_argument("--image-format", choices=("png", "pgm"), default="png")

    p = register("detect", cmd_detect, help="classical detection on a directory of frames")
    p.add_argument("--images", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--threshold", type=int, default=128)
    p.add_argument("--min-area", type=int, default=4)
    p.add_argument("--sheet-fraction", type=float, default=0.25)
    p.add_argument("--eccentricity-threshold", type=float, default=0.92)
    p.add_argument("--aspect-threshold", type=float, default=2.5)

    p = register("featurize", cmd_featurize, help="build gated pair features from annotations")
    p.add_argument("--data", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--max-dist-px", type=float, default=64.0)
    p.add_argument("--max-dist-norm", type=float, default=5.0)
    p.add_argument("--val-fraction", type=float, default=0.15)
    p.add_argument("--test-fraction", type=float, default=0.15)
    p.add_argument("--k-folds", type=int, default=5)
    p.add_argument("--force-labels", action="store_true",
                   help="label pairs NONE even without a relations file")
    _add_dims_flags(p)

    p = register("train", cmd_train, help="train one relation classifier")
    p.add_argument("--features", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--arch", default="transformer_mlp")
    p.add_argument("--splits", default=None)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--weight-decay", type=float, default=1e-4)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--patience", type=int, default=15)
    p.add_argument("--max-epochs", type=int, default=100)

    p = register("compare-models", cmd_compare_models,
                 help="cross-validate all five architectures")
    p.add_argument("--features", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--k-folds", type=int, default=5)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--weight-decay", type=float, default=1e-4)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--patience", type=int, default=15)
    p.add_argument("--max-epochs", type=int, default=60)

    p = register("predict", cmd_predict, help="score pair features with a trained model")
    p.add_argument("--features", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--annotations", required=True)
    p.add_argument("--out", default=None)

    p = register("lineage", cmd_lineage, help="reconstruct the lineage graph")
    p.add_argument("--annotations", required=True)
    p.add_argument("--scored", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--tau-move", type=float, default=0.5)
    p.add_argument("--tau-break", type=float, default=0.3)
    p.add_argument("--dot", action="store_true")
    _add_dims_flags(p)

    p = register("stats", cmd_stats, help="breakup statistics from a lineage graph")
    p.add_argument("--annotations", required=True)
    p.add_argument("--graph", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--px-size", type=float, default=83e-6)
    p.add_argument("--svg", action="store_true")
    _add_dims_flags(p)

    p = register("eval-detect", cmd_eval_detect, help="detector metrics vs truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--iou", type=float, default=0.5)

    p = register("eval-relate", cmd_eval_relate, help="relation classifier metrics")
    p.add_argument("--scored", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--note-gate-px", type=float, default=64.0)
    p.add_argument("--note-gate-norm", type=float, default=5.0)

    p = register("feature-report", cmd_feature_report,
                 help="feature correlation matrix CSV")
    p.add_argument("--features", required=True)
    p.add_argument("--out", default=None)

    p = register("run-all", cmd_run_all, help="full pipeline under one output root")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--sequences", type=int, default=10)
    p.add_argument("--composites", type=int, default=12)
    p.add_argument("--max-epochs", type=int, default=30)
    p.add_argument("--patience", type=int, default=10)
    p.add_argument("--tau-move", type=float, default=0.5)
    p.add_argument("--tau-break", type=float, default=0.3)
    p.add_argument("--px-size", type=float, default=83e-6)
    p.add_argument("--compare", action=argparse.BooleanOptionalAction, default=False)
    _add_common_sim_flags(p)

    return parser, registry


if __name__ == "__main__":
    sys.exit(main())
