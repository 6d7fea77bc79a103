"""On-disk formats: JSON Lines annotations and relations, CSV feature and
report tables, PNG/PGM frames, model checkpoints, graph exports, and run
manifests.

Everything is written atomically (temp file + rename) and deterministically:
keys are sorted, no timestamps, stable float repr. A manifest records the
package version, seeds, resolved flags, and input hashes so any artifact can
be re-derived.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import os
from pathlib import Path

import numpy as np
from PIL import Image

from . import __version__
from .core import (
    BBox,
    DetectedObject,
    Frame,
    Mask,
    ObjectClass,
    RelationLabel,
    ValidationError,
)
from .lineage import BreakupStats, LineageGraph, ScoredPair
from .relate import FEATURE_NAMES
from .synthgen import TruthRelation

FEATURE_CSV_HEADER = ("frame", "parent_id", "child_id") + FEATURE_NAMES + ("label",)
SCORED_CSV_HEADER = FEATURE_CSV_HEADER + ("p_none", "p_move", "p_break",
                                          "parent_area", "child_area")


def atomic_write_bytes(path, data: bytes):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as handle:
        handle.write(data)
    os.replace(tmp, path)


def atomic_write_text(path, text: str):
    atomic_write_bytes(path, text.encode("utf-8"))


def write_json(path, doc):
    atomic_write_text(path, json.dumps(doc, indent=2, sort_keys=True) + "\n")


def read_json(path):
    with open(path, "r", encoding="utf-8") as handle:
        return json.load(handle)


def sha256_file(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for chunk in iter(lambda: handle.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


def write_manifest(path, command: str, seed, flags: dict, inputs: dict[str, str]):
    """inputs maps logical name -> file path; hashes are recorded."""
    doc = {
        "package": "fragtrack",
        "version": __version__,
        "command": command,
        "seed": seed,
        "flags": {k: _jsonable(v) for k, v in sorted(flags.items())},
        "input_hashes": {
            name: sha256_file(p) for name, p in sorted(inputs.items())
        },
    }
    write_json(path, doc)
    return doc


def _jsonable(value):
    if isinstance(value, Path):
        return str(value)
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.floating,)):
        return float(value)
    if isinstance(value, (tuple, list)):
        return [_jsonable(v) for v in value]
    return value


# ---------------------------------------------------------------------------
# Images
# ---------------------------------------------------------------------------


def write_image(path, image: np.ndarray, image_format: str = "png"):
    image = np.asarray(image, dtype=np.uint8)
    if image.ndim != 2:
        raise ValidationError("frames are written as 2-D grayscale rasters")
    if image_format == "png":
        buffer = io.BytesIO()
        Image.fromarray(image, mode="L").save(buffer, format="PNG")
        atomic_write_bytes(path, buffer.getvalue())
    elif image_format == "pgm":
        header = f"P5\n{image.shape[1]} {image.shape[0]}\n255\n".encode("ascii")
        atomic_write_bytes(path, header + image.tobytes())
    else:
        raise ValidationError(f"unknown image format {image_format!r}; use png or pgm")


def read_image(path) -> np.ndarray:
    path = Path(path)
    if path.suffix.lower() == ".pgm":
        with open(path, "rb") as handle:
            data = handle.read()
        if not data.startswith(b"P5"):
            raise ValidationError(f"{path} is not a binary PGM file")
        parts = data.split(b"\n", 3)
        width, height = (int(v) for v in parts[1].split())
        pixels = np.frombuffer(parts[3], dtype=np.uint8, count=width * height)
        return pixels.reshape(height, width).copy()
    with Image.open(path) as img:
        return np.asarray(img.convert("L"), dtype=np.uint8)


# ---------------------------------------------------------------------------
# Annotations and relations (JSON Lines)
# ---------------------------------------------------------------------------


def annotation_record(obj: DetectedObject) -> dict:
    return {
        "frame": obj.frame_index,
        "id": obj.id,
        "class": obj.object_class.value,
        "bbox": [obj.bbox.x1, obj.bbox.y1, obj.bbox.x2, obj.bbox.y2],
        "area": obj.area,
        "centroid": [obj.centroid[0], obj.centroid[1]],
        "confidence": obj.confidence,
        "mask": _rle_encode(obj.mask),
    }


def _rle_encode(mask: Mask) -> dict:
    """Row-major run lengths, starting with a (possibly zero) off-run."""
    flat = mask.bits.ravel()
    runs = []
    current, count = False, 0
    for bit in flat:
        if bool(bit) == current:
            count += 1
        else:
            runs.append(count)
            current, count = bool(bit), 1
    runs.append(count)
    return {"width": mask.width, "height": mask.height, "runs": runs}


def _rle_decode(doc: dict) -> Mask:
    total = doc["width"] * doc["height"]
    flat = np.zeros(total, dtype=bool)
    position, value = 0, False
    for run in doc["runs"]:
        if value:
            flat[position : position + run] = True
        position += run
        value = not value
    if position != total:
        raise ValidationError("mask run lengths do not cover the raster")
    return Mask(flat.reshape(doc["height"], doc["width"]))


def object_from_record(record: dict) -> DetectedObject:
    mask = _rle_decode(record["mask"])
    x1, y1, x2, y2 = record["bbox"]
    return DetectedObject(
        id=int(record["id"]),
        frame_index=int(record["frame"]),
        bbox=BBox(float(x1), float(y1), float(x2), float(y2)),
        mask=mask,
        centroid=(float(record["centroid"][0]), float(record["centroid"][1])),
        area=int(record["area"]),
        object_class=ObjectClass.from_code(record["class"]),
        confidence=float(record.get("confidence", 1.0)),
    )


def write_annotations(path, objects):
    lines = [json.dumps(annotation_record(o), sort_keys=True) for o in objects]
    atomic_write_text(path, "\n".join(lines) + ("\n" if lines else ""))


def read_annotations(path) -> list[DetectedObject]:
    objects = []
    with open(path, "r", encoding="utf-8") as handle:
        for line in handle:
            line = line.strip()
            if line:
                objects.append(object_from_record(json.loads(line)))
    return objects


def frames_from_annotations(objects, width: int, height: int, dt_s: float) -> list[Frame]:
    by_frame: dict[int, list[DetectedObject]] = {}
    for obj in objects:
        by_frame.setdefault(obj.frame_index, []).append(obj)
    if not by_frame:
        return []
    return [
        Frame(index=i, width=width, height=height,
              objects=tuple(sorted(by_frame.get(i, []), key=lambda o: o.id)), dt_s=dt_s)
        for i in range(min(by_frame), max(by_frame) + 1)
    ]


def write_relations(path, relations):
    lines = [
        json.dumps(
            {"frame": r.frame, "parent": r.parent_id, "child": r.child_id,
             "label": int(r.label)},
            sort_keys=True,
        )
        for r in relations
    ]
    atomic_write_text(path, "\n".join(lines) + ("\n" if lines else ""))


def read_relations(path) -> list[TruthRelation]:
    relations = []
    with open(path, "r", encoding="utf-8") as handle:
        for line in handle:
            line = line.strip()
            if line:
                doc = json.loads(line)
                relations.append(
                    TruthRelation(
                        frame=int(doc["frame"]),
                        parent_id=int(doc["parent"]),
                        child_id=int(doc["child"]),
                        label=RelationLabel.from_code(doc["label"]),
                    )
                )
    return relations


# ---------------------------------------------------------------------------
# Feature tables (CSV)
# ---------------------------------------------------------------------------


def write_feature_csv(path, samples):
    rows = []
    for s in samples:
        f = s.features
        rows.append(
            [
                s.parent.frame_index, s.parent.id, s.child.id,
                repr(f.centroid_dist_px), repr(f.centroid_dist_norm),
                repr(f.bbox_iou), repr(f.area_ratio),
                repr(f.type_consistency),
                "" if s.label is None else int(s.label),
            ]
        )
    _write_csv(path, FEATURE_CSV_HEADER, rows)


def read_feature_csv(path):
    """Returns (meta rows, features array, labels array or None)."""
    meta, features, labels = [], [], []
    any_label = False
    with open(path, "r", encoding="utf-8", newline="") as handle:
        reader = csv.reader(handle)
        header = next(reader)
        if tuple(header[: len(FEATURE_CSV_HEADER)]) != FEATURE_CSV_HEADER:
            raise ValidationError(f"unexpected feature CSV header in {path}")
        for row in reader:
            meta.append((int(row[0]), int(row[1]), int(row[2])))
            features.append([float(v) for v in row[3:8]])
            if row[8] != "":
                labels.append(int(row[8]))
                any_label = True
    features = np.array(features, dtype=np.float64) if features else np.zeros((0, 5))
    if any_label and len(labels) != len(meta):
        raise ValidationError("feature CSV mixes labeled and unlabeled rows")
    return meta, features, (np.array(labels, dtype=np.int64) if any_label else None)


def write_scored_csv(path, samples, probabilities):
    probabilities = np.asarray(probabilities, dtype=np.float64)
    rows = []
    for s, p in zip(samples, probabilities):
        f = s.features
        rows.append(
            [
                s.parent.frame_index, s.parent.id, s.child.id,
                repr(f.centroid_dist_px), repr(f.centroid_dist_norm),
                repr(f.bbox_iou), repr(f.area_ratio), repr(f.type_consistency),
                "" if s.label is None else int(s.label),
                repr(float(p[0])), repr(float(p[1])), repr(float(p[2])),
                repr(float(s.parent.area)), repr(float(s.child.area)),
            ]
        )
    _write_csv(path, SCORED_CSV_HEADER, rows)


def read_scored_csv(path) -> tuple[list[ScoredPair], np.ndarray | None]:
    pairs, labels, any_label = [], [], False
    with open(path, "r", encoding="utf-8", newline="") as handle:
        reader = csv.reader(handle)
        header = next(reader)
        if tuple(header) != SCORED_CSV_HEADER:
            raise ValidationError(f"unexpected scored CSV header in {path}")
        for row in reader:
            pairs.append(
                ScoredPair(
                    frame=int(row[0]), parent_id=int(row[1]), child_id=int(row[2]),
                    p_none=float(row[9]), p_move=float(row[10]), p_break=float(row[11]),
                    parent_area=float(row[12]), child_area=float(row[13]),
                )
            )
            if row[8] != "":
                labels.append(int(row[8]))
                any_label = True
    return pairs, (np.array(labels, dtype=np.int64) if any_label else None)


def write_csv_rows(path, header, rows):
    _write_csv(path, header, rows)


def _write_csv(path, header, rows):
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    atomic_write_text(path, buffer.getvalue())


# ---------------------------------------------------------------------------
# Graph exports
# ---------------------------------------------------------------------------


def graph_to_json(graph: LineageGraph) -> dict:
    return {
        "nodes": [
            {
                "frame": key[0],
                "id": key[1],
                "class": obj.object_class.value,
                "area": obj.area,
                "centroid": [obj.centroid[0], obj.centroid[1]],
            }
            for key, obj in sorted(graph.nodes.items())
        ],
        "edges": [
            {
                "from": list(e.parent),
                "to": list(e.child),
                "type": e.kind.name,
                "prob": e.probability,
            }
            for e in sorted(graph.edges, key=lambda e: (e.parent, e.child))
        ],
    }


def graph_to_dot(graph: LineageGraph) -> str:
    lines = ["digraph lineage {", "  rankdir=LR;"]
    for key, obj in sorted(graph.nodes.items()):
        name = f"f{key[0]}_o{key[1]}"
        shape = "box" if obj.object_class is ObjectClass.LIGAMENT else "ellipse"
        lines.append(f'  {name} [label="{key[0]}:{key[1]}\\n{obj.object_class.value}" shape={shape}];')
    for e in sorted(graph.edges, key=lambda e: (e.parent, e.child)):
        style = "solid" if e.kind is RelationLabel.MOVE else "bold"
        color = "black" if e.kind is RelationLabel.MOVE else "red"
        lines.append(
            f"  f{e.parent[0]}_o{e.parent[1]} -> f{e.child[0]}_o{e.child[1]} "
            f'[style={style} color={color} label="{e.probability:.2f}"];'
        )
    lines.append("}")
    return "\n".join(lines) + "\n"


def stats_to_csv_rows(stats: BreakupStats) -> dict[str, tuple[tuple, list]]:
    """CSV table name -> (header, rows) for every statistics family."""
    tables = {
        "multiplicity": (
            ("fragment_count", "events"),
            [(k, v) for k, v in sorted(stats.multiplicity_histogram.items())],
        ),
        "lifespans": (
            ("track", "frames", "seconds", "right_censored"),
            [
                (i, f, repr(s), int(c))
                for i, (f, s, c) in enumerate(
                    zip(stats.lifespans_frames, stats.lifespans_seconds, stats.lifespan_censored)
                )
            ],
        ),
        "area_ratios": (
            ("event_edge", "parent_over_child"),
            [(i, repr(r)) for i, r in enumerate(stats.parent_child_area_ratios)],
        ),
        "velocities": (
            ("move_edge", "velocity_mps"),
            [(i, repr(v)) for i, v in enumerate(stats.velocities_mps)],
        ),
        "diameters": (
            ("droplet", "diameter_m"),
            [(i, repr(d)) for i, d in enumerate(stats.droplet_diameters_m)],
        ),
    }
    return tables


def diameter_histogram_svg(diameters_m, bins: int = 20) -> str:
    """Tiny deterministic SVG bar chart of the droplet diameter population."""
    diameters = np.asarray(diameters_m, dtype=np.float64) * 1e6  # micrometres
    width, height, margin = 480, 280, 40
    if diameters.size == 0:
        return (
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">'
            "<text x='20' y='30'>no droplets</text></svg>\n"
        )
    counts, edges = np.histogram(diameters, bins=bins)
    top = max(1, counts.max())
    bar_w = (width - 2 * margin) / bins
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
        f'<text x="{margin}" y="20" font-size="12">droplet diameter histogram (um)</text>',
    ]
    for i, count in enumerate(counts):
        bar_h = (height - 2 * margin) * count / top
        x = margin + i * bar_w
        y = height - margin - bar_h
        parts.append(
            f'<rect x="{x:.2f}" y="{y:.2f}" width="{bar_w * 0.9:.2f}" '
            f'height="{bar_h:.2f}" fill="steelblue"/>'
        )
    parts.append(
        f'<text x="{margin}" y="{height - 12}" font-size="10">'
        f"{edges[0]:.1f} .. {edges[-1]:.1f} um, n={diameters.size}</text>"
    )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
