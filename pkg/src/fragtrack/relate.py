"""Candidate pair generation, geometric features, and spatial gating.

Every ordered pair between consecutive frames is encoded with five features:
centroid distance (pixels), centroid distance normalized by the parent's
sqrt-area, bounding-box IoU, area ratio (child over parent), and a binary
type-consistency flag. Pairs whose displacement exceeds the gate thresholds
are discarded before classification; boundary values are kept (the rejection
tests are strictly "greater than").
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import DetectedObject, RelationLabel, ValidationError, bbox_iou

FEATURE_NAMES = (
    "centroid_dist_px",
    "centroid_dist_norm",
    "bbox_iou",
    "area_ratio",
    "type_consistency",
)


@dataclass(frozen=True)
class PairFeatures:
    centroid_dist_px: float
    centroid_dist_norm: float
    bbox_iou: float
    area_ratio: float
    type_consistency: float

    def __post_init__(self):
        values = self.as_array()
        if not np.all(np.isfinite(values)):
            raise ValidationError(f"non-finite pair features: {values}")
        if not 0.0 <= self.bbox_iou <= 1.0:
            raise ValidationError(f"bbox_iou {self.bbox_iou} outside [0, 1]")
        if self.area_ratio <= 0.0:
            raise ValidationError("area_ratio must be positive")
        if self.type_consistency not in (0.0, 1.0):
            raise ValidationError("type_consistency must be 0 or 1")

    def as_array(self) -> np.ndarray:
        return np.array(
            [
                self.centroid_dist_px,
                self.centroid_dist_norm,
                self.bbox_iou,
                self.area_ratio,
                self.type_consistency,
            ],
            dtype=np.float64,
        )


@dataclass(frozen=True)
class RelationSample:
    parent: DetectedObject
    child: DetectedObject
    features: PairFeatures
    label: RelationLabel | None = None

    def __post_init__(self):
        if self.parent.frame_index + 1 != self.child.frame_index:
            raise ValidationError(
                f"pair must span consecutive frames, got "
                f"{self.parent.frame_index} -> {self.child.frame_index}"
            )


@dataclass(frozen=True)
class GateParams:
    """Displacement gate; 5.0 is the dataset default, 8.0 the inference one."""

    max_dist_px: float = 64.0
    max_dist_norm: float = 5.0

    INFERENCE_DIST_NORM = 8.0

    def __post_init__(self):
        if self.max_dist_px <= 0 or self.max_dist_norm <= 0:
            raise ValidationError("gate thresholds must be positive")

    @classmethod
    def for_inference(cls) -> "GateParams":
        return cls(max_dist_px=64.0, max_dist_norm=cls.INFERENCE_DIST_NORM)


def compute_features(o_i: DetectedObject, o_j: DetectedObject) -> PairFeatures:
    dx = o_j.centroid[0] - o_i.centroid[0]
    dy = o_j.centroid[1] - o_i.centroid[1]
    dist = math.hypot(dx, dy)
    return PairFeatures(
        centroid_dist_px=dist,
        centroid_dist_norm=dist / math.sqrt(o_i.area),
        bbox_iou=bbox_iou(o_i.bbox, o_j.bbox),
        area_ratio=o_j.area / o_i.area,
        type_consistency=0.0 if o_i.object_class is o_j.object_class else 1.0,
    )


def gate(sample: RelationSample, params: GateParams = GateParams()) -> bool:
    """True when the pair is kept. Rejection is strict: boundary values pass."""
    f = sample.features
    if f.centroid_dist_px > params.max_dist_px:
        return False
    if f.centroid_dist_norm > params.max_dist_norm:
        return False
    return True


@dataclass
class PairDataset:
    """Gated samples plus bookkeeping the builder emits alongside them."""

    samples: list[RelationSample]
    class_counts: dict[RelationLabel, int]
    gated_truth: list[tuple[int, int, int, RelationLabel]] = field(default_factory=list)

    def feature_matrix(self) -> np.ndarray:
        if not self.samples:
            return np.zeros((0, len(FEATURE_NAMES)))
        return np.stack([s.features.as_array() for s in self.samples])

    def labels(self) -> np.ndarray:
        return np.array(
            [int(s.label) for s in self.samples if s.label is not None], dtype=np.int64
        )

    def imbalance_ratio(self) -> tuple[float, float, float]:
        """(NONE, MOVE, BREAKUP) counts normalized so BREAKUP = 1."""
        breakup = max(1, self.class_counts.get(RelationLabel.BREAKUP, 0))
        return (
            self.class_counts.get(RelationLabel.NONE, 0) / breakup,
            self.class_counts.get(RelationLabel.MOVE, 0) / breakup,
            self.class_counts.get(RelationLabel.BREAKUP, 0) / breakup,
        )


def build_pair_dataset(
    frames,
    truth_relations=(),
    gate_params: GateParams = GateParams(),
    labeled: bool = True,
) -> PairDataset:
    """All ordered cross-frame pairs, gated, labeled from truth (NONE default).

    Truth edges whose pair fails the gate are not silently dropped; they are
    reported in `gated_truth`. Output ordering is deterministic: sorted by
    (frame, parent id, child id).
    """
    frames = sorted(frames, key=lambda f: f.index)
    for a, b in zip(frames, frames[1:]):
        if b.index != a.index + 1:
            raise ValidationError(f"frames not consecutive: {a.index} then {b.index}")

    truth_map: dict[tuple[int, int, int], RelationLabel] = {}
    for rel in truth_relations:
        truth_map[(rel.frame, rel.parent_id, rel.child_id)] = rel.label

    samples: list[RelationSample] = []
    counts = {label: 0 for label in RelationLabel}
    kept_keys: set[tuple[int, int, int]] = set()
    for frame_a, frame_b in zip(frames, frames[1:]):
        for parent in sorted(frame_a.objects, key=lambda o: o.id):
            for child in sorted(frame_b.objects, key=lambda o: o.id):
                key = (frame_a.index, parent.id, child.id)
                label = truth_map.get(key, RelationLabel.NONE) if labeled else None
                sample = RelationSample(parent, child, compute_features(parent, child), label)
                if not gate(sample, gate_params):
                    continue
                kept_keys.add(key)
                samples.append(sample)
                if label is not None:
                    counts[label] += 1

    gated_truth = [
        (frame, parent_id, child_id, label)
        for (frame, parent_id, child_id), label in sorted(truth_map.items())
        if (frame, parent_id, child_id) not in kept_keys
    ]
    return PairDataset(samples=samples, class_counts=counts, gated_truth=gated_truth)
