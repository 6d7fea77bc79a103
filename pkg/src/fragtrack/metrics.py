"""Detection and relation-classification metrics.

Detection metrics use greedy confidence-ordered matching at a fixed IoU
threshold; average precision follows the 101-point interpolation convention
(mean of the precision envelope at recalls 0.00, 0.01, ..., 1.00), with
mAP50-95 averaging the ten IoU thresholds 0.50:0.05:0.95.

Relation metrics report accuracy, weighted and macro precision/recall/F1,
class-wise recall, and the 3x3 confusion matrix with class order
NONE, MOVE, BREAKUP (label codes -1, 0, 1).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .core import ObjectClass, RelationLabel, ValidationError, bbox_iou

RELATION_CLASS_ORDER = (RelationLabel.NONE, RelationLabel.MOVE, RelationLabel.BREAKUP)

MAP_RANGE_THRESHOLDS = tuple((50 + 5 * i) / 100.0 for i in range(10))


# ---------------------------------------------------------------------------
# Detection matching and AP
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MatchResult:
    matches: tuple[tuple[int, int, float], ...]  # (pred idx, truth idx, IoU)
    tp: int
    fp: int
    fn: int

    @property
    def precision(self) -> float:
        return self.tp / (self.tp + self.fp) if self.tp + self.fp else 0.0

    @property
    def recall(self) -> float:
        return self.tp / (self.tp + self.fn) if self.tp + self.fn else 0.0

    @property
    def f1(self) -> float:
        p, r = self.precision, self.recall
        return 2 * p * r / (p + r) if p + r else 0.0


def _group_by_frame(objects):
    grouped: dict[int, list] = {}
    for obj in objects:
        grouped.setdefault(obj.frame_index, []).append(obj)
    return grouped


def match_detections(pred, truth, iou_thr: float = 0.5) -> MatchResult:
    """Greedy per-frame matching by descending confidence, class-equal.

    Each truth object is matched at most once; a prediction matches the
    highest-IoU unmatched truth at or above `iou_thr`.
    """
    pred = list(pred)
    truth = list(truth)
    truth_by_frame = _group_by_frame(truth)
    truth_index = {id(t): i for i, t in enumerate(truth)}

    order = sorted(
        range(len(pred)),
        key=lambda i: (-pred[i].confidence, pred[i].frame_index, pred[i].id),
    )
    matched_truth: set[int] = set()
    matches = []
    fp = 0
    for i in order:
        p = pred[i]
        best_iou, best_j = 0.0, None
        for t in truth_by_frame.get(p.frame_index, []):
            j = truth_index[id(t)]
            if j in matched_truth or t.object_class is not p.object_class:
                continue
            iou = bbox_iou(p.bbox, t.bbox)
            if iou >= iou_thr and iou > best_iou:
                best_iou, best_j = iou, j
        if best_j is None:
            fp += 1
        else:
            matched_truth.add(best_j)
            matches.append((i, best_j, best_iou))
    matches.sort()
    return MatchResult(
        matches=tuple(matches),
        tp=len(matches),
        fp=fp,
        fn=len(truth) - len(matches),
    )


def _ap_101(recalls: np.ndarray, precisions: np.ndarray) -> float:
    """101-point interpolated AP from a PR staircase."""
    grid = np.linspace(0.0, 1.0, 101)
    # precision envelope: max precision among operating points with recall >= r
    envelope = np.zeros_like(grid)
    for k, r in enumerate(grid):
        mask = recalls >= r - 1e-12
        envelope[k] = precisions[mask].max() if mask.any() else 0.0
    return float(envelope.mean())


def average_precision(pred, truth, iou_thr: float = 0.5) -> dict[ObjectClass, float]:
    """Per-class 101-point AP; classes with no truth instances are skipped."""
    result: dict[ObjectClass, float] = {}
    for cls in ObjectClass:
        cls_truth = [t for t in truth if t.object_class is cls]
        if not cls_truth:
            continue
        cls_pred = [p for p in pred if p.object_class is cls]
        if not cls_pred:
            result[cls] = 0.0
            continue
        truth_by_frame = _group_by_frame(cls_truth)
        truth_index = {id(t): i for i, t in enumerate(cls_truth)}
        order = sorted(
            range(len(cls_pred)),
            key=lambda i: (-cls_pred[i].confidence, cls_pred[i].frame_index, cls_pred[i].id),
        )
        matched: set[int] = set()
        tp_flags = np.zeros(len(order))
        for rank, i in enumerate(order):
            p = cls_pred[i]
            best_iou, best_j = 0.0, None
            for t in truth_by_frame.get(p.frame_index, []):
                j = truth_index[id(t)]
                if j in matched:
                    continue
                iou = bbox_iou(p.bbox, t.bbox)
                if iou >= iou_thr and iou > best_iou:
                    best_iou, best_j = iou, j
            if best_j is not None:
                matched.add(best_j)
                tp_flags[rank] = 1.0
        tp_cum = np.cumsum(tp_flags)
        fp_cum = np.cumsum(1.0 - tp_flags)
        recalls = tp_cum / len(cls_truth)
        precisions = tp_cum / np.maximum(tp_cum + fp_cum, 1e-12)
        result[cls] = _ap_101(recalls, precisions)
    return result


def mean_average_precision(pred, truth, iou_thr: float = 0.5) -> float:
    per_class = average_precision(pred, truth, iou_thr)
    if not per_class:
        return 0.0
    return float(np.mean(list(per_class.values())))


def map_range(pred, truth) -> dict[str, float]:
    """mAP50, mAP50-95, and class-wise AP values over the COCO IoU range."""
    per_thr = {thr: average_precision(pred, truth, thr) for thr in MAP_RANGE_THRESHOLDS}
    maps = {
        thr: float(np.mean(list(ap.values()))) if ap else 0.0
        for thr, ap in per_thr.items()
    }
    out = {
        "mAP50": maps[0.50],
        "mAP50_95": float(np.mean(list(maps.values()))),
    }
    for cls in ObjectClass:
        ap50 = per_thr[0.50].get(cls)
        if ap50 is not None:
            out[f"AP50_{cls.value}"] = ap50
            out[f"AP50_95_{cls.value}"] = float(
                np.mean([per_thr[t][cls] for t in MAP_RANGE_THRESHOLDS if cls in per_thr[t]])
            )
    return out


# ---------------------------------------------------------------------------
# Relation classification report
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RelationReport:
    accuracy: float
    precision_weighted: float
    recall_weighted: float
    f1_weighted: float
    precision_macro: float
    recall_macro: float
    f1_macro: float
    per_class_recall: dict[RelationLabel, float | None]
    per_class_f1: dict[RelationLabel, float | None]
    confusion: np.ndarray = field(repr=False)
    supports: dict[RelationLabel, int] = field(default_factory=dict)

    def rows(self) -> list[tuple[str, float | str]]:
        """Flat (metric, value) rows in the final-report layout."""
        rows: list[tuple[str, float | str]] = [
            ("accuracy", self.accuracy),
            ("precision_weighted", self.precision_weighted),
            ("recall_weighted", self.recall_weighted),
            ("f1_weighted", self.f1_weighted),
            ("precision_macro", self.precision_macro),
            ("recall_macro", self.recall_macro),
            ("f1_macro", self.f1_macro),
        ]
        for label in RELATION_CLASS_ORDER:
            value = self.per_class_recall[label]
            rows.append((f"recall_{label.name}", "N/A" if value is None else value))
        return rows


def confusion_matrix(preds, labels) -> np.ndarray:
    """3x3 counts, rows = true class, cols = predicted, order NONE/MOVE/BREAKUP."""
    index = {label: i for i, label in enumerate(RELATION_CLASS_ORDER)}
    matrix = np.zeros((3, 3), dtype=np.int64)
    for p, y in zip(preds, labels):
        matrix[index[RelationLabel(int(y))], index[RelationLabel(int(p))]] += 1
    return matrix


def relation_report(preds, labels) -> RelationReport:
    preds = np.asarray(preds, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if preds.size == 0 or preds.shape != labels.shape:
        raise ValidationError("predictions and labels must be nonempty aligned arrays")

    matrix = confusion_matrix(preds, labels)
    total = int(matrix.sum())
    accuracy = float(np.trace(matrix)) / total

    per_recall: dict[RelationLabel, float | None] = {}
    per_precision: dict[RelationLabel, float | None] = {}
    per_f1: dict[RelationLabel, float | None] = {}
    supports: dict[RelationLabel, int] = {}
    for i, label in enumerate(RELATION_CLASS_ORDER):
        support = int(matrix[i].sum())
        predicted = int(matrix[:, i].sum())
        supports[label] = support
        tp = float(matrix[i, i])
        recall = tp / support if support else None
        precision = tp / predicted if predicted else (0.0 if support else None)
        per_recall[label] = recall
        per_precision[label] = precision
        if recall is None:
            per_f1[label] = None
        else:
            p = precision or 0.0
            per_f1[label] = 2 * p * recall / (p + recall) if p + recall else 0.0

    present = [label for label in RELATION_CLASS_ORDER if supports[label] > 0]
    weights = np.array([supports[label] for label in present], dtype=np.float64)
    weights /= weights.sum()

    def weighted(metric: dict) -> float:
        return float(sum(w * (metric[label] or 0.0) for w, label in zip(weights, present)))

    def macro(metric: dict) -> float:
        return float(np.mean([metric[label] or 0.0 for label in present]))

    return RelationReport(
        accuracy=accuracy,
        precision_weighted=weighted(per_precision),
        recall_weighted=weighted(per_recall),
        f1_weighted=weighted(per_f1),
        precision_macro=macro(per_precision),
        recall_macro=macro(per_recall),
        f1_macro=macro(per_f1),
        per_class_recall=per_recall,
        per_class_f1=per_f1,
        confusion=matrix,
        supports=supports,
    )


def weighted_f1_score(preds, labels) -> float:
    """Support-weighted mean F1; the early-stopping criterion."""
    return relation_report(preds, labels).f1_weighted


def macro_f1_score(preds, labels) -> float:
    return relation_report(preds, labels).f1_macro


# ---------------------------------------------------------------------------
# Feature correlation
# ---------------------------------------------------------------------------


def feature_correlation(features: np.ndarray, labels=None) -> np.ndarray:
    """Pearson correlation matrix of feature columns (+ label column if given).

    Zero-variance columns correlate as 0 with everything (warned), diagonal
    stays 1.
    """
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[0] < 2:
        raise ValidationError("need at least 2 samples to correlate")
    columns = features
    if labels is not None:
        labels = np.asarray(labels, dtype=np.float64).reshape(-1, 1)
        columns = np.hstack([features, labels])
    stds = columns.std(axis=0)
    degenerate = stds == 0.0
    if degenerate.any():
        warnings.warn(
            f"zero-variance columns at indices {np.nonzero(degenerate)[0].tolist()}; "
            "their correlations are reported as 0",
            stacklevel=2,
        )
    n = columns.shape[1]
    matrix = np.eye(n)
    centered = columns - columns.mean(axis=0)
    for i in range(n):
        for j in range(i + 1, n):
            if degenerate[i] or degenerate[j]:
                r = 0.0
            else:
                r = float(
                    (centered[:, i] * centered[:, j]).mean() / (stds[i] * stds[j])
                )
            matrix[i, j] = matrix[j, i] = r
    return matrix
