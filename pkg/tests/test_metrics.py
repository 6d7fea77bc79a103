import numpy as np
import pytest

from fragtrack.core import DetectedObject, ObjectClass, RelationLabel, ValidationError
from fragtrack.metrics import (
    average_precision,
    confusion_matrix,
    feature_correlation,
    map_range,
    match_detections,
    mean_average_precision,
    relation_report,
    weighted_f1_score,
)


def square_obj(frame, obj_id, x, y, side=6, cls=ObjectClass.DROPLET, conf=1.0):
    full = np.zeros((128, 128), dtype=bool)
    full[y : y + side, x : x + side] = True
    return DetectedObject.from_full_mask(frame, obj_id, full, cls, confidence=conf)


class TestMatchDetections:
    def test_perfect(self):
        truth = [square_obj(0, i, 10 + 20 * i, 10) for i in range(4)]
        result = match_detections(truth, truth)
        assert result.precision == 1.0
        assert result.recall == 1.0
        assert result.f1 == 1.0

    def test_empty_predictions(self):
        truth = [square_obj(0, 0, 10, 10)]
        result = match_detections([], truth)
        assert result.precision == 0.0
        assert result.recall == 0.0
        assert result.f1 == 0.0

    def test_two_preds_one_truth(self):
        truth = [square_obj(0, 0, 10, 10)]
        preds = [
            square_obj(0, 0, 10, 10, conf=0.9),
            square_obj(0, 1, 11, 10, conf=0.8),  # also IoU >= 0.5 with the truth
        ]
        result = match_detections(preds, truth)
        assert result.tp == 1
        assert result.fp == 1
        assert result.fn == 0

    def test_class_must_match(self):
        truth = [square_obj(0, 0, 10, 10, cls=ObjectClass.LIGAMENT)]
        preds = [square_obj(0, 0, 10, 10, cls=ObjectClass.DROPLET)]
        result = match_detections(preds, truth)
        assert result.tp == 0
        assert result.fp == 1
        assert result.fn == 1


class TestAveragePrecision:
    def test_perfect_detector(self):
        truth = [square_obj(0, i, 10 + 20 * i, 10) for i in range(5)]
        for thr in (0.5, 0.75, 0.95):
            ap = average_precision(truth, truth, thr)
            assert ap[ObjectClass.DROPLET] == pytest.approx(1.0)

    def test_all_wrong_detector(self):
        truth = [square_obj(0, 0, 10, 10)]
        preds = [square_obj(0, 0, 80, 80, conf=0.9)]  # no overlap
        ap = average_precision(preds, truth, 0.5)
        assert ap[ObjectClass.DROPLET] == 0.0

    def test_hand_computed_staircase(self):
        # 2 truths; 3 preds: conf .9 TP, conf .8 FP, conf .7 TP
        truth = [square_obj(0, 0, 10, 10), square_obj(0, 1, 40, 40)]
        preds = [
            square_obj(0, 0, 10, 10, conf=0.9),
            square_obj(0, 1, 80, 80, conf=0.8),
            square_obj(0, 2, 40, 40, conf=0.7),
        ]
        # oracle: PR staircase (0.5, 1.0), (0.5, 0.5), (1.0, 2/3); envelope on
        # the 101-point grid is 1.0 for r <= 0.5 and 2/3 above
        expected = (51 * 1.0 + 50 * (2.0 / 3.0)) / 101.0
        ap = average_precision(preds, truth, 0.5)[ObjectClass.DROPLET]
        assert ap == pytest.approx(expected, abs=1e-9)
        assert ap == pytest.approx(0.833, abs=5e-3)

    def test_confidence_rescaling_invariance(self):
        rng = np.random.default_rng(4)
        truth = [square_obj(0, i, 8 + 18 * (i % 6), 8 + 18 * (i // 6)) for i in range(12)]
        preds = []
        for i, t in enumerate(truth[:9]):
            preds.append(
                square_obj(
                    0, i, int(t.bbox.x1) + int(rng.integers(0, 3)), int(t.bbox.y1),
                    conf=float(rng.uniform(0.1, 0.9)),
                )
            )
        preds.append(square_obj(0, 99, 100, 100, conf=0.5))
        base = mean_average_precision(preds, truth, 0.5)
        rescaled = [
            DetectedObject(
                id=p.id, frame_index=p.frame_index, bbox=p.bbox, mask=p.mask,
                centroid=p.centroid, area=p.area, object_class=p.object_class,
                confidence=min(1.0, p.confidence * 0.37 + 1e-9),
            )
            for p in preds
        ]
        assert mean_average_precision(rescaled, truth, 0.5) == pytest.approx(base, abs=1e-12)

    def test_map_range_keys(self):
        truth = [square_obj(0, 0, 10, 10), square_obj(0, 1, 40, 40, cls=ObjectClass.LIGAMENT)]
        out = map_range(truth, truth)
        assert out["mAP50"] == pytest.approx(1.0)
        assert out["mAP50_95"] == pytest.approx(1.0)
        assert out["AP50_D"] == pytest.approx(1.0)
        assert out["AP50_L"] == pytest.approx(1.0)

    def test_class_without_truth_skipped(self):
        truth = [square_obj(0, 0, 10, 10, cls=ObjectClass.DROPLET)]
        ap = average_precision(truth, truth, 0.5)
        assert ObjectClass.LIGAMENT not in ap


def arrays_from_confusion(matrix):
    order = (RelationLabel.NONE, RelationLabel.MOVE, RelationLabel.BREAKUP)
    labels, preds = [], []
    for i, true_label in enumerate(order):
        for j, pred_label in enumerate(order):
            labels += [int(true_label)] * matrix[i][j]
            preds += [int(pred_label)] * matrix[i][j]
    return np.array(preds), np.array(labels)


class TestRelationReport:
    def test_all_correct(self):
        labels = np.array([-1, -1, 0, 0, 1, 1])
        report = relation_report(labels, labels)
        assert report.accuracy == 1.0
        for label in RelationLabel:
            assert report.per_class_recall[label] == 1.0

    def test_confusion_arithmetic(self):
        matrix = [[8, 2, 0], [0, 5, 0], [1, 0, 9]]
        preds, labels = arrays_from_confusion(matrix)
        report = relation_report(preds, labels)
        assert report.accuracy == pytest.approx(22 / 25)
        assert np.array_equal(report.confusion, np.array(matrix))

    def test_confusion_row_sums_are_supports(self):
        rng = np.random.default_rng(8)
        labels = rng.choice([-1, 0, 1], size=200, p=[0.7, 0.25, 0.05])
        preds = rng.choice([-1, 0, 1], size=200)
        report = relation_report(preds, labels)
        for i, label in enumerate((RelationLabel.NONE, RelationLabel.MOVE, RelationLabel.BREAKUP)):
            assert report.confusion[i].sum() == report.supports[label]
        assert report.accuracy == pytest.approx(np.trace(report.confusion) / 200, abs=1e-12)

    def test_absent_class_excluded_from_macro(self):
        labels = np.array([-1, -1, 0, 0])  # no BREAKUP support
        preds = np.array([-1, -1, 0, -1])
        report = relation_report(preds, labels)
        assert report.per_class_recall[RelationLabel.BREAKUP] is None
        # macro recall over the two present classes: (1.0 + 0.5) / 2
        assert report.recall_macro == pytest.approx(0.75)

    def test_f1_identity(self):
        rng = np.random.default_rng(5)
        labels = rng.choice([-1, 0, 1], size=300, p=[0.6, 0.3, 0.1])
        preds = rng.choice([-1, 0, 1], size=300, p=[0.5, 0.3, 0.2])
        report = relation_report(preds, labels)
        for label, f1 in report.per_class_f1.items():
            i = (RelationLabel.NONE, RelationLabel.MOVE, RelationLabel.BREAKUP).index(label)
            tp = report.confusion[i, i]
            support = report.confusion[i].sum()
            predicted = report.confusion[:, i].sum()
            if support == 0:
                assert f1 is None
                continue
            p = tp / predicted if predicted else 0.0
            r = tp / support
            expected = 2 * p * r / (p + r) if p + r else 0.0
            assert f1 == pytest.approx(expected)

    def test_empty_input_errors(self):
        with pytest.raises(ValidationError):
            relation_report([], [])

    def test_weighted_f1_matches_manual(self):
        labels = np.array([-1, -1, -1, 0, 0, 1])
        preds = np.array([-1, -1, 0, 0, 0, 1])
        report = relation_report(preds, labels)
        manual = (
            report.supports[RelationLabel.NONE] * report.per_class_f1[RelationLabel.NONE]
            + report.supports[RelationLabel.MOVE] * report.per_class_f1[RelationLabel.MOVE]
            + report.supports[RelationLabel.BREAKUP] * report.per_class_f1[RelationLabel.BREAKUP]
        ) / 6
        assert weighted_f1_score(preds, labels) == pytest.approx(manual)


class TestFeatureCorrelation:
    def test_self_correlation(self):
        rng = np.random.default_rng(1)
        x = rng.normal(size=(50, 1))
        matrix = feature_correlation(np.hstack([x, x]))
        assert matrix[0, 1] == pytest.approx(1.0)

    def test_anticorrelation(self):
        rng = np.random.default_rng(2)
        x = rng.normal(size=(50, 1))
        matrix = feature_correlation(np.hstack([x, -x]))
        assert matrix[0, 1] == pytest.approx(-1.0)

    def test_symmetric_unit_diagonal(self):
        rng = np.random.default_rng(3)
        features = rng.normal(size=(80, 5))
        labels = rng.choice([-1, 0, 1], size=80)
        matrix = feature_correlation(features, labels)
        assert matrix.shape == (6, 6)
        assert np.allclose(matrix, matrix.T, atol=1e-12)
        assert np.allclose(np.diag(matrix), 1.0, atol=1e-12)

    def test_zero_variance_warns(self):
        features = np.ones((10, 2))
        features[:, 1] = np.arange(10)
        with pytest.warns(UserWarning):
            matrix = feature_correlation(features)
        assert matrix[0, 1] == 0.0
        assert matrix[0, 0] == 1.0

    def test_needs_two_samples(self):
        with pytest.raises(ValidationError):
            feature_correlation(np.ones((1, 5)))

    def test_centroid_distances_positively_correlated_on_corpus(self):
        # the raw and normalized displacement features measure the same
        # physical quantity at different scales; sign check only
        from fragtrack.relate import build_pair_dataset
        from fragtrack.synthgen import SimConfig, simulate_sequence

        packet = simulate_sequence(
            SimConfig(n_frames=6, n_ligaments=3, n_droplets=12, p_breakup=0.2), 44
        )
        ds = build_pair_dataset(packet.truth_frames, packet.truth_relations)
        matrix = feature_correlation(ds.feature_matrix(), ds.labels())
        assert matrix.shape == (6, 6)
        assert matrix[0, 1] > 0.2
