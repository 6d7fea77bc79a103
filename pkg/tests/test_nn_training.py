import math

import numpy as np
import pytest

from fragtrack.core import ValidationError
from fragtrack.metrics import weighted_f1_score
from fragtrack.nn import (
    ModelConfig,
    RelationModel,
    SearchSpace,
    TrainConfig,
    class_weights_from_counts,
    compare_models,
    cross_validate,
    search_hyperparams,
    stratified_kfold,
    stratified_split,
    train,
    weighted_cross_entropy,
)


def gaussian_clusters(n_per_class=120, seed=0, spread=0.25):
    """Three well-separated clusters in feature space, labels -1/0/1."""
    rng = np.random.default_rng(seed)
    centers = {
        -1: np.array([5.0, 5.0, 0.0, 1.0, 0.0]),
        0: np.array([0.0, 0.0, 1.0, 1.0, 0.0]),
        1: np.array([2.0, 2.0, 0.0, 0.2, 1.0]),
    }
    features, labels = [], []
    for label, center in centers.items():
        features.append(center + rng.normal(scale=spread, size=(n_per_class, 5)))
        labels.append(np.full(n_per_class, label))
    return np.vstack(features), np.concatenate(labels)


def collinear_clusters(n_per_class=200, seed=5, spread=0.45):
    """Middle class sits between the outer two: needs a band, not one plane."""
    rng = np.random.default_rng(seed)
    features, labels = [], []
    for label, pos in ((-1, 0.0), (1, 2.0), (0, 4.0)):
        center = np.array([pos, pos * 0.5, 0.0, 1.0, 0.5])
        features.append(center + rng.normal(scale=spread, size=(n_per_class, 5)))
        labels.append(np.full(n_per_class, label))
    return np.vstack(features), np.concatenate(labels)


class TestWeightedCrossEntropy:
    def test_uniform_weights_equal_unweighted(self):
        rng = np.random.default_rng(0)
        logits = rng.normal(size=(16, 3))
        labels = rng.choice([-1, 0, 1], size=16)
        weighted = weighted_cross_entropy(logits, labels, (1.0, 1.0, 1.0))
        # independent unweighted CE
        z = logits - logits.max(axis=1, keepdims=True)
        log_probs = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
        expected = float(np.mean([-log_probs[i, labels[i] + 1] for i in range(16)]))
        assert weighted == pytest.approx(expected, abs=1e-12)

    def test_uniform_logits_give_w_ln3(self):
        logits = np.zeros((1, 3))
        for label in (-1, 0, 1):
            for w in (0.5, 1.0, 2.5):
                weights = np.full(3, 0.0)
                weights[label + 1] = w
                loss = weighted_cross_entropy(logits, [label], weights)
                assert loss == pytest.approx(w * math.log(3.0), abs=1e-12)

    def test_paper_regime_weights(self):
        counts = (117, 22, 1)
        weights = class_weights_from_counts(counts)
        raw = np.array([1 / 117, 1 / 22, 1.0])
        expected = raw * (3.0 / raw.sum())
        np.testing.assert_allclose(weights, expected, atol=1e-12)
        assert weights.sum() == pytest.approx(3.0)
        # proportionality check
        ratios = weights / raw
        assert np.allclose(ratios, ratios[0])

    def test_zero_count_class_warns(self):
        with pytest.warns(UserWarning, match="zero count"):
            weights = class_weights_from_counts((10, 0, 5))
        assert weights.sum() == pytest.approx(3.0)
        assert weights[1] > 0


class TestSplits:
    def test_stratified_split_partitions(self):
        labels = np.array([-1] * 50 + [0] * 30 + [1] * 20)
        train_idx, val_idx = stratified_split(labels, (0.8, 0.2), seed=1)
        assert len(np.intersect1d(train_idx, val_idx)) == 0
        assert len(train_idx) + len(val_idx) == 100
        # per-class proportions held
        assert (labels[val_idx] == -1).sum() == 10
        assert (labels[val_idx] == 0).sum() == 6
        assert (labels[val_idx] == 1).sum() == 4

    def test_stratified_kfold_covers_everything(self):
        labels = np.random.default_rng(2).choice([-1, 0, 1], size=101)
        folds = stratified_kfold(labels, 5, seed=3)
        all_idx = np.concatenate(folds)
        assert len(all_idx) == 101
        assert len(np.unique(all_idx)) == 101
        sizes = [len(f) for f in folds]
        assert max(sizes) - min(sizes) <= 3


class TestTrain:
    def test_learns_separable_clusters(self):
        features, labels = gaussian_clusters()
        model = RelationModel(ModelConfig(architecture="basic_mlp", seed=0))
        config = TrainConfig(max_epochs=50, patience=15, seed=0)
        # validate on the training set: the claim is pure fitting capacity
        train(model, features, labels, config, val_data=(features, labels))
        preds = model.predict_labels(features)
        assert (preds == labels).mean() == 1.0

    def test_best_epoch_restored_not_last(self):
        features, labels = gaussian_clusters(n_per_class=60, seed=1)
        train_x, train_y = features[::2], labels[::2]
        val_x, val_y = features[1::2], labels[1::2]
        model = RelationModel(ModelConfig(architecture="basic_mlp", seed=4))
        # aggressive learning rate so validation F1 wobbles
        config = TrainConfig(learning_rate=5e-2, max_epochs=25, patience=30, seed=4)
        train(model, train_x, train_y, config, val_data=(val_x, val_y))
        history = [h for h in model.history if "best" not in h]
        best_recorded = max(h["val_f1"] for h in history)
        restored_f1 = weighted_f1_score(model.predict_labels(val_x), val_y)
        assert restored_f1 == pytest.approx(best_recorded, abs=1e-12)

    def test_seed_determinism(self):
        features, labels = gaussian_clusters(n_per_class=40, seed=2)
        config = TrainConfig(max_epochs=10, seed=9)
        m1 = train(RelationModel(ModelConfig(architecture="residual_mlp", seed=9)),
                   features, labels, config)
        m2 = train(RelationModel(ModelConfig(architecture="residual_mlp", seed=9)),
                   features, labels, config)
        for (k1, v1), (k2, v2) in zip(sorted(m1.state().items()), sorted(m2.state().items())):
            assert k1 == k2
            np.testing.assert_array_equal(v1, v2)
        assert m1.history == m2.history

    def test_empty_split_errors(self):
        model = RelationModel(ModelConfig(architecture="basic_mlp"))
        with pytest.raises(ValidationError):
            train(model, np.zeros((0, 5)), np.zeros(0, dtype=int))

    def test_batch_clamped_with_warning(self):
        features, labels = gaussian_clusters(n_per_class=10, seed=3)
        model = RelationModel(ModelConfig(architecture="basic_mlp", seed=0))
        config = TrainConfig(batch_size=128, max_epochs=2, seed=0)
        with pytest.warns(UserWarning, match="clamped"):
            train(model, features, labels, config)


class TestSearch:
    def test_single_trial_returns_that_config(self):
        features, labels = gaussian_clusters(n_per_class=30, seed=4)
        space = SearchSpace(
            architectures=("basic_mlp",), learning_rates=(1e-3,), batch_sizes=(32,),
            max_epochs=5, patience=5,
        )
        result = search_hyperparams(space, features, labels, k_folds=2, trials=1, seed=0)
        assert result["best_trial"] == 0
        assert result["best_model_config"].architecture == "basic_mlp"
        assert result["best_train_config"].learning_rate == 1e-3
        assert len(result["trials"]) == 1

    def test_degenerate_learning_rate_loses(self):
        features, labels = collinear_clusters()
        space = SearchSpace(
            architectures=("basic_mlp",), learning_rates=(10.0, 1e-3), batch_sizes=(64,),
            max_epochs=40, patience=40,
        )
        result = search_hyperparams(space, features, labels, k_folds=2, trials=4, seed=1)
        sampled = {e["train_config"]["learning_rate"] for e in result["trials"]}
        assert sampled == {10.0, 1e-3}, "seed must sample both rates"
        assert result["best_train_config"].learning_rate == 1e-3
        assert result["best_avg_f1"] == max(e["avg_f1"] for e in result["trials"])

    def test_trial_log_persisted(self, tmp_path):
        features, labels = gaussian_clusters(n_per_class=30, seed=8)
        space = SearchSpace(
            architectures=("basic_mlp",), learning_rates=(1e-3,), batch_sizes=(32,),
            max_epochs=3, patience=3,
        )
        log_path = tmp_path / "trials.csv"
        result = search_hyperparams(
            space, features, labels, k_folds=2, trials=2, seed=0, log_path=log_path
        )
        lines = log_path.read_text().splitlines()
        assert lines[0].startswith("trial,architecture,learning_rate")
        assert len(lines) == 3
        assert len(result["trials"]) == 2

    def test_compare_models_row_structure(self):
        features, labels = gaussian_clusters(n_per_class=25, seed=6)
        rows = compare_models(
            features, labels, k_folds=2, seed=0,
            train_config=TrainConfig(max_epochs=4, patience=4),
            architectures=("basic_mlp", "attention_mlp"),
        )
        assert [r["architecture"] for r in rows] == ["basic_mlp", "attention_mlp"]
        for row in rows:
            for key in ("avg_accuracy", "avg_precision", "avg_recall", "avg_f1",
                        "std_f1", "overall_f1", "avg_f1_macro", "overall_f1_macro"):
                assert key in row
                assert np.isfinite(row[key])

    def test_cross_validate_fold_count(self):
        features, labels = gaussian_clusters(n_per_class=25, seed=7)
        result = cross_validate(
            ModelConfig(architecture="basic_mlp", seed=0),
            TrainConfig(max_epochs=3, patience=3),
            features, labels, k_folds=3, seed=0,
        )
        assert len(result["fold_f1"]) == 3
