"""Seeded random hyperparameter search and the 5-architecture comparison.

Each trial samples a configuration from the space, evaluates it with
stratified k-fold cross-validation, and the best trial wins on mean fold
weighted F1. The comparison runs every architecture through the same folds
and reports per-architecture fold statistics plus pooled-prediction overall
scores.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..core import ValidationError
from ..metrics import relation_report
from .models import ARCHITECTURES, ModelConfig, RelationModel
from .train import TrainConfig, derive_seed, stratified_kfold, train


@dataclass(frozen=True)
class SearchSpace:
    architectures: tuple[str, ...] = ARCHITECTURES
    learning_rates: tuple[float, ...] = (1e-3,)
    weight_decay_range: tuple[float, float] = (1e-5, 1e-2)  # log-uniform
    batch_sizes: tuple[int, ...] = (32, 64, 128)
    max_epochs: int = 60
    patience: int = 15

    def sample(self, rng: np.random.Generator, seed: int) -> tuple[ModelConfig, TrainConfig]:
        arch = self.architectures[int(rng.integers(len(self.architectures)))]
        lr = float(self.learning_rates[int(rng.integers(len(self.learning_rates)))])
        lo, hi = self.weight_decay_range
        wd = float(np.exp(rng.uniform(np.log(lo), np.log(hi))))
        batch = int(self.batch_sizes[int(rng.integers(len(self.batch_sizes)))])
        model_config = ModelConfig(architecture=arch, seed=seed)
        train_config = TrainConfig(
            learning_rate=lr,
            weight_decay=wd,
            batch_size=batch,
            patience=self.patience,
            max_epochs=self.max_epochs,
            seed=seed,
        )
        return model_config, train_config


@dataclass
class FoldScores:
    accuracy: list[float] = field(default_factory=list)
    precision: list[float] = field(default_factory=list)
    recall: list[float] = field(default_factory=list)
    f1: list[float] = field(default_factory=list)
    f1_macro: list[float] = field(default_factory=list)


def cross_validate(
    model_config: ModelConfig,
    train_config: TrainConfig,
    features: np.ndarray,
    labels: np.ndarray,
    k_folds: int = 5,
    seed: int = 0,
) -> dict:
    """Stratified k-fold evaluation; returns fold stats and pooled scores."""
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    folds = stratified_kfold(labels, k_folds, seed)
    scores = FoldScores()
    pooled_preds: list[np.ndarray] = []
    pooled_labels: list[np.ndarray] = []
    for fold_idx, val_idx in enumerate(folds):
        train_idx = np.setdiff1d(np.arange(labels.shape[0]), val_idx)
        fold_seed = derive_seed(seed, fold_idx)
        model = RelationModel(
            ModelConfig(
                architecture=model_config.architecture,
                seed=fold_seed,
                dropout=model_config.dropout,
            )
        )
        fold_train_config = TrainConfig(
            learning_rate=train_config.learning_rate,
            weight_decay=train_config.weight_decay,
            batch_size=train_config.batch_size,
            patience=train_config.patience,
            max_epochs=train_config.max_epochs,
            class_weights=train_config.class_weights,
            val_fraction=train_config.val_fraction,
            seed=fold_seed,
        )
        train(
            model,
            features[train_idx],
            labels[train_idx],
            fold_train_config,
            val_data=(features[val_idx], labels[val_idx]),
        )
        preds = model.predict_labels(features[val_idx])
        report = relation_report(preds, labels[val_idx])
        scores.accuracy.append(report.accuracy)
        scores.precision.append(report.precision_weighted)
        scores.recall.append(report.recall_weighted)
        scores.f1.append(report.f1_weighted)
        scores.f1_macro.append(report.f1_macro)
        pooled_preds.append(preds)
        pooled_labels.append(labels[val_idx])
    pooled = relation_report(np.concatenate(pooled_preds), np.concatenate(pooled_labels))
    return {
        "architecture": model_config.architecture,
        "avg_accuracy": float(np.mean(scores.accuracy)),
        "avg_precision": float(np.mean(scores.precision)),
        "avg_recall": float(np.mean(scores.recall)),
        "avg_f1": float(np.mean(scores.f1)),
        "std_f1": float(np.std(scores.f1)),
        "avg_f1_macro": float(np.mean(scores.f1_macro)),
        "overall_f1": pooled.f1_weighted,
        "overall_f1_macro": pooled.f1_macro,
        "fold_f1": [float(v) for v in scores.f1],
    }


def search_hyperparams(
    space: SearchSpace,
    features: np.ndarray,
    labels: np.ndarray,
    k_folds: int = 5,
    trials: int = 10,
    seed: int = 0,
    log_path: str | Path | None = None,
) -> dict:
    """Random search; returns the argmax trial plus the full trial log.

    When `log_path` is given the trial log is also persisted as CSV.
    """
    if trials < 1:
        raise ValidationError("trials must be >= 1")
    rng = np.random.default_rng(seed)
    log = []
    best = None
    for trial in range(trials):
        trial_seed = derive_seed(seed, 1000 + trial)
        model_config, train_config = space.sample(rng, trial_seed)
        result = cross_validate(model_config, train_config, features, labels, k_folds, trial_seed)
        entry = {
            "trial": trial,
            "model_config": model_config.to_dict(),
            "train_config": train_config.to_dict(),
            **{k: v for k, v in result.items() if k != "fold_f1"},
        }
        log.append(entry)
        if best is None or result["avg_f1"] > best["avg_f1"]:
            best = {
                "model_config": model_config,
                "train_config": train_config,
                "avg_f1": result["avg_f1"],
                "trial": trial,
            }
    if log_path is not None:
        _write_trial_log(Path(log_path), log)
    return {
        "best_model_config": best["model_config"],
        "best_train_config": best["train_config"],
        "best_avg_f1": best["avg_f1"],
        "best_trial": best["trial"],
        "trials": log,
    }


def _write_trial_log(path: Path, log: list[dict]):
    path.parent.mkdir(parents=True, exist_ok=True)
    header = (
        "trial", "architecture", "learning_rate", "weight_decay", "batch_size",
        "avg_accuracy", "avg_precision", "avg_recall", "avg_f1", "std_f1",
        "overall_f1",
    )
    with open(path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(header)
        for entry in log:
            writer.writerow(
                [
                    entry["trial"],
                    entry["model_config"]["architecture"],
                    repr(entry["train_config"]["learning_rate"]),
                    repr(entry["train_config"]["weight_decay"]),
                    entry["train_config"]["batch_size"],
                    repr(entry["avg_accuracy"]),
                    repr(entry["avg_precision"]),
                    repr(entry["avg_recall"]),
                    repr(entry["avg_f1"]),
                    repr(entry["std_f1"]),
                    repr(entry["overall_f1"]),
                ]
            )


def compare_models(
    features: np.ndarray,
    labels: np.ndarray,
    k_folds: int = 5,
    seed: int = 0,
    train_config: TrainConfig | None = None,
    architectures: tuple[str, ...] = ARCHITECTURES,
) -> list[dict]:
    """Cross-validate every architecture with a shared regime; one row each."""
    config = train_config or TrainConfig()
    rows = []
    for arch in architectures:
        result = cross_validate(
            ModelConfig(architecture=arch, seed=seed), config, features, labels, k_folds, seed
        )
        rows.append(result)
    return rows
