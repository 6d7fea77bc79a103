"""Training: weighted cross-entropy, Adam with decoupled weight decay,
stratified splits, and early stopping on the validation weighted F1."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from ..core import ValidationError
from ..metrics import weighted_f1_score
from .models import N_CLASSES, RelationModel, label_to_index, softmax


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    weight_decay: float = 1e-4
    batch_size: int = 64
    patience: int = 15
    max_epochs: int = 100
    class_weights: tuple[float, float, float] | None = None  # from counts when None
    val_fraction: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0 or self.weight_decay < 0:
            raise ValidationError("learning_rate must be > 0 and weight_decay >= 0")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise ValidationError("batch_size and max_epochs must be >= 1")
        if self.patience < 1:
            raise ValidationError("patience must be >= 1")
        if not 0.0 < self.val_fraction < 1.0:
            raise ValidationError("val_fraction must be in (0, 1)")

    def to_dict(self) -> dict:
        return {
            "learning_rate": self.learning_rate,
            "weight_decay": self.weight_decay,
            "batch_size": self.batch_size,
            "patience": self.patience,
            "max_epochs": self.max_epochs,
            "class_weights": list(self.class_weights) if self.class_weights else None,
            "val_fraction": self.val_fraction,
            "seed": self.seed,
        }


def derive_seed(*parts: int) -> int:
    """Stable child seed for independent folds/trials."""
    return int(np.random.SeedSequence(tuple(int(p) for p in parts)).generate_state(1)[0])


def class_weights_from_counts(counts) -> np.ndarray:
    """Inverse-frequency weights normalized to sum to the class count (3).

    A zero-count class cannot contribute a frequency; it receives the mean of
    the present classes' raw weights before normalization, with a warning.
    """
    counts = np.asarray(counts, dtype=np.float64)
    if counts.shape != (N_CLASSES,):
        raise ValidationError(f"expected {N_CLASSES} class counts")
    present = counts > 0
    if not present.any():
        raise ValidationError("all class counts are zero")
    raw = np.zeros(N_CLASSES)
    raw[present] = 1.0 / counts[present]
    if (~present).any():
        warnings.warn(
            f"classes with zero count at indices {np.nonzero(~present)[0].tolist()}; "
            "assigning them the mean of the present weights",
            stacklevel=2,
        )
        raw[~present] = raw[present].mean()
    return raw * (N_CLASSES / raw.sum())


def weighted_cross_entropy(logits, labels, weights) -> float:
    """Batch mean of w[y] * (-log softmax(logits)[y]); labels are codes -1/0/1."""
    loss, _ = _loss_and_grad(np.asarray(logits, dtype=np.float64), labels, weights)
    return loss


def _loss_and_grad(logits, labels, weights):
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != (N_CLASSES,) or (weights < 0).any():
        raise ValidationError("need 3 non-negative class weights")
    idx = label_to_index(labels)
    n = logits.shape[0]
    probs = softmax(logits)
    sample_w = weights[idx]
    log_probs = np.log(np.clip(probs[np.arange(n), idx], 1e-300, None))
    loss = float(np.mean(sample_w * (-log_probs)))
    grad = probs.copy()
    grad[np.arange(n), idx] -= 1.0
    grad *= (sample_w / n)[:, None]
    return loss, grad


class Adam:
    """Adam with decoupled weight decay (decay skipped for biases/norm gains)."""

    def __init__(self, params, lr=1e-3, weight_decay=0.0, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.weight_decay = weight_decay
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = [np.zeros_like(p.value) for p in self.params]
        self.v = [np.zeros_like(p.value) for p in self.params]

    def step(self):
        self.t += 1
        bias1 = 1.0 - self.beta1**self.t
        bias2 = 1.0 - self.beta2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            m *= self.beta1
            m += (1 - self.beta1) * p.grad
            v *= self.beta2
            v += (1 - self.beta2) * p.grad**2
            update = (m / bias1) / (np.sqrt(v / bias2) + self.eps)
            if self.weight_decay and p.decay:
                update = update + self.weight_decay * p.value
            p.value -= self.lr * update


def stratified_split(labels, fractions, seed) -> list[np.ndarray]:
    """Index split per class into len(fractions) parts (fractions sum to 1)."""
    labels = np.asarray(labels)
    if not np.isclose(sum(fractions), 1.0):
        raise ValidationError("split fractions must sum to 1")
    rng = np.random.default_rng(seed)
    parts: list[list[int]] = [[] for _ in fractions]
    for value in np.unique(labels):
        idx = np.nonzero(labels == value)[0]
        rng.shuffle(idx)
        bounds = np.floor(np.cumsum(fractions) * len(idx)).astype(int)
        bounds[-1] = len(idx)  # rounding leftovers go to the last part
        start = 0
        for part, stop in zip(parts, bounds):
            part.extend(idx[start:stop].tolist())
            start = stop
    return [np.sort(np.array(p, dtype=np.int64)) for p in parts]


def stratified_kfold(labels, k, seed) -> list[np.ndarray]:
    """Round-robin per-class fold assignment; returns k index arrays."""
    labels = np.asarray(labels)
    if k < 2:
        raise ValidationError("k must be >= 2")
    rng = np.random.default_rng(seed)
    folds: list[list[int]] = [[] for _ in range(k)]
    for value in np.unique(labels):
        idx = np.nonzero(labels == value)[0]
        rng.shuffle(idx)
        for pos, sample in enumerate(idx):
            folds[pos % k].append(int(sample))
    return [np.sort(np.array(f, dtype=np.int64)) for f in folds]


def train(
    model: RelationModel,
    features: np.ndarray,
    labels: np.ndarray,
    config: TrainConfig = TrainConfig(),
    val_data: tuple[np.ndarray, np.ndarray] | None = None,
) -> RelationModel:
    """Fit the model in place and return it.

    The scaler is fitted on the training split only. After every epoch the
    validation weighted F1 is computed; training stops once it fails to
    improve for `patience` consecutive epochs and the best-epoch parameters
    are restored.
    """
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if features.shape[0] != labels.shape[0] or features.shape[0] == 0:
        raise ValidationError("features and labels must be nonempty and aligned")

    if val_data is None:
        train_idx, val_idx = stratified_split(
            labels, (1.0 - config.val_fraction, config.val_fraction), config.seed
        )
        if len(train_idx) == 0 or len(val_idx) == 0:
            raise ValidationError("empty train or validation split")
        x_train, y_train = features[train_idx], labels[train_idx]
        x_val, y_val = features[val_idx], labels[val_idx]
    else:
        x_train, y_train = features, labels
        x_val, y_val = val_data
        x_val = np.asarray(x_val, dtype=np.float64)
        y_val = np.asarray(y_val, dtype=np.int64)
        if x_val.shape[0] == 0 or x_train.shape[0] == 0:
            raise ValidationError("empty train or validation split")

    model.scaler.fit(x_train)

    if config.class_weights is not None:
        weights = np.asarray(config.class_weights, dtype=np.float64)
    else:
        counts = np.bincount(label_to_index(y_train), minlength=N_CLASSES)
        weights = class_weights_from_counts(counts)

    batch_size = min(config.batch_size, x_train.shape[0])
    if batch_size < config.batch_size:
        warnings.warn(
            f"batch size clamped to {batch_size} (split has {x_train.shape[0]} samples)",
            stacklevel=2,
        )

    optimizer = Adam(
        model.net.parameters(), lr=config.learning_rate, weight_decay=config.weight_decay
    )
    rng = np.random.default_rng(config.seed)

    best_f1 = -np.inf
    best_state: dict[str, np.ndarray] | None = None
    best_epoch = -1
    stall = 0
    model.history = []

    for epoch in range(config.max_epochs):
        order = rng.permutation(x_train.shape[0])
        epoch_loss = 0.0
        n_batches = 0
        for start in range(0, len(order), batch_size):
            batch = order[start : start + batch_size]
            logits = model.forward(x_train[batch], train=True)
            loss, dlogits = _loss_and_grad(logits, y_train[batch], weights)
            model.net.zero_grad()
            model.backward(dlogits)
            optimizer.step()
            epoch_loss += loss
            n_batches += 1

        val_pred = model.predict_labels(x_val)
        val_f1 = weighted_f1_score(val_pred, y_val)
        model.history.append(
            {"epoch": epoch, "train_loss": epoch_loss / max(1, n_batches), "val_f1": val_f1}
        )
        if val_f1 > best_f1:
            best_f1 = val_f1
            best_epoch = epoch
            best_state = {k: v.copy() for k, v in model.state().items()}
            stall = 0
        else:
            stall += 1
            if stall >= config.patience:
                break

    if best_state is not None:
        model.load_state(best_state)
    model.history.append({"epoch": best_epoch, "train_loss": None, "val_f1": best_f1, "best": True})
    return model
