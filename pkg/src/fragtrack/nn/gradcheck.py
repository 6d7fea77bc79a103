"""Finite-difference verification of the hand-written gradients.

Runs in eval mode (dropout off, batch-norm on running statistics) so the
loss is a pure function of the parameters, and compares analytic gradients
against central differences on a random subsample of parameter entries.
"""

from __future__ import annotations

import numpy as np

from .models import RelationModel
from .train import _loss_and_grad


def gradient_check(
    model: RelationModel,
    features: np.ndarray,
    labels: np.ndarray,
    weights=(1.0, 1.0, 1.0),
    step: float = 1e-5,
    samples_per_tensor: int = 12,
    seed: int = 0,
) -> float:
    """Max relative error between analytic and central-difference gradients."""
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    weights = np.asarray(weights, dtype=np.float64)
    if not model.scaler.fitted:
        model.scaler.fit(features)

    def loss_value() -> float:
        logits = model.forward(features, train=False)
        loss, _ = _loss_and_grad(logits, labels, weights)
        return loss

    logits = model.forward(features, train=False)
    _, dlogits = _loss_and_grad(logits, labels, weights)
    model.net.zero_grad()
    model.backward(dlogits)

    rng = np.random.default_rng(seed)
    worst = 0.0
    for param in model.net.parameters():
        flat_value = param.value.ravel()
        flat_grad = param.grad.ravel()
        n = flat_value.size
        picks = rng.choice(n, size=min(samples_per_tensor, n), replace=False)
        for i in picks:
            original = flat_value[i]
            flat_value[i] = original + step
            plus = loss_value()
            flat_value[i] = original - step
            minus = loss_value()
            flat_value[i] = original
            numeric = (plus - minus) / (2.0 * step)
            analytic = flat_grad[i]
            scale = max(1e-8, abs(numeric) + abs(analytic))
            worst = max(worst, abs(numeric - analytic) / scale)
    return worst
