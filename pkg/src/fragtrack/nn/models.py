"""The five relation-classifier architectures and their shared wrapper.

All models take the five raw pair features (B, 5), standardize them with a
scaler fitted on the training split, and emit three logits per sample for
NONE / MOVE / BREAKUP (class index = label code + 1). Hidden widths are fixed
per architecture; dropout rates and the rng seed come from `ModelConfig`.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from ..core import ValidationError
from ..relate import FEATURE_NAMES
from .layers import (
    BatchNorm,
    Dropout,
    Linear,
    Module,
    Param,
    ReLU,
    Sequential,
    Sigmoid,
    Tanh,
    TransformerEncoderLayer,
    uniform_fan_in,
)

N_FEATURES = len(FEATURE_NAMES)
N_CLASSES = 3

ARCHITECTURES = (
    "basic_mlp",
    "residual_mlp",
    "attention_mlp",
    "feature_interaction_mlp",
    "transformer_mlp",
)


def label_to_index(labels) -> np.ndarray:
    """Map label codes (-1, 0, 1) to class indices (0, 1, 2)."""
    return np.asarray(labels, dtype=np.int64) + 1


def index_to_label(indices) -> np.ndarray:
    return np.asarray(indices, dtype=np.int64) - 1


class Scaler:
    """Per-feature z-score standardization fitted on training data only."""

    def __init__(self, mean=None, std=None):
        self.mean = None if mean is None else np.asarray(mean, dtype=np.float64)
        self.std = None if std is None else np.asarray(std, dtype=np.float64)

    @property
    def fitted(self) -> bool:
        return self.mean is not None

    def fit(self, features: np.ndarray) -> "Scaler":
        features = np.asarray(features, dtype=np.float64)
        self.mean = features.mean(axis=0)
        std = features.std(axis=0)
        degenerate = std == 0.0
        if degenerate.any():
            warnings.warn(
                f"degenerate features (zero std) at indices "
                f"{np.nonzero(degenerate)[0].tolist()}; using std=1",
                stacklevel=2,
            )
            std = np.where(degenerate, 1.0, std)
        self.std = std
        return self

    def transform(self, features: np.ndarray) -> np.ndarray:
        if not self.fitted:
            raise ValidationError("scaler not fitted")
        return (np.asarray(features, dtype=np.float64) - self.mean) / self.std

    def inverse_transform(self, scaled: np.ndarray) -> np.ndarray:
        if not self.fitted:
            raise ValidationError("scaler not fitted")
        return np.asarray(scaled, dtype=np.float64) * self.std + self.mean


@dataclass(frozen=True)
class ModelConfig:
    architecture: str = "transformer_mlp"
    seed: int = 0
    dropout: tuple[float, ...] | None = None  # per-architecture defaults when None

    def __post_init__(self):
        if self.architecture not in ARCHITECTURES:
            raise ValidationError(
                f"unknown architecture {self.architecture!r}; expected one of {ARCHITECTURES}"
            )

    def to_dict(self) -> dict:
        return {
            "architecture": self.architecture,
            "seed": self.seed,
            "dropout": list(self.dropout) if self.dropout is not None else None,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "ModelConfig":
        dropout = doc.get("dropout")
        return cls(
            architecture=doc["architecture"],
            seed=int(doc["seed"]),
            dropout=tuple(dropout) if dropout is not None else None,
        )


def _mlp_block(in_dim, out_dim, rng, dropout):
    steps = [Linear(in_dim, out_dim, rng), BatchNorm(out_dim), ReLU()]
    if dropout > 0:
        steps.append(Dropout(dropout, rng))
    return steps


class BasicMLP(Module):
    """5 -> 64 -> 32 -> 3 with batch-norm, ReLU, dropout per hidden layer."""

    def __init__(self, rng, dropout=(0.3, 0.3)):
        super().__init__()
        self.net = Sequential(
            *_mlp_block(N_FEATURES, 64, rng, dropout[0]),
            *_mlp_block(64, 32, rng, dropout[1]),
            Linear(32, N_CLASSES, rng),
        )

    def forward(self, x, train):
        return self.net.forward(x, train)

    def backward(self, dy):
        return self.net.backward(dy)


class ResidualBlock(Module):
    def __init__(self, dim, rng, dropout):
        super().__init__()
        self.lin1 = Linear(dim, dim, rng)
        self.bn1 = BatchNorm(dim)
        self.act1 = ReLU()
        self.drop = Dropout(dropout, rng)
        self.lin2 = Linear(dim, dim, rng)
        self.bn2 = BatchNorm(dim)
        self.act_out = ReLU()

    def forward(self, x, train):
        h = self.act1.forward(self.bn1.forward(self.lin1.forward(x, train), train), train)
        h = self.bn2.forward(self.lin2.forward(self.drop.forward(h, train), train), train)
        return self.act_out.forward(x + h, train)

    def backward(self, dy):
        dsum = self.act_out.backward(dy)
        dh = self.bn2.backward(dsum)
        dh = self.drop.backward(self.lin2.backward(dh))
        dh = self.lin1.backward(self.bn1.backward(self.act1.backward(dh)))
        return dsum + dh


class ResidualMLP(Module):
    """5 -> 64 -> two residual blocks -> 32 -> 3; dropout 0.2 in the blocks."""

    def __init__(self, rng, dropout=(0.2, 0.2)):
        super().__init__()
        self.stem = Sequential(Linear(N_FEATURES, 64, rng), BatchNorm(64), ReLU())
        self.block1 = ResidualBlock(64, rng, dropout[0])
        self.block2 = ResidualBlock(64, rng, dropout[1])
        self.head = Sequential(
            Linear(64, 32, rng), BatchNorm(32), ReLU(), Linear(32, N_CLASSES, rng)
        )

    def forward(self, x, train):
        h = self.stem.forward(x, train)
        h = self.block2.forward(self.block1.forward(h, train), train)
        return self.head.forward(h, train)

    def backward(self, dy):
        dh = self.head.backward(dy)
        dh = self.block1.backward(self.block2.backward(dh))
        return self.stem.backward(dh)


class AttentionGate(Module):
    """Multiplicative gate a = sigmoid(W2 tanh(W1 h)) applied elementwise."""

    def __init__(self, dim, rng):
        super().__init__()
        self.w1 = Linear(dim, dim, rng)
        self.tanh = Tanh()
        self.w2 = Linear(dim, dim, rng)
        self.sigmoid = Sigmoid()
        self._cache = None

    def forward(self, x, train):
        gate = self.sigmoid.forward(
            self.w2.forward(self.tanh.forward(self.w1.forward(x, train), train), train),
            train,
        )
        self._cache = (x, gate)
        return x * gate

    def backward(self, dy):
        x, gate = self._cache
        dgate = self.w1.backward(self.tanh.backward(self.w2.backward(self.sigmoid.backward(dy * x))))
        return dy * gate + dgate


class AttentionMLP(Module):
    """5 -> 64 -> gated hidden state -> 32 -> 3."""

    def __init__(self, rng, dropout=()):
        super().__init__()
        self.stem = Sequential(Linear(N_FEATURES, 64, rng), BatchNorm(64), ReLU())
        self.gate = AttentionGate(64, rng)
        self.head = Sequential(
            Linear(64, 32, rng), BatchNorm(32), ReLU(), Linear(32, N_CLASSES, rng)
        )

    def forward(self, x, train):
        return self.head.forward(self.gate.forward(self.stem.forward(x, train), train), train)

    def backward(self, dy):
        return self.stem.backward(self.gate.backward(self.head.backward(dy)))


class InteractionExpansion(Module):
    """Append the 10 pairwise feature products: (B, 5) -> (B, 15)."""

    def __init__(self):
        super().__init__()
        self.pairs = [(i, j) for i in range(N_FEATURES) for j in range(i + 1, N_FEATURES)]
        self._x = None

    @property
    def out_dim(self) -> int:
        return N_FEATURES + len(self.pairs)

    def forward(self, x, train):
        self._x = x
        products = np.stack([x[:, i] * x[:, j] for i, j in self.pairs], axis=1)
        return np.hstack([x, products])

    def backward(self, dy):
        x = self._x
        dx = dy[:, :N_FEATURES].copy()
        for col, (i, j) in enumerate(self.pairs, start=N_FEATURES):
            dx[:, i] += dy[:, col] * x[:, j]
            dx[:, j] += dy[:, col] * x[:, i]
        return dx


class FeatureInteractionMLP(Module):
    """15 (inputs + pairwise products) -> 128 -> 64 -> 32 -> 3."""

    def __init__(self, rng, dropout=(0.3, 0.2, 0.1)):
        super().__init__()
        self.expand = InteractionExpansion()
        self.net = Sequential(
            *_mlp_block(self.expand.out_dim, 128, rng, dropout[0]),
            *_mlp_block(128, 64, rng, dropout[1]),
            *_mlp_block(64, 32, rng, dropout[2]),
            Linear(32, N_CLASSES, rng),
        )

    def forward(self, x, train):
        return self.net.forward(self.expand.forward(x, train), train)

    def backward(self, dy):
        return self.expand.backward(self.net.backward(dy))


class TransformerMLP(Module):
    """Project 5 -> 64, prepend a learned classification token, run one
    encoder layer (width 64, feed-forward 128, 4 heads), classify from the
    token through 32 -> 3."""

    DIM = 64
    HEADS = 4
    FFN = 128

    def __init__(self, rng, dropout=()):
        super().__init__()
        self.proj = Linear(N_FEATURES, self.DIM, rng)
        self.cls_token = Param(uniform_fan_in(rng, self.DIM, (self.DIM,)))
        self.encoder = TransformerEncoderLayer(self.DIM, self.HEADS, self.FFN, rng)
        self.head = Sequential(Linear(self.DIM, 32, rng), ReLU(), Linear(32, N_CLASSES, rng))

    def forward(self, x, train):
        b = x.shape[0]
        feature_token = self.proj.forward(x, train)[:, None, :]
        cls = np.broadcast_to(self.cls_token.value, (b, 1, self.DIM))
        tokens = np.concatenate([cls, feature_token], axis=1)
        encoded = self.encoder.forward(tokens, train)
        return self.head.forward(encoded[:, 0, :], train)

    def backward(self, dy):
        dcls_out = self.head.backward(dy)
        dtokens = np.zeros((dy.shape[0], 2, self.DIM))
        dtokens[:, 0, :] = dcls_out
        dtokens = self.encoder.backward(dtokens)
        self.cls_token.grad += dtokens[:, 0, :].sum(axis=0)
        return self.proj.backward(dtokens[:, 1, :])


_BUILDERS = {
    "basic_mlp": BasicMLP,
    "residual_mlp": ResidualMLP,
    "attention_mlp": AttentionMLP,
    "feature_interaction_mlp": FeatureInteractionMLP,
    "transformer_mlp": TransformerMLP,
}


def build_network(config: ModelConfig) -> Module:
    rng = np.random.default_rng(config.seed)
    builder = _BUILDERS[config.architecture]
    if config.dropout is not None:
        return builder(rng, dropout=tuple(config.dropout))
    return builder(rng)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


class RelationModel:
    """A network plus its fitted feature scaler and training history."""

    def __init__(self, config: ModelConfig, scaler: Scaler | None = None):
        self.config = config
        self.net = build_network(config)
        self.scaler = scaler if scaler is not None else Scaler()
        self.history: list[dict] = []

    def forward(self, features: np.ndarray, train: bool = False) -> np.ndarray:
        features = np.asarray(features, dtype=np.float64)
        if features.ndim != 2 or features.shape[1] != N_FEATURES:
            raise ValidationError(f"expected (B, {N_FEATURES}) features, got {features.shape}")
        if not np.all(np.isfinite(features)):
            raise ValidationError("non-finite feature values")
        return self.net.forward(self.scaler.transform(features), train)

    def backward(self, dlogits: np.ndarray) -> np.ndarray:
        return self.net.backward(dlogits)

    def predict_proba(self, features: np.ndarray) -> np.ndarray:
        return softmax(self.forward(features, train=False))

    def predict_labels(self, features: np.ndarray) -> np.ndarray:
        return index_to_label(np.argmax(self.predict_proba(features), axis=1))

    # -- checkpointing ------------------------------------------------------

    def state(self) -> dict[str, np.ndarray]:
        return dict(self.net.state_items())

    def load_state(self, state: dict[str, np.ndarray]):
        self.net.load_state({k: np.asarray(v) for k, v in state.items()})

    def to_checkpoint(self) -> dict:
        return {
            "format": "fragtrack-relation-model-v1",
            "config": self.config.to_dict(),
            "scaler": {
                "mean": self.scaler.mean.tolist() if self.scaler.fitted else None,
                "std": self.scaler.std.tolist() if self.scaler.fitted else None,
            },
            "state": {
                name: {"shape": list(value.shape), "data": value.ravel().tolist()}
                for name, value in self.net.state_items()
            },
            "history": self.history,
        }

    @classmethod
    def from_checkpoint(cls, doc: dict) -> "RelationModel":
        config = ModelConfig.from_dict(doc["config"])
        scaler_doc = doc.get("scaler") or {}
        scaler = Scaler(scaler_doc.get("mean"), scaler_doc.get("std"))
        model = cls(config, scaler)
        state = {
            name: np.asarray(entry["data"], dtype=np.float64).reshape(entry["shape"])
            for name, entry in doc["state"].items()
        }
        model.load_state(state)
        model.history = list(doc.get("history", []))
        return model
