"""Minimal neural-network layer kit with hand-written gradients.

Everything runs in float64. Each module caches what its backward pass needs
during forward; call backward immediately after the matching forward.
Parameters carry their gradient buffer; optimizers mutate `Param.value` in
place. Batch-norm and dropout read `train` to switch between batch statistics
(plus running-average updates) and deterministic eval behaviour.
"""

from __future__ import annotations

import numpy as np

from ..core import ValidationError


class Param:
    """A trainable tensor with its gradient accumulator."""

    __slots__ = ("value", "grad", "decay")

    def __init__(self, value: np.ndarray, decay: bool = True):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = np.zeros_like(self.value)
        self.decay = decay  # ignored by decoupled weight decay when False


class Buffer:
    """Non-trainable state (running statistics)."""

    __slots__ = ("value",)

    def __init__(self, value: np.ndarray):
        self.value = np.asarray(value, dtype=np.float64)


class Module:
    """Base with automatic child/param registration in declaration order."""

    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_buffers", {})
        object.__setattr__(self, "_children", {})

    def __setattr__(self, name, value):
        if isinstance(value, Param):
            self._params[name] = value
        elif isinstance(value, Buffer):
            self._buffers[name] = value
        elif isinstance(value, Module):
            self._children[name] = value
        object.__setattr__(self, name, value)

    def parameters(self) -> list[Param]:
        out = list(self._params.values())
        for child in self._children.values():
            out.extend(child.parameters())
        return out

    def state_items(self, prefix: str = "") -> list[tuple[str, np.ndarray]]:
        items = [(prefix + name, p.value) for name, p in self._params.items()]
        items += [(prefix + name, b.value) for name, b in self._buffers.items()]
        for child_name, child in self._children.items():
            items.extend(child.state_items(prefix + child_name + "."))
        return items

    def load_state(self, state: dict[str, np.ndarray], prefix: str = ""):
        for name, p in self._params.items():
            p.value[...] = np.asarray(state[prefix + name], dtype=np.float64).reshape(p.value.shape)
        for name, b in self._buffers.items():
            b.value[...] = np.asarray(state[prefix + name], dtype=np.float64).reshape(b.value.shape)
        for child_name, child in self._children.items():
            child.load_state(state, prefix + child_name + ".")

    def zero_grad(self):
        for p in self.parameters():
            p.grad[...] = 0.0

    def forward(self, x: np.ndarray, train: bool) -> np.ndarray:
        raise NotImplementedError

    def backward(self, dy: np.ndarray) -> np.ndarray:
        raise NotImplementedError


def uniform_fan_in(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Linear(Module):
    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator):
        super().__init__()
        self.weight = Param(uniform_fan_in(rng, in_dim, (in_dim, out_dim)))
        self.bias = Param(uniform_fan_in(rng, in_dim, (out_dim,)), decay=False)
        self._x = None

    def forward(self, x, train):
        self._x = x
        return x @ self.weight.value + self.bias.value

    def backward(self, dy):
        x = self._x
        if x.ndim == 2:
            self.weight.grad += x.T @ dy
            self.bias.grad += dy.sum(axis=0)
        else:  # (B, T, D) token inputs
            self.weight.grad += np.einsum("bti,bto->io", x, dy)
            self.bias.grad += dy.sum(axis=(0, 1))
        return dy @ self.weight.value.T


class ReLU(Module):
    def __init__(self):
        super().__init__()
        self._mask = None

    def forward(self, x, train):
        self._mask = x > 0
        return x * self._mask

    def backward(self, dy):
        return dy * self._mask


class Tanh(Module):
    def __init__(self):
        super().__init__()
        self._y = None

    def forward(self, x, train):
        self._y = np.tanh(x)
        return self._y

    def backward(self, dy):
        return dy * (1.0 - self._y**2)


class Sigmoid(Module):
    def __init__(self):
        super().__init__()
        self._y = None

    def forward(self, x, train):
        self._y = 1.0 / (1.0 + np.exp(-x))
        return self._y

    def backward(self, dy):
        return dy * self._y * (1.0 - self._y)


class Dropout(Module):
    def __init__(self, p: float, rng: np.random.Generator):
        super().__init__()
        if not 0.0 <= p < 1.0:
            raise ValidationError(f"dropout rate {p} outside [0, 1)")
        self.p = p
        self.rng = rng
        self._mask = None

    def forward(self, x, train):
        if not train or self.p == 0.0:
            self._mask = None
            return x
        self._mask = (self.rng.random(x.shape) >= self.p) / (1.0 - self.p)
        return x * self._mask

    def backward(self, dy):
        if self._mask is None:
            return dy
        return dy * self._mask


class BatchNorm(Module):
    """1-D batch normalization over the batch axis of (B, D) inputs.

    Eval mode (and 1-sample training batches) normalizes with the running
    statistics, which makes inference deterministic.
    """

    def __init__(self, dim: int, momentum: float = 0.1, eps: float = 1e-5):
        super().__init__()
        self.gamma = Param(np.ones(dim), decay=False)
        self.beta = Param(np.zeros(dim), decay=False)
        self.running_mean = Buffer(np.zeros(dim))
        self.running_var = Buffer(np.ones(dim))
        self.momentum = momentum
        self.eps = eps
        self._cache = None

    def forward(self, x, train):
        if train and x.shape[0] > 1:
            mean = x.mean(axis=0)
            var = x.var(axis=0)
            self.running_mean.value[...] = (
                (1 - self.momentum) * self.running_mean.value + self.momentum * mean
            )
            self.running_var.value[...] = (
                (1 - self.momentum) * self.running_var.value + self.momentum * var
            )
            batch_stats = True
        else:
            mean = self.running_mean.value
            var = self.running_var.value
            batch_stats = False
        inv_std = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mean) * inv_std
        self._cache = (xhat, inv_std, batch_stats)
        return self.gamma.value * xhat + self.beta.value

    def backward(self, dy):
        xhat, inv_std, batch_stats = self._cache
        self.gamma.grad += (dy * xhat).sum(axis=0)
        self.beta.grad += dy.sum(axis=0)
        dxhat = dy * self.gamma.value
        if not batch_stats:
            return dxhat * inv_std
        n = dy.shape[0]
        return (
            inv_std
            / n
            * (n * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0))
        )


class LayerNorm(Module):
    """Normalization over the last axis; used inside the transformer layer."""

    def __init__(self, dim: int, eps: float = 1e-5):
        super().__init__()
        self.gamma = Param(np.ones(dim), decay=False)
        self.beta = Param(np.zeros(dim), decay=False)
        self.eps = eps
        self._cache = None

    def forward(self, x, train):
        mean = x.mean(axis=-1, keepdims=True)
        var = x.var(axis=-1, keepdims=True)
        inv_std = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mean) * inv_std
        self._cache = (xhat, inv_std)
        return self.gamma.value * xhat + self.beta.value

    def backward(self, dy):
        xhat, inv_std = self._cache
        axes = tuple(range(dy.ndim - 1))
        self.gamma.grad += (dy * xhat).sum(axis=axes)
        self.beta.grad += dy.sum(axis=axes)
        dxhat = dy * self.gamma.value
        return inv_std * (
            dxhat
            - dxhat.mean(axis=-1, keepdims=True)
            - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
        )


class Sequential(Module):
    def __init__(self, *modules: Module):
        super().__init__()
        for i, module in enumerate(modules):
            setattr(self, f"m{i}", module)
        self.steps = list(modules)

    def forward(self, x, train):
        for module in self.steps:
            x = module.forward(x, train)
        return x

    def backward(self, dy):
        for module in reversed(self.steps):
            dy = module.backward(dy)
        return dy


class MultiHeadSelfAttention(Module):
    """Scaled dot-product self-attention over (B, T, D) token stacks."""

    def __init__(self, dim: int, heads: int, rng: np.random.Generator):
        super().__init__()
        if dim % heads:
            raise ValidationError(f"model width {dim} not divisible by {heads} heads")
        self.dim = dim
        self.heads = heads
        self.head_dim = dim // heads
        self.wq = Linear(dim, dim, rng)
        self.wk = Linear(dim, dim, rng)
        self.wv = Linear(dim, dim, rng)
        self.wo = Linear(dim, dim, rng)
        self._cache = None

    def _split(self, x):
        b, t, _ = x.shape
        return x.reshape(b, t, self.heads, self.head_dim).transpose(0, 2, 1, 3)

    def _merge(self, x):
        b, h, t, d = x.shape
        return x.transpose(0, 2, 1, 3).reshape(b, t, h * d)

    def forward(self, x, train):
        q = self._split(self.wq.forward(x, train))
        k = self._split(self.wk.forward(x, train))
        v = self._split(self.wv.forward(x, train))
        scale = 1.0 / np.sqrt(self.head_dim)
        scores = np.einsum("bhtd,bhsd->bhts", q, k) * scale
        scores -= scores.max(axis=-1, keepdims=True)
        attn = np.exp(scores)
        attn /= attn.sum(axis=-1, keepdims=True)
        context = np.einsum("bhts,bhsd->bhtd", attn, v)
        self._cache = (q, k, v, attn, scale)
        return self.wo.forward(self._merge(context), train)

    def backward(self, dy):
        q, k, v, attn, scale = self._cache
        dcontext = self._split(self.wo.backward(dy))
        dattn = np.einsum("bhtd,bhsd->bhts", dcontext, v)
        dv = np.einsum("bhts,bhtd->bhsd", attn, dcontext)
        dscores = attn * (dattn - (dattn * attn).sum(axis=-1, keepdims=True))
        dscores *= scale
        dq = np.einsum("bhts,bhsd->bhtd", dscores, k)
        dk = np.einsum("bhts,bhtd->bhsd", dscores, q)
        dx = self.wq.backward(self._merge(dq))
        dx += self.wk.backward(self._merge(dk))
        dx += self.wv.backward(self._merge(dv))
        return dx


class TransformerEncoderLayer(Module):
    """Post-norm encoder block: attention and feed-forward, each residual."""

    def __init__(self, dim: int, heads: int, ffn_dim: int, rng: np.random.Generator):
        super().__init__()
        self.attention = MultiHeadSelfAttention(dim, heads, rng)
        self.norm1 = LayerNorm(dim)
        self.ffn1 = Linear(dim, ffn_dim, rng)
        self.act = ReLU()
        self.ffn2 = Linear(ffn_dim, dim, rng)
        self.norm2 = LayerNorm(dim)

    def forward(self, x, train):
        h = self.norm1.forward(x + self.attention.forward(x, train), train)
        ffn = self.ffn2.forward(self.act.forward(self.ffn1.forward(h, train), train), train)
        return self.norm2.forward(h + ffn, train)

    def backward(self, dy):
        dsum = self.norm2.backward(dy)
        dh = dsum + self.ffn1.backward(self.act.backward(self.ffn2.backward(dsum)))
        dx = self.norm1.backward(dh)
        return dx + self.attention.backward(dx)
