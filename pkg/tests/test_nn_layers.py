"""Layer-level checks: finite-difference gradients are the oracle throughout."""

import numpy as np

from fragtrack.nn.layers import (
    BatchNorm,
    Dropout,
    LayerNorm,
    Linear,
    MultiHeadSelfAttention,
    ReLU,
    Sequential,
    Sigmoid,
    Tanh,
    TransformerEncoderLayer,
)


def fd_input_grad(module, x, dy, h=1e-6):
    """Central-difference dL/dx where L = sum(forward(x) * dy)."""
    grad = np.zeros_like(x)
    flat_x = x.ravel()
    flat_g = grad.ravel()
    for i in range(flat_x.size):
        orig = flat_x[i]
        flat_x[i] = orig + h
        plus = float((module.forward(x, False) * dy).sum())
        flat_x[i] = orig - h
        minus = float((module.forward(x, False) * dy).sum())
        flat_x[i] = orig
        flat_g[i] = (plus - minus) / (2 * h)
    return grad


def fd_param_grads(module, x, dy, h=1e-6):
    grads = []
    for p in module.parameters():
        g = np.zeros_like(p.value)
        flat_v, flat_g = p.value.ravel(), g.ravel()
        for i in range(flat_v.size):
            orig = flat_v[i]
            flat_v[i] = orig + h
            plus = float((module.forward(x, False) * dy).sum())
            flat_v[i] = orig - h
            minus = float((module.forward(x, False) * dy).sum())
            flat_v[i] = orig
            flat_g[i] = (plus - minus) / (2 * h)
        grads.append(g)
    return grads


def check_module(module, x, rtol=1e-6, atol=1e-7):
    rng = np.random.default_rng(0)
    y = module.forward(x, False)
    dy = rng.normal(size=y.shape)
    module.zero_grad()
    dx = module.backward(dy)

    np.testing.assert_allclose(dx, fd_input_grad(module, x.copy(), dy), rtol=rtol, atol=atol)
    for p, fd in zip(module.parameters(), fd_param_grads(module, x, dy)):
        np.testing.assert_allclose(p.grad, fd, rtol=rtol, atol=atol)


class TestLayerGradients:
    def test_linear(self):
        rng = np.random.default_rng(1)
        check_module(Linear(4, 3, rng), rng.normal(size=(6, 4)))

    def test_linear_tokens(self):
        rng = np.random.default_rng(2)
        check_module(Linear(4, 3, rng), rng.normal(size=(2, 3, 4)))

    def test_relu(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=(5, 4))
        x[np.abs(x) < 0.05] += 0.2  # stay away from the kink
        check_module(ReLU(), x)

    def test_tanh_sigmoid(self):
        rng = np.random.default_rng(4)
        check_module(Tanh(), rng.normal(size=(5, 4)))
        check_module(Sigmoid(), rng.normal(size=(5, 4)))

    def test_batchnorm_eval_mode(self):
        rng = np.random.default_rng(5)
        bn = BatchNorm(4)
        bn.running_mean.value[...] = rng.normal(size=4)
        bn.running_var.value[...] = rng.uniform(0.5, 2.0, size=4)
        check_module(bn, rng.normal(size=(6, 4)))

    def test_batchnorm_train_mode_gradient(self):
        # train-mode backward against finite differences with frozen running
        # stats (the batch path does not read them)
        rng = np.random.default_rng(6)
        bn = BatchNorm(3)
        x = rng.normal(size=(8, 3))
        y = bn.forward(x, True)
        dy = rng.normal(size=y.shape)
        bn.zero_grad()
        dx = bn.backward(dy)

        h = 1e-6
        fd = np.zeros_like(x)
        for i in range(x.size):
            xp, xm = x.copy(), x.copy()
            xp.ravel()[i] += h
            xm.ravel()[i] -= h
            fd.ravel()[i] = float(
                ((bn.forward(xp, True) - bn.forward(xm, True)) * dy).sum()
            ) / (2 * h)
        np.testing.assert_allclose(dx, fd, rtol=1e-5, atol=1e-7)

    def test_batchnorm_single_sample_uses_running_stats(self):
        bn = BatchNorm(3)
        x = np.array([[1.0, 2.0, 3.0]])
        out_train = bn.forward(x, True)
        out_eval = bn.forward(x, False)
        np.testing.assert_allclose(out_train, out_eval)

    def test_layernorm(self):
        rng = np.random.default_rng(7)
        check_module(LayerNorm(5), rng.normal(size=(4, 5)))
        check_module(LayerNorm(5), rng.normal(size=(2, 3, 5)))

    def test_attention(self):
        rng = np.random.default_rng(8)
        check_module(
            MultiHeadSelfAttention(8, 2, rng), rng.normal(size=(2, 3, 8)), rtol=1e-5, atol=1e-6
        )

    def test_encoder_layer(self):
        rng = np.random.default_rng(9)
        check_module(
            TransformerEncoderLayer(8, 2, 16, rng),
            rng.normal(size=(2, 2, 8)),
            rtol=1e-5,
            atol=1e-6,
        )

    def test_sequential(self):
        rng = np.random.default_rng(10)
        seq = Sequential(Linear(4, 6, rng), Tanh(), Linear(6, 2, rng))
        check_module(seq, rng.normal(size=(5, 4)))


class TestLayerBehaviour:
    def test_dropout_eval_is_identity(self):
        rng = np.random.default_rng(11)
        drop = Dropout(0.5, rng)
        x = rng.normal(size=(4, 4))
        np.testing.assert_array_equal(drop.forward(x, False), x)

    def test_dropout_train_scales(self):
        rng = np.random.default_rng(12)
        drop = Dropout(0.5, rng)
        x = np.ones((2000, 10))
        y = drop.forward(x, True)
        kept = y[y > 0]
        assert np.allclose(kept, 2.0)  # 1 / (1 - p)
        assert abs(y.mean() - 1.0) < 0.05

    def test_batchnorm_updates_running_stats_only_in_train(self):
        rng = np.random.default_rng(13)
        bn = BatchNorm(3)
        before = bn.running_mean.value.copy()
        bn.forward(rng.normal(size=(8, 3)) + 5.0, True)
        assert not np.allclose(bn.running_mean.value, before)
        frozen = bn.running_mean.value.copy()
        bn.forward(rng.normal(size=(8, 3)) + 5.0, False)
        np.testing.assert_array_equal(bn.running_mean.value, frozen)

    def test_state_roundtrip(self):
        rng = np.random.default_rng(14)
        seq = Sequential(Linear(4, 6, rng), BatchNorm(6), ReLU(), Linear(6, 2, rng))
        seq.forward(rng.normal(size=(8, 4)), True)  # move running stats
        state = {k: v.copy() for k, v in seq.state_items()}
        fresh = Sequential(
            Linear(4, 6, np.random.default_rng(99)),
            BatchNorm(6),
            ReLU(),
            Linear(6, 2, np.random.default_rng(98)),
        )
        fresh.load_state(state)
        x = rng.normal(size=(5, 4))
        np.testing.assert_allclose(seq.forward(x, False), fresh.forward(x, False))
