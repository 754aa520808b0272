import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from biosigflux.autodiff import (
    Adam,
    Conv1d,
    LayerNorm,
    Linear,
    MultiHeadAttention,
    Tensor,
    VariationalConv1d,
    VariationalLinear,
    conv1d,
    dropout,
    gaussian_nll_loss,
    gelu,
    grad_check,
    grad_check_params,
    kl_diag_gaussian,
    layer_norm,
    max_pool1d,
    mse_loss,
    no_grad,
    relu,
    scaled_dot_attention,
    sigmoid,
    softmax,
    softplus,
)
from biosigflux.autodiff import tensor as T
from biosigflux.autodiff.layers import rho_for_sigma
from biosigflux.autodiff.optim import AdamState, adam_step

TOL = 1e-4


def weighted_sum(out: Tensor, seed: int = 0) -> Tensor:
    """Scalar probe with non-uniform weights so every output entry matters."""
    w = np.random.default_rng(seed).standard_normal(out.shape)
    return (out * Tensor(w)).sum()


def rand(*shape, seed=0):
    return np.random.default_rng(seed).standard_normal(shape)


class TestTensorOps:
    def test_broadcast_add_mul_grads(self):
        a = Tensor(rand(3, 4), requires_grad=True)
        b = Tensor(rand(4, seed=1), requires_grad=True)
        ((a * b + b) * 2.0).sum().backward()
        np.testing.assert_allclose(a.grad, np.broadcast_to(2 * b.data, (3, 4)))
        np.testing.assert_allclose(b.grad, 2 * a.data.sum(axis=0) + 6.0)

    def test_fan_out_accumulates(self):
        x = Tensor(np.array([3.0]), requires_grad=True)
        y = x * x + x
        y.sum().backward()
        np.testing.assert_allclose(x.grad, [7.0])

    @pytest.mark.parametrize("fn", [
        lambda x: weighted_sum(x / (x * x + 1.0)),
        lambda x: weighted_sum(T.exp(x) - T.log(x * x + 2.0)),
        lambda x: weighted_sum(T.sqrt(x * x + 1.0) ** 3),
        lambda x: weighted_sum(x.reshape(4, 3).transpose(1, 0)),
        lambda x: weighted_sum(x[1:, ::2]),
        lambda x: weighted_sum(x[np.array([0, 0, 2])]),
        lambda x: weighted_sum(T.concat([x, x * 2.0], axis=1)),
        lambda x: weighted_sum(x.mean(axis=0, keepdims=True) - x.sum(axis=1, keepdims=True)),
        lambda x: weighted_sum(x @ Tensor(rand(4, 2, seed=3))),
        lambda x: weighted_sum(T.swapaxes(x, 0, 1)),
        lambda x: weighted_sum(1.0 - x) + weighted_sum(2.0 / (x * x + 1.0)),
    ])
    def test_primitive_gradients(self, fn):
        assert grad_check(fn, rand(3, 4, seed=5), step=1e-5) <= TOL

    def test_batched_matmul_gradient(self):
        b = Tensor(rand(2, 4, 5, seed=1))
        assert grad_check(lambda a: weighted_sum(a @ b), rand(2, 3, 4), step=1e-5) <= TOL

    def test_no_grad_builds_no_graph(self):
        x = Tensor(rand(3), requires_grad=True)
        with no_grad():
            y = x * 2.0
        assert not y.requires_grad

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_debug_mode_flags_non_finite(self):
        T.set_debug(True)
        try:
            with pytest.raises(FloatingPointError):
                T.log(Tensor(np.array([-1.0]), requires_grad=True))
        finally:
            T.set_debug(False)

    def test_backward_requires_scalar_or_grad(self):
        x = Tensor(rand(3), requires_grad=True)
        with pytest.raises(ValueError):
            (x * 2.0).backward()

    def test_matmul_shape_error_names_dims(self):
        with pytest.raises(ValueError, match="4"):
            Tensor(rand(3, 4)) @ Tensor(rand(5, 2))


class TestLayerGradients:
    """Finite-difference checks for every differentiable op and layer (float64)."""

    def test_conv1d_input_weight_bias(self):
        w = Tensor(rand(4, 2, 5, seed=1), requires_grad=True)
        b = Tensor(rand(4, seed=2), requires_grad=True)
        x = rand(2, 2, 11)
        assert grad_check(lambda t: weighted_sum(conv1d(t, w, b, padding="same")), x, step=1e-5) <= TOL
        assert grad_check(lambda t: weighted_sum(conv1d(Tensor(x), t, b, stride=2)), w.data, step=1e-5) <= TOL
        assert grad_check(lambda t: weighted_sum(conv1d(Tensor(x), w, t, padding=(1, 3))), b.data,
                          step=1e-5) <= TOL

    def test_even_kernel_same_padding_keeps_length(self):
        out = conv1d(Tensor(rand(1, 1, 9)), Tensor(rand(1, 1, 4)), padding="same")
        assert out.shape == (1, 1, 9)

    def test_conv1d_channel_mismatch(self):
        with pytest.raises(ValueError, match="C_in=3"):
            conv1d(Tensor(rand(1, 2, 9)), Tensor(rand(1, 3, 3)))

    def test_conv1d_kernel_too_long(self):
        with pytest.raises(ValueError, match="k=7"):
            conv1d(Tensor(rand(1, 1, 5)), Tensor(rand(1, 1, 7)))

    def test_conv1d_matches_direct_correlation(self):
        x, w = rand(1, 1, 8), rand(1, 1, 3, seed=1)
        out = conv1d(Tensor(x), Tensor(w)).data[0, 0]
        np.testing.assert_allclose(out, np.correlate(x[0, 0], w[0, 0], mode="valid"), rtol=1e-12)

    def test_max_pool(self):
        x = rand(2, 3, 9)
        assert grad_check(lambda t: weighted_sum(max_pool1d(t, 2)), x, step=1e-6) <= TOL
        np.testing.assert_array_equal(max_pool1d(Tensor(np.array([[[1.0, 3, 2, 0, 5]]])), 2).data,
                                      [[[3.0, 2.0]]])

    @pytest.mark.parametrize("act", [relu, gelu, sigmoid, softplus])
    def test_activations(self, act):
        x = rand(3, 5) + 0.05  # keep relu away from its kink
        assert grad_check(lambda t: weighted_sum(act(t)), x, step=1e-6) <= TOL

    def test_gelu_values(self):
        out = gelu(Tensor(np.array([0.0, 1.0, -1.0]))).data
        np.testing.assert_allclose(out, [0.0, 0.8411919906082768, -0.15880800939172324], rtol=1e-12)

    def test_softplus_and_sigmoid_are_stable(self):
        z = Tensor(np.array([-800.0, 0.0, 800.0]))
        np.testing.assert_allclose(softplus(z).data, [0.0, math.log(2.0), 800.0])
        np.testing.assert_allclose(sigmoid(z).data, [0.0, 0.5, 1.0])

    def test_softmax(self):
        x = rand(2, 3, 6)
        assert grad_check(lambda t: weighted_sum(softmax(t)), x, step=1e-5) <= TOL
        assert grad_check(lambda t: weighted_sum(softmax(t, axis=1)), x, step=1e-5) <= TOL
        np.testing.assert_allclose(softmax(Tensor(x)).data.sum(-1), 1.0, atol=1e-12)

    def test_layer_norm(self):
        w = Tensor(rand(6, seed=1), requires_grad=True)
        b = Tensor(rand(6, seed=2), requires_grad=True)
        x = rand(3, 6)
        assert grad_check(lambda t: weighted_sum(layer_norm(t, w, b)), x, step=1e-5) <= TOL
        assert grad_check(lambda t: weighted_sum(layer_norm(Tensor(x), t, b)), w.data, step=1e-5) <= TOL
        out = layer_norm(Tensor(x)).data
        np.testing.assert_allclose(out.mean(-1), 0.0, atol=1e-12)

    def test_linear_module(self):
        lin = Linear(5, 3, np.random.default_rng(0), dtype=np.float64)
        x = rand(4, 5)
        assert grad_check(lambda t: weighted_sum(lin(t)), x, step=1e-5) <= TOL
        errs = grad_check_params(lambda: weighted_sum(lin(Tensor(x))), dict(lin.named_parameters()), step=1e-5)
        assert max(errs.values()) <= TOL

    def test_conv_and_layernorm_modules(self):
        conv = Conv1d(2, 3, 5, np.random.default_rng(0), dtype=np.float64)
        ln = LayerNorm(3, dtype=np.float64)
        x = Tensor(rand(2, 2, 9))
        params = {**dict(conv.named_parameters("conv.")), **dict(ln.named_parameters("ln."))}
        # normalize over channels: over length the conv bias would be a pure shift with zero gradient
        errs = grad_check_params(lambda: weighted_sum(ln(conv(x).transpose(0, 2, 1))), params, step=1e-5)
        assert max(errs.values()) <= TOL

    def test_attention_core_with_hook(self):
        k, v = Tensor(rand(2, 5, 4, seed=1)), Tensor(rand(2, 5, 4, seed=2))
        prior = np.full((3, 5), 0.2)

        def f(q):
            out, attn = scaled_dot_attention(q, k, v, heads=2, attn_bias_hook=lambda a: a * 0.7 + Tensor(prior) * 0.3)
            return weighted_sum(out) + weighted_sum(attn, seed=4)
        assert grad_check(f, rand(2, 3, 4), step=1e-5) <= TOL

    def test_multi_head_attention_module(self):
        mha = MultiHeadAttention(4, 2, np.random.default_rng(0), dtype=np.float64)
        x = Tensor(rand(2, 5, 4))
        errs = grad_check_params(lambda: weighted_sum(mha(x, x, x)[0]), dict(mha.named_parameters()), step=1e-5)
        assert max(errs.values()) <= TOL
        assert grad_check(lambda t: weighted_sum(mha(t, t, t)[0]), x.data, step=1e-5) <= TOL

    def test_attention_width_must_divide(self):
        with pytest.raises(ValueError, match="D=5"):
            scaled_dot_attention(Tensor(rand(1, 2, 5)), Tensor(rand(1, 2, 5)), Tensor(rand(1, 2, 5)), heads=2)

    @pytest.mark.parametrize("stochastic", [False, True])
    def test_variational_layers(self, stochastic):
        rng = np.random.default_rng(0)
        lin = VariationalLinear(6, 3, rng, init_sigma=0.1, dtype=np.float64)
        conv = VariationalConv1d(1, 2, 3, rng, init_sigma=0.1, dtype=np.float64)
        x = Tensor(rand(2, 1, 3))

        def loss():
            # a fresh generator per call makes the sampled weights a fixed function of the params
            r = np.random.default_rng(7)
            h = conv(x, stochastic, r).reshape(2, 6)
            return weighted_sum(lin(h, stochastic, r)) + lin.kl() * 0.01 + conv.kl() * 0.01
        params = {**dict(lin.named_parameters("lin.")), **dict(conv.named_parameters("conv."))}
        assert max(grad_check_params(loss, params, step=1e-5).values()) <= TOL

    def test_dropout_gradient_with_fixed_mask(self):
        x = rand(4, 6)
        f = lambda t: weighted_sum(dropout(t, 0.3, True, np.random.default_rng(3)))
        assert grad_check(f, x, step=1e-5) <= TOL

    def test_losses(self):
        target = rand(3, 4, seed=1)
        lv = Tensor(rand(3, 4, seed=2) * 0.3)
        assert grad_check(lambda t: mse_loss(t, target), rand(3, 4), step=1e-5) <= TOL
        assert grad_check(lambda t: gaussian_nll_loss(t, lv, target), rand(3, 4), step=1e-5) <= TOL
        assert grad_check(lambda t: gaussian_nll_loss(Tensor(target * 0.5), t, target, "mean"),
                          rand(3, 4) * 0.3, step=1e-5) <= TOL
        sigma = Tensor(np.abs(rand(5, seed=3)) + 0.2)
        assert grad_check(lambda t: kl_diag_gaussian(t, sigma), rand(5), step=1e-5) <= TOL
        assert grad_check(lambda t: kl_diag_gaussian(Tensor(rand(5)), t), sigma.data, step=1e-5) <= TOL


class TestLossValues:
    def test_gaussian_nll_hand_value(self):
        # ½[(0) + 1²] + ½[log 2 + 4/2]
        out = gaussian_nll_loss(Tensor(np.array([0.0, 0.0])), Tensor(np.array([0.0, math.log(2.0)])),
                                np.array([1.0, 2.0]))
        assert out.item() == pytest.approx(0.5 + 0.5 * (math.log(2.0) + 2.0), rel=1e-12)

    def test_kl_standard_normal_is_zero(self):
        assert kl_diag_gaussian(Tensor(np.zeros(4)), Tensor(np.ones(4))).item() == 0.0

    def test_kl_rejects_nonpositive_sigma(self):
        with pytest.raises(ValueError):
            kl_diag_gaussian(Tensor(np.zeros(2)), Tensor(np.array([1.0, 0.0])))

    def test_kl_closed_form_one_dim(self):
        # KL(N(1, 2²) || N(0, 1)) = −log 2 + (4 + 1)/2 − ½
        out = kl_diag_gaussian(Tensor(np.array([1.0])), Tensor(np.array([2.0]))).item()
        assert out == pytest.approx(-math.log(2.0) + 2.0, rel=1e-12)

    def test_rho_for_sigma_inverts_softplus(self):
        for s in (1e-3, 0.05, 1.0):
            assert softplus(Tensor(np.array([rho_for_sigma(s)]))).data[0] == pytest.approx(s, rel=1e-12)


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, (3, 5), elements=st.floats(-30, 30)))
def test_softmax_rows_are_simplex(x):
    out = softmax(Tensor(x)).data
    assert np.all(out >= 0)
    np.testing.assert_allclose(out.sum(-1), 1.0, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.0, 0.95), st.integers(0, 2**31))
def test_dropout_preserves_expectation_shape(p, seed):
    x = Tensor(np.ones((50, 40)))
    out = dropout(x, p, True, np.random.default_rng(seed)).data
    kept = out[out != 0]
    np.testing.assert_allclose(kept, 1.0 / (1.0 - p))


def test_dropout_rejects_bad_probability():
    with pytest.raises(ValueError):
        dropout(Tensor(np.ones(3)), 1.0, True, np.random.default_rng(0))


def test_dropout_inactive_is_identity():
    x = Tensor(np.ones(3))
    assert dropout(x, 0.5, False) is x


class TestAdam:
    def test_first_step_moves_by_lr(self):
        # bias correction makes the first update exactly lr·sign(g)
        p = Tensor(np.array([1.0, -2.0]), requires_grad=True)
        state = AdamState(lr=0.1)
        adam_step([p], [np.array([0.5, -3.0])], state)
        np.testing.assert_allclose(p.data, [0.9, -1.9], rtol=1e-7)

    def test_minimizes_quadratic(self):
        p = Tensor(np.array([5.0, -3.0]), requires_grad=True)
        opt = Adam([p], lr=0.1)
        for _ in range(500):
            opt.zero_grad()
            (p * p).sum().backward()
            opt.step()
        np.testing.assert_allclose(p.data, 0.0, atol=1e-3)

    def test_shape_mismatch(self):
        p = Tensor(np.zeros(2), requires_grad=True)
        with pytest.raises(ValueError):
            adam_step([p], [np.zeros(3)], AdamState())


def test_grad_check_detects_wrong_gradient():
    def bad(x):
        return T._node(x.data ** 2, (x,), lambda g: (g * 3 * x.data,), "bad").sum()
    assert grad_check(bad, np.array([1.0, 2.0])) > 0.1
