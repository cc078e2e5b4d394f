import math

import numpy as np
import pytest

from avloc.tensorops import (
    NonFiniteError,
    ParamSet,
    ShapeError,
    attention_backward,
    attention_forward,
    finite_diff_grad_check,
    layer_norm,
    layer_norm_backward,
    layer_norm_forward,
    multi_head_attention_backward,
    multi_head_attention_forward,
    scaled_dot_attention,
    seeded_init,
    sigmoid,
    softmax,
)


class TestParamSet:
    def test_shapes_fixed(self):
        ps = ParamSet({"w": np.zeros((2, 3))})
        with pytest.raises(ShapeError):
            ps.set("w", np.zeros((3, 2)))
        ps.set("w", np.ones((2, 3)))
        assert ps["w"].sum() == 6

    def test_rejects_non_2d(self):
        with pytest.raises(ShapeError):
            ParamSet({"v": np.zeros(3)})


class TestSoftmax:
    def test_constant_vector_is_uniform(self):
        for c in (-3.0, 0.0, 17.5):
            out = softmax(np.full(4, c))
            np.testing.assert_allclose(out, 0.25, atol=1e-15)

    def test_analytic_two_entry(self):
        out = softmax(np.array([0.0, math.log(3.0)]))
        np.testing.assert_allclose(out, [0.25, 0.75], atol=1e-12)

    def test_large_values_no_overflow(self):
        out = softmax(np.array([1000.0, 0.0]))
        assert out[0] == pytest.approx(1.0)
        assert out[1] == pytest.approx(0.0, abs=1e-300)
        assert np.isfinite(out).all()

    def test_sums_to_one(self, rng):
        for _ in range(20):
            v = rng.standard_normal(rng.integers(1, 30))
            assert abs(softmax(v).sum() - 1.0) < 1e-12

    def test_non_finite_rejected(self):
        with pytest.raises(NonFiniteError):
            softmax(np.array([0.0, np.nan]))


class TestLayerNorm:
    def test_row_moments(self, rng):
        x = rng.standard_normal((7, 12)) * 3 + 1.5
        y = layer_norm(x)
        np.testing.assert_allclose(y.mean(axis=1), 0.0, atol=1e-10)
        np.testing.assert_allclose(y.var(axis=1), 1.0, atol=1e-10)

    def test_affine_gradcheck(self, rng):
        x = rng.standard_normal((4, 6))
        target = rng.standard_normal((4, 6))
        params = ParamSet(
            {"g": 1.0 + 0.3 * rng.standard_normal((1, 6)), "b": 0.2 * rng.standard_normal((1, 6))}
        )

        def loss_and_grads(ps):
            y, cache = layer_norm_forward(x, ps["g"], ps["b"])
            diff = y - target
            loss = (diff * diff).sum()
            _, d_g, d_b = layer_norm_backward(2 * diff, cache)
            return loss, {"g": d_g, "b": d_b}

        assert finite_diff_grad_check(loss_and_grads, params) < 1e-6


class TestAttention:
    def test_single_key_returns_value_row(self, rng):
        q = rng.standard_normal((5, 3))
        k = rng.standard_normal((1, 3))
        v = rng.standard_normal((1, 4))
        context, weights = scaled_dot_attention(q, k, v)
        np.testing.assert_allclose(context, np.repeat(v, 5, axis=0), atol=1e-14)
        np.testing.assert_allclose(weights, 1.0)

    def test_rows_sum_to_one(self, rng):
        q, k, v = (rng.standard_normal(s) for s in ((6, 4), (9, 4), (9, 5)))
        _, weights = scaled_dot_attention(q, k, v)
        np.testing.assert_allclose(weights.sum(axis=1), 1.0, atol=1e-12)
        assert (weights >= 0).all()

    def test_shape_mismatch(self, rng):
        with pytest.raises(ShapeError):
            scaled_dot_attention(
                rng.standard_normal((2, 3)), rng.standard_normal((2, 4)), rng.standard_normal((2, 2))
            )

    def test_query_permutation_equivariance(self, rng):
        q, k, v = (rng.standard_normal(s) for s in ((6, 4), (5, 4), (5, 4)))
        perm = rng.permutation(6)
        base, _ = scaled_dot_attention(q, k, v)
        permuted, _ = scaled_dot_attention(q[perm], k, v)
        np.testing.assert_allclose(permuted, base[perm], atol=1e-14)

    def test_deterministic(self, rng):
        q, k, v = (rng.standard_normal((4, 4)) for _ in range(3))
        a1 = scaled_dot_attention(q, k, v)[0]
        a2 = scaled_dot_attention(q, k, v)[0]
        assert (a1 == a2).all()

    def test_gradcheck_through_attention(self, rng):
        probe = rng.standard_normal((5, 4))
        params = ParamSet(
            {
                "q": rng.standard_normal((5, 3)),
                "k": rng.standard_normal((7, 3)),
                "v": rng.standard_normal((7, 4)),
            }
        )

        def loss_and_grads(ps):
            context, _, cache = attention_forward(ps["q"], ps["k"], ps["v"])
            loss = (context * probe).sum()
            d_q, d_k, d_v = attention_backward(probe, cache)
            return loss, {"q": d_q, "k": d_k, "v": d_v}

        assert finite_diff_grad_check(loss_and_grads, params, epsilon=1e-5) <= 1e-4

    def test_multi_head_gradcheck(self, rng):
        x_q = rng.standard_normal((5, 8))
        x_kv = rng.standard_normal((6, 8))
        probe = rng.standard_normal((5, 8))
        params = ParamSet(
            {f"mha_{n}": 0.5 * rng.standard_normal((8, 8)) for n in ("wq", "wk", "wv", "wo")}
        )

        def loss_and_grads(ps):
            out, _, cache = multi_head_attention_forward(x_q, x_kv, ps, "mha", heads=2)
            loss = (out * probe).sum()
            _, _, grads = multi_head_attention_backward(probe, cache)
            return loss, grads

        assert finite_diff_grad_check(loss_and_grads, params, epsilon=1e-5) <= 1e-4

    def test_mean_weights_row_stochastic(self, rng):
        x = rng.standard_normal((6, 8))
        params = ParamSet(
            {f"mha_{n}": rng.standard_normal((8, 8)) for n in ("wq", "wk", "wv", "wo")}
        )
        _, weights, _ = multi_head_attention_forward(x, x, params, "mha", heads=4)
        np.testing.assert_allclose(weights.sum(axis=1), 1.0, atol=1e-10)


class TestSeededInit:
    def test_zeros(self):
        assert (seeded_init((3, 4), 0, "zeros") == 0).all()

    def test_identity_like(self):
        m = seeded_init((3, 5), 0, "identity_like")
        np.testing.assert_array_equal(m[:, :3], np.eye(3))
        assert (m[:, 3:] == 0).all()

    def test_same_seed_bit_identical(self):
        a = seeded_init((6, 7), 42, "uniform_scaled")
        b = seeded_init((6, 7), 42, "uniform_scaled")
        assert (a == b).all()

    def test_different_seeds_differ(self):
        a = seeded_init((6, 7), 1, "uniform_scaled")
        b = seeded_init((6, 7), 2, "uniform_scaled")
        assert (a != b).any()

    def test_uniform_scaled_bounds(self):
        m = seeded_init((100, 16), 0, "uniform_scaled")
        assert np.abs(m).max() <= 1 / 4

    def test_unknown_scheme(self):
        with pytest.raises(ValueError):
            seeded_init((2, 2), 0, "normal")


class TestFiniteDiffGradCheck:
    def test_quadratic_exact(self, rng):
        params = ParamSet({"theta": rng.uniform(0.5, 1.5, size=(3, 4))})

        def loss_and_grads(ps):
            th = ps["theta"]
            return float((th * th).sum()), {"theta": 2 * th}

        assert finite_diff_grad_check(loss_and_grads, params) <= 1e-8

    def test_logistic_bce(self, rng):
        x = rng.standard_normal((6, 20))
        y = (rng.uniform(size=20) > 0.5).astype(float)
        params = ParamSet({"w": rng.standard_normal((1, 6)), "b": np.zeros((1, 1))})

        def loss_and_grads(ps):
            logits = (ps["w"] @ x + ps["b"]).ravel()
            p = sigmoid(logits)
            eps = 1e-12
            loss = float(-(y * np.log(p + eps) + (1 - y) * np.log(1 - p + eps)).mean())
            d_logits = (p - y) / y.size
            return loss, {"w": d_logits.reshape(1, -1) @ x.T, "b": d_logits.sum().reshape(1, 1)}

        assert finite_diff_grad_check(loss_and_grads, params) <= 1e-6

    def test_wrong_gradient_detected(self, rng):
        params = ParamSet({"theta": rng.uniform(0.5, 1.5, size=(2, 2))})

        def loss_and_grads(ps):
            th = ps["theta"]
            return float((th * th).sum()), {"theta": 3 * th}  # deliberately wrong

        assert finite_diff_grad_check(loss_and_grads, params) > 0.1

    def test_non_finite_loss_rejected(self):
        params = ParamSet({"t": np.ones((1, 1))})
        with pytest.raises(NonFiniteError):
            finite_diff_grad_check(lambda ps: (float("nan"), {"t": np.zeros((1, 1))}), params)

    def test_plain_loss_fn_with_supplied_grads(self, rng):
        params = ParamSet({"theta": rng.uniform(0.5, 1.5, size=(2, 3))})
        analytic = {"theta": 2 * params["theta"].copy()}
        err = finite_diff_grad_check(
            lambda ps: float((ps["theta"] ** 2).sum()), params, analytic_grads=analytic
        )
        assert err <= 1e-8
