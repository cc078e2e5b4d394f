import numpy as np
import pytest

from avloc.core import FeatureSequence, Modality
from avloc.cratrans import (
    ExpSaturation,
    anomaly_scores,
    contrastive_backward,
    contrastive_forward,
    contrastive_term,
    cratrans_backward,
    cratrans_forward,
    cross_reconstruct,
    identity_params,
    init_cratrans_params,
)
from avloc.tensorops import ParamSet, ShapeError, finite_diff_grad_check, seeded_init

MARGIN = 0.99


def random_block(feature_dim, seed):
    """Like the training init but with active (nonzero) output projections."""
    params = init_cratrans_params(feature_dim, seed)
    for name in ("self_wo", "cross_wo"):
        params.set(name, seeded_init((feature_dim, feature_dim), seed + 100, "uniform_scaled"))
    return params


def smooth_track(rng, channels, frames, rho=0.9):
    x = np.empty((channels, frames))
    x[:, 0] = rng.standard_normal(channels)
    for t in range(1, frames):
        x[:, t] = rho * x[:, t - 1] + np.sqrt(1 - rho * rho) * rng.standard_normal(channels)
    return x


class TestCrossReconstruct:
    def test_identity_params_zero_error_when_aligned(self, rng):
        z = rng.standard_normal((8, 12))
        res_v, res_a = cross_reconstruct(
            FeatureSequence(Modality.VISUAL, z),
            FeatureSequence(Modality.AUDIO, z.copy()),
            identity_params(8),
            identity_params(8),
            heads=2,
        )
        np.testing.assert_allclose(res_v.per_frame_error, 0.0, atol=1e-24)
        np.testing.assert_allclose(res_a.per_frame_error, 0.0, atol=1e-24)
        np.testing.assert_allclose(res_v.reconstructed.values, z, atol=1e-12)

    def test_shape_contract(self, rng):
        z_v = rng.standard_normal((8, 15))
        z_a = rng.standard_normal((8, 15))
        res_v, res_a = cross_reconstruct(
            FeatureSequence(Modality.VISUAL, z_v),
            FeatureSequence(Modality.AUDIO, z_a),
            random_block(8, 0),
            random_block(8, 1),
            heads=2,
        )
        for res in (res_v, res_a):
            assert res.reconstructed.values.shape == (8, 15)
            assert res.cross_weights.shape == (15, 15)
            assert res.per_frame_error.shape == (15,)
            assert (res.per_frame_error >= 0).all()

    def test_cross_weights_row_stochastic(self, rng):
        z_v = rng.standard_normal((8, 10))
        z_a = rng.standard_normal((8, 10))
        res_v, res_a = cross_reconstruct(
            FeatureSequence(Modality.VISUAL, z_v),
            FeatureSequence(Modality.AUDIO, z_a),
            random_block(8, 2),
            random_block(8, 3),
            heads=4,
        )
        for res in (res_v, res_a):
            np.testing.assert_allclose(res.cross_weights.sum(axis=1), 1.0, atol=1e-10)
            assert (res.cross_weights >= 0).all()

    def test_shape_mismatch_rejected(self, rng):
        with pytest.raises(ShapeError):
            cross_reconstruct(
                FeatureSequence(Modality.VISUAL, rng.standard_normal((8, 10))),
                FeatureSequence(Modality.AUDIO, rng.standard_normal((8, 11))),
                random_block(8, 0),
                random_block(8, 1),
                heads=2,
            )

    def test_structural_symmetry(self, rng):
        """Swapping the inputs and the two parameter blocks swaps the results."""
        z_v = rng.standard_normal((6, 9))
        z_a = rng.standard_normal((6, 9))
        block_1, block_2 = random_block(6, 4), random_block(6, 5)
        fv = FeatureSequence(Modality.VISUAL, z_v)
        fa = FeatureSequence(Modality.AUDIO, z_a)
        res_v, res_a = cross_reconstruct(fv, fa, block_1, block_2, heads=2)
        swapped_first, swapped_second = cross_reconstruct(
            FeatureSequence(Modality.VISUAL, z_a),
            FeatureSequence(Modality.AUDIO, z_v),
            block_2,
            block_1,
            heads=2,
        )
        np.testing.assert_array_equal(
            swapped_first.reconstructed.values, res_a.reconstructed.values
        )
        np.testing.assert_array_equal(
            swapped_second.reconstructed.values, res_v.reconstructed.values
        )
        np.testing.assert_array_equal(swapped_first.per_frame_error, res_a.per_frame_error)
        np.testing.assert_array_equal(swapped_second.cross_weights, res_v.cross_weights)

    def test_noise_window_raises_error_there(self):
        """Monte-Carlo probe: audio frames [20, 30) replaced by independent
        noise must show higher combined reconstruction error than the rest."""
        frames, channels = 64, 8
        window = slice(20, 30)
        hits = 0
        for seed in range(100):
            rng = np.random.default_rng(seed)
            z_v = smooth_track(rng, channels, frames)
            z_a = z_v + 0.05 * rng.standard_normal((channels, frames))
            z_a[:, window] = rng.standard_normal((channels, 10))
            res_v, res_a = cross_reconstruct(
                FeatureSequence(Modality.VISUAL, z_v),
                FeatureSequence(Modality.AUDIO, z_a),
                random_block(channels, 2 * seed),
                random_block(channels, 2 * seed + 1),
                heads=2,
            )
            err = res_v.per_frame_error + res_a.per_frame_error
            inside = err[window].mean()
            outside = np.concatenate([err[: window.start], err[window.stop :]]).mean()
            hits += inside > outside
        assert hits >= 95

    def test_reconstruction_mse_gradcheck(self, rng):
        channels, frames = 6, 5
        z_v = 1.5 * rng.standard_normal((channels, frames))
        z_a = 1.5 * rng.standard_normal((channels, frames))
        block_v, block_a = random_block(channels, 7), random_block(channels, 8)
        # ParamSet keeps references to contiguous float64 arrays, so the
        # flat view below perturbs the block tensors in place
        flat = {}
        for tag, block in (("v", block_v), ("a", block_a)):
            for name, tensor in block.items():
                flat[f"{tag}+{name}"] = tensor
        params = ParamSet(flat)

        def loss_and_grads(ps):
            out, cache = cratrans_forward(z_v, z_a, block_v, block_a, heads=2)
            loss = out["err_v"].mean() + out["err_a"].mean()
            ones = np.full(frames, 1.0 / frames)
            g_v, g_a, _, _ = cratrans_backward(cache, d_err_v=ones, d_err_a=ones)
            grads = {f"v+{n}": g for n, g in g_v.items()}
            grads.update({f"a+{n}": g for n, g in g_a.items()})
            return loss, grads

        assert finite_diff_grad_check(loss_and_grads, params, epsilon=1e-5) <= 1e-4


class TestAnomalyScores:
    def test_zero_errors_zero_anomaly(self):
        calib = ExpSaturation(tau=0.5)
        out = anomaly_scores(np.zeros(10), np.zeros(10), calib)
        np.testing.assert_array_equal(out, 0.0)

    def test_bounded_and_monotone(self, rng):
        calib = ExpSaturation(tau=1.0)
        e_v = rng.uniform(0, 5, 50)
        e_a = rng.uniform(0, 5, 50)
        base = anomaly_scores(e_v, e_a, calib)
        assert ((base >= 0) & (base < 1)).all()
        bumped = anomaly_scores(e_v + 0.5, e_a, calib)
        assert (bumped >= base).all()

    def test_scaling_preserves_argmax(self, rng):
        calib = ExpSaturation(tau=2.0)
        e_v = rng.uniform(0, 3, 40)
        e_a = rng.uniform(0, 3, 40)
        base = anomaly_scores(e_v, e_a, calib)
        scaled = anomaly_scores(4.0 * e_v, 4.0 * e_a, calib)
        assert np.argmax(base) == np.argmax(scaled)

    def test_length_mismatch(self):
        with pytest.raises(ShapeError):
            anomaly_scores(np.zeros(4), np.zeros(5), ExpSaturation(tau=1.0))

    def test_fit_uses_median(self):
        calib = ExpSaturation.fit(np.array([0.0, 1.0, 2.0, 3.0]))
        assert calib.tau == 2.0
        assert ExpSaturation.fit(np.zeros(5)).tau == 1.0

    def test_top_decile_recall_on_noise_window(self):
        frames, channels = 100, 8
        window = slice(20, 30)
        rng = np.random.default_rng(11)
        z_v = smooth_track(rng, channels, frames)
        z_a = z_v + 0.05 * rng.standard_normal((channels, frames))
        z_a[:, window] = rng.standard_normal((channels, 10))
        res_v, res_a = cross_reconstruct(
            FeatureSequence(Modality.VISUAL, z_v),
            FeatureSequence(Modality.AUDIO, z_a),
            random_block(channels, 21),
            random_block(channels, 22),
            heads=2,
        )
        calib = ExpSaturation.fit(res_v.per_frame_error + res_a.per_frame_error)
        scores = anomaly_scores(res_v.per_frame_error, res_a.per_frame_error, calib)
        top = np.argsort(scores)[-10:]
        recall = np.isin(np.arange(window.start, window.stop), top).mean()
        assert recall >= 0.8


class TestContrastiveTerm:
    def test_identical_genuine_is_zero(self, rng):
        z = rng.standard_normal((6, 8))
        assert contrastive_term(z, z.copy(), np.zeros(8), MARGIN) == 0.0

    def test_fake_beyond_margin_is_zero(self, rng):
        # orthogonal unit embeddings sit at distance sqrt(2) > margin
        z_v = np.zeros((4, 3))
        z_a = np.zeros((4, 3))
        z_v[0, :] = 1.0
        z_a[1, :] = 1.0
        assert contrastive_term(z_v, z_a, np.ones(3), MARGIN) == 0.0

    def test_single_fake_frame_at_half_margin(self):
        d = MARGIN / 2
        theta = 2 * np.arcsin(d / 2)
        z_v = np.array([[1.0], [0.0]])
        z_a = np.array([[np.cos(theta)], [np.sin(theta)]])
        loss = contrastive_term(z_v, z_a, np.array([1.0]), MARGIN)
        assert loss == pytest.approx((MARGIN / 2) ** 2, abs=1e-9)
        assert loss == pytest.approx(0.245025, abs=1e-9)

    def test_scale_invariance_through_normalization(self, rng):
        z_v = rng.standard_normal((5, 7))
        z_a = rng.standard_normal((5, 7))
        labels = (rng.uniform(size=7) > 0.5).astype(float)
        a = contrastive_term(z_v, z_a, labels, MARGIN)
        b = contrastive_term(3.0 * z_v, 3.0 * z_a, labels, MARGIN)
        assert a == pytest.approx(b, rel=1e-9)

    def test_length_mismatch(self, rng):
        with pytest.raises(ShapeError):
            contrastive_term(
                rng.standard_normal((4, 5)), rng.standard_normal((4, 5)), np.zeros(4), MARGIN
            )

    def test_gradcheck(self, rng):
        z_v = rng.standard_normal((5, 6)) + 0.5
        z_a = rng.standard_normal((5, 6)) + 0.5
        labels = np.array([0.0, 1.0, 0.0, 1.0, 1.0, 0.0])
        params = ParamSet({"z_v": z_v, "z_a": z_a})

        def loss_and_grads(ps):
            loss, cache = contrastive_forward(ps["z_v"], ps["z_a"], labels, MARGIN)
            d_v, d_a = contrastive_backward(cache)
            return loss, {"z_v": d_v, "z_a": d_a}

        assert finite_diff_grad_check(loss_and_grads, params, epsilon=1e-5) <= 1e-4
