"""Cross-reconstruction attention: each modality's features are rebuilt from
the other, and per-frame reconstruction error becomes an anomaly signal.

Structure per modality block: a pre-norm residual self-attention layer
models dependencies within the modality, then a cross-attention layer
reconstructs the modality from the *other* one. The reconstruction is
anchored on the time-aligned other-modality stream:

    h_m    = z_m + SelfAttn(LN(z_m))
    zhat_m = h_other + CrossAttn(q=h_m, kv=h_other)

so the value pathway of zhat_m touches only the other modality. With
zero output projections the whole transform is the identity and
reconstruction error reduces to the raw distance between modalities.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import FeatureSequence, Modality
from .tensorops import (
    ParamSet,
    ShapeError,
    layer_norm_backward,
    layer_norm_forward,
    multi_head_attention_backward,
    multi_head_attention_forward,
    seeded_init,
)

_NORM_EPS = 1e-12


@dataclass(frozen=True)
class ReconstructionResult:
    """One modality's reconstruction from the other.

    cross_weights is (T, T) row-stochastic (rows: target frames, columns:
    source frames, averaged over heads); per_frame_error is the channel-mean
    squared difference between reconstruction and input at each frame.
    """

    reconstructed: FeatureSequence
    cross_weights: np.ndarray
    per_frame_error: np.ndarray


def init_cratrans_params(feature_dim: int, seed: int) -> ParamSet:
    """One modality block. Output projections start at zero so the block is
    initially the identity transform; they move off zero on the first step."""
    tensors = {
        "ln_g": np.ones((1, feature_dim)),
        "ln_b": np.zeros((1, feature_dim)),
    }
    for i, prefix in enumerate(("self", "cross")):
        tensors[f"{prefix}_wq"] = seeded_init((feature_dim, feature_dim), seed + 4 * i, "uniform_scaled")
        tensors[f"{prefix}_wk"] = seeded_init((feature_dim, feature_dim), seed + 4 * i + 1, "uniform_scaled")
        tensors[f"{prefix}_wv"] = seeded_init((feature_dim, feature_dim), seed + 4 * i + 2, "uniform_scaled")
        tensors[f"{prefix}_wo"] = np.zeros((feature_dim, feature_dim))
    return ParamSet(tensors)


def identity_params(feature_dim: int) -> ParamSet:
    """A block whose forward pass is exactly the identity map."""
    tensors = {
        "ln_g": np.ones((1, feature_dim)),
        "ln_b": np.zeros((1, feature_dim)),
    }
    for prefix in ("self", "cross"):
        for name in ("wq", "wk", "wv"):
            tensors[f"{prefix}_{name}"] = np.eye(feature_dim)
        tensors[f"{prefix}_wo"] = np.zeros((feature_dim, feature_dim))
    return ParamSet(tensors)


def _self_block_forward(x_t: np.ndarray, params: ParamSet, heads: int):
    normed, ln_cache = layer_norm_forward(x_t, params["ln_g"], params["ln_b"])
    out, _, mha_cache = multi_head_attention_forward(normed, normed, params, "self", heads)
    return x_t + out, (ln_cache, mha_cache)


def _self_block_backward(d_h: np.ndarray, cache):
    ln_cache, mha_cache = cache
    d_q, d_kv, grads = multi_head_attention_backward(d_h, mha_cache)
    d_normed = d_q + d_kv
    d_x, d_g, d_b = layer_norm_backward(d_normed, ln_cache)
    grads["ln_g"] = d_g
    grads["ln_b"] = d_b
    return d_h + d_x, grads


def cratrans_forward(
    z_v: np.ndarray,
    z_a: np.ndarray,
    params_v: ParamSet,
    params_a: ParamSet,
    heads: int,
):
    """Full forward pass on (C_f, T) inputs.

    Returns a dict with reconstructions, cross weights, per-frame errors,
    the self-attended embeddings h_v/h_a (all T-major internally, exposed
    C-major), and the cache for cratrans_backward.
    """
    if z_v.shape != z_a.shape:
        raise ShapeError(f"modality shapes differ: {z_v.shape} vs {z_a.shape}")
    x_v, x_a = z_v.T, z_a.T
    h_v, self_cache_v = _self_block_forward(x_v, params_v, heads)
    h_a, self_cache_a = _self_block_forward(x_a, params_a, heads)

    ctx_v, w_v, cross_cache_v = multi_head_attention_forward(h_v, h_a, params_v, "cross", heads)
    hat_v = h_a + ctx_v
    ctx_a, w_a, cross_cache_a = multi_head_attention_forward(h_a, h_v, params_a, "cross", heads)
    hat_a = h_v + ctx_a

    diff_v = hat_v - x_v
    diff_a = hat_a - x_a
    err_v = (diff_v * diff_v).mean(axis=1)
    err_a = (diff_a * diff_a).mean(axis=1)

    cache = {
        "self_v": self_cache_v,
        "self_a": self_cache_a,
        "cross_v": cross_cache_v,
        "cross_a": cross_cache_a,
        "diff_v": diff_v,
        "diff_a": diff_a,
        "channels": z_v.shape[0],
    }
    return {
        "hat_v": hat_v.T,
        "hat_a": hat_a.T,
        "weights_v": w_v,
        "weights_a": w_a,
        "err_v": err_v,
        "err_a": err_a,
        "h_v": h_v.T,
        "h_a": h_a.T,
    }, cache


def cratrans_backward(
    cache,
    d_hat_v: np.ndarray | None = None,
    d_hat_a: np.ndarray | None = None,
    d_h_v: np.ndarray | None = None,
    d_h_a: np.ndarray | None = None,
    d_err_v: np.ndarray | None = None,
    d_err_a: np.ndarray | None = None,
):
    """Backpropagate any mix of upstream gradients (all C-major like inputs).

    Returns (grads_v, grads_a, d_z_v, d_z_a). Gradients on the per-frame
    errors are folded into the reconstruction path; gradients reaching the
    original inputs through the error target term are included.
    """
    channels = cache["channels"]
    t = cache["diff_v"].shape[0]

    def tm(arr):
        return None if arr is None else arr.T

    dv_hat = np.zeros_like(cache["diff_v"])
    da_hat = np.zeros_like(cache["diff_a"])
    if d_hat_v is not None:
        dv_hat += tm(d_hat_v)
    if d_hat_a is not None:
        da_hat += tm(d_hat_a)
    d_x_v_direct = np.zeros((t, channels))
    d_x_a_direct = np.zeros((t, channels))
    if d_err_v is not None:
        contrib = (2.0 / channels) * cache["diff_v"] * d_err_v[:, None]
        dv_hat += contrib
        d_x_v_direct -= contrib
    if d_err_a is not None:
        contrib = (2.0 / channels) * cache["diff_a"] * d_err_a[:, None]
        da_hat += contrib
        d_x_a_direct -= contrib

    dh_v = np.zeros((t, channels))
    dh_a = np.zeros((t, channels))
    if d_h_v is not None:
        dh_v += tm(d_h_v)
    if d_h_a is not None:
        dh_a += tm(d_h_a)

    d_q_v, d_kv_a, grads_cross_v = multi_head_attention_backward(dv_hat, cache["cross_v"])
    dh_v += d_q_v
    dh_a += d_kv_a + dv_hat  # residual anchor of hat_v is h_a
    d_q_a, d_kv_v, grads_cross_a = multi_head_attention_backward(da_hat, cache["cross_a"])
    dh_a += d_q_a
    dh_v += d_kv_v + da_hat

    d_x_v, grads_self_v = _self_block_backward(dh_v, cache["self_v"])
    d_x_a, grads_self_a = _self_block_backward(dh_a, cache["self_a"])

    grads_v = {**grads_self_v, **grads_cross_v}
    grads_a = {**grads_self_a, **grads_cross_a}
    return grads_v, grads_a, (d_x_v + d_x_v_direct).T, (d_x_a + d_x_a_direct).T


def cross_reconstruct(
    z_v: FeatureSequence,
    z_a: FeatureSequence,
    params_v: ParamSet,
    params_a: ParamSet,
    heads: int = 4,
) -> tuple[ReconstructionResult, ReconstructionResult]:
    """Reconstruct each modality from the other; returns (visual, audio) results."""
    out, _ = cratrans_forward(z_v.values, z_a.values, params_v, params_a, heads)
    res_v = ReconstructionResult(
        reconstructed=FeatureSequence(Modality.VISUAL, out["hat_v"]),
        cross_weights=out["weights_v"],
        per_frame_error=out["err_v"],
    )
    res_a = ReconstructionResult(
        reconstructed=FeatureSequence(Modality.AUDIO, out["hat_a"]),
        cross_weights=out["weights_a"],
        per_frame_error=out["err_a"],
    )
    return res_v, res_a


# ---------------------------------------------------------------------------
# Anomaly calibration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ExpSaturation:
    """Monotone map e -> 1 - exp(-e / tau) from errors onto [0, 1)."""

    tau: float

    def __call__(self, errors: np.ndarray) -> np.ndarray:
        return 1.0 - np.exp(-np.asarray(errors, dtype=np.float64) / self.tau)

    @classmethod
    def fit(cls, errors: np.ndarray) -> "ExpSaturation":
        """Scale to the median positive error; falls back to 1 when all zero."""
        arr = np.asarray(errors, dtype=np.float64).ravel()
        positive = arr[arr > 0]
        tau = float(np.median(positive)) if positive.size else 1.0
        return cls(tau=tau)


def anomaly_scores(err_v: np.ndarray, err_a: np.ndarray, calibration: ExpSaturation) -> np.ndarray:
    """Combine per-frame reconstruction errors into anomaly scores in [0, 1].

    The map is monotone non-decreasing in each input error and sends zero
    errors to zero anomaly.
    """
    ev = np.asarray(err_v, dtype=np.float64)
    ea = np.asarray(err_a, dtype=np.float64)
    if ev.shape != ea.shape:
        raise ShapeError(f"error vectors differ in length: {ev.shape} vs {ea.shape}")
    if (ev < 0).any() or (ea < 0).any():
        raise ValueError("reconstruction errors must be non-negative")
    return calibration(ev + ea)


# ---------------------------------------------------------------------------
# Contrastive term
# ---------------------------------------------------------------------------


def _normalize_columns(x: np.ndarray):
    norms = np.sqrt((x * x).sum(axis=0, keepdims=True))
    safe = norms + _NORM_EPS
    return x / safe, safe


def contrastive_forward(z_v: np.ndarray, z_a: np.ndarray, fake_labels: np.ndarray, margin: float):
    """Margin-contrastive loss on L2-normalized per-frame embeddings.

    Genuine frames (label 0) contribute d^2; fake frames (label 1)
    contribute max(0, margin - d)^2; the mean over frames is returned.
    Not differentiable at d == 0 for fake frames or d == margin exactly.
    """
    if z_v.shape != z_a.shape:
        raise ShapeError(f"embedding shapes differ: {z_v.shape} vs {z_a.shape}")
    labels = np.asarray(fake_labels, dtype=np.float64).ravel()
    if labels.shape[0] != z_v.shape[1]:
        raise ShapeError(f"expected {z_v.shape[1]} frame labels, got {labels.shape[0]}")
    u_v, n_v = _normalize_columns(z_v)
    u_a, n_a = _normalize_columns(z_a)
    delta = u_v - u_a
    dist = np.sqrt((delta * delta).sum(axis=0))
    slack = np.maximum(0.0, margin - dist)
    per_frame = (1.0 - labels) * dist * dist + labels * slack * slack
    loss = float(per_frame.mean())
    cache = (u_v, u_a, n_v, n_a, delta, dist, slack, labels)
    return loss, cache


def contrastive_backward(cache) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of the contrastive loss w.r.t. the raw (unnormalized) inputs."""
    u_v, u_a, n_v, n_a, delta, dist, slack, labels = cache
    t = labels.shape[0]
    # d loss / d dist, accounting for the mean over frames
    genuine_part = (1.0 - labels) * 2.0 * dist
    fake_part = labels * (-2.0) * slack
    d_dist = (genuine_part + fake_part) / t
    # d dist / d delta = delta / dist (guard the dist=0 genuine case: there
    # d(dist^2) = 2 delta handles it because d_dist already carries dist)
    with np.errstate(invalid="ignore", divide="ignore"):
        scale = np.where(dist > 0, d_dist / np.where(dist > 0, dist, 1.0), 0.0)
    d_delta = delta * scale[None, :]
    d_u_v = d_delta
    d_u_a = -d_delta

    def back_through_norm(d_u, u, norms):
        inner = (d_u * u).sum(axis=0, keepdims=True)
        return (d_u - u * inner) / norms

    return back_through_norm(d_u_v, u_v, n_v), back_through_norm(d_u_a, u_a, n_a)


def contrastive_term(
    z_v: FeatureSequence | np.ndarray,
    z_a: FeatureSequence | np.ndarray,
    fake_labels: np.ndarray,
    margin: float,
) -> float:
    """Scalar contrastive loss between the two modality embeddings."""
    if not 0.0 < margin <= 1.0:
        raise ValueError(f"margin must lie in (0,1], got {margin}")
    zv = z_v.values if isinstance(z_v, FeatureSequence) else np.asarray(z_v, dtype=np.float64)
    za = z_a.values if isinstance(z_a, FeatureSequence) else np.asarray(z_a, dtype=np.float64)
    loss, _ = contrastive_forward(zv, za, fake_labels, margin)
    return loss
