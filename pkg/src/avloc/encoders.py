"""Toy per-modality encoders: raw per-frame features in, latents (C_f x T) out.

Each encoder is two blocks of [width-3 temporal convolution -> tanh ->
per-frame linear projection], so the receptive field around frame t is
t-2 .. t+2. Variable-length inputs are first resampled onto the fixed
T-frame grid spanning the video.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import FeatureSequence, Modality, ValidationError
from .tensorops import (
    ParamSet,
    ShapeError,
    as_tensor2d,
    conv1d3_backward,
    conv1d3_forward,
    linear_backward,
    linear_forward,
    seeded_init,
    tanh_backward,
    tanh_forward,
)


@dataclass(frozen=True)
class RawModalitySequence:
    """Raw per-frame features for one modality, shape (input_dim, frames)."""

    modality: Modality
    values: np.ndarray

    def __post_init__(self) -> None:
        arr = as_tensor2d(self.values, name="raw sequence")
        if arr.shape[1] < 1:
            raise ValidationError("raw sequence must contain at least one frame")
        object.__setattr__(self, "values", arr)
        object.__setattr__(self, "modality", Modality(self.modality))

    @property
    def input_dim(self) -> int:
        return int(self.values.shape[0])

    @property
    def frames(self) -> int:
        return int(self.values.shape[1])


def resample_temporal(values: np.ndarray, target_t: int) -> np.ndarray:
    """Linearly interpolate a (d, T_src) matrix along time to (d, target_t).

    Endpoints are aligned: column 0 maps to column 0 and the last column to
    the last. A single-frame source broadcasts to a constant sequence.
    """
    arr = as_tensor2d(values, name="sequence")
    src_t = arr.shape[1]
    if src_t < 1:
        raise ValidationError("cannot resample an empty sequence")
    if target_t < 1:
        raise ValidationError(f"target length must be positive, got {target_t}")
    if src_t == target_t:
        return arr.copy()
    if src_t == 1:
        return np.repeat(arr, target_t, axis=1)
    pos = np.linspace(0.0, src_t - 1.0, num=target_t)
    lo = np.floor(pos).astype(int)
    hi = np.minimum(lo + 1, src_t - 1)
    frac = pos - lo
    return arr[:, lo] * (1.0 - frac) + arr[:, hi] * frac


def init_encoder_params(input_dim: int, feature_dim: int, seed: int) -> ParamSet:
    """Two conv/tanh/projection blocks; weights scaled by fan-in, biases zero."""
    return ParamSet(
        {
            "c1_w": seeded_init((feature_dim, 3 * input_dim), seed, "uniform_scaled"),
            "c1_b": np.zeros((feature_dim, 1)),
            "p1_w": seeded_init((feature_dim, feature_dim), seed + 1, "uniform_scaled"),
            "p1_b": np.zeros((feature_dim, 1)),
            "c2_w": seeded_init((feature_dim, 3 * feature_dim), seed + 2, "uniform_scaled"),
            "c2_b": np.zeros((feature_dim, 1)),
            "p2_w": seeded_init((feature_dim, feature_dim), seed + 3, "uniform_scaled"),
            "p2_b": np.zeros((feature_dim, 1)),
        }
    )


def encoder_forward(seq: RawModalitySequence, params: ParamSet, num_frames: int):
    """Resample to num_frames and run both blocks; returns (latents, cache)."""
    x0 = resample_temporal(seq.values, num_frames)
    caches = []
    x = x0
    for block in ("1", "2"):
        conv, c_cache = conv1d3_forward(x, params[f"c{block}_w"], params[f"c{block}_b"])
        act, a_cache = tanh_forward(conv)
        x, l_cache = linear_forward(act, params[f"p{block}_w"], params[f"p{block}_b"])
        caches.append((c_cache, a_cache, l_cache))
    return x, (caches, seq.frames, num_frames)


def encoder_backward(d_out: np.ndarray, cache) -> dict[str, np.ndarray]:
    """Parameter gradients for encoder_forward (input gradients are unused)."""
    caches, _, _ = cache
    grads: dict[str, np.ndarray] = {}
    d_x = d_out
    for block, (c_cache, a_cache, l_cache) in zip(("2", "1"), reversed(caches)):
        d_act, d_pw, d_pb = linear_backward(d_x, l_cache)
        d_conv = tanh_backward(d_act, a_cache)
        d_x, d_cw, d_cb = conv1d3_backward(d_conv, c_cache)
        grads[f"p{block}_w"] = d_pw
        grads[f"p{block}_b"] = d_pb
        grads[f"c{block}_w"] = d_cw
        grads[f"c{block}_b"] = d_cb
    return grads


def _encode(seq: RawModalitySequence, params: ParamSet, num_frames: int, expected: Modality) -> FeatureSequence:
    if seq.modality is not expected:
        raise ValidationError(f"expected a {expected.value} sequence, got {seq.modality.value}")
    if params["c1_w"].shape[1] != 3 * seq.input_dim:
        raise ShapeError(
            f"encoder expects input dim {params['c1_w'].shape[1] // 3}, got {seq.input_dim}"
        )
    latents, _ = encoder_forward(seq, params, num_frames)
    return FeatureSequence(modality=expected, values=latents)


def encode_visual(seq: RawModalitySequence, params: ParamSet, num_frames: int) -> FeatureSequence:
    """Encode a visual raw sequence to a (feature_dim, num_frames) latent."""
    return _encode(seq, params, num_frames, Modality.VISUAL)


def encode_audio(seq: RawModalitySequence, params: ParamSet, num_frames: int) -> FeatureSequence:
    """Encode an audio raw sequence to a (feature_dim, num_frames) latent."""
    return _encode(seq, params, num_frames, Modality.AUDIO)
