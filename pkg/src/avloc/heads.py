"""Feature enhancement, frame classification, boundary-map generation, the
video-level decision head, and the weighted composite training loss.

Boundary maps are (start s, duration d) confidence matrices: cell (s, d)
with s in [0, T) and d in [1, d_max] scores the segment of d frames starting
at frame s, valid iff s + d <= T. Cell features are pooled by averaging N
uniformly spaced samples along the segment (linear interpolation between
frames), then scored by a small MLP; a position-attention branch and a
channel-gating branch each produce a map and a learned 1x1 mixing of their
logits yields the fused map.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from functools import lru_cache

import numpy as np
from scipy import sparse

from .core import FeatureSequence, Modality, PipelineConfig, Segment, ValidationError
from .cratrans import contrastive_forward
from .tensorops import (
    ParamSet,
    ShapeError,
    linear_backward,
    linear_forward,
    multi_head_attention_backward,
    multi_head_attention_forward,
    seeded_init,
    sigmoid,
    tanh_backward,
    tanh_forward,
)

_CLIP = 1e-12


class VideoLabel(str, Enum):
    REAL = "real"
    FAKE = "fake"


@dataclass(frozen=True)
class FrameProbabilities:
    """Per-frame fake probabilities for one modality."""

    modality: Modality
    probs: np.ndarray

    def __post_init__(self) -> None:
        arr = np.asarray(self.probs, dtype=np.float64).ravel()
        if (arr < 0).any() or (arr > 1).any():
            raise ValidationError("frame probabilities must lie in [0,1]")
        object.__setattr__(self, "probs", arr)
        object.__setattr__(self, "modality", Modality(self.modality))


@dataclass(frozen=True)
class BoundaryMap:
    """(start, duration)-indexed confidence matrix with a validity mask."""

    modality: Modality
    scores: np.ndarray
    valid: np.ndarray

    def __post_init__(self) -> None:
        scores = np.asarray(self.scores, dtype=np.float64)
        valid = np.asarray(self.valid, dtype=bool)
        if scores.shape != valid.shape:
            raise ShapeError(f"scores {scores.shape} and mask {valid.shape} differ")
        vals = scores[valid]
        if vals.size and ((vals < 0).any() or (vals > 1).any()):
            raise ValidationError("valid boundary-map entries must lie in [0,1]")
        object.__setattr__(self, "scores", scores)
        object.__setattr__(self, "valid", valid)
        object.__setattr__(self, "modality", Modality(self.modality))

    @property
    def num_frames(self) -> int:
        return int(self.scores.shape[0])

    @property
    def max_duration_frames(self) -> int:
        return int(self.scores.shape[1])


@dataclass(frozen=True)
class VideoDecision:
    label: VideoLabel
    video_confidence: float


# ---------------------------------------------------------------------------
# Feature enhancement (residual per-frame MLP)
# ---------------------------------------------------------------------------


def init_enhance_params(feature_dim: int, seed: int) -> ParamSet:
    return ParamSet(
        {
            "w1": seeded_init((feature_dim, feature_dim), seed, "uniform_scaled"),
            "b1": np.zeros((feature_dim, 1)),
            "w2": seeded_init((feature_dim, feature_dim), seed + 1, "uniform_scaled"),
            "b2": np.zeros((feature_dim, 1)),
        }
    )


def enhance_forward(z: np.ndarray, params: ParamSet):
    pre, l1_cache = linear_forward(z, params["w1"], params["b1"])
    act, a_cache = tanh_forward(pre)
    res, l2_cache = linear_forward(act, params["w2"], params["b2"])
    return z + res, (l1_cache, a_cache, l2_cache)


def enhance_backward(d_out: np.ndarray, cache):
    l1_cache, a_cache, l2_cache = cache
    d_act, d_w2, d_b2 = linear_backward(d_out, l2_cache)
    d_pre = tanh_backward(d_act, a_cache)
    d_z, d_w1, d_b1 = linear_backward(d_pre, l1_cache)
    return d_out + d_z, {"w1": d_w1, "b1": d_b1, "w2": d_w2, "b2": d_b2}


def enhance_features(z: FeatureSequence, params: ParamSet) -> FeatureSequence:
    """Residual refinement: output = z + f(z); zero parameters give identity."""
    out, _ = enhance_forward(z.values, params)
    return FeatureSequence(z.modality, out)


# ---------------------------------------------------------------------------
# Frame classification (per-frame logistic regression)
# ---------------------------------------------------------------------------


def init_classifier_params(feature_dim: int, seed: int) -> ParamSet:
    return ParamSet(
        {
            "w": seeded_init((1, feature_dim), seed, "uniform_scaled"),
            "b": np.zeros((1, 1)),
        }
    )


def classifier_forward(z: np.ndarray, params: ParamSet):
    logits, cache = linear_forward(z, params["w"], params["b"])
    probs = sigmoid(logits).ravel()
    return probs, logits.ravel(), cache


def classifier_backward(d_logits: np.ndarray, cache):
    d_z, d_w, d_b = linear_backward(d_logits.reshape(1, -1), cache)
    return d_z, {"w": d_w, "b": d_b}


def frame_classify(z: FeatureSequence, params: ParamSet) -> FrameProbabilities:
    """Per-frame fake probability: sigmoid(w . z_t + b), independent frames."""
    probs, _, _ = classifier_forward(z.values, params)
    return FrameProbabilities(z.modality, probs)


# ---------------------------------------------------------------------------
# Boundary maps
# ---------------------------------------------------------------------------


def _interp_sampler(positions_per_cell, num_frames: int):
    rows, cols, weights = [], [], []
    for idx, positions in enumerate(positions_per_cell):
        share = 1.0 / len(positions)
        for p in positions:
            p = min(max(p, 0.0), num_frames - 1.0)
            lo = int(np.floor(p))
            frac = p - lo
            rows.append(idx)
            cols.append(lo)
            weights.append((1.0 - frac) * share)
            if frac > 0:
                rows.append(idx)
                cols.append(min(lo + 1, num_frames - 1))
                weights.append(frac * share)
    return sparse.csr_matrix(
        (weights, (rows, cols)), shape=(len(positions_per_cell), num_frames), dtype=np.float64
    )


@lru_cache(maxsize=8)
def cell_grid(num_frames: int, d_max: int, samples: int):
    """Enumerate valid (start, duration) cells and their pooling operators.

    Per cell three averages are taken: N uniformly spaced samples along the
    segment itself, plus context averages over the half-duration regions
    just left and right of it (clamped to the frame grid). The boundary
    contrast lets the scorer tell an exactly fitting segment from a
    fragment of a longer event, which a lone interior average cannot.

    Returns (cells (n, 2) int array, (segment, left, right) csr samplers of
    shape (n, num_frames), valid mask (num_frames, d_max)). Cell order is
    start-major then duration.
    """
    cells = []
    seg_positions, left_positions, right_positions = [], [], []
    valid = np.zeros((num_frames, d_max), dtype=bool)
    n_ctx = max(2, samples // 2)
    for s in range(num_frames):
        for d in range(1, min(d_max, num_frames - s) + 1):
            cells.append((s, d))
            valid[s, d - 1] = True
            if samples == 1:
                inside = [s + (d - 1) / 2.0]
            else:
                inside = (s + np.arange(samples) * (d - 1) / (samples - 1)).tolist()
            seg_positions.append(inside)
            margin = d / 2.0
            offsets = (np.arange(n_ctx) + 0.5) / n_ctx
            left_positions.append((s - margin + offsets * margin).tolist())
            right_positions.append((s + d - 1 + offsets * margin).tolist())
    samplers = (
        _interp_sampler(seg_positions, num_frames),
        _interp_sampler(left_positions, num_frames),
        _interp_sampler(right_positions, num_frames),
    )
    return np.asarray(cells, dtype=np.int64), samplers, valid


def init_boundary_params(
    feature_dim: int, hidden_dims: tuple[int, ...], seed: int
) -> ParamSet:
    """Parameters for one modality's boundary module.

    feature_dim here is the concatenated width C_f + 1 (latents plus the
    classification output row).
    """
    f = feature_dim
    if len(hidden_dims) != 2:
        raise ValueError(f"boundary module expects two hidden dims, got {hidden_dims}")
    h1, h2 = hidden_dims
    g = max(2, f // 4)
    tensors = {
        "pos_wq": seeded_init((f, f), seed, "uniform_scaled"),
        "pos_wk": seeded_init((f, f), seed + 1, "uniform_scaled"),
        "pos_wv": seeded_init((f, f), seed + 2, "uniform_scaled"),
        "pos_wo": np.zeros((f, f)),
        "gate_w1": seeded_init((g, f), seed + 3, "uniform_scaled"),
        "gate_b1": np.zeros((g, 1)),
        "gate_w2": seeded_init((f, g), seed + 4, "uniform_scaled"),
        "gate_b2": np.zeros((f, 1)),
        "fuse_w": np.array([[0.5], [0.5]]),
    }
    for i, branch in enumerate(("pos", "chan")):
        base = seed + 5 + 3 * i
        tensors[f"{branch}_m1_w"] = seeded_init((h1, 3 * f), base, "uniform_scaled")
        tensors[f"{branch}_m1_b"] = np.zeros((h1, 1))
        tensors[f"{branch}_m2_w"] = seeded_init((h2, h1), base + 1, "uniform_scaled")
        tensors[f"{branch}_m2_b"] = np.zeros((h2, 1))
        tensors[f"{branch}_m3_w"] = seeded_init((1, h2), base + 2, "uniform_scaled")
        tensors[f"{branch}_m3_b"] = np.zeros((1, 1))
    return ParamSet(tensors)


def _mlp_forward(x: np.ndarray, params: ParamSet, branch: str):
    h1_pre, c1 = linear_forward(x, params[f"{branch}_m1_w"], params[f"{branch}_m1_b"])
    h1, a1 = tanh_forward(h1_pre)
    h2_pre, c2 = linear_forward(h1, params[f"{branch}_m2_w"], params[f"{branch}_m2_b"])
    h2, a2 = tanh_forward(h2_pre)
    logits, c3 = linear_forward(h2, params[f"{branch}_m3_w"], params[f"{branch}_m3_b"])
    return logits.ravel(), (c1, a1, c2, a2, c3, branch)


def _mlp_backward(d_logits: np.ndarray, cache):
    c1, a1, c2, a2, c3, branch = cache
    d_h2, d_w3, d_b3 = linear_backward(d_logits.reshape(1, -1), c3)
    d_h2_pre = tanh_backward(d_h2, a2)
    d_h1, d_w2, d_b2 = linear_backward(d_h2_pre, c2)
    d_h1_pre = tanh_backward(d_h1, a1)
    d_x, d_w1, d_b1 = linear_backward(d_h1_pre, c1)
    grads = {
        f"{branch}_m1_w": d_w1,
        f"{branch}_m1_b": d_b1,
        f"{branch}_m2_w": d_w2,
        f"{branch}_m2_b": d_b2,
        f"{branch}_m3_w": d_w3,
        f"{branch}_m3_b": d_b3,
    }
    return d_x, grads


def boundary_forward(
    z: np.ndarray,
    probs: np.ndarray,
    params: ParamSet,
    samples: int,
    d_max: int | None = None,
):
    """Compute position/channel/fused cell logits for one modality.

    z is (C_f, T); probs is the classifier output (T,). Returns a dict with
    per-cell logits and map values plus the backward cache.
    """
    t = z.shape[1]
    if probs.shape[0] != t:
        raise ShapeError(f"probs length {probs.shape[0]} != frames {t}")
    d_max = t if d_max is None else d_max
    feat = np.vstack([z, probs.reshape(1, -1)])
    f_dim = feat.shape[0]

    # position-aware branch: residual self-attention over frames
    x_t = feat.T
    att_out, _, att_cache = multi_head_attention_forward(x_t, x_t, params, "pos", heads=1)
    pos_feat = x_t + att_out  # (T, F)

    # channel-aware branch: squeeze-excite gate over channels
    mean_feat = feat.mean(axis=1, keepdims=True)
    g_pre, g1_cache = linear_forward(mean_feat, params["gate_w1"], params["gate_b1"])
    g_act, ga_cache = tanh_forward(g_pre)
    gate_logits, g2_cache = linear_forward(g_act, params["gate_w2"], params["gate_b2"])
    gate = sigmoid(gate_logits)
    chan_feat = feat * gate  # (F, T)

    cells, samplers, valid = cell_grid(t, d_max, samples)
    pooled_pos = np.hstack([s @ pos_feat for s in samplers])  # (n_cells, 3F)
    pooled_chan = np.hstack([s @ chan_feat.T for s in samplers])

    logits_pos, mlp_pos_cache = _mlp_forward(pooled_pos.T, params, "pos")
    logits_chan, mlp_chan_cache = _mlp_forward(pooled_chan.T, params, "chan")
    fuse = params["fuse_w"]
    logits_fused = fuse[0, 0] * logits_pos + fuse[1, 0] * logits_chan

    out = {
        "cells": cells,
        "valid": valid,
        "logits_pos": logits_pos,
        "logits_chan": logits_chan,
        "logits_fused": logits_fused,
        "values_pos": sigmoid(logits_pos),
        "values_chan": sigmoid(logits_chan),
        "values_fused": sigmoid(logits_fused),
    }
    cache = {
        "att_cache": att_cache,
        "gate": gate,
        "gate_caches": (g1_cache, ga_cache, g2_cache),
        "feat": feat,
        "samplers": samplers,
        "mlp_pos_cache": mlp_pos_cache,
        "mlp_chan_cache": mlp_chan_cache,
        "logits_pos": logits_pos,
        "logits_chan": logits_chan,
        "fuse": fuse,
        "t": t,
        "f_dim": f_dim,
    }
    return out, cache


def boundary_backward(d_fused_logits: np.ndarray, cache):
    """Backward from fused-cell-logit gradients to (d_z, d_probs, grads)."""
    samplers = cache["samplers"]
    f_dim = cache["f_dim"]
    fuse = cache["fuse"]
    d_logits_pos = fuse[0, 0] * d_fused_logits
    d_logits_chan = fuse[1, 0] * d_fused_logits
    grads = {
        "fuse_w": np.array(
            [
                [float(d_fused_logits @ cache["logits_pos"])],
                [float(d_fused_logits @ cache["logits_chan"])],
            ]
        )
    }

    d_pooled_pos_t, g_pos = _mlp_backward(d_logits_pos, cache["mlp_pos_cache"])
    d_pooled_chan_t, g_chan = _mlp_backward(d_logits_chan, cache["mlp_chan_cache"])
    grads.update(g_pos)
    grads.update(g_chan)

    def unpool(d_pooled_t):
        blocks = [d_pooled_t[i * f_dim : (i + 1) * f_dim, :].T for i in range(3)]
        return sum(s.T @ blk for s, blk in zip(samplers, blocks))

    d_pos_feat = unpool(d_pooled_pos_t)  # (T, F)
    d_chan_feat = unpool(d_pooled_chan_t).T  # (F, T)

    # position branch
    d_att_out = d_pos_feat
    d_q, d_kv, att_grads = multi_head_attention_backward(d_att_out, cache["att_cache"])
    grads.update(att_grads)
    d_feat = (d_pos_feat + d_q + d_kv).T  # (F, T)

    # channel branch
    feat = cache["feat"]
    gate = cache["gate"]
    d_feat += d_chan_feat * gate
    d_gate = (d_chan_feat * feat).sum(axis=1, keepdims=True)
    d_gate_logits = d_gate * gate * (1.0 - gate)
    g1_cache, ga_cache, g2_cache = cache["gate_caches"]
    d_g_act, d_gw2, d_gb2 = linear_backward(d_gate_logits, g2_cache)
    d_g_pre = tanh_backward(d_g_act, ga_cache)
    d_mean, d_gw1, d_gb1 = linear_backward(d_g_pre, g1_cache)
    grads.update({"gate_w1": d_gw1, "gate_b1": d_gb1, "gate_w2": d_gw2, "gate_b2": d_gb2})
    d_feat += d_mean / cache["t"]

    d_z = d_feat[:-1, :]
    d_probs = d_feat[-1, :]
    return d_z, d_probs, grads


def scatter_cells(values: np.ndarray, cells: np.ndarray, t: int, d_max: int) -> np.ndarray:
    scores = np.zeros((t, d_max), dtype=np.float64)
    scores[cells[:, 0], cells[:, 1] - 1] = values
    return scores


def boundary_maps(
    z: FeatureSequence,
    frame_probs: FrameProbabilities,
    params: ParamSet,
    samples: int = 10,
    d_max: int | None = None,
) -> tuple[BoundaryMap, BoundaryMap, BoundaryMap]:
    """Position, channel, and fused boundary maps for one modality."""
    out, _ = boundary_forward(z.values, frame_probs.probs, params, samples, d_max)
    t = z.frames
    d_max = t if d_max is None else d_max
    cells, valid = out["cells"], out["valid"]
    return tuple(
        BoundaryMap(z.modality, scatter_cells(out[f"values_{kind}"], cells, t, d_max), valid)
        for kind in ("pos", "chan", "fused")
    )


def gt_iou_map(
    periods: list[Segment] | tuple[Segment, ...],
    duration: float,
    num_frames: int,
    d_max: int | None = None,
) -> np.ndarray:
    """Training target: cell (s, d) holds the max IoU between the segment
    [s, s+d] (in seconds on the video's frame grid) and any fake period."""
    d_max = num_frames if d_max is None else d_max
    dt = duration / num_frames
    starts = np.arange(num_frames, dtype=np.float64)[:, None] * dt
    durations = np.arange(1, d_max + 1, dtype=np.float64)[None, :] * dt
    ends = starts + durations
    target = np.zeros((num_frames, d_max), dtype=np.float64)
    for p in periods:
        inter = np.minimum(ends, p.end) - np.maximum(starts, p.start)
        inter = np.maximum(inter, 0.0)
        union = durations + (p.end - p.start) - inter
        np.maximum(target, inter / union, out=target)
    s_idx, d_idx = np.meshgrid(
        np.arange(num_frames), np.arange(1, d_max + 1), indexing="ij"
    )
    target[s_idx + d_idx > num_frames] = 0.0
    return target


# ---------------------------------------------------------------------------
# Composite loss and video decision
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TrainingTargets:
    """Frame labels and boundary regression targets derived from annotations."""

    frame_labels_visual: np.ndarray
    frame_labels_audio: np.ndarray
    fake_union: np.ndarray
    iou_map_visual: np.ndarray
    iou_map_audio: np.ndarray


def bce_mean(probs: np.ndarray, labels: np.ndarray) -> float:
    p = np.clip(probs, _CLIP, 1.0 - _CLIP)
    y = labels
    return float(-(y * np.log(p) + (1.0 - y) * np.log1p(-p)).mean())


def composite_loss(
    frame_probs_visual: FrameProbabilities,
    frame_probs_audio: FrameProbabilities,
    fused_map_visual: BoundaryMap,
    fused_map_audio: BoundaryMap,
    embeddings_visual: np.ndarray,
    embeddings_audio: np.ndarray,
    targets: TrainingTargets,
    config: PipelineConfig,
) -> tuple[float, dict[str, float]]:
    """Weighted training loss and its unweighted per-term breakdown.

    total = frame_loss_weight * L_frame + boundary_loss_weight * L_boundary
          + contrastive_loss_weight * L_contrastive, with L_frame the mean
    frame BCE over both modalities, L_boundary the masked MSE between the
    fused maps and the ground-truth IoU maps, and L_contrastive the margin
    term on the cross-modal embeddings.
    """
    bce_v = bce_mean(frame_probs_visual.probs, targets.frame_labels_visual)
    bce_a = bce_mean(frame_probs_audio.probs, targets.frame_labels_audio)
    l_frame = 0.5 * (bce_v + bce_a)

    sq_errs = []
    for bmap, gt in (
        (fused_map_visual, targets.iou_map_visual),
        (fused_map_audio, targets.iou_map_audio),
    ):
        if bmap.scores.shape != gt.shape:
            raise ShapeError(f"map {bmap.scores.shape} vs target {gt.shape}")
        diff = bmap.scores[bmap.valid] - gt[bmap.valid]
        sq_errs.append(diff * diff)
    l_boundary = float(np.concatenate(sq_errs).mean())

    l_contrastive, _ = contrastive_forward(
        np.asarray(embeddings_visual, dtype=np.float64),
        np.asarray(embeddings_audio, dtype=np.float64),
        targets.fake_union,
        config.contrastive_margin,
    )

    total = (
        config.frame_loss_weight * l_frame
        + config.boundary_loss_weight * l_boundary
        + config.contrastive_loss_weight * l_contrastive
    )
    if not np.isfinite(total):
        raise ValueError(f"non-finite composite loss: {total}")
    breakdown = {"frame": l_frame, "boundary": l_boundary, "contrastive": l_contrastive}
    return float(total), breakdown


def video_head(fused_scores: np.ndarray, fused_map: BoundaryMap) -> VideoDecision:
    """Video confidence = max over fused frame scores and valid map cells;
    the provisional label is fake iff confidence exceeds 0.5."""
    scores = np.asarray(fused_scores, dtype=np.float64).ravel()
    best = float(scores.max(initial=0.0))
    cells = fused_map.scores[fused_map.valid]
    best = max(best, float(cells.max(initial=0.0)))
    label = VideoLabel.FAKE if best > 0.5 else VideoLabel.REAL
    return VideoDecision(label=label, video_confidence=best)
