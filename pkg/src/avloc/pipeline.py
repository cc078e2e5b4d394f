"""Training and inference drivers tying the model to datasets on disk.

Training is plain full-batch gradient descent with decoupled weight decay:
gradients are averaged over the training split each epoch and every
parameter takes the same learning rate. Inference runs the complete chain
encode -> enhance -> cross-reconstruct -> classify -> boundary maps ->
decode -> soft-NMS -> fuse -> full-video rule set, one video at a time in
manifest order, so outputs are deterministic.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import Modality, PipelineConfig, VideoAnnotation
from .dataio import (
    DatasetManifest,
    ManifestEntry,
    PredictionRecord,
    load_feature_tensor,
    save_predictions,
)
from .encoders import RawModalitySequence
from .heads import TrainingTargets, gt_iou_map
from .model import ForgeryLocalizationModel, load_checkpoint, save_checkpoint
from .postprocess import decode_proposals, erf_decision, fuse_modalities, soft_nms
from .tensorops import ShapeError

logger = logging.getLogger("avloc")

DEFAULT_PROPOSALS_PER_MODALITY = 100


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    total: float
    frame: float
    boundary: float
    contrastive: float


def frame_labels(periods, duration: float, num_frames: int) -> np.ndarray:
    """A frame is fake iff its midpoint falls inside a fake period."""
    mids = (np.arange(num_frames) + 0.5) * (duration / num_frames)
    labels = np.zeros(num_frames, dtype=np.float64)
    for p in periods:
        labels[(mids >= p.start) & (mids < p.end)] = 1.0
    return labels


def targets_from_annotation(ann: VideoAnnotation, config: PipelineConfig) -> TrainingTargets:
    t = config.num_frames
    labels_v = frame_labels(ann.visual_fake_periods, ann.duration, t)
    labels_a = frame_labels(ann.audio_fake_periods, ann.duration, t)
    return TrainingTargets(
        frame_labels_visual=labels_v,
        frame_labels_audio=labels_a,
        fake_union=np.maximum(labels_v, labels_a),
        iou_map_visual=gt_iou_map(ann.visual_fake_periods, ann.duration, t, t),
        iou_map_audio=gt_iou_map(ann.audio_fake_periods, ann.duration, t, t),
    )


def _load_raw(manifest: DatasetManifest, entry: ManifestEntry):
    visual_path, audio_path = manifest.resolve(entry)
    raw_v = RawModalitySequence(Modality.VISUAL, load_feature_tensor(visual_path))
    raw_a = RawModalitySequence(Modality.AUDIO, load_feature_tensor(audio_path))
    return raw_v, raw_a


def run_training(
    manifest: DatasetManifest,
    config: PipelineConfig,
    checkpoint_out: str | Path,
    epochs: int = 60,
    split: str = "train",
) -> list[EpochRecord]:
    """Train on one split, fit the anomaly calibration, write a checkpoint."""
    entries = manifest.split(split)
    if not entries:
        raise ValueError(f"manifest has no '{split}' entries")
    batch = []
    for entry in entries:
        raw_v, raw_a = _load_raw(manifest, entry)
        batch.append((raw_v, raw_a, targets_from_annotation(entry.annotation, config)))
    visual_dim = batch[0][0].input_dim
    audio_dim = batch[0][1].input_dim
    for raw_v, raw_a, _ in batch:
        if raw_v.input_dim != visual_dim or raw_a.input_dim != audio_dim:
            raise ShapeError("feature dimensions differ across the training split")

    model = ForgeryLocalizationModel(config, visual_dim, audio_dim)
    lr, decay = config.learning_rate, config.weight_decay
    records: list[EpochRecord] = []
    for epoch in range(1, epochs + 1):
        grad_sum: dict[str, np.ndarray] = {}
        totals = np.zeros(4)
        for raw_v, raw_a, targets in batch:
            total, breakdown, grads = model.loss_and_grads(raw_v, raw_a, targets)
            totals += (total, breakdown["frame"], breakdown["boundary"], breakdown["contrastive"])
            for name, g in grads.items():
                if name in grad_sum:
                    grad_sum[name] += g
                else:
                    grad_sum[name] = g.copy()
        totals /= len(batch)
        if not np.isfinite(totals).all():
            raise RuntimeError(
                f"non-finite loss at epoch {epoch}: total={totals[0]}, "
                f"frame={totals[1]}, boundary={totals[2]}, contrastive={totals[3]}"
            )
        scale = 1.0 / len(batch)
        for name, tensor in model.named_parameters():
            tensor *= 1.0 - lr * decay
            tensor -= lr * scale * grad_sum[name]
        record = EpochRecord(epoch, *totals)
        records.append(record)
        logger.info(
            "epoch %d: total=%.6f frame=%.6f boundary=%.6f contrastive=%.6f",
            record.epoch, record.total, record.frame, record.boundary, record.contrastive,
        )

    errors = []
    for raw_v, raw_a, _ in batch:
        state = model._forward(raw_v, raw_a)
        errors.append(state["cra_out"]["err_v"])
        errors.append(state["cra_out"]["err_a"])
    all_errors = np.concatenate(errors)
    positive = all_errors[all_errors > 0]
    model.calibration_tau = float(np.median(positive)) if positive.size else 1.0

    save_checkpoint(model, checkpoint_out)
    return records


def run_inference(
    manifest: DatasetManifest,
    checkpoint: str | Path,
    out_path: str | Path,
    config: PipelineConfig | None = None,
    top_k: int = DEFAULT_PROPOSALS_PER_MODALITY,
    split: str | None = None,
) -> list[PredictionRecord]:
    """Produce one prediction record per video and write the predictions file."""
    model = load_checkpoint(checkpoint, config)
    cfg = model.config
    entries = manifest.entries if split is None else manifest.split(split)
    records: list[PredictionRecord] = []
    for entry in entries:
        raw_v, raw_a = _load_raw(manifest, entry)
        if raw_v.input_dim != model.visual_dim or raw_a.input_dim != model.audio_dim:
            raise ShapeError(
                f"{entry.annotation.file_id}: feature dims ({raw_v.input_dim}, "
                f"{raw_a.input_dim}) do not match the checkpoint "
                f"({model.visual_dim}, {model.audio_dim})"
            )
        ann = entry.annotation
        result = model.infer(raw_v, raw_a)
        props_v = decode_proposals(result.maps_visual[2], ann.duration, top_k, ann.file_id)
        props_a = decode_proposals(result.maps_audio[2], ann.duration, top_k, ann.file_id)
        nms_v = soft_nms(props_v, cfg.nms_alpha, cfg.nms_t1, cfg.nms_t2)
        nms_a = soft_nms(props_a, cfg.nms_alpha, cfg.nms_t1, cfg.nms_t2)
        fused = fuse_modalities(nms_a, nms_v)
        decision, final = erf_decision(fused, ann.duration, cfg)
        records.append(
            PredictionRecord(
                video_id=ann.file_id,
                duration=ann.duration,
                label=decision.label.value,
                segments=final.proposals,
            )
        )
        logger.debug("%s: %d proposals, label=%s", ann.file_id, len(final), decision.label.value)
    save_predictions(out_path, records)
    return records
