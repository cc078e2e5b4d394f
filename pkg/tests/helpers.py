"""Shared builders for the network-level tests."""

from __future__ import annotations

import numpy as np

from avloc.core import ForgeryMode, Modality, PipelineConfig, Segment, VideoAnnotation
from avloc.encoders import RawModalitySequence
from avloc.model import ForgeryLocalizationModel
from avloc.pipeline import targets_from_annotation


def tiny_gradcheck_config() -> PipelineConfig:
    return PipelineConfig.toy(
        num_frames=6,
        feature_dim=8,
        boundary_hidden_dims=(8, 4),
        attention_heads=2,
        boundary_samples=4,
    )


def tiny_trained_instance(seed: int = 0, epochs: int = 600, lr: float = 0.3):
    """A small model trained to a low-loss point on one synthetic video.

    Gradient checks run here: near the optimum the loss is small, so the
    finite-difference cancellation noise sits far below the tolerance no
    matter how small individual gradient entries are.
    """
    cfg = tiny_gradcheck_config()
    rng = np.random.default_rng(seed)
    raw_v = RawModalitySequence(Modality.VISUAL, 2.0 * rng.standard_normal((5, cfg.num_frames)))
    raw_a = RawModalitySequence(Modality.AUDIO, 2.0 * rng.standard_normal((4, cfg.num_frames)))
    ann = VideoAnnotation(
        "gradcheck",
        8.0,
        (Segment(2.0, 4.0),),
        (Segment(5.0, 7.0),),
        ForgeryMode.BOTH_FAKE,
    )
    targets = targets_from_annotation(ann, cfg)
    model = ForgeryLocalizationModel(cfg, 5, 4)
    for _ in range(epochs):
        _, _, grads = model.loss_and_grads(raw_v, raw_a, targets)
        for name, tensor in model.named_parameters():
            tensor -= lr * grads[name]
    return model, raw_v, raw_a, targets
