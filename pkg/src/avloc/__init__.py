"""avloc: audio-visual temporal forgery detection and localization.

Toy encoders, cross-reconstruction attention, frame classification,
boundary-map localization, soft-NMS and rule-based post-processing, plus
the AP@tIoU / AR@K evaluation protocol and a seeded synthetic benchmark.
"""

from .core import (
    ForgeryMode,
    Modality,
    PipelineConfig,
    ScoredSegment,
    Segment,
    VideoAnnotation,
    clamp_segment,
    iou,
    validate_annotation,
)

__version__ = "0.1.0"

__all__ = [
    "ForgeryMode",
    "Modality",
    "PipelineConfig",
    "ScoredSegment",
    "Segment",
    "VideoAnnotation",
    "clamp_segment",
    "iou",
    "validate_annotation",
    "__version__",
]
