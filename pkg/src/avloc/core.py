"""Domain types, interval algebra, and the validated pipeline configuration.

All timestamps are in seconds. Segments are half-open intervals [start, end)
for labeling purposes but behave as closed intervals for IoU; the distinction
is immaterial because all geometry is measured by length.

All types are immutable after validation and safe to share across workers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields, replace
from enum import Enum
from pathlib import Path
from typing import Optional

import numpy as np


class ValidationError(ValueError):
    """A record or value violates a domain invariant."""


class ConfigError(ValueError):
    """A configuration file or override is malformed."""


class Modality(str, Enum):
    AUDIO = "audio"
    VISUAL = "visual"
    FUSED = "fused"


class ForgeryMode(str, Enum):
    """Which modality combination is manipulated in a video."""

    BOTH_FAKE = "both_fake"
    AUDIO_FAKE_VIDEO_REAL = "audio_fake_video_real"
    AUDIO_REAL_VIDEO_FAKE = "audio_real_video_fake"
    REAL = "real"


# ---------------------------------------------------------------------------
# Segments
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Segment:
    """A time interval in seconds with positive length.

    Construction requires start < end (zero-length segments poison IoU
    denominators and are rejected outright). Non-negativity and containment
    in the owning video are established by clamp_segment/validate_annotation.
    """

    start: float
    end: float

    def __post_init__(self) -> None:
        s, e = float(self.start), float(self.end)
        if not (math.isfinite(s) and math.isfinite(e)):
            raise ValidationError(f"segment bounds must be finite, got [{self.start}, {self.end}]")
        if not s < e:
            raise ValidationError(f"segment requires start < end, got [{s}, {e}]")
        object.__setattr__(self, "start", s)
        object.__setattr__(self, "end", e)

    @property
    def length(self) -> float:
        return self.end - self.start


@dataclass(frozen=True)
class ScoredSegment:
    """A segment with a confidence score and the modality that produced it."""

    segment: Segment
    confidence: float
    modality: Modality

    def __post_init__(self) -> None:
        c = float(self.confidence)
        if not 0.0 <= c <= 1.0:
            raise ValidationError(f"confidence must lie in [0,1], got {c}")
        object.__setattr__(self, "confidence", c)
        object.__setattr__(self, "modality", Modality(self.modality))


def iou(a: Segment, b: Segment) -> float:
    """Temporal intersection-over-union of two segments; 0 when disjoint."""
    inter = min(a.end, b.end) - max(a.start, b.start)
    if inter <= 0.0:
        return 0.0
    union = (a.end - a.start) + (b.end - b.start) - inter
    return inter / union


def clamp_segment(s: Segment, duration: float) -> Optional[Segment]:
    """Intersect a segment with [0, duration]; None when the result is empty."""
    if duration <= 0:
        raise ValidationError(f"duration must be positive, got {duration}")
    start = max(s.start, 0.0)
    end = min(s.end, float(duration))
    if start >= end:
        return None
    return Segment(start, end)


# ---------------------------------------------------------------------------
# Annotations
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class VideoAnnotation:
    """Ground-truth record for one video: per-modality fake periods."""

    file_id: str
    duration: float
    visual_fake_periods: tuple[Segment, ...] = ()
    audio_fake_periods: tuple[Segment, ...] = ()
    mode: ForgeryMode = ForgeryMode.REAL

    def __post_init__(self) -> None:
        object.__setattr__(self, "visual_fake_periods", tuple(self.visual_fake_periods))
        object.__setattr__(self, "audio_fake_periods", tuple(self.audio_fake_periods))
        object.__setattr__(self, "mode", ForgeryMode(self.mode))


def validate_annotation(record: VideoAnnotation) -> VideoAnnotation:
    """Clamp periods into [0, duration] and enforce mode/period consistency.

    Raises ValidationError naming the violated invariant. Returns a new
    annotation whose periods are all within range.
    """
    if record.duration <= 0:
        raise ValidationError(f"{record.file_id}: duration must be positive, got {record.duration}")

    def clamp_all(periods: tuple[Segment, ...], tag: str) -> tuple[Segment, ...]:
        out = []
        for p in periods:
            c = clamp_segment(p, record.duration)
            if c is None:
                raise ValidationError(
                    f"{record.file_id}: {tag} period [{p.start}, {p.end}] lies outside the "
                    f"{record.duration}s video"
                )
            out.append(c)
        return tuple(out)

    visual = clamp_all(record.visual_fake_periods, "visual")
    audio = clamp_all(record.audio_fake_periods, "audio")

    mode = record.mode
    if mode is ForgeryMode.REAL and (visual or audio):
        raise ValidationError(f"{record.file_id}: mode=real requires empty fake-period lists")
    if mode is ForgeryMode.AUDIO_FAKE_VIDEO_REAL and visual:
        raise ValidationError(f"{record.file_id}: mode={mode.value} requires empty visual periods")
    if mode is ForgeryMode.AUDIO_REAL_VIDEO_FAKE and audio:
        raise ValidationError(f"{record.file_id}: mode={mode.value} requires empty audio periods")

    return replace(record, visual_fake_periods=visual, audio_fake_periods=audio)


# ---------------------------------------------------------------------------
# Feature sequences
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FeatureSequence:
    """A channels-by-frames latent feature matrix for one modality.

    values has shape (channels, frames), float64, finite.
    """

    modality: Modality
    values: np.ndarray

    def __post_init__(self) -> None:
        arr = np.asarray(self.values, dtype=np.float64)
        if arr.ndim != 2:
            raise ValidationError(f"feature sequence must be 2-D, got shape {arr.shape}")
        if not np.isfinite(arr).all():
            raise ValidationError("feature sequence contains non-finite values")
        object.__setattr__(self, "values", arr)
        object.__setattr__(self, "modality", Modality(self.modality))

    @property
    def channels(self) -> int:
        return int(self.values.shape[0])

    @property
    def frames(self) -> int:
        return int(self.values.shape[1])


# ---------------------------------------------------------------------------
# Pipeline configuration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PipelineConfig:
    """Every pipeline hyperparameter in one validated structure.

    Defaults reproduce the full-scale reference setup; tests shrink them via
    toy() so the whole pipeline trains on a desktop CPU in seconds.
    """

    num_frames: int = 512
    max_duration: float = 40.0
    feature_dim: int = 256
    boundary_hidden_dims: tuple[int, ...] = (512, 128)
    boundary_samples: int = 10
    attention_heads: int = 4
    learning_rate: float = 1e-5
    frame_loss_weight: float = 2.0
    boundary_loss_weight: float = 1.0
    contrastive_loss_weight: float = 0.1
    contrastive_margin: float = 0.99
    weight_decay: float = 1e-4
    nms_alpha: float = 0.7234
    nms_t1: float = 0.1968
    nms_t2: float = 0.4123
    erf_fake_threshold: float = 0.5
    erf_real_append_conf: float = 0.95
    erf_fake_append_conf: float = 0.55
    rng_seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "boundary_hidden_dims", tuple(int(d) for d in self.boundary_hidden_dims))
        if self.num_frames < 2:
            raise ConfigError(f"num_frames must be >= 2, got {self.num_frames}")
        if self.max_duration <= 0:
            raise ConfigError("max_duration must be positive")
        if self.feature_dim < 1:
            raise ConfigError("feature_dim must be positive")
        if self.boundary_samples < 1:
            raise ConfigError("boundary_samples must be positive")
        if any(d < 1 for d in self.boundary_hidden_dims):
            raise ConfigError("boundary_hidden_dims must all be positive")
        if self.attention_heads < 1 or self.feature_dim % self.attention_heads != 0:
            raise ConfigError(
                f"attention_heads ({self.attention_heads}) must be positive and divide "
                f"feature_dim ({self.feature_dim})"
            )
        positive = [
            ("learning_rate", self.learning_rate),
            ("frame_loss_weight", self.frame_loss_weight),
            ("boundary_loss_weight", self.boundary_loss_weight),
            ("contrastive_loss_weight", self.contrastive_loss_weight),
            ("weight_decay", self.weight_decay),
            ("nms_alpha", self.nms_alpha),
            ("nms_t1", self.nms_t1),
            ("nms_t2", self.nms_t2),
            ("erf_fake_threshold", self.erf_fake_threshold),
            ("erf_real_append_conf", self.erf_real_append_conf),
            ("erf_fake_append_conf", self.erf_fake_append_conf),
        ]
        for name, value in positive:
            if not value > 0:
                raise ConfigError(f"{name} must be strictly positive, got {value}")
        if not self.nms_t1 < self.nms_t2 < 1.0:
            raise ConfigError(f"need nms_t1 < nms_t2 < 1, got t1={self.nms_t1}, t2={self.nms_t2}")
        if not 0.0 < self.contrastive_margin <= 1.0:
            raise ConfigError(f"contrastive_margin must lie in (0,1], got {self.contrastive_margin}")

    @property
    def seconds_per_frame(self) -> float:
        """Grid resolution when a video spans the full frame grid."""
        return self.max_duration / self.num_frames

    @classmethod
    def toy(cls, **overrides) -> "PipelineConfig":
        """Desk-scale configuration used throughout the test suite."""
        base = dict(
            num_frames=64,
            max_duration=8.0,
            feature_dim=32,
            boundary_hidden_dims=(48, 24),
            boundary_samples=10,
            attention_heads=4,
            learning_rate=0.08,
            rng_seed=0,
        )
        base.update(overrides)
        return cls(**base)


_CONFIG_FIELD_TYPES = {f.name: f.type for f in fields(PipelineConfig)}


def _parse_config_value(key: str, raw: str):
    raw = raw.strip()
    try:
        if key == "boundary_hidden_dims":
            inner = raw.strip("[]() ")
            return tuple(int(part) for part in inner.replace(",", " ").split())
        if key in ("num_frames", "feature_dim", "boundary_samples", "attention_heads", "rng_seed"):
            return int(raw)
        return float(raw)
    except ValueError as exc:
        raise ConfigError(f"cannot parse value for '{key}': {raw!r}") from exc


def parse_config_text(text: str, base: Optional[PipelineConfig] = None) -> PipelineConfig:
    """Parse a flat key=value document into a PipelineConfig.

    Lines are 'key = value'; '#' starts a comment; blank lines are ignored.
    Unknown keys are an error. Missing keys keep the base (default) value.
    """
    values: dict = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, raw = (part.strip() for part in stripped.split("=", 1))
        if key not in _CONFIG_FIELD_TYPES:
            raise ConfigError(f"line {lineno}: unknown configuration key '{key}'")
        values[key] = _parse_config_value(key, raw)
    base_values = {f.name: getattr(base, f.name) for f in fields(base)} if base else {}
    base_values.update(values)
    return PipelineConfig(**base_values) if base else PipelineConfig(**values)


def load_config(path: str | Path, base: Optional[PipelineConfig] = None) -> PipelineConfig:
    """Load a PipelineConfig from a flat key=value file."""
    return parse_config_text(Path(path).read_text(encoding="utf-8"), base=base)


def apply_overrides(config: PipelineConfig, overrides: dict[str, str]) -> PipelineConfig:
    """Apply 'key=value' string overrides on top of an existing config."""
    values = {f.name: getattr(config, f.name) for f in fields(config)}
    for key, raw in overrides.items():
        if key not in _CONFIG_FIELD_TYPES:
            raise ConfigError(f"unknown configuration key '{key}'")
        values[key] = _parse_config_value(key, str(raw))
    return PipelineConfig(**values)
