"""Seeded synthetic forgery dataset: correlated audio/visual feature tracks
with mean-shifted fake windows and exact ground-truth annotations.

Genuine content is a smooth shared latent process projected into each
modality plus small independent noise, so the two tracks agree frame by
frame. A fake window adds a constant shift along a fixed direction to one
modality's features, which both separates fake frames linearly and breaks
the cross-modal correspondence inside the window. Window boundaries sit
exactly on the raw frame grid and annotations record them in seconds.

Everything is a pure function of the spec (including rng_seed): the same
spec writes bit-identical files.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .core import ForgeryMode, Segment, ValidationError, VideoAnnotation, validate_annotation
from .dataio import (
    DatasetManifest,
    ManifestEntry,
    save_annotations,
    save_feature_tensor,
    save_manifest,
)

_LATENT_RHO = 0.9
_NOISE_SCALE = 0.1


@dataclass(frozen=True)
class SyntheticSpec:
    """Generator parameters; counts are per forgery mode."""

    count_both_fake: int = 0
    count_audio_fake: int = 0
    count_video_fake: int = 0
    count_real: int = 0
    duration_range: tuple[float, float] = (6.0, 10.0)
    window_count_range: tuple[int, int] = (1, 1)
    window_length_range: tuple[float, float] = (1.0, 2.0)
    visual_dim: int = 12
    audio_dim: int = 10
    frames_per_video: int = 64
    anomaly_strength: float = 3.0
    rng_seed: int = 0

    def __post_init__(self) -> None:
        for name in ("count_both_fake", "count_audio_fake", "count_video_fake", "count_real"):
            if getattr(self, name) < 0:
                raise ValidationError(f"{name} must be non-negative")
        object.__setattr__(self, "duration_range", tuple(float(x) for x in self.duration_range))
        object.__setattr__(self, "window_count_range", tuple(int(x) for x in self.window_count_range))
        object.__setattr__(
            self, "window_length_range", tuple(float(x) for x in self.window_length_range)
        )
        for name in ("duration_range", "window_count_range", "window_length_range"):
            lo, hi = getattr(self, name)
            if not (0 < lo <= hi):
                raise ValidationError(f"{name} must satisfy 0 < lo <= hi, got ({lo}, {hi})")
        if self.window_count_range[0] < 1:
            raise ValidationError("window_count_range values must be at least 1")
        if min(self.visual_dim, self.audio_dim) < 1 or self.frames_per_video < 2:
            raise ValidationError("feature dims must be positive and frames_per_video >= 2")
        if not self.anomaly_strength > 0:
            raise ValidationError("anomaly_strength must be positive")

    @property
    def total_videos(self) -> int:
        return self.count_both_fake + self.count_audio_fake + self.count_video_fake + self.count_real

    @classmethod
    def from_json(cls, path: str | Path) -> "SyntheticSpec":
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        for key in ("duration_range", "window_count_range", "window_length_range"):
            if key in data:
                data[key] = tuple(data[key])
        return cls(**data)

    def to_json(self, path: str | Path) -> None:
        payload = asdict(self)
        for key in ("duration_range", "window_count_range", "window_length_range"):
            payload[key] = list(payload[key])
        Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _smooth_latent(rng: np.random.Generator, dim: int, frames: int) -> np.ndarray:
    latent = np.empty((dim, frames))
    latent[:, 0] = rng.standard_normal(dim)
    innovation_scale = np.sqrt(1.0 - _LATENT_RHO**2)
    for t in range(1, frames):
        latent[:, t] = _LATENT_RHO * latent[:, t - 1] + innovation_scale * rng.standard_normal(dim)
    return latent


def _draw_windows(
    rng: np.random.Generator, spec: SyntheticSpec, n_frames: int, dt: float
) -> list[tuple[int, int]]:
    """Non-overlapping [start_frame, end_frame) windows on the raw grid."""
    lo_c, hi_c = spec.window_count_range
    count = int(rng.integers(lo_c, hi_c + 1))
    windows: list[tuple[int, int]] = []
    for _ in range(count):
        length_s = rng.uniform(*spec.window_length_range)
        length_f = int(np.clip(round(length_s / dt), 1, n_frames))
        placed = False
        for _attempt in range(100):
            start = int(rng.integers(0, n_frames - length_f + 1))
            end = start + length_f
            if all(end <= a or start >= b for a, b in windows):
                windows.append((start, end))
                placed = True
                break
        if not placed:
            continue  # crowded video: drop the extra window
    return sorted(windows)


_MODE_SEQUENCE = (
    (ForgeryMode.BOTH_FAKE, "count_both_fake"),
    (ForgeryMode.AUDIO_FAKE_VIDEO_REAL, "count_audio_fake"),
    (ForgeryMode.AUDIO_REAL_VIDEO_FAKE, "count_video_fake"),
    (ForgeryMode.REAL, "count_real"),
)


def generate_synthetic_dataset(
    spec: SyntheticSpec, out_dir: str | Path, split: str = "train"
) -> DatasetManifest:
    """Write feature files, annotations, and a manifest; fully seeded.

    Returns the manifest (also written to out_dir/manifest.json alongside
    out_dir/annotations.json and the feature files under out_dir/features/).
    """
    out_dir = Path(out_dir)
    features_dir = out_dir / "features"
    features_dir.mkdir(parents=True, exist_ok=True)

    master = np.random.SeedSequence(spec.rng_seed)
    dataset_seed, *video_seeds = master.spawn(spec.total_videos + 1)
    dataset_rng = np.random.default_rng(dataset_seed)
    latent_dim = max(2, min(spec.visual_dim, spec.audio_dim, 8))
    proj_v = dataset_rng.standard_normal((spec.visual_dim, latent_dim)) / np.sqrt(latent_dim)
    proj_a = dataset_rng.standard_normal((spec.audio_dim, latent_dim)) / np.sqrt(latent_dim)

    def unit(vec: np.ndarray) -> np.ndarray:
        return vec / np.linalg.norm(vec)

    shift_v = unit(dataset_rng.standard_normal(spec.visual_dim))
    shift_a = unit(dataset_rng.standard_normal(spec.audio_dim))

    entries = []
    annotations = []
    index = 0
    for mode, count_field in _MODE_SEQUENCE:
        for _ in range(getattr(spec, count_field)):
            rng = np.random.default_rng(video_seeds[index])
            video_id = f"syn_{index:04d}_{mode.value}"
            duration = float(rng.uniform(*spec.duration_range))
            n = spec.frames_per_video
            dt = duration / n

            latent = _smooth_latent(rng, latent_dim, n)
            visual = proj_v @ latent + _NOISE_SCALE * rng.standard_normal((spec.visual_dim, n))
            audio = proj_a @ latent + _NOISE_SCALE * rng.standard_normal((spec.audio_dim, n))

            visual_windows: list[tuple[int, int]] = []
            audio_windows: list[tuple[int, int]] = []
            if mode in (ForgeryMode.BOTH_FAKE, ForgeryMode.AUDIO_REAL_VIDEO_FAKE):
                visual_windows = _draw_windows(rng, spec, n, dt)
            if mode in (ForgeryMode.BOTH_FAKE, ForgeryMode.AUDIO_FAKE_VIDEO_REAL):
                audio_windows = _draw_windows(rng, spec, n, dt)
            for a, b in visual_windows:
                visual[:, a:b] += spec.anomaly_strength * shift_v[:, None]
            for a, b in audio_windows:
                audio[:, a:b] += spec.anomaly_strength * shift_a[:, None]

            annotation = validate_annotation(
                VideoAnnotation(
                    file_id=video_id,
                    duration=duration,
                    visual_fake_periods=tuple(Segment(a * dt, b * dt) for a, b in visual_windows),
                    audio_fake_periods=tuple(Segment(a * dt, b * dt) for a, b in audio_windows),
                    mode=mode,
                )
            )
            visual_rel = f"features/{video_id}_visual.bin"
            audio_rel = f"features/{video_id}_audio.bin"
            save_feature_tensor(out_dir / visual_rel, visual, dtype="float32")
            save_feature_tensor(out_dir / audio_rel, audio, dtype="float32")
            entries.append(
                ManifestEntry(
                    annotation=annotation,
                    visual_features=visual_rel,
                    audio_features=audio_rel,
                    split=split,
                )
            )
            annotations.append(annotation)
            index += 1

    manifest = DatasetManifest(root=out_dir, entries=tuple(entries))
    save_manifest(out_dir / "manifest.json", manifest)
    save_annotations(out_dir / "annotations.json", annotations)
    return manifest
