"""File formats: annotations, dataset manifests, feature tensors, predictions.

All writes are atomic (write to a temp file in the same directory, then
rename) so an interrupted run never leaves a half-written artifact.

Feature tensors are stored as a raw little-endian payload plus a JSON
sidecar header "<payload>.json" carrying rows, cols, dtype and byte order.
float32 payloads are widened to float64 on load; float64 payloads are read
exactly (checkpoints rely on this for bitwise round trips).
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import (
    ForgeryMode,
    Modality,
    ScoredSegment,
    Segment,
    ValidationError,
    VideoAnnotation,
    validate_annotation,
)

MAX_TENSOR_ELEMENTS = 100_000_000

_DTYPES = {"float32": np.dtype("<f4"), "float64": np.dtype("<f8")}


class DataFormatError(ValueError):
    """A file on disk does not match its declared format."""


def atomic_write_bytes(path: str | Path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as handle:
            handle.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path: str | Path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def write_json(path: str | Path, payload) -> None:
    atomic_write_text(path, json.dumps(payload, indent=2, sort_keys=True) + "\n")


def read_json(path: str | Path):
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataFormatError(f"{path}: invalid JSON ({exc})") from exc


# ---------------------------------------------------------------------------
# Feature tensors
# ---------------------------------------------------------------------------


def _header_path(path: Path) -> Path:
    return path.with_name(path.name + ".json")


def save_feature_tensor(path: str | Path, values: np.ndarray, dtype: str = "float32") -> None:
    """Write a 2-D array as payload + sidecar header."""
    if dtype not in _DTYPES:
        raise DataFormatError(f"unsupported dtype {dtype!r}")
    arr = np.ascontiguousarray(values, dtype=_DTYPES[dtype])
    if arr.ndim != 2:
        raise DataFormatError(f"tensor must be 2-D, got shape {arr.shape}")
    path = Path(path)
    atomic_write_bytes(path, arr.tobytes(order="C"))
    header = {
        "rows": int(arr.shape[0]),
        "cols": int(arr.shape[1]),
        "dtype": dtype,
        "byteorder": "little",
    }
    write_json(_header_path(path), header)


def load_feature_tensor(path: str | Path) -> np.ndarray:
    """Read a tensor written by save_feature_tensor, always as float64."""
    path = Path(path)
    header_file = _header_path(path)
    if not path.exists():
        raise DataFormatError(f"missing tensor payload {path}")
    if not header_file.exists():
        raise DataFormatError(f"missing tensor header {header_file}")
    header = read_json(header_file)
    try:
        rows, cols = int(header["rows"]), int(header["cols"])
        dtype_tag = header["dtype"]
        byteorder = header["byteorder"]
    except (KeyError, TypeError, ValueError) as exc:
        raise DataFormatError(f"{header_file}: malformed header") from exc
    if byteorder != "little":
        raise DataFormatError(f"{header_file}: unsupported byte order {byteorder!r}")
    if dtype_tag not in _DTYPES:
        raise DataFormatError(f"{header_file}: unsupported dtype {dtype_tag!r}")
    if rows < 1 or cols < 1 or rows * cols > MAX_TENSOR_ELEMENTS:
        raise DataFormatError(f"{header_file}: implausible dimensions {rows}x{cols}")
    dtype = _DTYPES[dtype_tag]
    payload = path.read_bytes()
    expected = rows * cols * dtype.itemsize
    if len(payload) != expected:
        raise DataFormatError(
            f"{path}: payload is {len(payload)} bytes, header implies {expected}"
        )
    arr = np.frombuffer(payload, dtype=dtype).reshape(rows, cols)
    return arr.astype(np.float64)


# ---------------------------------------------------------------------------
# Annotations
# ---------------------------------------------------------------------------


def _segment_to_json(seg: Segment) -> list[float]:
    return [seg.start, seg.end]


def _annotation_to_json(ann: VideoAnnotation) -> dict:
    return {
        "file_id": ann.file_id,
        "duration": ann.duration,
        "mode": ann.mode.value,
        "visual_fake_periods": [_segment_to_json(s) for s in ann.visual_fake_periods],
        "audio_fake_periods": [_segment_to_json(s) for s in ann.audio_fake_periods],
    }


def _annotation_from_json(record: dict, context: str) -> VideoAnnotation:
    try:
        ann = VideoAnnotation(
            file_id=str(record["file_id"]),
            duration=float(record["duration"]),
            visual_fake_periods=tuple(Segment(*p) for p in record.get("visual_fake_periods", [])),
            audio_fake_periods=tuple(Segment(*p) for p in record.get("audio_fake_periods", [])),
            mode=ForgeryMode(record.get("mode", "real")),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise DataFormatError(f"{context}: malformed annotation record ({exc})") from exc
    try:
        return validate_annotation(ann)
    except ValidationError as exc:
        raise ValidationError(f"{context}: {exc}") from exc


def save_annotations(path: str | Path, annotations: list[VideoAnnotation]) -> None:
    write_json(path, [_annotation_to_json(a) for a in annotations])


def load_annotations(path: str | Path) -> list[VideoAnnotation]:
    """Parse and validate an annotations file, preserving file order."""
    data = read_json(path)
    if not isinstance(data, list):
        raise DataFormatError(f"{path}: expected a JSON array of annotations")
    return [
        _annotation_from_json(record, f"{path} record {i}") for i, record in enumerate(data)
    ]


# ---------------------------------------------------------------------------
# Dataset manifest
# ---------------------------------------------------------------------------

SPLITS = ("train", "val", "test")


@dataclass(frozen=True)
class ManifestEntry:
    annotation: VideoAnnotation
    visual_features: str
    audio_features: str
    split: str

    def __post_init__(self) -> None:
        if self.split not in SPLITS:
            raise ValidationError(f"split must be one of {SPLITS}, got {self.split!r}")


@dataclass(frozen=True)
class DatasetManifest:
    root: Path
    entries: tuple[ManifestEntry, ...]

    def resolve(self, entry: ManifestEntry) -> tuple[Path, Path]:
        return self.root / entry.visual_features, self.root / entry.audio_features

    def split(self, name: str) -> tuple[ManifestEntry, ...]:
        return tuple(e for e in self.entries if e.split == name)


def save_manifest(path: str | Path, manifest: DatasetManifest) -> None:
    payload = {
        "videos": [
            {
                "annotation": _annotation_to_json(e.annotation),
                "visual_features": e.visual_features,
                "audio_features": e.audio_features,
                "split": e.split,
            }
            for e in manifest.entries
        ]
    }
    write_json(path, payload)


def load_manifest(path: str | Path) -> DatasetManifest:
    """Load a manifest; feature paths resolve relative to the manifest file."""
    path = Path(path)
    data = read_json(path)
    if not isinstance(data, dict) or "videos" not in data:
        raise DataFormatError(f"{path}: expected an object with a 'videos' list")
    root = path.parent
    entries = []
    for i, item in enumerate(data["videos"]):
        try:
            entry = ManifestEntry(
                annotation=_annotation_from_json(item["annotation"], f"{path} video {i}"),
                visual_features=str(item["visual_features"]),
                audio_features=str(item["audio_features"]),
                split=str(item.get("split", "train")),
            )
        except KeyError as exc:
            raise DataFormatError(f"{path} video {i}: missing field {exc}") from exc
        for rel in (entry.visual_features, entry.audio_features):
            target = root / rel
            if not target.exists():
                raise DataFormatError(f"{path} video {i}: referenced file missing: {target}")
        entries.append(entry)
    return DatasetManifest(root=root, entries=tuple(entries))


# ---------------------------------------------------------------------------
# Predictions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PredictionRecord:
    """Final per-video output: label plus scored segments."""

    video_id: str
    duration: float
    label: str
    segments: tuple[ScoredSegment, ...]


def save_predictions(path: str | Path, records: list[PredictionRecord]) -> None:
    payload = [
        {
            "video_id": r.video_id,
            "duration": r.duration,
            "label": r.label,
            "segments": [
                {
                    "start": s.segment.start,
                    "end": s.segment.end,
                    "confidence": s.confidence,
                    "modality": s.modality.value,
                }
                for s in r.segments
            ],
        }
        for r in records
    ]
    write_json(path, payload)


def load_predictions(path: str | Path) -> list[PredictionRecord]:
    data = read_json(path)
    if not isinstance(data, list):
        raise DataFormatError(f"{path}: expected a JSON array of prediction records")
    records = []
    for i, item in enumerate(data):
        try:
            segments = tuple(
                ScoredSegment(
                    segment=Segment(float(s["start"]), float(s["end"])),
                    confidence=float(s["confidence"]),
                    modality=Modality(s["modality"]),
                )
                for s in item.get("segments", [])
            )
            records.append(
                PredictionRecord(
                    video_id=str(item["video_id"]),
                    duration=float(item["duration"]),
                    label=str(item.get("label", "")),
                    segments=segments,
                )
            )
        except (KeyError, TypeError, ValueError, ValidationError) as exc:
            raise DataFormatError(f"{path} record {i}: {exc}") from exc
    return records
