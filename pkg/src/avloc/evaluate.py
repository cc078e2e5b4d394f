"""Temporal-localization metrics: AP at fixed tIoU thresholds and AR at
fixed per-video proposal budgets, plus the report generator.

Protocol. Predictions are matched per video by greedy descending-confidence
matching: each prediction takes the unmatched ground truth with the highest
IoU when that IoU reaches the threshold, and each ground truth matches at
most once. For AP, predictions from all videos are pooled and ranked by
(confidence desc, video id, start, end); the precision-recall curve is
integrated exactly using the interpolated precision envelope. For AR@k only
the top-k proposals per video count; recall is averaged over the tIoU grid
0.5, 0.55, ..., 0.95. Metrics depend only on confidence ranks and segment
geometry, never on absolute confidence values.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from .core import ScoredSegment, Segment, iou
from .dataio import load_annotations, load_predictions

DEFAULT_TIOU_GRID = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))
DEFAULT_AP_THRESHOLDS = (0.5, 0.75, 0.95)
DEFAULT_AR_BUDGETS = (10, 20, 50, 100)

# (predictions, ground truths) for one video
EvalCase = tuple[Sequence[ScoredSegment], Sequence[Segment]]


class EvalError(ValueError):
    """The requested metric is undefined or the inputs do not align."""


def _pred_order_key(p: ScoredSegment):
    return (-p.confidence, p.segment.start, p.segment.end)


def sort_predictions(preds: Sequence[ScoredSegment]) -> list[ScoredSegment]:
    return sorted(preds, key=_pred_order_key)


def match_predictions(
    preds: Sequence[ScoredSegment], gts: Sequence[Segment], tiou: float
) -> list[tuple[int, Optional[int]]]:
    """Greedy one-to-one matching; preds must be confidence-descending.

    Each prediction matches the unmatched ground truth with the highest IoU
    if that IoU is at least tiou (equal IoUs break toward the lower index).
    """
    taken = [False] * len(gts)
    matches: list[tuple[int, Optional[int]]] = []
    for i, p in enumerate(preds):
        best_j, best_iou = None, 0.0
        for j, g in enumerate(gts):
            if taken[j]:
                continue
            overlap = iou(p.segment, g)
            if overlap >= tiou and overlap > best_iou:
                best_j, best_iou = j, overlap
        if best_j is not None:
            taken[best_j] = True
        matches.append((i, best_j))
    return matches


def _interpolated_ap(precision: np.ndarray, recall: np.ndarray) -> float:
    """Exact area under the PR curve with the precision envelope."""
    mprec = np.concatenate([[0.0], precision, [0.0]])
    mrec = np.concatenate([[0.0], recall, [1.0]])
    for i in range(len(mprec) - 2, -1, -1):
        mprec[i] = max(mprec[i], mprec[i + 1])
    idx = np.where(mrec[1:] != mrec[:-1])[0] + 1
    return float(np.sum((mrec[idx] - mrec[idx - 1]) * mprec[idx]))


def ap_at_tiou(cases: Mapping[str, EvalCase], tiou: float) -> float:
    """Average precision at one tIoU threshold, pooled over all videos."""
    if not 0.0 < tiou <= 1.0:
        raise EvalError(f"tiou must lie in (0,1], got {tiou}")
    total_gts = sum(len(gts) for _, gts in cases.values())
    if total_gts == 0:
        raise EvalError("average precision is undefined without ground truth")
    pooled = []  # (confidence, video_id, start, end, is_tp)
    for video_id, (preds, gts) in cases.items():
        ordered = sort_predictions(preds)
        matches = dict(match_predictions(ordered, gts, tiou))
        for i, p in enumerate(ordered):
            pooled.append(
                (p.confidence, video_id, p.segment.start, p.segment.end, matches[i] is not None)
            )
    if not pooled:
        return 0.0
    pooled.sort(key=lambda r: (-r[0], r[1], r[2], r[3]))
    tp = np.array([r[4] for r in pooled], dtype=np.float64)
    cum_tp = np.cumsum(tp)
    cum_fp = np.cumsum(1.0 - tp)
    precision = cum_tp / (cum_tp + cum_fp)
    recall = cum_tp / total_gts
    return _interpolated_ap(precision, recall)


def ar_at_k(
    cases: Mapping[str, EvalCase],
    k: int,
    tiou_grid: Sequence[float] = DEFAULT_TIOU_GRID,
) -> float:
    """Average recall with at most k proposals per video, averaged over the
    tIoU grid."""
    if k < 1:
        raise EvalError(f"k must be at least 1, got {k}")
    total_gts = sum(len(gts) for _, gts in cases.values())
    if total_gts == 0:
        raise EvalError("average recall is undefined without ground truth")
    recalls = []
    for tiou in tiou_grid:
        matched = 0
        for _, (preds, gts) in cases.items():
            top = sort_predictions(preds)[:k]
            matched += sum(1 for _, j in match_predictions(top, gts, tiou) if j is not None)
        recalls.append(matched / total_gts)
    return float(np.mean(recalls))


# ---------------------------------------------------------------------------
# Report
# ---------------------------------------------------------------------------


@dataclass
class EvalReport:
    ap_at: dict[float, float]
    ar_at: dict[int, float]
    per_video_diagnostics: list[dict] = field(default_factory=list)

    def to_payload(self) -> dict:
        return {
            "ap_at": {f"{t:g}": v for t, v in self.ap_at.items()},
            "ar_at": {str(k): v for k, v in self.ar_at.items()},
            "per_video_diagnostics": self.per_video_diagnostics,
        }

    def format_table(self) -> str:
        lines = ["Metric     Score", "-" * 17]
        for t in sorted(self.ap_at):
            lines.append(f"AP@{t:<5g}  {self.ap_at[t]:.4f}")
        for k in sorted(self.ar_at, reverse=True):
            lines.append(f"AR@{k:<5d}  {self.ar_at[k]:.4f}")
        return "\n".join(lines)


def merge_segments(segments: Sequence[Segment]) -> tuple[Segment, ...]:
    """Union of intervals: overlapping or touching segments are merged."""
    if not segments:
        return ()
    ordered = sorted(segments, key=lambda s: (s.start, s.end))
    merged = [ordered[0]]
    for seg in ordered[1:]:
        last = merged[-1]
        if seg.start <= last.end:
            if seg.end > last.end:
                merged[-1] = Segment(last.start, seg.end)
        else:
            merged.append(seg)
    return tuple(merged)


def evaluate_run(
    pred_file,
    gt_file,
    ap_thresholds: Sequence[float] = DEFAULT_AP_THRESHOLDS,
    ar_budgets: Sequence[int] = DEFAULT_AR_BUDGETS,
    gt_modality: str = "union",
) -> EvalReport:
    """Score a predictions file against a ground-truth annotations file.

    Ground truth per video is the union of audio and visual fake periods
    (gt_modality="union", the fused-track protocol) or a single modality's
    periods behind the flag. A prediction for an unknown video id is an
    error; ground-truth videos with no predictions are scored with zero
    proposals and reported in the diagnostics.
    """
    if gt_modality not in ("union", "visual", "audio"):
        raise EvalError(f"gt_modality must be union/visual/audio, got {gt_modality!r}")
    predictions = load_predictions(pred_file)
    annotations = load_annotations(gt_file)
    gt_ids = {a.file_id for a in annotations}
    preds_by_id: dict[str, list[ScoredSegment]] = {}
    for record in predictions:
        if record.video_id not in gt_ids:
            raise EvalError(f"prediction for unknown video id {record.video_id!r}")
        preds_by_id.setdefault(record.video_id, []).extend(record.segments)

    cases: dict[str, EvalCase] = {}
    diagnostics = []
    for ann in annotations:
        if gt_modality == "union":
            gts = merge_segments(ann.visual_fake_periods + ann.audio_fake_periods)
        elif gt_modality == "visual":
            gts = merge_segments(ann.visual_fake_periods)
        else:
            gts = merge_segments(ann.audio_fake_periods)
        preds = preds_by_id.get(ann.file_id, [])
        entry = {
            "video_id": ann.file_id,
            "num_predictions": len(preds),
            "num_ground_truth": len(gts),
        }
        if ann.file_id not in preds_by_id:
            entry["note"] = "no predictions for this video"
        diagnostics.append(entry)
        cases[ann.file_id] = (preds, gts)

    report = EvalReport(
        ap_at={t: ap_at_tiou(cases, t) for t in ap_thresholds},
        ar_at={k: ar_at_k(cases, k) for k in ar_budgets},
        per_video_diagnostics=diagnostics,
    )
    return report
