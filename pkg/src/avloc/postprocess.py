"""Decode boundary maps into scored proposals, suppress near-duplicates with
Gaussian soft-NMS, fuse the modality tracks, and apply the full-video rule
set that appends a whole-clip segment and fixes the video label.

All operations are pure and deterministic: proposals are ordered by
confidence with (start, end) tiebreaks, so identical inputs produce
bit-identical outputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .core import Modality, PipelineConfig, ScoredSegment, Segment, ValidationError, iou
from .heads import BoundaryMap, VideoDecision, VideoLabel


def _order_key(p: ScoredSegment):
    return (-p.confidence, p.segment.start, p.segment.end, p.modality.value)


@dataclass(frozen=True)
class ProposalList:
    """Scored candidate segments for one video, confidence-descending."""

    video_id: str
    duration: float
    proposals: tuple[ScoredSegment, ...] = ()

    def __post_init__(self) -> None:
        if self.duration <= 0:
            raise ValidationError(f"{self.video_id}: duration must be positive")
        ordered = tuple(sorted(self.proposals, key=_order_key))
        for p in ordered:
            if p.segment.start < 0 or p.segment.end > self.duration + 1e-9:
                raise ValidationError(
                    f"{self.video_id}: proposal [{p.segment.start}, {p.segment.end}] "
                    f"outside [0, {self.duration}]"
                )
        object.__setattr__(self, "proposals", ordered)

    def __len__(self) -> int:
        return len(self.proposals)


def decode_proposals(
    bmap: BoundaryMap, duration: float, top_k: int, video_id: str = ""
) -> ProposalList:
    """Convert the top_k valid cells into second-space proposals.

    Cell (s, d) maps to [s, s+d] * duration / T seconds. Ties in confidence
    break toward earlier starts, then shorter durations.
    """
    t = bmap.num_frames
    dt = duration / t
    entries = []
    rows, cols = bmap.valid.nonzero()
    for s, j in zip(rows.tolist(), cols.tolist()):
        d = j + 1
        entries.append((-bmap.scores[s, j], s, d))
    entries.sort()
    proposals = []
    for neg_score, s, d in entries[: max(0, int(top_k))]:
        proposals.append(
            ScoredSegment(
                segment=Segment(s * dt, (s + d) * dt),
                confidence=-neg_score,
                modality=bmap.modality,
            )
        )
    return ProposalList(video_id=video_id, duration=duration, proposals=tuple(proposals))


def soft_nms(plist: ProposalList, alpha: float, t1: float, t2: float) -> ProposalList:
    """Gaussian soft non-maximum suppression.

    Repeatedly take the highest-scoring remaining proposal; every other
    remaining proposal p with IoU(p, selected) > t1 is rescored by
    exp(-IoU^2 / alpha). Proposals whose final score falls below t2 are
    dropped. Segment endpoints never change and no score ever increases.
    """
    if not alpha > 0:
        raise ValidationError(f"alpha must be positive, got {alpha}")
    if not (0.0 <= t1 < t2 <= 1.0):
        raise ValidationError(f"need 0 <= t1 < t2 <= 1, got t1={t1}, t2={t2}")
    remaining = [(p.segment, p.confidence, p.modality) for p in plist.proposals]
    kept: list[tuple[Segment, float, Modality]] = []
    while remaining:
        best = min(
            range(len(remaining)),
            key=lambda i: (-remaining[i][1], remaining[i][0].start, remaining[i][0].end),
        )
        seg, score, modality = remaining.pop(best)
        kept.append((seg, score, modality))
        rescored = []
        for other_seg, other_score, other_mod in remaining:
            overlap = iou(seg, other_seg)
            if overlap > t1:
                other_score = other_score * math.exp(-(overlap * overlap) / alpha)
            rescored.append((other_seg, other_score, other_mod))
        remaining = rescored
    survivors = tuple(
        ScoredSegment(segment=seg, confidence=score, modality=mod)
        for seg, score, mod in kept
        if score >= t2
    )
    return ProposalList(video_id=plist.video_id, duration=plist.duration, proposals=survivors)


def fuse_modalities(audio: ProposalList, visual: ProposalList) -> ProposalList:
    """Concatenate both tracks, drop exact duplicates, retag as fused.

    Duplicates agree on start, end and confidence within 1e-9; one copy is
    kept. Output is confidence-descending with (start, end) tiebreaks.
    """
    if audio.video_id != visual.video_id:
        raise ValidationError(
            f"cannot fuse different videos: {audio.video_id!r} vs {visual.video_id!r}"
        )
    if abs(audio.duration - visual.duration) > 1e-9:
        raise ValidationError(
            f"{audio.video_id}: durations differ: {audio.duration} vs {visual.duration}"
        )
    combined = list(audio.proposals) + list(visual.proposals)
    unique: list[ScoredSegment] = []
    for p in combined:
        duplicate = any(
            abs(p.segment.start - q.segment.start) <= 1e-9
            and abs(p.segment.end - q.segment.end) <= 1e-9
            and abs(p.confidence - q.confidence) <= 1e-9
            for q in unique
        )
        if not duplicate:
            unique.append(p)
    fused = tuple(
        ScoredSegment(segment=p.segment, confidence=p.confidence, modality=Modality.FUSED)
        for p in unique
    )
    return ProposalList(video_id=audio.video_id, duration=audio.duration, proposals=fused)


def erf_decision(
    plist: ProposalList, duration: float, config: PipelineConfig
) -> tuple[VideoDecision, ProposalList]:
    """Whole-video rule set driven by the maximum segment confidence.

    Let c* be the highest proposal confidence (0 for an empty list). When
    c* does not exceed the fake threshold the video is labeled real and a
    full-length segment at the real-append confidence is added; otherwise
    it is labeled fake and a full-length segment at the fake-append
    confidence is added. All original proposals are retained.
    """
    c_star = plist.proposals[0].confidence if plist.proposals else 0.0
    if c_star > config.erf_fake_threshold:
        label = VideoLabel.FAKE
        append_conf = config.erf_fake_append_conf
    else:
        label = VideoLabel.REAL
        append_conf = config.erf_real_append_conf
    appended = ScoredSegment(
        segment=Segment(0.0, duration), confidence=append_conf, modality=Modality.FUSED
    )
    out = ProposalList(
        video_id=plist.video_id,
        duration=plist.duration,
        proposals=plist.proposals + (appended,),
    )
    return VideoDecision(label=label, video_confidence=c_star), out
