"""Brute-force reference implementations used as independent oracles.

These deliberately avoid the package's metric code paths: plain Python
loops and scalar arithmetic only, sharing nothing with the implementations
they check except the protocol definition (greedy matching in confidence
order with (video id, start, end) tiebreaks, interpolated-precision AP,
recall averaged over a tIoU grid).
"""

from __future__ import annotations


def interval_iou(a_start, a_end, b_start, b_end) -> float:
    inter = min(a_end, b_end) - max(a_start, b_start)
    if inter <= 0:
        return 0.0
    union = (a_end - a_start) + (b_end - b_start) - inter
    return inter / union


def sort_pred_dicts(preds):
    return sorted(preds, key=lambda p: (-p["conf"], p["start"], p["end"]))


def greedy_match_flags(preds, gts, tiou):
    """True/False per prediction (already sorted), one-to-one on gts."""
    free = list(range(len(gts)))
    flags = []
    for p in preds:
        best, best_iou = None, 0.0
        for j in free:
            ov = interval_iou(p["start"], p["end"], gts[j][0], gts[j][1])
            if ov >= tiou and ov > best_iou:
                best, best_iou = j, ov
        if best is not None:
            free.remove(best)
        flags.append(best is not None)
    return flags


def max_matches_exhaustive(preds, gts, tiou, tol=1e-12):
    """Max true-positive count over every greedy-consistent assignment.

    Predictions are processed in order; each must take a highest-IoU
    unmatched ground truth (ties within tol explored exhaustively).
    """

    def recurse(i, free):
        if i == len(preds):
            return 0
        p = preds[i]
        ious = [
            (interval_iou(p["start"], p["end"], gts[j][0], gts[j][1]), j) for j in free
        ]
        eligible = [(ov, j) for ov, j in ious if ov >= tiou]
        if not eligible:
            return recurse(i + 1, free)
        best_iou = max(ov for ov, _ in eligible)
        best = 0
        for ov, j in eligible:
            if ov >= best_iou - tol:
                best = max(best, 1 + recurse(i + 1, free - {j}))
        return best

    return recurse(0, frozenset(range(len(gts))))


def oracle_ap(cases, tiou) -> float:
    """cases: {video_id: (pred dicts, gt (start, end) pairs)}."""
    total_gts = sum(len(gts) for _, gts in cases.values())
    assert total_gts > 0
    pooled = []
    for vid, (preds, gts) in cases.items():
        ordered = sort_pred_dicts(preds)
        for p, flag in zip(ordered, greedy_match_flags(ordered, gts, tiou)):
            pooled.append((p["conf"], vid, p["start"], p["end"], flag))
    pooled.sort(key=lambda r: (-r[0], r[1], r[2], r[3]))
    tp = 0
    points = []  # (recall, precision) at each true positive
    for rank, row in enumerate(pooled, start=1):
        if row[4]:
            tp += 1
            points.append((tp / total_gts, tp / rank))
    ap = 0.0
    best_right = 0.0
    for idx in range(len(points) - 1, -1, -1):
        recall, precision = points[idx]
        best_right = max(best_right, precision)
        prev_recall = points[idx - 1][0] if idx > 0 else 0.0
        ap += (recall - prev_recall) * best_right
    return ap


def oracle_ar(cases, k, tiou_grid) -> float:
    total_gts = sum(len(gts) for _, gts in cases.values())
    assert total_gts > 0
    recalls = []
    for tiou in tiou_grid:
        matched = 0
        for _, (preds, gts) in cases.items():
            top = sort_pred_dicts(preds)[:k]
            matched += sum(greedy_match_flags(top, gts, tiou))
        recalls.append(matched / total_gts)
    return sum(recalls) / len(recalls)


def oracle_gt_iou_map(periods, duration, num_frames, d_max):
    """Per-cell scan: max IoU of cell (s, d) against every period."""
    dt = duration / num_frames
    out = [[0.0] * d_max for _ in range(num_frames)]
    for s in range(num_frames):
        for d in range(1, d_max + 1):
            if s + d > num_frames:
                continue
            best = 0.0
            for p in periods:
                best = max(best, interval_iou(s * dt, (s + d) * dt, p.start, p.end))
            out[s][d - 1] = best
    return out
