"""Inter-annotator similarity scoring and confidence-based selection.

The interval IoU between two token spans is
``(min(ends) - max(starts)) / (max(ends) - min(starts))`` and goes negative
for disjoint spans; aggregation clamps it at 0 so agreement scores stay in
[0, 1] per modality. An annotation pair's total similarity is the clamped
text component plus the box-IoU component, so perfect agreement scores 2.0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Sequence

from .records import AnnotationSet, BoundingBox, TokenSpan, ValidationError


@dataclass(frozen=True)
class SimilarityScore:
    """Aggregate agreement between two annotations: per-modality and total."""

    tiou: float
    viou: float
    total: float


@dataclass(frozen=True)
class ConfidenceReport:
    """Per-annotator confidences for one triple-annotated sample."""

    sample_id: str
    per_annotator: dict[str, float]
    best: str
    sample_confidence: float
    challenging: bool = False


def text_iou(a: TokenSpan, b: TokenSpan) -> float:
    """Interval IoU of two spans; negative when they are disjoint."""
    return (min(a.end, b.end) - max(a.start, b.start)) / (
        max(a.end, b.end) - min(a.start, b.start)
    )


def visual_iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection-over-union of two boxes; 0 when disjoint."""
    ax1, ay1, ax2, ay2 = a.to_xyxy()
    bx1, by1, bx2, by2 = b.to_xyxy()
    iw = min(ax2, bx2) - max(ax1, bx1)
    ih = min(ay2, by2) - max(ay1, by1)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)


def _greedy_component(n_a: int, n_b: int, pair_score) -> float:
    """Mean matched score over max(n_a, n_b) targets, greedy one-to-one.

    Pairs are taken in descending score order (ties broken by index);
    unmatched targets contribute 0. With no targets on either side the
    modality trivially agrees and scores 1.
    """
    if n_a == 0 and n_b == 0:
        return 1.0
    if n_a == 0 or n_b == 0:
        return 0.0
    pairs = sorted(
        ((pair_score(i, j), i, j) for i in range(n_a) for j in range(n_b)),
        key=lambda t: (-t[0], t[1], t[2]),
    )
    used_a: set[int] = set()
    used_b: set[int] = set()
    total = 0.0
    for score, i, j in pairs:
        if i in used_a or j in used_b:
            continue
        used_a.add(i)
        used_b.add(j)
        total += score
    return total / max(n_a, n_b)


def annotation_similarity(a: AnnotationSet, b: AnnotationSet) -> SimilarityScore:
    """Greedy one-to-one agreement between two non-empty annotations."""
    if a.is_empty or b.is_empty:
        raise ValidationError("similarity is undefined for empty annotations")
    tiou = _greedy_component(
        len(a.spans),
        len(b.spans),
        lambda i, j: max(0.0, text_iou(a.spans[i], b.spans[j])),
    )
    viou = _greedy_component(
        len(a.boxes),
        len(b.boxes),
        lambda i, j: visual_iou(a.boxes[i], b.boxes[j]),
    )
    return SimilarityScore(tiou=tiou, viou=viou, total=tiou + viou)


def confidence_scores(
    annots: Sequence[AnnotationSet], sample_id: str = ""
) -> ConfidenceReport:
    """Score a triple of annotations for one sample.

    Each annotator's confidence is the sum of its pairwise total similarities
    with the other two; the sample confidence is the sum over the three
    pairs. The best annotator attains the maximum confidence, ties broken by
    lowest annotator id.
    """
    if len(annots) != 3:
        raise ValidationError(f"expected exactly 3 annotations, got {len(annots)}")
    ids = [a.annotator_id for a in annots]
    if len(set(ids)) != 3:
        raise ValidationError(f"annotator ids must be distinct, got {ids}")
    per = {a.annotator_id: 0.0 for a in annots}
    sample_total = 0.0
    for i in range(3):
        for j in range(i + 1, 3):
            total = annotation_similarity(annots[i], annots[j]).total
            per[annots[i].annotator_id] += total
            per[annots[j].annotator_id] += total
            sample_total += total
    best = min(per, key=lambda k: (-per[k], k))
    return ConfidenceReport(
        sample_id=sample_id,
        per_annotator=per,
        best=best,
        sample_confidence=sample_total,
    )


def flag_challenging(
    reports: Sequence[ConfidenceReport], fraction: float = 0.05
) -> list[ConfidenceReport]:
    """Flag the lowest-confidence ceil(fraction*N) samples as challenging.

    Ties are broken by sample id. Returns new reports in the input order.
    """
    if not reports:
        raise ValidationError("no reports to flag")
    if not (0.0 < fraction < 1.0):
        raise ValidationError(f"fraction must be in (0, 1), got {fraction}")
    k = math.ceil(fraction * len(reports))
    ranked = sorted(reports, key=lambda r: (r.sample_confidence, r.sample_id))
    flagged_ids = {id(r) for r in ranked[:k]}
    return [replace(r, challenging=id(r) in flagged_ids) for r in reports]
