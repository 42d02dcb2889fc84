"""Evaluation measures: token-level EM/BitError, box AP/F1, detection scores.

Token localization is scored on predicted-vs-gold index sets. EM at
threshold 1.0 demands set equality; the relaxed variants accept token-set
IoU >= 0.5 / 0.7. BitError is the fraction of tokens whose binary
classification is wrong. Box localization uses corpus-wide greedy matching
at an IoU threshold with all-point interpolated average precision.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict
from typing import Mapping, Sequence

import numpy as np

from . import boxkernels
from .records import BoundingBox, DatasetRecord, ValidationError


@dataclass(frozen=True)
class TokenPredictionSet:
    """Token indices predicted sarcastic within an n-token document."""

    positives: frozenset[int]
    n: int

    def __post_init__(self):
        object.__setattr__(self, "positives", frozenset(self.positives))
        if self.n < 0:
            raise ValidationError("n must be >= 0")
        bad = [i for i in self.positives if not (0 <= i < self.n)]
        if bad:
            raise ValidationError(f"token indices {sorted(bad)} outside [0, {self.n})")


@dataclass
class MetricReport:
    """All corpus-level scores; every value lies in [0, 1]."""

    em: float
    em50: float
    em70: float
    bit_error: float
    ap50: float
    ap60: float
    f1_50: float
    f1_60: float
    acc: float
    precision: float
    f1: float

    def to_dict(self) -> dict[str, float]:
        return asdict(self)


def token_set_iou(pred: TokenPredictionSet, gold: TokenPredictionSet) -> float:
    """Set IoU of positive indices; 1.0 when both sets are empty."""
    union = pred.positives | gold.positives
    if not union:
        return 1.0
    return len(pred.positives & gold.positives) / len(union)


def exact_match_at(
    pred: TokenPredictionSet, gold: TokenPredictionSet, threshold: float
) -> bool:
    """Whether a prediction matches gold at the given overlap threshold.

    Threshold 1.0 requires exact set equality; lower thresholds accept
    token-set IoU >= threshold.
    """
    if pred.n != gold.n:
        raise ValidationError(f"document length mismatch: {pred.n} != {gold.n}")
    if threshold >= 1.0:
        return pred.positives == gold.positives
    return token_set_iou(pred, gold) >= threshold


def corpus_exact_match(
    pairs: Sequence[tuple[TokenPredictionSet, TokenPredictionSet]],
    threshold: float,
    strict: bool = False,
) -> float:
    """Fraction of matched samples at a threshold.

    By default only samples where the model predicted at least one token
    enter the denominator; ``strict`` counts every sample, with empty
    predictions against non-empty gold scoring as non-matches.
    """
    scored = [(p, g) for p, g in pairs if strict or p.positives]
    if not scored:
        return 0.0
    return sum(exact_match_at(p, g, threshold) for p, g in scored) / len(scored)


def bit_error(pred: TokenPredictionSet, gold: TokenPredictionSet) -> float:
    """Fraction of tokens whose sarcastic/non-sarcastic label is wrong."""
    if pred.n != gold.n:
        raise ValidationError(f"document length mismatch: {pred.n} != {gold.n}")
    if pred.n == 0:
        raise ValidationError("bit error undefined for empty documents")
    return len(pred.positives ^ gold.positives) / pred.n


def corpus_bit_error(
    pairs: Sequence[tuple[TokenPredictionSet, TokenPredictionSet]]
) -> float:
    if not pairs:
        return 0.0
    return sum(bit_error(p, g) for p, g in pairs) / len(pairs)


# --------------------------------------------------------------------------
# Box metrics
# --------------------------------------------------------------------------

ScoredBoxes = Mapping[str, Sequence[tuple[BoundingBox, float]]]
GoldBoxes = Mapping[str, Sequence[BoundingBox]]


def _as_xyxy(boxes: Sequence[BoundingBox]) -> np.ndarray:
    return np.asarray([b.to_xyxy() for b in boxes], dtype=np.float64).reshape(-1, 4)


def _greedy_match(
    preds: ScoredBoxes, golds: GoldBoxes, iou_threshold: float
) -> tuple[list[bool], int]:
    """Corpus-wide greedy matching by descending score.

    Each prediction claims its highest-IoU unmatched gold in the same image
    when that IoU reaches the threshold (TP), otherwise it is a FP. Returns
    TP flags in score order plus the gold count.
    """
    iou_by_image = {
        sid: boxkernels.pairwise_iou(
            _as_xyxy([b for b, _ in preds.get(sid, ())]), _as_xyxy(gold)
        )
        for sid, gold in golds.items()
    }
    flat = []
    for sid, scored in preds.items():
        for k, (_, score) in enumerate(scored):
            flat.append((-float(score), str(sid), k))
    flat.sort()
    matched: dict[str, set[int]] = {sid: set() for sid in golds}
    tp_flags: list[bool] = []
    for neg_score, sid, k in flat:
        iou = iou_by_image.get(sid)
        hit = False
        if iou is not None and iou.shape[1]:
            row = iou[k]
            free = [j for j in range(row.shape[0]) if j not in matched[sid]]
            if free:
                best = max(free, key=lambda j: (row[j], -j))
                if row[best] >= iou_threshold:
                    matched[sid].add(best)
                    hit = True
        tp_flags.append(hit)
    n_gold = sum(len(g) for g in golds.values())
    return tp_flags, n_gold


def average_precision(
    preds: ScoredBoxes, golds: GoldBoxes, iou_threshold: float
) -> float:
    """All-point interpolated AP of scored boxes at an IoU threshold."""
    tp_flags, n_gold = _greedy_match(preds, golds, iou_threshold)
    if n_gold == 0:
        raise ValidationError("average precision undefined without gold boxes")
    if not tp_flags:
        return 0.0
    tp = np.cumsum(np.asarray(tp_flags, dtype=np.float64))
    fp = np.cumsum(~np.asarray(tp_flags, dtype=bool))
    recall = tp / n_gold
    precision = tp / (tp + fp)
    # precision envelope, then sum over recall increments
    mrec = np.concatenate(([0.0], recall, [recall[-1]]))
    mpre = np.concatenate(([0.0], precision, [0.0]))
    for i in range(mpre.size - 2, -1, -1):
        mpre[i] = max(mpre[i], mpre[i + 1])
    idx = np.where(mrec[1:] != mrec[:-1])[0]
    return float(np.sum((mrec[idx + 1] - mrec[idx]) * mpre[idx + 1]))


def f1_at_iou(
    preds: ScoredBoxes,
    golds: GoldBoxes,
    iou_threshold: float,
    conf_threshold: float = 0.5,
) -> float:
    """F1 of confidence-filtered boxes greedily matched at an IoU threshold."""
    kept = {
        sid: [(b, s) for b, s in scored if s >= conf_threshold]
        for sid, scored in preds.items()
    }
    tp_flags, n_gold = _greedy_match(kept, golds, iou_threshold)
    tp = sum(tp_flags)
    fp = len(tp_flags) - tp
    fn = n_gold - tp
    if tp == 0:
        return 0.0
    prec = tp / (tp + fp)
    rec = tp / (tp + fn)
    return 2 * prec * rec / (prec + rec)


# --------------------------------------------------------------------------
# Detection metrics
# --------------------------------------------------------------------------

def detection_metrics(
    probs: Sequence[float], labels: Sequence[bool], cutoff: float = 0.5
) -> tuple[float, float, float]:
    """(accuracy, precision, F1) of thresholded probabilities.

    Precision and F1 are 0 by convention when undefined.
    """
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=bool)
    if probs.shape != labels.shape or probs.size == 0:
        raise ValidationError("probs and labels must be equal-length and non-empty")
    pred = probs >= cutoff
    tp = int(np.sum(pred & labels))
    fp = int(np.sum(pred & ~labels))
    fn = int(np.sum(~pred & labels))
    acc = float(np.mean(pred == labels))
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return acc, precision, f1


# --------------------------------------------------------------------------
# Corpus assembly
# --------------------------------------------------------------------------

@dataclass
class SamplePrediction:
    """Model outputs for one record, in evaluation form."""

    id: str
    sarcasm_prob: float
    token_probs: list[float] = field(default_factory=list)
    boxes: list[tuple[BoundingBox, float]] = field(default_factory=list)

    def token_set(self, cutoff: float = 0.5) -> TokenPredictionSet:
        pos = frozenset(i for i, p in enumerate(self.token_probs) if p >= cutoff)
        return TokenPredictionSet(pos, len(self.token_probs))


def evaluate_corpus(
    predictions: Mapping[str, SamplePrediction],
    records: Sequence[DatasetRecord],
    *,
    token_cutoff: float = 0.5,
    detect_cutoff: float = 0.5,
    f1_conf_threshold: float = 0.5,
    em_strict: bool = False,
) -> MetricReport:
    """Score predictions against gold records.

    Detection metrics cover every record; token and box localization are
    scored on records with gold clues (predictions elsewhere still count as
    box false positives).
    """
    missing = [r.id for r in records if r.id not in predictions]
    if missing:
        raise ValidationError(f"missing predictions for records {missing[:5]}")

    probs = [predictions[r.id].sarcasm_prob for r in records]
    labels = [r.sarcastic for r in records]
    acc, precision, f1 = detection_metrics(probs, labels, cutoff=detect_cutoff)

    token_pairs = []
    for r in records:
        if r.gold is None or not r.gold.spans:
            continue
        probs = predictions[r.id].token_probs
        # predictions cover the (possibly truncated) encoded document; a
        # missing token prediction counts as all-zeros over the full text
        n_eval = len(probs) if probs else r.n_tokens
        pred = TokenPredictionSet(
            frozenset(i for i, p in enumerate(probs) if p >= token_cutoff), n_eval
        )
        gold = TokenPredictionSet(
            frozenset(i for i in r.gold_token_indices() if i < n_eval), n_eval
        )
        token_pairs.append((pred, gold))

    em = corpus_exact_match(token_pairs, 1.0, strict=em_strict) if token_pairs else 0.0
    em50 = corpus_exact_match(token_pairs, 0.5, strict=em_strict) if token_pairs else 0.0
    em70 = corpus_exact_match(token_pairs, 0.7, strict=em_strict) if token_pairs else 0.0
    bits = corpus_bit_error(token_pairs) if token_pairs else 0.0

    golds = {r.id: list(r.gold.boxes) for r in records if r.gold is not None and r.gold.boxes}
    scored = {r.id: predictions[r.id].boxes for r in records}
    if golds:
        ap50 = average_precision(scored, golds, 0.5)
        ap60 = average_precision(scored, golds, 0.6)
        f1_50 = f1_at_iou(scored, golds, 0.5, f1_conf_threshold)
        f1_60 = f1_at_iou(scored, golds, 0.6, f1_conf_threshold)
    else:
        ap50 = ap60 = f1_50 = f1_60 = 0.0

    return MetricReport(
        em=em,
        em50=em50,
        em70=em70,
        bit_error=bits,
        ap50=ap50,
        ap60=ap60,
        f1_50=f1_50,
        f1_60=f1_60,
        acc=acc,
        precision=precision,
        f1=f1,
    )
