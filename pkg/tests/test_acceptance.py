"""Acceptance suite: one test per numbered criterion, at stated tolerances.

Run with ``pytest tests/test_acceptance.py -v -s`` to get one printed
pass/fail line per criterion (the -v test names carry the criterion number).
Desk-scale quantitative checks plus exact property checks; corpus-scale
headline numbers are out of scope by design.
"""

import itertools
import math
import time

import numpy as np
import pytest
import torch

from docmsu.agreement import confidence_scores, flag_challenging, text_iou
from docmsu.config import ModelConfig
from docmsu.data import gen_fixtures, split_dataset
from docmsu.fusion import batched_fuse, fuse
from docmsu.image_encoder import WindowStack
from docmsu.metrics import (
    TokenPredictionSet,
    average_precision,
    bit_error,
    corpus_exact_match,
    exact_match_at,
)
from docmsu.model import SarcasmModel
from docmsu.records import AnnotationSet, BoundingBox, SplitConfig, TokenSpan
from docmsu.text_encoder import DocumentMatrix, batch_square, make_backend
from docmsu.training import evaluate_records, train

from test_heads_losses import run_gradient_check


def report(n, message):
    print(f"[PASS] criterion {n}: {message}")


# -------------------------------------------------------------------------
# 1. Metric oracle equivalence (exact, < 5 s)
# -------------------------------------------------------------------------

def _brute_match(pred: set, gold: set, threshold: float) -> bool:
    if threshold >= 1.0:
        return pred == gold
    union = pred | gold
    if not union:
        return True
    return len(pred & gold) / len(union) >= threshold


def _brute_bit_error(pred: set, gold: set, n: int) -> float:
    return sum((i in pred) != (i in gold) for i in range(n)) / n


def test_criterion_01_metric_oracle_equivalence():
    start = time.perf_counter()
    rng = np.random.default_rng(1001)
    pairs = []
    raw = []
    for _ in range(200):
        n = int(rng.integers(1, 31))
        gold: set[int] = set()
        for _ in range(int(rng.integers(0, 4))):
            s = int(rng.integers(0, n))
            e = min(n, s + int(rng.integers(1, 5)))
            gold.update(range(s, e))
        pred = {int(i) for i in rng.integers(0, n, size=int(rng.integers(0, n + 1)))}
        pairs.append((TokenPredictionSet(frozenset(pred), n), TokenPredictionSet(frozenset(gold), n)))
        raw.append((pred, gold, n))

    for (p, g), (pred, gold, n) in zip(pairs, raw):
        for thr in (0.5, 0.7, 1.0):
            assert exact_match_at(p, g, thr) == _brute_match(pred, gold, thr)
        assert bit_error(p, g) == _brute_bit_error(pred, gold, n)

    for thr in (0.5, 0.7, 1.0):
        for strict in (False, True):
            scored = [(p, g, x) for (p, g), x in zip(pairs, raw) if strict or p.positives]
            expected = sum(_brute_match(x[0], x[1], thr) for _, _, x in scored) / len(scored)
            assert corpus_exact_match(pairs, thr, strict=strict) == expected

    elapsed = time.perf_counter() - start
    assert elapsed < 5.0
    report(1, f"200 samples match the brute-force oracle exactly in {elapsed:.2f}s")


# -------------------------------------------------------------------------
# 2. EM ordering over 1000 randomized corpora
# -------------------------------------------------------------------------

def test_criterion_02_em_ordering():
    rng = np.random.default_rng(2002)
    for _ in range(1000):
        pairs = []
        for _ in range(int(rng.integers(3, 20))):
            n = int(rng.integers(1, 25))
            gold = {int(i) for i in rng.integers(0, n, size=int(rng.integers(0, n + 1)))}
            pred = {int(i) for i in rng.integers(0, n, size=int(rng.integers(0, n + 1)))}
            pairs.append(
                (TokenPredictionSet(frozenset(pred), n), TokenPredictionSet(frozenset(gold), n))
            )
        em = corpus_exact_match(pairs, 1.0)
        em70 = corpus_exact_match(pairs, 0.7)
        em50 = corpus_exact_match(pairs, 0.5)
        assert em <= em70 <= em50
    report(2, "EM <= EM70 <= EM50 held on 1000 randomized corpora")


# -------------------------------------------------------------------------
# 3. Interval-IoU spot values
# -------------------------------------------------------------------------

def test_criterion_03_interval_iou_spot_values():
    got = text_iou(TokenSpan(2, 5), TokenSpan(4, 8))
    assert abs(got - 1 / 6) < 1e-12
    disjoint = text_iou(TokenSpan(1, 3), TokenSpan(5, 9))
    assert disjoint < 0
    assert abs(disjoint - (-0.25)) < 1e-12
    report(3, f"span IoU [2,5)x[4,8) = {got:.12f}; disjoint raw = {disjoint}")


# -------------------------------------------------------------------------
# 4. Scoring determinism, selection, and challenging flags
# -------------------------------------------------------------------------

def test_criterion_04_confidence_scoring_rules():
    box = BoundingBox(0, 0, 10, 10)
    identical = [
        AnnotationSet(aid, (TokenSpan(0, 3),), (box,)) for aid in ("a1", "a2", "a3")
    ]
    base = confidence_scores(identical, sample_id="s")
    assert all(abs(v - 4.0) < 1e-12 for v in base.per_annotator.values())

    varied = [
        AnnotationSet("a1", (TokenSpan(0, 3),), (box,)),
        AnnotationSet("a2", (TokenSpan(1, 5),), (BoundingBox(2, 2, 9, 9),)),
        AnnotationSet("a3", (TokenSpan(2, 6),), (BoundingBox(5, 5, 8, 8),)),
    ]
    reference = confidence_scores(varied)
    for perm in itertools.permutations(varied):
        got = confidence_scores(list(perm))
        assert got.per_annotator == reference.per_annotator
        assert got.best == reference.best

    for n in (1, 20, 100, 101):
        reports = []
        for i in range(n):
            rep = confidence_scores(identical, sample_id=f"s{i:04d}")
            reports.append(rep.__class__(**{**rep.__dict__, "sample_confidence": float(i)}))
        flagged = flag_challenging(reports, 0.05)
        assert sum(r.challenging for r in flagged) == math.ceil(0.05 * n)
    report(4, "permutation-invariant confidences; identical triple scores 4.0; ceil(0.05N) flagged")


# -------------------------------------------------------------------------
# 5. End-to-end shape pipeline (< 1 s forward)
# -------------------------------------------------------------------------

def test_criterion_05_shape_pipeline():
    cfg = ModelConfig(preset="tiny")  # L=8, d=96
    assert cfg.image_size == 224
    torch.manual_seed(0)
    model = SarcasmModel(cfg).eval()
    backend = make_backend("hash", cfg.d_lm)
    emb = backend.encode([f"w{i}" for i in range(63)])

    start = time.perf_counter()
    with torch.no_grad():
        padded = torch.zeros(1, 64, cfg.d_lm)
        padded[0, :63] = emb.values
        doc, mask = batch_square(model.projector(padded), [63], cfg.L)
        windows, grid, pad = model.image_encoder(torch.rand(1, 3, 224, 224))
        assert windows.shape == (1, 49, 8, 8, 96)
        assert grid == (7, 7) and pad == (0, 0)
        fused = batched_fuse(doc, windows)
        assert fused.shape == (1, 49, 8, 8, 96)
        feats = model.backbone(fused, grid)
    elapsed = time.perf_counter() - start

    assert tuple(feats.stages[0].shape) == (1, 56, 56, 96)
    assert tuple(feats.stages[1].shape) == (1, 28, 28, 192)
    assert tuple(feats.stages[2].shape) == (1, 14, 14, 384)
    assert tuple(feats.stages[3].shape) == (1, 7, 7, 768)
    assert elapsed < 1.0
    report(5, f"224 -> 56x56 grid -> 49 windows -> stage widths 96/192/384/768 in {elapsed:.2f}s")


# -------------------------------------------------------------------------
# 6. Gradient correctness (1e-4 relative, 10 probes per loss)
# -------------------------------------------------------------------------

@pytest.mark.parametrize("loss_name", ["detection", "token", "box"])
def test_criterion_06_gradient_correctness(loss_name, tmp_path):
    cfg = ModelConfig.test_preset()
    rel_errs = run_gradient_check(cfg, tmp_path, loss_name, n_probes=10, seed=123)
    worst = max(rel_errs)
    assert worst < 1e-4
    report(6, f"{loss_name} loss: 10 finite-difference probes, worst relative error {worst:.2e}")


# -------------------------------------------------------------------------
# 7. Fusion additive identities (bitwise)
# -------------------------------------------------------------------------

def test_criterion_07_fusion_identities():
    torch.manual_seed(7)
    L, d, m = 8, 96, 49
    windows = WindowStack(windows=torch.randn(m, L, L, d), grid=(7, 7), pad=(0, 0))
    zero_doc = DocumentMatrix(torch.zeros(L, L, d), torch.zeros(L, L, dtype=torch.bool), L, d)
    fused = fuse(zero_doc, windows)
    assert torch.equal(fused.windows, windows.windows)

    doc = DocumentMatrix(torch.randn(L, L, d), torch.ones(L, L, dtype=torch.bool), L, d)
    zero_windows = WindowStack(windows=torch.zeros(m, L, L, d), grid=(7, 7), pad=(0, 0))
    fused = fuse(doc, zero_windows)
    for k in range(m):
        assert torch.equal(fused.windows[k], doc.values)
    report(7, "zero-document and zero-window fusions are bitwise identities")


# -------------------------------------------------------------------------
# 8. Overfit sanity (loss < 0.05, accuracy 100%, < 2 min)
# -------------------------------------------------------------------------

def test_criterion_08_overfit_sanity(tmp_path):
    cfg = ModelConfig.test_preset()
    records = gen_fixtures(8, seed=3, image_size=cfg.image_size, out_dir=tmp_path)
    start = time.perf_counter()
    _, result = train(
        records,
        cfg,
        "detect",
        tmp_path,
        epochs=10**9,
        batch_size=8,
        max_steps=500,
        lr=0.001,
        seed=0,
    )
    elapsed = time.perf_counter() - start
    assert result.steps == 500
    assert result.final_loss < 0.05
    assert result.train_accuracy == 1.0
    assert elapsed < 120.0
    report(8, f"8 samples, 500 steps: loss {result.final_loss:.4f}, accuracy 100% in {elapsed:.0f}s")


# -------------------------------------------------------------------------
# 9. AP boundary behavior at IoU exactly 0.5
# -------------------------------------------------------------------------

def test_criterion_09_ap_boundary():
    golds = {"img": [BoundingBox(0, 0, 10, 10)]}
    preds = {"img": [(BoundingBox(0, 0, 10, 5), 0.9)]}
    ap50 = average_precision(preds, golds, 0.5)
    ap60 = average_precision(preds, golds, 0.6)
    assert ap50 == 1.0
    assert ap60 == 0.0
    report(9, "IoU-exactly-0.5 pair: AP50 = 1.0, AP60 = 0.0")


# -------------------------------------------------------------------------
# 10. Modality ablation direction on a cross-modal corpus
# -------------------------------------------------------------------------

def test_criterion_10_modality_ablation(tmp_path):
    records = gen_fixtures(500, seed=21, image_size=32, out_dir=tmp_path, signal="cross_modal_xor")
    train_recs, val_recs, _ = split_dataset(records, SplitConfig((0.7, 0.2, 0.1), seed=0))
    accuracies = {}
    for modality in ("both", "text", "image"):
        cfg = ModelConfig.test_preset(modality=modality)
        model, _ = train(
            train_recs, cfg, "detect", tmp_path, epochs=40, batch_size=32, seed=1
        )
        rep, _ = evaluate_records(model, val_recs, tmp_path)
        accuracies[modality] = rep.acc
    fused = accuracies["both"]
    assert fused >= accuracies["text"] + 0.05
    assert fused >= accuracies["image"] + 0.05
    report(
        10,
        "val accuracy fused {:.2f} vs text {:.2f} / image {:.2f} (margin >= 5 points)".format(
            fused, accuracies["text"], accuracies["image"]
        ),
    )
