import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from docmsu.metrics import (
    SamplePrediction,
    TokenPredictionSet,
    average_precision,
    bit_error,
    corpus_exact_match,
    detection_metrics,
    evaluate_corpus,
    exact_match_at,
    f1_at_iou,
    token_set_iou,
)
from docmsu.records import BoundingBox, ValidationError


def tset(positives, n=20):
    return TokenPredictionSet(frozenset(positives), n)


class TestExactMatch:
    def test_equal_sets_match_everywhere(self):
        pred = tset({3, 4, 5})
        for thr in (0.5, 0.7, 1.0):
            assert exact_match_at(pred, tset({3, 4, 5}), thr)

    def test_partial_overlap(self):
        gold = tset({3, 4, 5, 6, 7})
        pred = tset({3, 4, 5})
        assert token_set_iou(pred, gold) == pytest.approx(3 / 5)
        assert exact_match_at(pred, gold, 0.5)
        assert not exact_match_at(pred, gold, 0.7)
        assert not exact_match_at(pred, gold, 1.0)

    def test_disjoint_never_matches(self):
        assert not exact_match_at(tset({1, 2}), tset({5, 6}), 0.5)

    def test_length_mismatch(self):
        with pytest.raises(ValidationError):
            exact_match_at(tset({1}, n=5), tset({1}, n=6), 0.5)

    def test_out_of_range_index(self):
        with pytest.raises(ValidationError):
            tset({25}, n=20)

    def test_corpus_denominator_skips_empty_predictions(self):
        pairs = [(tset(set()), tset({1})), (tset({1}), tset({1}))]
        assert corpus_exact_match(pairs, 1.0) == 1.0
        assert corpus_exact_match(pairs, 1.0, strict=True) == 0.5


class TestBitError:
    def test_two_of_twenty(self):
        # symmetric difference {0, 2} over 20 tokens
        assert bit_error(tset({0, 1}), tset({1, 2})) == pytest.approx(2 / 20)

    def test_identical_zero(self):
        assert bit_error(tset({1, 2}), tset({1, 2})) == 0.0

    def test_complement_one(self):
        n = 10
        gold = tset(set(range(5)), n)
        pred = tset(set(range(5, 10)), n)
        assert bit_error(pred, gold) == 1.0

    @settings(max_examples=100, deadline=None)
    @given(
        a=st.frozensets(st.integers(0, 14), max_size=15),
        b=st.frozensets(st.integers(0, 14), max_size=15),
    )
    def test_symmetry_and_zero_iff_equal(self, a, b):
        pa, pb = tset(a, 15), tset(b, 15)
        assert bit_error(pa, pb) == pytest.approx(bit_error(pb, pa))
        assert (bit_error(pa, pb) == 0.0) == (a == b)


def box(x, y, w, h):
    return BoundingBox(x, y, w, h)


class TestAveragePrecision:
    def test_boundary_iou_exactly_half(self):
        golds = {"img": [box(0, 0, 10, 10)]}
        preds = {"img": [(box(0, 0, 10, 5), 0.9)]}
        assert average_precision(preds, golds, 0.5) == 1.0
        assert average_precision(preds, golds, 0.6) == 0.0

    def test_perfect(self):
        golds = {"a": [box(0, 0, 10, 10)], "b": [box(5, 5, 4, 4)]}
        preds = {"a": [(box(0, 0, 10, 10), 0.9)], "b": [(box(5, 5, 4, 4), 0.8)]}
        assert average_precision(preds, golds, 0.5) == 1.0
        assert average_precision(preds, golds, 0.6) == 1.0

    def test_empty_predictions(self):
        golds = {"a": [box(0, 0, 10, 10)]}
        assert average_precision({}, golds, 0.5) == 0.0

    def test_no_gold_is_error(self):
        with pytest.raises(ValidationError):
            average_precision({"a": [(box(0, 0, 1, 1), 0.5)]}, {}, 0.5)

    def test_fp_before_tp_halves_ap(self):
        golds = {"a": [box(0, 0, 10, 10)]}
        preds = {"a": [(box(50, 50, 10, 10), 0.9), (box(0, 0, 10, 10), 0.8)]}
        # ranked FP then TP: precision at full recall is 1/2, envelope gives 0.5
        assert average_precision(preds, golds, 0.5) == pytest.approx(0.5)

    def test_threshold_monotonicity(self):
        rng = np.random.default_rng(11)
        preds, golds = _random_corpus(rng, n_images=20)
        ap50 = average_precision(preds, golds, 0.5)
        ap60 = average_precision(preds, golds, 0.6)
        assert ap60 <= ap50 + 1e-12

    def test_greedy_tp_count_matches_exhaustive(self):
        # oracle: maximum bipartite matching by permutation enumeration
        rng = np.random.default_rng(42)
        for _ in range(200):
            preds, golds = _random_corpus(rng, n_images=1, max_boxes=4)
            for thr in (0.5, 0.6):
                from docmsu.metrics import _greedy_match

                tp_flags, _ = _greedy_match(preds, golds, thr)
                got = sum(tp_flags)
                best = _optimal_tp(
                    [b for b, _ in preds.get("im0", ())],
                    list(golds.get("im0", ())),
                    thr,
                )
                assert got <= best
                assert got == best, "greedy TP count diverged from optimum"


def _random_corpus(rng, n_images=5, max_boxes=5):
    preds, golds = {}, {}
    for i in range(n_images):
        sid = f"im{i}"
        golds[sid] = [
            box(*rng.uniform(0, 50, 2), *rng.uniform(5, 30, 2))
            for _ in range(rng.integers(1, max_boxes + 1))
        ]
        preds[sid] = [
            (
                box(*rng.uniform(0, 50, 2), *rng.uniform(5, 30, 2)),
                float(rng.uniform(0.1, 1.0)),
            )
            for _ in range(rng.integers(0, max_boxes + 1))
        ]
        # jittered copies of some golds so matches exist
        for g in golds[sid][: rng.integers(0, len(golds[sid]) + 1)]:
            preds[sid].append(
                (box(g.x + rng.uniform(0, 3), g.y, g.w, g.h), float(rng.uniform(0.1, 1.0)))
            )
    return preds, golds


def _optimal_tp(pred_boxes, gold_boxes, thr):
    from docmsu.agreement import visual_iou

    n, m = len(pred_boxes), len(gold_boxes)
    best = 0
    for assign in itertools.product(range(m + 1), repeat=n):
        used = [a for a in assign if a < m]
        if len(used) != len(set(used)):
            continue
        count = sum(
            1
            for p, a in zip(pred_boxes, assign)
            if a < m and visual_iou(p, gold_boxes[a]) >= thr
        )
        best = max(best, count)
    return best


class TestF1AtIoU:
    def test_perfect(self):
        golds = {"a": [box(0, 0, 10, 10)]}
        preds = {"a": [(box(0, 0, 10, 10), 0.9)]}
        assert f1_at_iou(preds, golds, 0.5) == 1.0

    def test_no_predictions(self):
        assert f1_at_iou({}, {"a": [box(0, 0, 10, 10)]}, 0.5) == 0.0

    def test_one_tp_one_fp(self):
        golds = {"a": [box(0, 0, 10, 10)]}
        preds = {"a": [(box(0, 0, 10, 10), 0.9), (box(40, 40, 5, 5), 0.8)]}
        assert f1_at_iou(preds, golds, 0.5) == pytest.approx(2 / 3)

    def test_confidence_filter(self):
        golds = {"a": [box(0, 0, 10, 10)]}
        preds = {"a": [(box(0, 0, 10, 10), 0.4)]}
        assert f1_at_iou(preds, golds, 0.5, conf_threshold=0.5) == 0.0
        assert f1_at_iou(preds, golds, 0.5, conf_threshold=0.3) == 1.0


class TestDetectionMetrics:
    def test_all_correct(self):
        assert detection_metrics([0.9, 0.1], [True, False]) == (1.0, 1.0, 1.0)

    def test_all_negative_predictions(self):
        acc, precision, f1 = detection_metrics([0.1, 0.2], [True, False])
        assert precision == 0.0 and f1 == 0.0

    def test_hand_confusion_matrix(self):
        acc, precision, f1 = detection_metrics(
            [0.9, 0.2, 0.8, 0.4], [True, False, False, True]
        )
        assert (acc, precision, f1) == (0.5, 0.5, 0.5)


class TestEvaluateCorpus:
    def make_records(self, tmp_path):
        from docmsu.data import gen_fixtures

        return gen_fixtures(15, seed=3, image_size=32, out_dir=tmp_path)

    def oracle_predictions(self, records):
        preds = {}
        for r in records:
            token_probs = []
            if r.gold is not None and r.gold.spans:
                gold_idx = r.gold_token_indices()
                token_probs = [1.0 if i in gold_idx else 0.0 for i in range(r.n_tokens)]
            boxes = [(b, 1.0) for b in (r.gold.boxes if r.gold else ())]
            preds[r.id] = SamplePrediction(
                id=r.id,
                sarcasm_prob=1.0 if r.sarcastic else 0.0,
                token_probs=token_probs,
                boxes=boxes,
            )
        return preds

    def test_oracle_predictions_score_perfectly(self, tmp_path):
        records = self.make_records(tmp_path)
        report = evaluate_corpus(self.oracle_predictions(records), records)
        assert report.em == report.em50 == report.em70 == 1.0
        assert report.bit_error == 0.0
        assert report.ap50 == report.ap60 == 1.0
        assert report.f1_50 == report.f1_60 == 1.0
        assert report.acc == report.precision == report.f1 == 1.0

    def test_em_ordering_invariant(self, tmp_path):
        records = self.make_records(tmp_path)
        rng = np.random.default_rng(0)
        preds = self.oracle_predictions(records)
        for p in preds.values():
            p.token_probs = [float(rng.uniform()) for _ in p.token_probs]
        report = evaluate_corpus(preds, records)
        assert report.em <= report.em70 <= report.em50

    def test_missing_prediction_rejected(self, tmp_path):
        records = self.make_records(tmp_path)
        preds = self.oracle_predictions(records)
        preds.pop(records[0].id)
        with pytest.raises(ValidationError):
            evaluate_corpus(preds, records)
