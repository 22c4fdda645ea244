import json

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from maskfuse.errors import InputError
from maskfuse.evaluation import (
    Annotation,
    EvalParams,
    GroundTruth,
    MatchRecord,
    aggregate_report,
    average_precision,
    evaluate,
    match_detections,
    semantic_mean_iou,
)
from maskfuse.io import dump_predictions, ground_truth_to_json, load_ground_truth, load_predictions
from maskfuse.masks import bbox_from_mask, mask_iou
from maskfuse.nms import Detection
from maskfuse.semantic import SemanticMap
from maskfuse.synthetic import random_ground_truth, random_predictions
from oracles import box_mask

GT_MASK = box_mask(10, 10, 0, 0, 4, 5)  # 20 px


def gt_ann(mask=GT_MASK, image_id=1, category_id=1):
    return Annotation(image_id, category_id, mask, bbox_from_mask(mask))


def as_det(mask, score, image_id=1, category_id=1):
    return Detection(image_id, category_id, score, bbox_from_mask(mask), mask)


class TestMatching:
    def test_identical_is_tp(self):
        rec = match_detections([as_det(GT_MASK, 0.9)], [gt_ann()], 0.95)
        assert rec.dt_matched.tolist() == [True]
        assert rec.gt_matched.tolist() == [True]

    def test_single_match_rule(self):
        rec = match_detections([as_det(GT_MASK, 0.8), as_det(GT_MASK, 0.9)], [gt_ann()], 0.5)
        assert rec.scores.tolist() == [0.9, 0.8]
        assert rec.dt_matched.tolist() == [True, False]

    def test_below_threshold_is_fp(self):
        # 9 of 20 pixels -> IoU 0.45
        det_mask = box_mask(10, 10, 0, 0, 3, 3)
        rec = match_detections([as_det(det_mask, 0.9)], [gt_ann()], 0.5)
        assert rec.dt_matched.tolist() == [False]
        assert rec.gt_matched.tolist() == [False]

    def test_prefers_highest_iou_gt(self):
        g1 = gt_ann(box_mask(10, 10, 0, 0, 4, 4))
        g2 = gt_ann(box_mask(10, 10, 0, 0, 4, 5))
        rec = match_detections([as_det(box_mask(10, 10, 0, 0, 4, 5), 0.9)], [g1, g2], 0.5)
        assert rec.gt_matched.tolist() == [False, True]

    def test_truncates_to_max_detections(self):
        dets = [as_det(GT_MASK, s) for s in (0.1, 0.9, 0.5)]
        rec = match_detections(dets, [gt_ann()], 0.5, EvalParams(max_detections=2))
        assert rec.scores.tolist() == [0.9, 0.5]


class TestAveragePrecision:
    def record(self, scores, matched, num_gt):
        gt = np.zeros(num_gt, bool)
        gt[: sum(matched)] = True
        return MatchRecord(np.array(scores, float), np.array(matched, bool), gt)

    def test_perfect(self):
        assert average_precision([self.record([0.9, 0.8], [True, True], 2)]) == 1.0

    def test_no_detections(self):
        assert average_precision([self.record([], [], 3)]) == 0.0

    def test_tp_then_fp(self):
        ap = average_precision([self.record([0.9, 0.8], [True, False], 2)])
        assert ap == pytest.approx(51 / 101, abs=1e-15)

    def test_no_ground_truth_excluded(self):
        assert average_precision([self.record([0.5], [False], 0)]) is None

    def test_records_are_pooled_by_score(self):
        a = self.record([0.9], [False], 1)
        b = self.record([0.8], [True], 1)
        # FP first, then TP: precision 0.5 at recall 0.5, then nothing more
        pooled = average_precision([a, b])
        assert pooled == pytest.approx(0.5 * 51 / 101, abs=1e-15)


def toy_ground_truth():
    anns = [
        gt_ann(box_mask(10, 10, 0, 0, 4, 5), 1, 1),
        gt_ann(box_mask(10, 10, 5, 5, 3, 3), 1, 2),
        gt_ann(box_mask(10, 10, 2, 2, 6, 6), 2, 1),
    ]
    return GroundTruth({1: (10, 10), 2: (10, 10)}, {1: "scratch", 2: "dent", 3: "unused"}, anns)


class TestEvaluate:
    def test_perfect_predictions(self):
        gt = toy_ground_truth()
        result = evaluate(gt.as_detections(1.0), gt)
        assert (result.map, result.mar) == (100.0, 100.0)
        assert result.category_ids == [1, 2]

    def test_no_predictions(self):
        result = evaluate([], toy_ground_truth())
        assert (result.map, result.mar) == (0.0, 0.0)

    def test_unknown_ids_listed(self):
        bad = [as_det(GT_MASK, 0.5, image_id=9), as_det(GT_MASK, 0.5, category_id=7)]
        with pytest.raises(InputError, match=r"image ids \[9\].*category ids \[7\]"):
            evaluate(bad, toy_ground_truth())

    def test_box_overlap_mode(self):
        gt = toy_ground_truth()
        assert evaluate(gt.as_detections(), gt, EvalParams(overlap="box")).map == 100.0

    def test_invalid_params(self):
        with pytest.raises(ValueError):
            EvalParams(iou_thresholds=(0.5, 0.5))

    def test_default_params(self):
        p = EvalParams()
        assert p.iou_thresholds[0] == 0.5 and p.iou_thresholds[-1] == 0.95 and len(p.iou_thresholds) == 10
        assert len(p.recall_points) == 101 and p.max_detections == 100

    def test_committed_reference_fixture(self, fixtures_dir):
        d = fixtures_dir / "coco_oracle"
        gt = load_ground_truth(d / "gt.json")
        preds = load_predictions(d / "predictions.json", gt)
        ref = json.loads((d / "reference.json").read_text())
        result = evaluate(preds, gt)
        assert result.category_ids == ref["category_ids"]
        np.testing.assert_allclose(result.ap, np.array(ref["ap"]), atol=1e-10)
        np.testing.assert_allclose(result.ar, np.array(ref["ar"]), atol=1e-10)
        assert result.map == pytest.approx(ref["mAP"], abs=1e-4)
        assert result.mar == pytest.approx(ref["mAR"], abs=1e-4)


@pytest.mark.parametrize("seed", range(5))
def test_live_reference_evaluator(seed):
    pytest.importorskip("pycocotools")
    import sys
    from pathlib import Path

    sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "scripts"))
    from make_fixtures import coco_reference

    rng = np.random.default_rng(seed)
    gt = random_ground_truth(rng, 8, 3, (20, 40))
    dets = random_predictions(rng, gt, hit_rate=0.8, max_copies=3, false_positives=2)
    ref = coco_reference(ground_truth_to_json(gt), dump_predictions(dets))
    result = evaluate(dets, gt)
    assert result.map == pytest.approx(ref["mAP"], abs=1e-4)
    assert result.mar == pytest.approx(ref["mAR"], abs=1e-4)


@st.composite
def eval_cases(draw):
    rng = np.random.default_rng(draw(st.integers(0, 2**32 - 1)))
    gt = random_ground_truth(rng, int(rng.integers(1, 5)), 2, (12, 24))
    dets = random_predictions(rng, gt, hit_rate=0.8, max_copies=2, false_positives=1)
    return gt, dets, rng


class TestEvaluateProperties:
    @given(eval_cases())
    def test_bounds_and_strictest_threshold(self, case):
        gt, dets, _ = case
        r = evaluate(dets, gt)
        assert ((0 <= r.ap) & (r.ap <= 1)).all() and ((0 <= r.ar) & (r.ar <= 1)).all()
        assert r.mar / 100 >= r.ar[-1].mean() - 1e-12

    @given(eval_cases(), st.floats(0.05, 0.9))
    def test_raising_threshold_never_raises_ap(self, case, t):
        gt, dets, _ = case
        r = evaluate(dets, gt, EvalParams(iou_thresholds=(t, min(t + 0.05, 1.0))))
        assert (r.ap[1] <= r.ap[0] + 1e-12).all()

    @given(eval_cases())
    def test_input_order_invariant(self, case):
        gt, dets, rng = case
        shuffled = [dets[i] for i in rng.permutation(len(dets))]
        a, b = evaluate(dets, gt), evaluate(shuffled, gt)
        assert (a.map, a.mar) == (b.map, b.mar)

    @given(eval_cases())
    def test_duplicate_tp_never_helps(self, case):
        gt, dets, rng = case
        ann = gt.annotations[int(rng.integers(len(gt.annotations)))]
        # a duplicate may legitimately match a second, overlapping GT of the same class
        assume(all(
            mask_iou(ann.mask, other.mask) < 0.5
            for other in gt.annotations
            if other is not ann and (other.image_id, other.category_id) == (ann.image_id, ann.category_id)
        ))
        tp = Detection(ann.image_id, ann.category_id, 0.995, ann.box, ann.mask)
        dup = Detection(ann.image_id, ann.category_id, 0.0005, ann.box, ann.mask)
        with_tp = evaluate(dets + [tp], gt)
        with_dup = evaluate(dets + [tp, dup], gt)
        assert (with_dup.ap <= with_tp.ap + 1e-12).all()


class TestSemanticMeanIou:
    def test_perfect(self, rng):
        maps = [SemanticMap(i, rng.random((6, 7)) < 0.4) for i in range(3)]
        assert semantic_mean_iou(maps, maps) == 100.0

    def test_all_background_vs_half_defect(self):
        gt_mask = np.zeros((4, 4), bool)
        gt_mask[:2] = True
        preds = [SemanticMap(i, np.zeros((4, 4), bool)) for i in range(2)]
        gts = [SemanticMap(i, gt_mask) for i in range(2)]
        assert semantic_mean_iou(preds, gts) == 25.0

    def test_unpaired(self):
        with pytest.raises(InputError):
            semantic_mean_iou([SemanticMap(1, np.zeros((2, 2), bool))], [SemanticMap(2, np.zeros((2, 2), bool))])

    def test_pooled_over_images(self):
        # image 1: defect IoU 1/2; image 2: defect IoU 1 -> pooled defect 2/3, background 6/7 + ... by counts
        p1 = np.array([[1, 1], [0, 0]], bool)
        g1 = np.array([[1, 0], [0, 0]], bool)
        p2 = np.array([[1, 0], [0, 0]], bool)
        g2 = p2
        defect = (1 + 1) / (2 + 1)
        background = (2 + 3) / (3 + 3)
        got = semantic_mean_iou([SemanticMap(1, p1), SemanticMap(2, p2)], [SemanticMap(1, g1), SemanticMap(2, g2)])
        assert got == pytest.approx(100 * (defect + background) / 2, abs=1e-12)


SEMANTIC_MIOU = {
    "Cable": 47.00, "Capacitor": 60.38, "Casting": 54.29, "Console": 72.26, "Cylinder": 97.76,
    "Electronics": 60.66, "Groove": 25.66, "Hemisphere": 48.00, "Lens": 65.88, "PCB_1": 75.71,
    "PCB_2": 92.41, "Ring": 55.00, "Screw": 73.64, "Wood": 39.00,
}


class TestReport:
    def test_combined_and_averages(self):
        report = aggregate_report({"a": (40.0, 60.0), "b": {"mAP": 50.0, "mAR": 70.0}})
        assert (report.average_map, report.average_mar, report.combined) == (45.0, 65.0, 55.0)
        assert report.to_json()["combined"] == 55.0

    def test_empty(self):
        with pytest.raises(InputError):
            aggregate_report({})

    def test_table2_row_renders(self):
        report = aggregate_report({name: (0.0, 0.0) for name in SEMANTIC_MIOU}, SEMANTIC_MIOU)
        table = report.render_table()
        lines = table.splitlines()
        assert lines[0].split()[:2] == ["Cable", "Capacitor"]
        miou_row = next(line for line in lines if line.startswith("mean IoU"))
        assert "97.76" in miou_row and "25.66" in miou_row
        assert report.to_json()["semantic_miou"]["Cylinder"] == 97.76

    def test_table_columns(self):
        table = aggregate_report({"x": (47.0, 61.0)}).render_table()
        header, map_row, mar_row = table.splitlines()
        assert header.split()[-2:] == ["Average", "(mAP+mAR)/2"]
        assert map_row.split() == ["mAP", "47.00", "47.00", "54.00"]
        assert mar_row.split() == ["mAR", "61.00", "61.00"]
