"""VOC evaluation: brute-force oracle equivalence, hand fixture, identity experiment, report shape."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aerialdet import oracles
from aerialdet.checks import _random_micro_instance, pipeline_ap
from aerialdet.dota_io import DOTA_CLASSES, AnnotationRecord, DetectionRecord, hbb_to_quad
from aerialdet.metrics import (
    FP,
    IGNORED,
    TP,
    average_precision,
    evaluate,
    format_csv,
    format_table,
    match_detections,
    mean_ap,
    precision_recall,
)


class TestAveragePrecision:
    def test_hand_fixture(self):
        # recall anchors 0..0.5 see precision 1, anchors 0.6..1.0 see 2/3
        ap = average_precision(precision_recall([TP, FP, TP], 2), "eleven_point")
        assert abs(ap - 28 / 33) <= 1e-6
        assert round(ap, 5) == 0.84848

    def test_all_point_fixture(self):
        assert average_precision(precision_recall([TP, FP, TP], 2), "all_point") == pytest.approx(0.5 + 0.5 * 2 / 3)

    def test_no_ground_truth(self):
        assert average_precision(precision_recall([FP], 0)) == 0.0

    def test_unknown_method(self):
        with pytest.raises(ValueError):
            average_precision(precision_recall([TP], 1), "trapezoid")

    @pytest.mark.parametrize("method", ["eleven_point", "all_point"])
    def test_oracle_equivalence(self, method):
        rng = np.random.default_rng(99)
        for _ in range(200):
            dets, gts = _random_micro_instance(rng)
            assert pipeline_ap(dets, gts, method) == pytest.approx(oracles.brute_force_ap(dets, gts, method=method), abs=1e-12)

    @given(seed=st.integers(0, 10_000))
    @settings(max_examples=50, deadline=None)
    def test_monotone_rescaling_invariance(self, seed):
        rng = np.random.default_rng(seed)
        dets, gts = _random_micro_instance(rng)
        squashed = [(float(np.tanh(3 * s) ** 3), b) for s, b in dets]
        ap = pipeline_ap(dets, gts, "eleven_point")
        assert 0.0 <= ap <= 1.0
        assert pipeline_ap(squashed, gts, "eleven_point") == ap


class TestMatching:
    def test_difficult_is_ignored(self):
        flags = match_detections([(0, 0, 10, 10), (20, 20, 30, 30)], [0.9, 0.8], [(0, 0, 10, 10), (20, 20, 30, 30)], [True, False])
        assert flags.tolist() == [IGNORED, TP]

    def test_duplicate_is_false_positive(self):
        flags = match_detections([(0, 0, 10, 10), (0, 0, 10, 9)], [0.8, 0.9], [(0, 0, 10, 10)])
        assert flags.tolist() == [TP, FP]

    def test_ties_keep_input_order(self):
        flags = match_detections([(50, 50, 60, 60), (0, 0, 10, 10)], [0.5, 0.5], [(0, 0, 10, 10)])
        assert flags.tolist() == [FP, TP]


class TestEvaluate:
    @pytest.fixture
    def gts(self):
        return {
            "a": [AnnotationRecord(hbb_to_quad((10, 10, 50, 40)), "plane"), AnnotationRecord(hbb_to_quad((60, 5, 90, 30)), "ship")],
            "b": [AnnotationRecord(hbb_to_quad((0, 0, 20, 20)), "plane"),
                  AnnotationRecord(hbb_to_quad((30, 30, 70, 80)), "harbor", difficult=True)],
        }

    def test_identity_is_exactly_one(self, gts):
        dets = [DetectionRecord(k, r.category, 1.0, r.hbb) for k, rs in gts.items() for r in rs if not r.difficult]
        report = evaluate(dets, gts)
        assert report.mAP == 1.0
        assert report.per_class["harbor"] is None  # only a difficult box, no detections

    def test_empty_results(self, gts):
        report = evaluate([], gts)
        assert report.mAP == 0.0 and report.per_class["plane"] == 0.0 and report.per_class["ship"] == 0.0

    def test_detection_on_unknown_image_is_false_positive(self, gts):
        dets = [DetectionRecord("zzz", "plane", 0.99, (10, 10, 50, 40))] + [
            DetectionRecord(k, r.category, 0.5, r.hbb) for k, rs in gts.items() for r in rs if r.category == "plane"]
        assert evaluate(dets, gts).per_class["plane"] < 1.0

    def test_class_without_ground_truth_scores_zero(self, gts):
        report = evaluate([DetectionRecord("a", "bridge", 0.5, (0, 0, 5, 5))], gts)
        assert report.per_class["bridge"] == 0.0

    def test_table_shape(self, gts):
        text = format_table({"FCOS": evaluate([], gts)})
        header = text.splitlines()[0].split()
        assert len(header) == 17 and header[0] == "Method" and header[-1] == "mAP(%)"
        csv = format_csv({"FCOS": evaluate([], gts)}).splitlines()
        assert csv[0].split(",") == ["method", *DOTA_CLASSES, "mAP"]

    def test_mean_ap(self):
        assert mean_ap({"a": 1.0, "b": 0.0, "c": None}) == 0.5
        with pytest.raises(ValueError):
            mean_ap({})
