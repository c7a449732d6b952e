import numpy as np
import pytest

from app.config import PipelineConfig
from app.error_handling import InputError
from detection.pipeline import run_pipeline
from detection.retrieval import RetrievalConfig, SimilarityMatrix
from detection.selector import CandidateArea, LoopPair
from evaluation.metrics import (
    GroundTruthLoops,
    MatchCounts,
    PRPoint,
    area_recall,
    default_truth_radius,
    ground_truth_loops,
    interpolated_precision,
    match_with_truth,
    max_recall_at_precision,
    pr_sweep,
    triangle_comparisons,
)
from simulation.dataset import generate_dataset


def truth_of(*pairs, margin=30):
    return GroundTruthLoops(frozenset(pairs), radius=1.0, margin=margin)


def detections(*cells):
    return [LoopPair(i, j) for i, j in cells]


def out_and_back():
    """Ten frames out along x, then revisits near frames 0 and 5."""
    x = [0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 0.4, 5.0]
    return np.stack([[float(v), 0.0, 0.0] for v in x])


class TestGroundTruthLoops:
    def test_nearest_admissible_predecessor(self):
        truth = ground_truth_loops(out_and_back(), radius=1.0, margin=5)
        assert truth.pairs == {(10, 0), (11, 5)}
        assert (10, 0) in truth
        assert len(truth) == 2

    def test_radius_is_strict(self):
        assert ground_truth_loops(out_and_back(), radius=0.4, margin=5).pairs == {(11, 5)}

    def test_default_radius(self):
        assert default_truth_radius(out_and_back()[:10]) == pytest.approx(3.0)
        assert ground_truth_loops(out_and_back()[:10], margin=5).radius == pytest.approx(3.0)

    def test_empty_and_short_inputs(self):
        assert len(ground_truth_loops(np.zeros((0, 3)), radius=1.0)) == 0
        assert default_truth_radius(np.zeros((1, 3))) == 0.0

    def test_rejects_bad_inputs(self):
        with pytest.raises(InputError):
            ground_truth_loops(np.array([[0.0, np.inf, 0.0]]), radius=1.0)
        with pytest.raises(InputError):
            ground_truth_loops(out_and_back(), radius=-1.0)


class TestMatchWithTruth:
    def test_tolerance_window(self):
        counts = match_with_truth(detections((102, 12), (150, 30)), truth_of((100, 10), (200, 50)), tolerance=5)
        assert counts == MatchCounts(tp=1, fp=1, fn=1)
        assert counts.precision == 0.5
        assert counts.recall == 0.5

    def test_truth_pair_consumed_once(self):
        counts = match_with_truth(detections((100, 10), (101, 11)), truth_of((100, 10)), tolerance=5)
        assert counts == MatchCounts(tp=1, fp=1, fn=0)

    def test_closest_truth_pair_is_taken(self):
        truth = truth_of((100, 10), (104, 14))
        counts = match_with_truth(detections((103, 13), (99, 9)), truth, tolerance=5)
        assert counts == MatchCounts(tp=2, fp=0, fn=0)

    def test_degenerate_counts(self):
        nothing = match_with_truth([], truth_of((100, 10)))
        assert nothing.precision == 1.0
        assert nothing.recall == 0.0
        assert match_with_truth(detections((100, 10)), truth_of()).recall == 1.0

    def test_negative_tolerance(self):
        with pytest.raises(InputError):
            match_with_truth([], truth_of(), tolerance=-1)


class TestPRSweep:
    cfg = RetrievalConfig(sequence_length=1, sequence_sum_threshold=0.0, nms_window=10)

    @pytest.fixture
    def hand_built(self):
        entries = {(100, 10): 0.9, (150, 40): 0.7, (200, 50): 0.55}
        return SimilarityMatrix(entries, 300, comparisons=1000, threshold=0.5)

    def test_points(self, hand_built):
        points = pr_sweep(hand_built, [0.5, 0.6, 0.8, 0.95], truth_of((100, 10), (150, 40)), self.cfg)
        assert [p.threshold for p in points] == [0.5, 0.6, 0.8, 0.95]
        np.testing.assert_allclose([p.precision for p in points], [2 / 3, 1.0, 1.0, 1.0])
        np.testing.assert_allclose([p.recall for p in points], [1.0, 1.0, 0.5, 0.0])
        assert (points[0].tp, points[0].fp, points[0].fn) == (2, 1, 0)

    def test_threads_do_not_change_points(self, hand_built):
        truth = truth_of((100, 10), (150, 40))
        thresholds = [0.5, 0.6, 0.7, 0.8]
        assert pr_sweep(hand_built, thresholds, truth, self.cfg, threads=3) == pr_sweep(
            hand_built, thresholds, truth, self.cfg
        )

    def test_summaries(self, hand_built):
        points = pr_sweep(hand_built, [0.5, 0.6, 0.8, 0.95], truth_of((100, 10), (150, 40)), self.cfg)
        assert interpolated_precision(points, 1.0) == 1.0
        assert interpolated_precision(points, 0.75) == 1.0
        assert max_recall_at_precision(points, 1.0) == 1.0
        assert interpolated_precision([PRPoint(0.5, 1.0, 0.2)], 0.5) == 0.0

    def test_thresholds_must_be_sorted(self, hand_built):
        with pytest.raises(InputError):
            pr_sweep(hand_built, [0.8, 0.6], truth_of(), self.cfg)

    def test_cannot_sweep_below_build_threshold(self, hand_built):
        with pytest.raises(InputError, match="cannot sweep down"):
            pr_sweep(hand_built, [0.4, 0.6], truth_of(), self.cfg)


class TestAreaBookkeeping:
    def test_area_recall(self):
        truth = truth_of((100, 10), (200, 50))
        assert area_recall(truth, [CandidateArea((95, 105), (5, 15))]) == 0.5
        assert area_recall(truth, []) == 0.0
        assert area_recall(truth_of(), []) == 1.0

    def test_triangle_comparisons(self):
        assert triangle_comparisons(100, 30) == 2485
        assert triangle_comparisons(30, 30) == 0
        assert triangle_comparisons(10, 30) == 0


@pytest.mark.slow
def test_constrained_precision_on_aliased_corpus():
    # The second lap drifts up to 0.5 m off the first, so revisit similarities spread over the sweep
    cfg = PipelineConfig.model_validate({
        "synth": {"lap_offset_m": 0.5, "alias_pair": {"arc_a": [0, 40], "arc_b": [250, 290]}},
    })
    dataset = generate_dataset(cfg.synth, cfg.selector.margin)
    truth = ground_truth_loops(dataset.ground_truth()[0], dataset.truth_radius, cfg.selector.margin)
    thresholds = cfg.eval.sweep()
    assert len(thresholds) == 10

    sweeps = {}
    for baseline in (False, True):
        run = run_pipeline(dataset, cfg, baseline=baseline, threshold=thresholds[0])
        sweeps[baseline] = pr_sweep(run.detection.similarity, thresholds, truth, cfg.retrieval,
                                    cfg.eval.match_tolerance)
    constrained, unconstrained = sweeps[False], sweeps[True]

    assert len({p.recall for p in constrained}) > 1
    reached = [p for p in unconstrained if p.recall > 0.0]
    assert reached
    gaps = [interpolated_precision(constrained, p.recall) - p.precision for p in reached]
    assert min(gaps) >= -1e-12
    assert max(gaps) > 0.0
