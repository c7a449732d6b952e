import numpy as np
import pytest

from app.config import FilterSettings
from app.error_handling import CovarianceError, InputError
from detection.pipeline import estimate_records
from detection.selector import (
    CandidateArea,
    LoopPair,
    PlaceRecord,
    SelectorConfig,
    cluster_candidate_areas,
    find_preliminary_loops,
    gate_threshold,
    merge_overlapping,
    pose_distance,
    records_from_poses,
    select_candidate_areas,
    triangle_area,
)
from evaluation.metrics import ground_truth_loops
from simulation.dataset import generate_dataset
from simulation.trajectory import SynthConfig
from utils.rotations import IDENTITY_QUAT


def record(position, covariance=None, frame=0):
    covariance = np.zeros((3, 3)) if covariance is None else covariance
    return PlaceRecord(frame, position, IDENTITY_QUAT, covariance, np.zeros((3, 3)))


def pairs_of(*cells):
    return [LoopPair(i, j) for i, j in cells]


class TestPoseDistance:
    def test_euclidean_without_covariance(self):
        assert pose_distance(record([3.0, 4.0, 0.0]), record([0.0, 0.0, 0.0])) == pytest.approx(5.0, abs=1e-12)

    def test_covariance_inflated(self):
        a = record([3.0, 4.0, 0.0], 4.0 * np.eye(3))
        b = record([0.0, 0.0, 0.0], 4.0 * np.eye(3))
        assert pose_distance(a, b) == pytest.approx(5.0 / 3.0, abs=1e-12)

    def test_symmetric_and_monotone(self, rng):
        for _ in range(100):
            A, B = rng.normal(size=(3, 3)), rng.normal(size=(3, 3))
            a = record(rng.normal(size=3) * 5, A @ A.T)
            b = record(rng.normal(size=3) * 5, B @ B.T)
            assert pose_distance(a, b) == pytest.approx(pose_distance(b, a), abs=1e-12)
            inflated = record(a.position, a.position_covariance + 0.5 * np.eye(3))
            assert pose_distance(inflated, b) < pose_distance(a, b)

    def test_zero_iff_same_position(self):
        assert pose_distance(record([1.0, 2.0, 3.0], np.eye(3)), record([1.0, 2.0, 3.0])) == 0.0

    def test_rejects_non_psd_covariance(self):
        with pytest.raises(CovarianceError):
            record([0.0, 0.0, 0.0], -np.eye(3))


class TestGateThreshold:
    def test_unit_covariance(self):
        assert gate_threshold(record([0, 0, 0], np.eye(3)), 2.0) == pytest.approx(3.96, abs=1e-12)

    def test_zero_case(self):
        assert gate_threshold(record([0, 0, 0]), 0.0) == 0.0

    def test_largest_eigenvalue(self):
        assert gate_threshold(record([0, 0, 0], np.diag([4.0, 1.0, 1.0])), 0.0) == pytest.approx(3.92, abs=1e-12)

    def test_mean_trace_mode(self):
        rec = record([0, 0, 0], np.diag([4.0, 1.0, 1.0]))
        assert gate_threshold(rec, 0.0, "mean_trace") == pytest.approx(1.96 * np.sqrt(2.0), abs=1e-12)

    def test_negative_beta(self):
        with pytest.raises(InputError):
            gate_threshold(record([0, 0, 0]), -0.1)


class TestFindPreliminaryLoops:
    def test_straight_line_has_no_loops(self):
        positions = np.stack([[float(k), 0.0, 0.0] for k in range(100)])
        assert find_preliminary_loops(records_from_poses(positions), beta=0.0) == []

    def test_two_lap_circle_matches_brute_force(self, two_lap_circle):
        records = records_from_poses(two_lap_circle)
        pairs = find_preliminary_loops(records, beta=1.0, margin=30, threads=2)

        expected = []
        for i in range(30, len(two_lap_circle)):
            distances = [np.linalg.norm(two_lap_circle[i] - two_lap_circle[j]) for j in range(i - 30 + 1)]
            j = int(np.argmin(distances))
            if distances[j] < 1.0:
                expected.append((i, j))
        assert [(p.query, p.match) for p in pairs] == expected

        second_lap = {p.query: p.match for p in pairs if p.query >= 100}
        assert second_lap == {100 + k: k for k in range(100)}

    def test_exact_coincidence_gates_at_zero_threshold(self):
        positions = np.zeros((40, 3))
        positions[:, 0] = np.r_[np.arange(20), np.arange(20)]
        pairs = find_preliminary_loops(records_from_poses(positions), beta=0.0, margin=10)
        assert [(p.query, p.match) for p in pairs] == [(20 + k, k) for k in range(20)]

    def test_ties_go_to_smaller_index(self):
        positions = np.array([[0.0, 0, 0], [5.0, 0, 0], [0.0, 0, 0], [9.0, 0, 0], [0.0, 0, 0]])
        pairs = find_preliminary_loops(records_from_poses(positions), beta=1.0, margin=2)
        assert [(p.query, p.match) for p in pairs] == [(2, 0), (4, 0)]

    def test_margin_respected(self, two_lap_circle):
        for margin in (0, 5, 30, 150):
            pairs = find_preliminary_loops(records_from_poses(two_lap_circle), 1.0, margin)
            assert all(p.match <= p.query - margin for p in pairs)

    def test_records_must_be_ordered(self):
        records = [record([0, 0, 0], frame=3), record([1, 0, 0], frame=2)]
        with pytest.raises(InputError):
            find_preliminary_loops(records, 1.0, 0)

    def test_pairs_carry_gate_values(self, two_lap_circle):
        pair = find_preliminary_loops(records_from_poses(two_lap_circle), 1.0, 30)[-1]
        assert pair.threshold == pytest.approx(1.0)
        assert pair.gate_distance < pair.threshold


class TestClusterCandidateAreas:
    def test_single_pair_enlarged(self):
        areas = cluster_candidate_areas(pairs_of((100, 10)), gap_tolerance=5, enlargement=5)
        assert areas == [CandidateArea((95, 105), (5, 15))]

    def test_contiguous_chain(self):
        areas = cluster_candidate_areas(pairs_of((100, 10), (101, 11), (102, 12)), gap_tolerance=2, enlargement=0)
        assert areas == [CandidateArea((100, 102), (10, 12))]

    def test_separated_clusters(self):
        areas = cluster_candidate_areas(pairs_of((100, 10), (200, 50)), gap_tolerance=5, enlargement=10)
        assert len(areas) == 2
        assert not areas[0].overlaps(areas[1])

    def test_clamped_to_margin_and_frames(self):
        areas = cluster_candidate_areas(pairs_of((35, 2)), gap_tolerance=5, enlargement=10, margin=30, frame_count=40)
        assert areas == [CandidateArea((30, 39), (0, 9))]

    def test_empty(self):
        assert cluster_candidate_areas([]) == []

    def test_every_pair_inside_exactly_one_area(self, two_lap_circle):
        pairs = find_preliminary_loops(records_from_poses(two_lap_circle), 1.0, 30)
        for span in (0, 20):
            areas = cluster_candidate_areas(pairs, 5, 10, 30, len(two_lap_circle), span)
            for pair in pairs:
                assert sum(a.contains(pair.query, pair.match) for a in areas) == 1
            for area in areas:
                assert area.match_range[1] <= area.query_range[1] - 30

    def test_tiling_splits_long_diagonals(self):
        diagonal = pairs_of(*[(100 + k, k) for k in range(200)])
        single = cluster_candidate_areas(diagonal, 5, 10, 30, 400, max_area_span=0)
        tiled = cluster_candidate_areas(diagonal, 5, 10, 30, 400, max_area_span=50)
        assert len(single) == 1
        assert len(tiled) == 4
        assert sum(a.cell_count(30) for a in tiled) < single[0].cell_count(30) / 2
        for a, b in zip(tiled, tiled[1:]):
            assert a.query_range[1] + 1 == b.query_range[0]

    def test_merge_overlapping(self):
        merged = merge_overlapping([
            CandidateArea((10, 20), (0, 5)),
            CandidateArea((30, 40), (0, 5)),
            CandidateArea((18, 32), (4, 8)),
        ])
        assert merged == [CandidateArea((10, 40), (0, 8))]


class TestAreas:
    def test_cells_respect_margin(self):
        area = CandidateArea((40, 45), (5, 20))
        cells = list(area.cells(30))
        assert all(j <= i - 30 for i, j in cells)
        assert len(cells) == area.cell_count(30)
        assert cells[0] == (40, 5)

    def test_triangle(self):
        assert triangle_area(10, 30) == []
        assert triangle_area(100, 30) == [CandidateArea((30, 99), (0, 69))]
        assert triangle_area(100, 30)[0].cell_count(30) == 70 * 71 // 2

    def test_rejects_empty_rectangle(self):
        with pytest.raises(InputError):
            CandidateArea((5, 4), (0, 1))


class TestSelectCandidateAreas:
    def test_small_synthetic_run(self, small_dataset, small_config):
        records, _ = estimate_records(small_dataset, small_config.filter)
        pairs, areas = select_candidate_areas(records, small_config.selector)
        assert pairs and areas
        for pair in pairs:
            assert any(a.contains(pair.query, pair.match) for a in areas)

    @pytest.mark.slow
    def test_gate_catches_drifted_loops(self):
        settings, selector = FilterSettings(), SelectorConfig()
        fractions = []
        for seed in range(20):
            dataset = generate_dataset(SynthConfig(seed=seed), selector.margin)
            records, _ = estimate_records(dataset, settings)
            pairs = find_preliminary_loops(records, selector.beta, selector.margin)
            truth = ground_truth_loops(dataset.ground_truth()[0], dataset.truth_radius, selector.margin)
            gated = {p.query for p in pairs}
            loop_frames = {i for i, _ in truth.pairs}
            fractions.append(len(loop_frames & gated) / len(loop_frames))
        assert np.mean(fractions) >= 0.95
