"""Ground-truth loops, detection bookkeeping and precision/recall sweeps."""
import logging
from dataclasses import dataclass
from typing import Dict, FrozenSet, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from app.error_handling import InputError
from detection.retrieval import RetrievalConfig, SimilarityMatrix, refine
from detection.selector import CandidateArea, LoopPair
from utils.parallel import thread_map

logger = logging.getLogger(__name__)

# Multiple of the median frame spacing used when no truth radius is configured
TRUTH_RADIUS_FACTOR = 3.0


@dataclass(frozen=True)
class GroundTruthLoops:
    pairs: FrozenSet[Tuple[int, int]]
    radius: float
    margin: int = 30

    def __len__(self):
        return len(self.pairs)

    def __contains__(self, pair):
        return tuple(pair) in self.pairs


@dataclass(frozen=True)
class MatchCounts:
    tp: int
    fp: int
    fn: int

    @property
    def precision(self) -> float:
        return 1.0 if self.tp + self.fp == 0 else self.tp / (self.tp + self.fp)

    @property
    def recall(self) -> float:
        return 1.0 if self.tp + self.fn == 0 else self.tp / (self.tp + self.fn)


@dataclass(frozen=True)
class PRPoint:
    threshold: float
    precision: float
    recall: float
    tp: int = 0
    fp: int = 0
    fn: int = 0


def default_truth_radius(positions) -> float:
    positions = np.asarray(positions, dtype=float)
    if len(positions) < 2:
        return 0.0
    steps = np.linalg.norm(np.diff(positions, axis=0), axis=1)
    return TRUTH_RADIUS_FACTOR * float(np.median(steps))


def ground_truth_loops(gt_positions, radius: Optional[float] = None, margin: int = 30) -> GroundTruthLoops:
    """(i, j) for every frame whose nearest predecessor j <= i - margin lies strictly inside radius."""
    positions = np.asarray(gt_positions, dtype=float)
    if positions.size and not np.all(np.isfinite(positions)):
        raise InputError("ground-truth positions must be finite")
    radius = default_truth_radius(positions) if radius is None else float(radius)
    if radius < 0:
        raise InputError(f"truth radius must be >= 0, got {radius}")

    pairs = set()
    for i in range(margin, len(positions)):
        candidates = positions[: i - margin + 1]
        diff = candidates - positions[i]
        distances = np.sqrt(np.sum(diff * diff, axis=1))
        j = int(np.argmin(distances))
        if distances[j] < radius:
            pairs.add((i, j))
    logger.info(f"Ground truth: {len(pairs)} loop frames (radius {radius:.3f} m, margin {margin})")
    return GroundTruthLoops(frozenset(pairs), radius, margin)


def match_with_truth(detected: Sequence[LoopPair], truth: GroundTruthLoops, tolerance: int = 5) -> MatchCounts:
    """
    Greedy one-to-one assignment in (i, j) order; each detection takes the
    closest unconsumed truth pair within tolerance on both indices.
    """
    if tolerance < 0:
        raise InputError(f"tolerance must be >= 0, got {tolerance}")
    by_query: Dict[int, List[int]] = {}
    for i, j in truth.pairs:
        by_query.setdefault(i, []).append(j)
    consumed = set()

    tp = 0
    for pair in sorted(detected, key=lambda p: (p.query, p.match)):
        best = None
        for i in range(pair.query - tolerance, pair.query + tolerance + 1):
            for j in by_query.get(i, ()):
                if (i, j) in consumed or abs(j - pair.match) > tolerance:
                    continue
                key = (max(abs(i - pair.query), abs(j - pair.match)), abs(i - pair.query) + abs(j - pair.match), i, j)
                if best is None or key < best[0]:
                    best = (key, (i, j))
        if best is not None:
            consumed.add(best[1])
            tp += 1
    return MatchCounts(tp=tp, fp=len(detected) - tp, fn=len(truth) - tp)


def pr_point(threshold: float, loops: Sequence[LoopPair], truth: GroundTruthLoops, tolerance: int) -> PRPoint:
    counts = match_with_truth(loops, truth, tolerance)
    return PRPoint(threshold, counts.precision, counts.recall, counts.tp, counts.fp, counts.fn)


def pr_sweep(
    matrix: SimilarityMatrix,
    thresholds: Sequence[float],
    truth: GroundTruthLoops,
    cfg: RetrievalConfig,
    tolerance: int = 5,
    threads: int = 1,
) -> List[PRPoint]:
    """
    Sweeps similarity_threshold over a matrix built once at (or below) the
    smallest threshold; each point re-runs sequence matching and NMS on the
    filtered entries.
    """
    thresholds = [float(t) for t in thresholds]
    if thresholds != sorted(thresholds):
        raise InputError("thresholds must be sorted ascending")
    if thresholds and thresholds[0] < matrix.threshold:
        raise InputError(f"matrix was built at {matrix.threshold}, cannot sweep down to {thresholds[0]}")

    def evaluate(threshold: float) -> PRPoint:
        _, loops = refine(matrix.filtered(threshold), cfg)
        return pr_point(threshold, loops, truth, tolerance)

    points = thread_map(evaluate, thresholds, threads)
    logger.info(f"PR sweep over {len(points)} thresholds")
    return points


def interpolated_precision(points: Iterable[PRPoint], recall: float) -> float:
    """Best precision among points reaching at least `recall`."""
    eligible = [p.precision for p in points if p.recall >= recall]
    return max(eligible) if eligible else 0.0


def max_recall_at_precision(points: Iterable[PRPoint], precision: float = 1.0) -> float:
    eligible = [p.recall for p in points if p.precision >= precision - 1e-12]
    return max(eligible) if eligible else 0.0


def area_recall(truth: GroundTruthLoops, areas: Sequence[CandidateArea]) -> float:
    """Fraction of truth pairs inside some candidate area."""
    if not truth.pairs:
        return 1.0
    inside = sum(1 for i, j in truth.pairs if any(a.contains(i, j) for a in areas))
    return inside / len(truth.pairs)


def triangle_comparisons(frame_count: int, margin: int) -> int:
    """Cells (i, j) with 0 <= j <= i - margin < frame_count - margin."""
    span = frame_count - margin
    return span * (span + 1) // 2 if span > 0 else 0
