"""
Pose-constrained gating.

Every frame carries a place record (pose + position covariance). A frame i
is gated against its nearest predecessor j <= i - margin under the
covariance-corrected distance; gated pairs are clustered by continuity into
rectangular candidate areas of the (query, match) index plane, and image
retrieval is only run inside those rectangles.
"""
import logging
from dataclasses import dataclass
from typing import Iterator, List, Literal, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from app.error_handling import CovarianceError, InputError
from estimation.pose_filter import check_psd
from utils.parallel import thread_map
from utils.rotations import IDENTITY_QUAT, normalize_quat

logger = logging.getLogger(__name__)

# Two-sided 95% quantile of the standard normal
CONFIDENCE_95 = 1.96


class SelectorConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    beta: float = Field(1.0, ge=0)
    margin: int = Field(30, ge=0)
    gap_tolerance: int = Field(5, ge=0)
    enlargement: int = Field(10, ge=0)
    radius_mode: Literal["max_eigenvalue", "mean_trace"] = "max_eigenvalue"
    max_area_span: int = Field(50, ge=0)
    threads: int = Field(1, ge=1)


@dataclass(frozen=True)
class PlaceRecord:
    frame_index: int
    position: np.ndarray
    rotation: np.ndarray
    position_covariance: np.ndarray
    rotation_covariance: np.ndarray
    descriptor_ref: Optional[int] = None

    def __post_init__(self):
        if self.frame_index < 0:
            raise InputError(f"frame_index must be >= 0, got {self.frame_index}")
        object.__setattr__(self, "frame_index", int(self.frame_index))
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float).reshape(3))
        object.__setattr__(self, "rotation", normalize_quat(self.rotation))
        for name in ("position_covariance", "rotation_covariance"):
            matrix = np.asarray(getattr(self, name), dtype=float).reshape(3, 3)
            check_psd(matrix, name)
            object.__setattr__(self, name, matrix)


@dataclass(frozen=True)
class LoopPair:
    query: int
    match: int
    gate_distance: Optional[float] = None
    threshold: Optional[float] = None
    score: Optional[float] = None


@dataclass(frozen=True)
class CandidateArea:
    """Inclusive rectangle [i_lo, i_hi] x [j_lo, j_hi] of the (query, match) plane."""

    query_range: Tuple[int, int]
    match_range: Tuple[int, int]

    def __post_init__(self):
        q_lo, q_hi = (int(v) for v in self.query_range)
        m_lo, m_hi = (int(v) for v in self.match_range)
        if q_lo > q_hi or m_lo > m_hi or q_lo < 0 or m_lo < 0:
            raise InputError(f"empty or negative candidate area {self.query_range} x {self.match_range}")
        object.__setattr__(self, "query_range", (q_lo, q_hi))
        object.__setattr__(self, "match_range", (m_lo, m_hi))

    def contains(self, query: int, match: int) -> bool:
        return (self.query_range[0] <= query <= self.query_range[1]
                and self.match_range[0] <= match <= self.match_range[1])

    def overlaps(self, other: "CandidateArea") -> bool:
        return (self.query_range[0] <= other.query_range[1] and other.query_range[0] <= self.query_range[1]
                and self.match_range[0] <= other.match_range[1] and other.match_range[0] <= self.match_range[1])

    def union(self, other: "CandidateArea") -> "CandidateArea":
        return CandidateArea(
            (min(self.query_range[0], other.query_range[0]), max(self.query_range[1], other.query_range[1])),
            (min(self.match_range[0], other.match_range[0]), max(self.match_range[1], other.match_range[1])),
        )

    def match_interval(self, query: int, margin: int) -> Optional[Tuple[int, int]]:
        """Admissible match indices of one query row, or None."""
        if not self.query_range[0] <= query <= self.query_range[1]:
            return None
        hi = min(self.match_range[1], query - margin)
        if hi < self.match_range[0]:
            return None
        return self.match_range[0], hi

    def cells(self, margin: int) -> Iterator[Tuple[int, int]]:
        """Row-major (i, j) cells with j <= i - margin."""
        for query in range(self.query_range[0], self.query_range[1] + 1):
            interval = self.match_interval(query, margin)
            if interval is not None:
                for match in range(interval[0], interval[1] + 1):
                    yield query, match

    def cell_count(self, margin: int) -> int:
        return sum(hi - lo + 1 for lo, hi in
                   filter(None, (self.match_interval(q, margin)
                                 for q in range(self.query_range[0], self.query_range[1] + 1))))


# --- Distances ---

def _position_block(cov_a, cov_b):
    total = np.asarray(cov_a, dtype=float) + np.asarray(cov_b, dtype=float)
    if not np.all(np.isfinite(total)):
        raise CovarianceError("position covariance has non-finite entries")
    return np.eye(3) + total


def pose_distance(a: PlaceRecord, b: PlaceRecord) -> float:
    """sqrt(dp^T (I + P_a + P_b)^-1 dp); Euclidean when both covariances vanish."""
    corrected = _position_block(a.position_covariance, b.position_covariance)
    delta = a.position - b.position
    return float(np.sqrt(max(float(delta @ np.linalg.solve(corrected, delta)), 0.0)))


def gate_radius(position_covariance, radius_mode: str = "max_eigenvalue") -> float:
    covariance = np.asarray(position_covariance, dtype=float)
    if not np.all(np.isfinite(covariance)):
        raise CovarianceError("position covariance has non-finite entries")
    if radius_mode == "max_eigenvalue":
        variance = float(np.linalg.eigvalsh(0.5 * (covariance + covariance.T))[-1])
    elif radius_mode == "mean_trace":
        variance = float(np.trace(covariance)) / 3.0
    else:
        raise InputError(f"unknown radius_mode {radius_mode!r}")
    return float(np.sqrt(max(variance, 0.0)))


def gate_threshold(rec: PlaceRecord, beta: float, radius_mode: str = "max_eigenvalue") -> float:
    if beta < 0:
        raise InputError(f"beta must be >= 0, got {beta}")
    return CONFIDENCE_95 * gate_radius(rec.position_covariance, radius_mode) + beta


# --- Gating ---

def _check_ordering(records: Sequence[PlaceRecord]) -> np.ndarray:
    frames = np.array([r.frame_index for r in records], dtype=int)
    if frames.size > 1 and np.any(np.diff(frames) <= 0):
        raise InputError("place records must have strictly increasing frame indices")
    return frames


def find_preliminary_loops(
    records: Sequence[PlaceRecord],
    beta: float,
    margin: int = 30,
    radius_mode: str = "max_eigenvalue",
    threads: int = 1,
) -> List[LoopPair]:
    """Nearest admissible predecessor of every frame, kept when it falls inside the gate."""
    if beta < 0:
        raise InputError(f"beta must be >= 0, got {beta}")
    if not records:
        return []
    frames = _check_ordering(records)
    positions = np.stack([r.position for r in records])
    covariances = np.stack([r.position_covariance for r in records])

    def nearest(k: int) -> Optional[LoopPair]:
        # Predecessors with frame <= frame_k - margin
        count = int(np.searchsorted(frames, frames[k] - margin, side="right"))
        if count == 0:
            return None
        corrected = _position_block(covariances[k][None, :, :], covariances[:count])
        deltas = positions[k][None, :] - positions[:count]
        solved = np.linalg.solve(corrected, deltas[:, :, None])[:, :, 0]
        distances = np.sqrt(np.maximum(np.sum(deltas * solved, axis=-1), 0.0))
        best = int(np.argmin(distances))
        distance = float(distances[best])
        threshold = gate_threshold(records[k], beta, radius_mode)
        # An exact coincidence gates even at a zero threshold
        if distance < threshold or distance == 0.0:
            return LoopPair(int(frames[k]), int(frames[best]), distance, threshold)
        return None

    results = thread_map(nearest, range(len(records)), threads)
    pairs = [p for p in results if p is not None]
    logger.info(f"Pose gate: {len(pairs)} preliminary pairs over {len(records)} frames (beta={beta}, margin={margin})")
    return pairs


# --- Clustering ---

def _continuity_clusters(pairs: List[LoopPair], gap_tolerance: int) -> List[List[LoopPair]]:
    ordered = sorted(pairs, key=lambda p: (p.query, p.match))
    parent = list(range(len(ordered)))

    def find(k):
        while parent[k] != k:
            parent[k] = parent[parent[k]]
            k = parent[k]
        return k

    for k, pair in enumerate(ordered):
        m = k - 1
        while m >= 0 and pair.query - ordered[m].query <= gap_tolerance:
            if abs(pair.match - ordered[m].match) <= gap_tolerance:
                parent[find(k)] = find(m)
            m -= 1

    clusters = {}
    for k, pair in enumerate(ordered):
        clusters.setdefault(find(k), []).append(pair)
    return sorted(clusters.values(), key=lambda c: (c[0].query, c[0].match))


def _tile_queries(cluster: List[LoopPair], max_area_span: int) -> List[Tuple[int, int, List[LoopPair]]]:
    """Splits a cluster into consecutive query bands of max_area_span rows: (band_lo, band_hi, pairs)."""
    first = cluster[0].query
    last = max(p.query for p in cluster)
    if max_area_span <= 0:
        return [(first, last, cluster)]
    bands = {}
    for pair in cluster:
        bands.setdefault((pair.query - first) // max_area_span, []).append(pair)
    return [
        (first + k * max_area_span, first + (k + 1) * max_area_span - 1, bands[k])
        for k in sorted(bands)
    ]


def _clamp(q_lo, q_hi, m_lo, m_hi, margin, frame_count) -> Optional[CandidateArea]:
    q_lo = max(q_lo, margin, 0)
    if frame_count is not None:
        q_hi = min(q_hi, frame_count - 1)
    m_lo = max(m_lo, 0)
    m_hi = min(m_hi, q_hi - margin)
    if q_lo > q_hi or m_lo > m_hi:
        return None
    return CandidateArea((q_lo, q_hi), (m_lo, m_hi))


def merge_overlapping(areas: List[CandidateArea]) -> List[CandidateArea]:
    """Replaces overlapping rectangles by their bounding box until all are disjoint."""
    merged = list(areas)
    changed = True
    while changed:
        changed = False
        result = []
        for area in merged:
            for k, kept in enumerate(result):
                if kept.overlaps(area):
                    result[k] = kept.union(area)
                    changed = True
                    break
            else:
                result.append(area)
        merged = result
    return sorted(merged, key=lambda a: (a.query_range, a.match_range))


def cluster_candidate_areas(
    pairs: List[LoopPair],
    gap_tolerance: int = 5,
    enlargement: int = 10,
    margin: int = 30,
    frame_count: Optional[int] = None,
    max_area_span: int = 0,
) -> List[CandidateArea]:
    """
    Groups pairs whose query and match indices are both within gap_tolerance
    of a cluster member, surrounds each cluster (or each query-axis tile of
    it when max_area_span > 0) with an enlarged rectangle clamped to the
    margin, then merges overlapping rectangles.
    """
    if not pairs:
        return []
    areas = []
    for cluster in _continuity_clusters(pairs, gap_tolerance):
        tiles = _tile_queries(cluster, max_area_span)
        for k, (band_lo, band_hi, tile) in enumerate(tiles):
            matches = [p.match for p in tile]
            # Inner band edges are not enlarged so neighbouring tiles stay disjoint
            q_lo = min(p.query for p in tile) - enlargement if k == 0 else band_lo
            q_hi = max(p.query for p in tile) + enlargement if k == len(tiles) - 1 else band_hi
            area = _clamp(q_lo, q_hi, min(matches) - enlargement, max(matches) + enlargement, margin, frame_count)
            if area is not None:
                areas.append(area)
    return merge_overlapping(areas)


def select_candidate_areas(
    records: Sequence[PlaceRecord], cfg: SelectorConfig, threads: Optional[int] = None
) -> Tuple[List[LoopPair], List[CandidateArea]]:
    pairs = find_preliminary_loops(records, cfg.beta, cfg.margin, cfg.radius_mode, threads or cfg.threads)
    frame_count = records[-1].frame_index + 1 if records else 0
    areas = cluster_candidate_areas(
        pairs, cfg.gap_tolerance, cfg.enlargement, cfg.margin, frame_count, cfg.max_area_span
    )
    cells = sum(a.cell_count(cfg.margin) for a in areas)
    logger.info(f"Candidate areas: {len(areas)} rectangles, {cells} admissible cells")
    return pairs, areas


def triangle_area(frame_count: int, margin: int) -> List[CandidateArea]:
    """The unconstrained search region: every (i, j) with j <= i - margin."""
    if frame_count - 1 < margin:
        return []
    return [CandidateArea((margin, frame_count - 1), (0, frame_count - 1 - margin))]


# --- Record builders ---

def records_from_states(states, frame_indices: Optional[Sequence[int]] = None) -> List[PlaceRecord]:
    frame_indices = range(len(states)) if frame_indices is None else frame_indices
    return [
        PlaceRecord(
            frame_index=k,
            position=s.position,
            rotation=s.rotation,
            position_covariance=s.position_covariance,
            rotation_covariance=s.rotation_covariance,
            descriptor_ref=k,
        )
        for k, s in zip(frame_indices, states)
    ]


def records_from_poses(positions, rotations=None, position_variance: float = 0.0) -> List[PlaceRecord]:
    """Place records straight from known poses with an isotropic position covariance."""
    positions = np.asarray(positions, dtype=float)
    if rotations is None:
        rotations = [IDENTITY_QUAT] * len(positions)
    if len(rotations) != len(positions):
        raise InputError(f"{len(positions)} positions but {len(rotations)} rotations")
    covariance = np.eye(3) * position_variance
    return [
        PlaceRecord(k, p, q, covariance, np.zeros((3, 3)), descriptor_ref=k)
        for k, (p, q) in enumerate(zip(positions, rotations))
    ]
