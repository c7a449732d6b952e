"""
Constrained image retrieval.

Descriptor similarities are computed only for admissible cells of the
candidate areas, then refined by diagonal sequence matching and
non-maximum suppression into final loop pairs.
"""
import logging
import time
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator

from app.error_handling import InputError, MissingDescriptorError
from detection.selector import CandidateArea, LoopPair, PlaceRecord
from utils.parallel import thread_map
from vision.dird import DirdConfig, normalized_distance, similarity, squared_norms

logger = logging.getLogger(__name__)

Cell = Tuple[int, int]


class RetrievalConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    similarity_threshold: float = Field(0.6, ge=0, le=1)
    sequence_length: int = Field(5, ge=1)
    sequence_sum_threshold: Optional[float] = Field(None, ge=0)
    nms_window: int = Field(10, ge=0)
    nms_same_diagonal: bool = Field(
        True, description="Cells on the candidate's own diagonal continue its sequence instead of competing with it"
    )

    @field_validator("sequence_length")
    @classmethod
    def _odd(cls, v):
        if v % 2 == 0:
            raise ValueError(f"sequence_length must be odd, got {v}")
        return v

    @property
    def sum_threshold(self) -> float:
        if self.sequence_sum_threshold is None:
            return 0.7 * self.sequence_length
        return self.sequence_sum_threshold


@dataclass(frozen=True)
class SimilarityMatrix:
    entries: Dict[Cell, float]
    frame_count: int
    comparisons: int = 0
    threshold: float = 0.0

    def __len__(self):
        return len(self.entries)

    def filtered(self, threshold: float) -> "SimilarityMatrix":
        """Entries >= threshold; the comparison count is the one paid for building this matrix."""
        if threshold < self.threshold:
            raise InputError(f"cannot lower the threshold below {self.threshold} without recomputation")
        kept = {cell: s for cell, s in self.entries.items() if s >= threshold}
        return SimilarityMatrix(kept, self.frame_count, self.comparisons, threshold)


@dataclass
class DetectionResult:
    loops: List[LoopPair]
    comparisons: int
    extracted_frames: int
    similarity: SimilarityMatrix
    sequence: SimilarityMatrix
    stage_seconds: Dict[str, float] = field(default_factory=dict)


# --- Area bookkeeping ---

def _merge_intervals(intervals: List[Tuple[int, int]]) -> List[Tuple[int, int]]:
    merged = []
    for lo, hi in sorted(intervals):
        if merged and lo <= merged[-1][1] + 1:
            merged[-1] = (merged[-1][0], max(merged[-1][1], hi))
        else:
            merged.append((lo, hi))
    return merged


def row_intervals(areas: Sequence[CandidateArea], margin: int) -> Dict[int, List[Tuple[int, int]]]:
    """Query row -> disjoint admissible match intervals; overlapping areas count each cell once."""
    rows: Dict[int, List[Tuple[int, int]]] = {}
    for area in areas:
        for query in range(area.query_range[0], area.query_range[1] + 1):
            interval = area.match_interval(query, margin)
            if interval is not None:
                rows.setdefault(query, []).append(interval)
    return {q: _merge_intervals(v) for q, v in sorted(rows.items())}


def area_frames(areas: Sequence[CandidateArea], margin: int) -> List[int]:
    """Every frame whose descriptor some admissible cell needs."""
    frames = set()
    for query, intervals in row_intervals(areas, margin).items():
        frames.add(query)
        for lo, hi in intervals:
            frames.update(range(lo, hi + 1))
    return sorted(frames)


# --- Operations ---

def build_similarity(
    areas: Sequence[CandidateArea],
    descriptors: Mapping,
    cfg: RetrievalConfig,
    dird_cfg: Optional[DirdConfig] = None,
    margin: int = 30,
    frame_count: Optional[int] = None,
    threshold: Optional[float] = None,
    threads: int = 1,
) -> SimilarityMatrix:
    dird_cfg = dird_cfg or DirdConfig()
    threshold = cfg.similarity_threshold if threshold is None else threshold
    rows = row_intervals(areas, margin)
    frames = area_frames(areas, margin)
    if frame_count is None:
        frame_count = len(descriptors) if hasattr(descriptors, "__len__") else (frames[-1] + 1 if frames else 0)
    if not rows:
        return SimilarityMatrix({}, frame_count, 0, threshold)

    if hasattr(descriptors, "prefetch"):
        descriptors.prefetch(frames)
    vectors = None
    for frame in frames:
        try:
            vector = descriptors[frame].as_vector()
        except KeyError:
            raise MissingDescriptorError(frame) from None
        if vectors is None:
            vectors = np.zeros((frames[-1] + 1, vector.size))
        vectors[frame] = vector

    def score_row(item):
        query, intervals = item
        found, count = [], 0
        for lo, hi in intervals:
            distances = np.sqrt(squared_norms(vectors[query] - vectors[lo:hi + 1]))
            scores = similarity(normalized_distance(distances, dird_cfg), dird_cfg)
            scores = np.atleast_1d(scores)
            count += hi - lo + 1
            for offset in np.flatnonzero(scores >= threshold):
                found.append(((query, lo + int(offset)), float(scores[offset])))
        return found, count

    entries, comparisons = {}, 0
    for found, count in thread_map(score_row, list(rows.items()), threads):
        entries.update(found)
        comparisons += count
    logger.info(f"Similarity: {comparisons} comparisons over {len(rows)} query rows, {len(entries)} entries >= {threshold}")
    return SimilarityMatrix(entries, frame_count, comparisons, threshold)


def sequence_match(m: SimilarityMatrix, cfg: RetrievalConfig) -> SimilarityMatrix:
    """
    Diagonal window sum around every stored cell; absent cells count as 0.
    Near the index boundaries the window is truncated and the threshold is
    scaled by available/L. Survivors store the window sum rescaled to L terms.
    """
    length = cfg.sequence_length
    half = (length - 1) // 2
    threshold = cfg.sum_threshold
    last = m.frame_count - 1
    scores = {}
    for (query, match) in sorted(m.entries):
        total, available = 0.0, 0
        for t in range(-half, half + 1):
            if match + t < 0 or query + t > last:
                continue
            available += 1
            total += m.entries.get((query + t, match + t), 0.0)
        if available and total >= threshold * available / length:
            scores[(query, match)] = total * length / available
    return SimilarityMatrix(scores, m.frame_count, m.comparisons, m.threshold)


def _rank(cell: Cell, score: float):
    return -score, cell[1], cell[0]


def non_max_suppression(m: SimilarityMatrix, cfg: RetrievalConfig) -> List[LoopPair]:
    """
    A cell survives when it ranks first (higher score, then smaller j) among
    the cells within +-nms_window/2 in both indices. With nms_same_diagonal
    set, cells on the candidate's own diagonal are left out of that
    neighbourhood. At most one match per query is reported.
    """
    half = cfg.nms_window // 2
    by_row: Dict[int, List[Tuple[int, float]]] = {}
    for (query, match), score in m.entries.items():
        by_row.setdefault(query, []).append((match, score))

    survivors: Dict[int, LoopPair] = {}
    for (query, match), score in sorted(m.entries.items()):
        rank = _rank((query, match), score)
        diagonal = query - match
        beaten = False
        for row in range(query - half, query + half + 1):
            for other_match, other_score in by_row.get(row, ()):
                if abs(other_match - match) > half:
                    continue
                if cfg.nms_same_diagonal and row - other_match == diagonal:
                    continue
                if _rank((row, other_match), other_score) < rank:
                    beaten = True
                    break
            if beaten:
                break
        if beaten:
            continue
        current = survivors.get(query)
        if current is None or rank < _rank((current.query, current.match), current.score):
            survivors[query] = LoopPair(query, match, score=score)
    return [survivors[q] for q in sorted(survivors)]


def refine(m: SimilarityMatrix, cfg: RetrievalConfig) -> Tuple[SimilarityMatrix, List[LoopPair]]:
    sequence = sequence_match(m, cfg)
    return sequence, non_max_suppression(sequence, cfg)


def detect_loops(
    records: Sequence[PlaceRecord],
    descriptors: Mapping,
    areas: Sequence[CandidateArea],
    cfg: RetrievalConfig,
    dird_cfg: Optional[DirdConfig] = None,
    margin: int = 30,
    threshold: Optional[float] = None,
    threads: int = 1,
) -> DetectionResult:
    frame_count = records[-1].frame_index + 1 if records else 0
    stages = {}

    start = time.perf_counter()
    extracted = descriptors.prefetch(area_frames(areas, margin)) if hasattr(descriptors, "prefetch") else 0
    stages["extraction"] = time.perf_counter() - start

    start = time.perf_counter()
    matrix = build_similarity(areas, descriptors, cfg, dird_cfg, margin, frame_count, threshold, threads)
    stages["similarity"] = time.perf_counter() - start

    start = time.perf_counter()
    sequence = sequence_match(matrix, cfg)
    stages["sequence_match"] = time.perf_counter() - start

    start = time.perf_counter()
    loops = non_max_suppression(sequence, cfg)
    stages["nms"] = time.perf_counter() - start

    logger.info(
        f"Detected {len(loops)} loops from {len(areas)} areas "
        f"({matrix.comparisons} comparisons, {extracted} descriptors extracted)"
    )
    return DetectionResult(loops, matrix.comparisons, extracted, matrix, sequence, stages)
