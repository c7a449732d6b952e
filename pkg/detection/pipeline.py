"""Stage composition: filter -> pose gate -> constrained retrieval."""
import logging
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from app.error_handling import DatasetError, LoopClosureError, StageError
from estimation.pose_filter import NoiseConfig, infer_initial_velocity, initial_state, run_filter
from utils.rotations import IDENTITY_QUAT
from vision.cache import LazyDescriptorStore
from .retrieval import DetectionResult, detect_loops
from .selector import CandidateArea, LoopPair, PlaceRecord, records_from_poses, records_from_states, \
    select_candidate_areas, triangle_area

logger = logging.getLogger(__name__)


@dataclass
class PipelineRun:
    mode: str
    frame_count: int
    records: List[PlaceRecord]
    states: Optional[list]
    pairs: List[LoopPair]
    areas: List[CandidateArea]
    detection: DetectionResult
    stage_seconds: Dict[str, float] = field(default_factory=dict)

    @property
    def loops(self) -> List[LoopPair]:
        return self.detection.loops


def estimate_records(provider, settings) -> Tuple[List[PlaceRecord], Optional[list]]:
    """Place records from the filter when the dataset has controls, else from its poses."""
    controls = provider.controls()
    truth = provider.ground_truth()

    if controls is None:
        if truth is None:
            raise DatasetError(f"{provider.source_name} has neither controls nor poses")
        positions, rotations = truth
        return records_from_poses(positions, rotations, settings.pose_prior_std ** 2), None

    noise = NoiseConfig.from_std(settings.gyro_noise_std, settings.accel_noise_std, settings.observation_std)
    position, rotation = np.zeros(3), IDENTITY_QUAT
    if truth is not None:
        position, rotation = truth[0][0], truth[1][0]

    velocity = provider.initial_velocity()
    if velocity is None:
        if truth is not None and len(truth[0]) > 1:
            velocity = infer_initial_velocity(truth[0][0], truth[0][1], controls[0], rotation)
        else:
            velocity = np.zeros(3)

    initial = initial_state(
        position, rotation, velocity,
        rotation_std=settings.initial_rotation_std,
        velocity_std=settings.initial_velocity_std,
        position_std=settings.initial_position_std,
    )
    states = run_filter(controls, provider.observations(), noise, initial)
    return records_from_states(states), states


def run_pipeline(
    provider,
    cfg,
    baseline: bool = False,
    store: Optional[LazyDescriptorStore] = None,
    threshold: Optional[float] = None,
    threads: Optional[int] = None,
) -> PipelineRun:
    """Runs the constrained pipeline, or the unconstrained triangle search when baseline is set."""
    threads = threads or cfg.runtime.threads
    frame_count = provider.frame_count
    if frame_count == 0:
        raise DatasetError(f"{provider.source_name} has no frames")
    stages = {}

    start = time.perf_counter()
    try:
        records, states = estimate_records(provider, cfg.filter)
    except LoopClosureError as exc:
        raise StageError("filter", exc) from exc
    stages["filter"] = time.perf_counter() - start

    start = time.perf_counter()
    margin = cfg.selector.margin
    if baseline:
        pairs, areas = [], triangle_area(frame_count, margin)
    else:
        try:
            pairs, areas = select_candidate_areas(records, cfg.selector, threads)
        except LoopClosureError as exc:
            raise StageError("gating", exc) from exc
    stages["gating"] = time.perf_counter() - start

    store = store or LazyDescriptorStore(provider, cfg.dird, threads)
    try:
        detection = detect_loops(records, store, areas, cfg.retrieval, cfg.dird, margin, threshold, threads)
    except LoopClosureError as exc:
        raise StageError("retrieval", exc) from exc
    stages.update(detection.stage_seconds)

    mode = "baseline" if baseline else "constrained"
    logger.info(
        f"{mode} run on {provider.source_name}: {len(detection.loops)} loops, "
        f"{detection.comparisons} comparisons, {sum(stages.values()) * 1000:.1f} ms"
    )
    return PipelineRun(mode, frame_count, records, states, pairs, areas, detection, stages)
