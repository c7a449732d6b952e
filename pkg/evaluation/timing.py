"""Per-stage wall times and comparison counts: constrained pipeline vs unconstrained baseline."""
import logging
from dataclasses import dataclass, field
from typing import Dict, List

from detection.pipeline import PipelineRun, run_pipeline

logger = logging.getLogger(__name__)

STAGES = ("filter", "gating", "extraction", "similarity", "sequence_match", "nms")


@dataclass(frozen=True)
class StageTiming:
    stage: str
    frames: int
    total_ms: float
    comparisons: int = 0

    @property
    def per_frame_ms(self) -> float:
        return self.total_ms / self.frames if self.frames else 0.0


@dataclass
class TimingReport:
    frame_count: int
    constrained: List[StageTiming]
    baseline: List[StageTiming]
    constrained_comparisons: int
    baseline_comparisons: int
    runs: Dict[str, PipelineRun] = field(default_factory=dict, repr=False, compare=False)

    @staticmethod
    def _stage(rows: List[StageTiming], name: str) -> StageTiming:
        return next(r for r in rows if r.stage == name)

    def extraction_ms_per_frame(self, mode: str = "constrained") -> float:
        return self._stage(getattr(self, mode), "extraction").per_frame_ms

    def similarity_ms_per_frame(self, mode: str = "constrained") -> float:
        return self._stage(getattr(self, mode), "similarity").per_frame_ms

    def total_ms(self, mode: str = "constrained") -> float:
        return self._stage(getattr(self, mode), "total").total_ms

    @property
    def reduction_ratio(self) -> float:
        """Baseline comparisons per constrained comparison (inf when the constrained run compared nothing)."""
        if self.constrained_comparisons == 0:
            return float("inf") if self.baseline_comparisons else 1.0
        return self.baseline_comparisons / self.constrained_comparisons

    def rows(self) -> List[StageTiming]:
        """Flat table for CSV output; stage names are prefixed with the mode."""
        return [
            StageTiming(f"{mode}/{r.stage}", r.frames, r.total_ms, r.comparisons)
            for mode in ("constrained", "baseline")
            for r in getattr(self, mode)
        ]


def stage_timings(run: PipelineRun) -> List[StageTiming]:
    rows = []
    for stage in STAGES:
        frames = run.detection.extracted_frames if stage == "extraction" else run.frame_count
        comparisons = run.detection.comparisons if stage == "similarity" else 0
        rows.append(StageTiming(stage, frames, run.stage_seconds.get(stage, 0.0) * 1000.0, comparisons))
    total = sum(r.total_ms for r in rows)
    rows.append(StageTiming("total", run.frame_count, total, run.detection.comparisons))
    return rows


def timing_report(provider, cfg) -> TimingReport:
    """
    Runs both modes with fresh descriptor stores so each pays its own
    extraction. Single-threaded unless runtime.parallel_timing is set.
    """
    threads = cfg.runtime.threads if cfg.runtime.parallel_timing else 1
    constrained = run_pipeline(provider, cfg, baseline=False, threads=threads)
    baseline = run_pipeline(provider, cfg, baseline=True, threads=threads)

    report = TimingReport(
        frame_count=provider.frame_count,
        constrained=stage_timings(constrained),
        baseline=stage_timings(baseline),
        constrained_comparisons=constrained.detection.comparisons,
        baseline_comparisons=baseline.detection.comparisons,
        runs={"constrained": constrained, "baseline": baseline},
    )
    logger.info(
        f"Timing: constrained {report.total_ms('constrained'):.1f} ms / {report.constrained_comparisons} comparisons, "
        f"baseline {report.total_ms('baseline'):.1f} ms / {report.baseline_comparisons} comparisons "
        f"(x{report.reduction_ratio:.2f})"
    )
    return report
