from .metrics import (
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
from .timing import StageTiming, TimingReport, timing_report
