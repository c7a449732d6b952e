"""
Subcommand bodies. Each takes a validated PipelineConfig plus the paths
given on the command line and returns what it wrote.
"""
import logging
from pathlib import Path
from typing import List, Optional

import pandas as pd
from rich.console import Console
from rich.table import Table

from app.config import PipelineConfig, dump_config
from app.error_handling import DatasetError, InputError
from data import get_dataset_provider
from data.formats import (
    read_areas_csv,
    read_json,
    read_loops_csv,
    write_areas_csv,
    write_json,
    write_loops_csv,
    write_pairs_csv,
    write_pr_csv,
    write_similarity_csv,
    write_states,
    write_timing_csv,
    write_trajectory,
)
from detection.pipeline import run_pipeline
from detection.retrieval import SimilarityMatrix, build_similarity
from evaluation.metrics import (
    area_recall,
    default_truth_radius,
    ground_truth_loops,
    match_with_truth,
    max_recall_at_precision,
    pr_sweep,
    triangle_comparisons,
)
from evaluation.timing import stage_timings, timing_report
from simulation.dataset import generate_dataset, write_dataset
from vision.cache import DescriptorCacheFile, LazyDescriptorStore

logger = logging.getLogger(__name__)
console = Console(stderr=True)

DETECTION_FILE = "detection.json"


def parse_frame_ranges(ranges: Optional[str], frame_count: int) -> List[int]:
    """'0-99,200-250' -> sorted frame indices (inclusive ranges); None selects every frame."""
    if not ranges:
        return list(range(frame_count))
    frames = set()
    for part in ranges.split(","):
        part = part.strip()
        if not part:
            continue
        try:
            lo, _, hi = part.partition("-")
            lo, hi = int(lo), int(hi) if hi else int(lo)
        except ValueError:
            raise InputError(f"bad frame range {part!r} (expected N or N-M)") from None
        if lo > hi or lo < 0 or hi >= frame_count:
            raise InputError(f"frame range {part!r} outside [0, {frame_count - 1}]")
        frames.update(range(lo, hi + 1))
    return sorted(frames)


def _open_store(provider, cfg: PipelineConfig, cache: Optional[str], threads: int) -> LazyDescriptorStore:
    cache = cache or cfg.paths.cache
    cache_file = DescriptorCacheFile(cache, cfg.dird) if cache else None
    return LazyDescriptorStore(provider, cfg.dird, threads, cache_file)


# --- synth ---

def cmd_synth(cfg: PipelineConfig, out_dir) -> Path:
    out_dir = Path(out_dir)
    dataset = generate_dataset(cfg.synth, cfg.selector.margin)
    manifest_path = write_dataset(dataset, out_dir, cfg.runtime.threads)
    dump_config(cfg, out_dir / "config.toml")
    console.print(f"Wrote {dataset.frame_count} frames -> {manifest_path}")
    return manifest_path


# --- extract ---

def cmd_extract(cfg: PipelineConfig, dataset=None, cache=None, frames: Optional[str] = None,
                image_dir=None, pose_file=None) -> Path:
    cache = cache or cfg.paths.cache
    if not cache:
        raise InputError("extract needs a cache path (--cache or paths.cache)")
    provider = get_dataset_provider(dataset or cfg.paths.dataset, image_dir, pose_file)
    store = _open_store(provider, cfg, cache, cfg.runtime.threads)
    selected = parse_frame_ranges(frames, provider.frame_count)
    extracted = store.prefetch(selected)
    added = store.persist()
    console.print(f"Extracted {extracted} descriptors ({len(selected)} requested), cache +{added} -> {cache}")
    return Path(cache)


# --- detect ---

def cmd_detect(cfg: PipelineConfig, dataset=None, out_dir=None, baseline: bool = False, cache=None,
               image_dir=None, pose_file=None) -> Path:
    out_dir = Path(out_dir or cfg.paths.out_dir)
    provider = get_dataset_provider(dataset or cfg.paths.dataset, image_dir, pose_file)
    store = _open_store(provider, cfg, cache, cfg.runtime.threads)
    run = run_pipeline(provider, cfg, baseline=baseline, store=store)
    store.persist()

    write_loops_csv(run.loops, out_dir / "loops.csv")
    write_areas_csv(run.areas, out_dir / "areas.csv")
    write_pairs_csv(run.pairs, out_dir / "pairs.csv")
    write_similarity_csv(run.detection.similarity, out_dir / "similarity.csv")
    write_timing_csv(stage_timings(run), out_dir / "timing.csv")
    if run.states is not None:
        write_states(out_dir / "trajectory.txt", provider.timestamps(), run.states)
    else:
        write_trajectory(
            out_dir / "trajectory.txt", provider.timestamps(),
            [r.position for r in run.records], [r.rotation for r in run.records],
            [r.position_covariance for r in run.records],
        )
    write_json(
        {
            "mode": run.mode,
            "frame_count": run.frame_count,
            "comparisons": run.detection.comparisons,
            "extracted_frames": run.detection.extracted_frames,
            "loops": len(run.loops),
            "areas": len(run.areas),
            "similarity_threshold": run.detection.similarity.threshold,
            "margin": cfg.selector.margin,
            "dataset": provider.source_name,
        },
        out_dir / DETECTION_FILE,
    )
    console.print(
        f"{run.mode}: {len(run.loops)} loops, {len(run.areas)} areas, "
        f"{run.detection.comparisons} comparisons -> {out_dir}"
    )
    return out_dir


# --- eval ---

def _similarity_for_sweep(cfg, provider, detect_dir: Path, detection: dict, floor: float) -> SimilarityMatrix:
    """Reuses the detect similarity table when it reaches low enough, else recomputes inside the areas."""
    if floor >= detection["similarity_threshold"]:
        table = pd.read_csv(detect_dir / "similarity.csv", float_precision="round_trip")
        entries = {(int(r.i), int(r.j)): float(r.similarity) for r in table.itertuples()}
        matrix = SimilarityMatrix(entries, detection["frame_count"], detection["comparisons"],
                                  detection["similarity_threshold"])
        return matrix
    areas = read_areas_csv(detect_dir / "areas.csv")
    store = _open_store(provider, cfg, None, cfg.runtime.threads)
    matrix = build_similarity(
        areas, store, cfg.retrieval, cfg.dird, detection["margin"], detection["frame_count"],
        threshold=floor, threads=cfg.runtime.threads,
    )
    store.persist()
    return matrix


def cmd_eval(cfg: PipelineConfig, detect_dir=None, dataset=None, out_dir=None, plot_data: bool = False,
             image_dir=None, pose_file=None) -> dict:
    detect_dir = Path(detect_dir or cfg.paths.out_dir)
    out_dir = Path(out_dir or detect_dir)
    detection = read_json(detect_dir / DETECTION_FILE)
    provider = get_dataset_provider(dataset or cfg.paths.dataset, image_dir, pose_file)
    if provider.frame_count != detection["frame_count"]:
        raise DatasetError(
            f"detection covers {detection['frame_count']} frames but the dataset has {provider.frame_count}"
        )
    truth_source = provider.ground_truth()
    if truth_source is None:
        raise DatasetError(f"{provider.source_name} has no ground-truth poses")
    positions = truth_source[0]
    radius = cfg.eval.truth_radius_m or getattr(provider, "truth_radius", None) or default_truth_radius(positions)
    truth = ground_truth_loops(positions, radius, detection["margin"])

    thresholds = cfg.eval.sweep()
    matrix = _similarity_for_sweep(cfg, provider, detect_dir, detection, thresholds[0])
    points = pr_sweep(matrix, thresholds, truth, cfg.retrieval, cfg.eval.match_tolerance, cfg.runtime.threads)
    write_pr_csv(points, out_dir / "pr.csv")

    loops = read_loops_csv(detect_dir / "loops.csv")
    counts = match_with_truth(loops, truth, cfg.eval.match_tolerance)
    baseline_comparisons = triangle_comparisons(detection["frame_count"], detection["margin"])
    comparisons = detection["comparisons"]
    summary = {
        "mode": detection["mode"],
        "frame_count": detection["frame_count"],
        "truth_pairs": len(truth),
        "truth_radius_m": truth.radius,
        "comparisons": comparisons,
        "baseline_comparisons": baseline_comparisons,
        "comparison_reduction_ratio": baseline_comparisons / comparisons if comparisons else None,
        "max_recall_at_full_precision": max_recall_at_precision(points, 1.0),
        "area_recall": area_recall(truth, read_areas_csv(detect_dir / "areas.csv")),
        "detected": {"tp": counts.tp, "fp": counts.fp, "fn": counts.fn,
                     "precision": counts.precision, "recall": counts.recall},
        "thresholds": thresholds,
    }
    write_json(summary, out_dir / "summary.json")
    if plot_data:
        write_json({"pr": [p.__dict__ for p in points]}, out_dir / "pr.json")

    table = Table(title=f"PR sweep ({detection['mode']}, {len(truth)} truth loops)")
    for column in ("threshold", "precision", "recall", "tp", "fp", "fn"):
        table.add_column(column, justify="right")
    for p in points:
        table.add_row(f"{p.threshold:.3f}", f"{p.precision:.3f}", f"{p.recall:.3f}", str(p.tp), str(p.fp), str(p.fn))
    console.print(table)
    return summary


# --- bench ---

def cmd_bench(cfg: PipelineConfig, dataset=None, out_dir=None, plot_data: bool = False,
              image_dir=None, pose_file=None) -> Path:
    out_dir = Path(out_dir or cfg.paths.out_dir)
    provider = get_dataset_provider(dataset or cfg.paths.dataset, image_dir, pose_file)
    report = timing_report(provider, cfg)

    write_timing_csv(report.rows(), out_dir / "timing.csv")
    for mode, run in report.runs.items():
        write_loops_csv(run.loops, out_dir / f"loops_{mode}.csv")
    summary = {
        "frame_count": report.frame_count,
        "constrained_comparisons": report.constrained_comparisons,
        "baseline_comparisons": report.baseline_comparisons,
        "comparison_reduction_ratio": report.reduction_ratio,
        "constrained_total_ms": report.total_ms("constrained"),
        "baseline_total_ms": report.total_ms("baseline"),
    }
    write_json(summary, out_dir / "bench.json")
    if plot_data:
        write_json({"timing": [dict(r.__dict__, per_frame_ms=r.per_frame_ms) for r in report.rows()]},
                   out_dir / "timing.json")

    table = Table(title=f"Timing ({report.frame_count} frames)")
    table.add_column("stage")
    for column in ("constrained ms", "baseline ms", "constrained cmp", "baseline cmp"):
        table.add_column(column, justify="right")
    for c, b in zip(report.constrained, report.baseline):
        table.add_row(c.stage, f"{c.total_ms:.1f}", f"{b.total_ms:.1f}", str(c.comparisons), str(b.comparisons))
    console.print(table)
    console.print(f"Comparison reduction: x{report.reduction_ratio:.2f}")
    return out_dir
