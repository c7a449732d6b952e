import sys
import tempfile
from pathlib import Path


def main() -> int:
    root = Path(__file__).resolve().parents[1]
    sys.path.insert(0, str(root))

    try:
        from app.config import PipelineConfig
        from app.version import get_version
        from data import get_dataset_provider
        from detection.pipeline import run_pipeline
        from evaluation.metrics import ground_truth_loops, match_with_truth
        from simulation.dataset import generate_dataset, write_dataset
        import app.commands
        import app.main
        import evaluation.timing
        import vision.cache
    except Exception as exc:
        print(f"Import smoke test failed: {exc}")
        return 1

    try:
        cfg = PipelineConfig.model_validate({
            "synth": {"frame_count": 50, "scale": 4.0, "seed": 3},
            "selector": {"margin": 10, "gap_tolerance": 2, "enlargement": 3, "max_area_span": 0},
            "retrieval": {"similarity_threshold": 0.5},
        })
        with tempfile.TemporaryDirectory() as tmp:
            manifest = write_dataset(generate_dataset(cfg.synth, cfg.selector.margin), Path(tmp) / "dataset")
            provider = get_dataset_provider(manifest)
            run = run_pipeline(provider, cfg)
            truth = ground_truth_loops(provider.ground_truth()[0], provider.truth_radius, cfg.selector.margin)
            counts = match_with_truth(run.loops, truth, cfg.eval.match_tolerance)
        print(f"Version: {get_version()}")
        print(f"Provider: {type(provider).__name__} ({provider.frame_count} frames)")
        print(f"Loops: {len(run.loops)} ({counts.tp} true, {counts.fp} false, {len(truth)} truth pairs)")
        print(f"Comparisons: {run.detection.comparisons}")
    except Exception as exc:
        print(f"Runtime smoke test failed: {exc}")
        return 1

    print("Smoke test passed")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
