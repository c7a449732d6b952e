import argparse
import logging
import sys

from app.config import load_config
from app.error_handling import LoopClosureError, setup_error_handling
from app.logging_setup import setup_logging
from app.paths import get_app_dir
from app.version import get_version

# Exit status for validation and data errors; uncaught exceptions exit with 1
EXIT_LOOP_CLOSURE_ERROR = 2


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML config file (default: $LOOPCLOSURE_CONFIG or the user config)")
    common.add_argument("--seed", type=int, help="Override synth.seed")
    common.add_argument("--threads", type=int, help="Override runtime.threads")
    common.add_argument("--plot-data", action="store_true", help="Also write JSON copies of the PR/timing tables")
    common.add_argument("--verbose", action="store_true", help="Debug-level logging")

    dataset = argparse.ArgumentParser(add_help=False)
    dataset.add_argument("--dataset", help="Manifest file or dataset directory (default: paths.dataset)")
    dataset.add_argument("--images", help="KITTI-style image directory (with --poses)")
    dataset.add_argument("--poses", help="KITTI-style pose file (with --images)")

    parser = argparse.ArgumentParser(
        prog="loopclosure",
        description="Pose-constrained, illumination-robust visual loop-closure detection",
    )
    parser.add_argument("--version", action="version", version=get_version())
    commands = parser.add_subparsers(dest="command", required=True)

    synth = commands.add_parser("synth", parents=[common], help="Generate a synthetic dataset")
    synth.add_argument("--out", required=True, help="Output dataset directory")
    synth.add_argument("--frames", type=int, help="Override synth.frame_count")

    extract = commands.add_parser("extract", parents=[common, dataset], help="Extract descriptors into a cache")
    extract.add_argument("--cache", help="Descriptor cache file (default: paths.cache)")
    extract.add_argument("--frames", help="Frame ranges such as 0-99,200-250 (default: all)")

    detect = commands.add_parser("detect", parents=[common, dataset], help="Run loop-closure detection")
    detect.add_argument("--out", help="Output directory (default: paths.out_dir)")
    detect.add_argument("--cache", help="Descriptor cache file to read and extend")
    detect.add_argument("--baseline", action="store_true", help="Unconstrained triangular search instead")
    detect.add_argument("--beta", type=float, help="Override selector.beta")
    detect.add_argument("--similarity-threshold", type=float, help="Override retrieval.similarity_threshold")

    evaluate = commands.add_parser("eval", parents=[common, dataset], help="PR sweep against ground truth")
    evaluate.add_argument("--detect-dir", help="Output directory of a detect run (default: paths.out_dir)")
    evaluate.add_argument("--out", help="Where to write pr.csv/summary.json (default: the detect dir)")

    bench = commands.add_parser("bench", parents=[common, dataset], help="Timing of constrained vs baseline")
    bench.add_argument("--out", help="Output directory (default: paths.out_dir)")
    bench.add_argument("--beta", type=float, help="Override selector.beta")
    return parser


def config_overrides(args) -> dict:
    overrides = {}
    if args.seed is not None:
        overrides.setdefault("synth", {})["seed"] = args.seed
    if args.threads is not None:
        overrides.setdefault("runtime", {})["threads"] = args.threads
    if args.command == "synth" and args.frames is not None:
        overrides.setdefault("synth", {})["frame_count"] = args.frames
    if getattr(args, "beta", None) is not None:
        overrides.setdefault("selector", {})["beta"] = args.beta
    if getattr(args, "similarity_threshold", None) is not None:
        overrides.setdefault("retrieval", {})["similarity_threshold"] = args.similarity_threshold
    return overrides


def run_command(args) -> None:
    from app import commands

    cfg = load_config(args.config, config_overrides(args))
    kitti = {"image_dir": getattr(args, "images", None), "pose_file": getattr(args, "poses", None)}

    if args.command == "synth":
        commands.cmd_synth(cfg, args.out)
    elif args.command == "extract":
        commands.cmd_extract(cfg, args.dataset, args.cache, args.frames, **kitti)
    elif args.command == "detect":
        commands.cmd_detect(cfg, args.dataset, args.out, args.baseline, args.cache, **kitti)
    elif args.command == "eval":
        commands.cmd_eval(cfg, args.detect_dir, args.dataset, args.out, args.plot_data, **kitti)
    elif args.command == "bench":
        commands.cmd_bench(cfg, args.dataset, args.out, args.plot_data, **kitti)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)

    # 1. Setup logging and error handling
    setup_logging(verbose=args.verbose)
    setup_error_handling()

    logging.info(f"loopclosure {get_version()} ({args.command}), app dir {get_app_dir()}")

    # 2. Run the command; expected failures map to exit status 2
    try:
        run_command(args)
    except LoopClosureError as exc:
        logging.error(f"{args.command} failed: {exc}")
        print(f"Error: {exc}", file=sys.stderr)
        return EXIT_LOOP_CLOSURE_ERROR

    logging.info(f"{args.command} finished")
    return 0


if __name__ == "__main__":
    sys.exit(main())
