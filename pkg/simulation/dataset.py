"""In-memory synthetic datasets and their on-disk layout."""
import logging
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from app.error_handling import ConfigError, ImageError
from app.version import CONFIG_SCHEMA_VERSION
from data.base import DatasetManifest, DatasetProvider
from data.formats import write_controls, write_json, write_trajectory
from estimation.pose_filter import ControlInput, PositionObservation
from simulation.render import AliasMap, Illumination, illuminations, render_frame
from simulation.trajectory import SynthConfig, Trajectory, generate_trajectory, illumination_draws
from utils.parallel import thread_map
from vision.image import GrayImage, save_pgm

logger = logging.getLogger(__name__)

IMAGE_DIR = "images"
CONTROLS_FILE = "controls.txt"
GROUND_TRUTH_FILE = "ground_truth.txt"
MANIFEST_FILE = "manifest.json"


def frame_filename(frame: int) -> str:
    return f"{frame:06d}.pgm"


class SynthDataset(DatasetProvider):
    """Trajectory, controls and lazily rendered frames for one SynthConfig."""

    def __init__(self, cfg: SynthConfig, trajectory: Trajectory, alias: Optional[AliasMap] = None):
        self.cfg = cfg
        self.trajectory = trajectory
        self.alias = alias
        self.lighting: List[Illumination] = illuminations(illumination_draws(cfg))

    @property
    def source_name(self) -> str:
        return f"synthetic:{self.cfg.trajectory}"

    @property
    def frame_count(self) -> int:
        return len(self.trajectory.truth)

    @property
    def truth_radius(self) -> float:
        return self.trajectory.truth_radius

    @property
    def manifest(self) -> DatasetManifest:
        return DatasetManifest(
            version=CONFIG_SCHEMA_VERSION,
            kind="synthetic",
            seed=self.cfg.seed,
            frame_count=self.frame_count,
            image_dir=IMAGE_DIR,
            controls_file=CONTROLS_FILE,
            ground_truth_file=GROUND_TRUTH_FILE,
            truth_radius_m=self.truth_radius,
            initial_velocity=[float(v) for v in self.trajectory.truth.velocities[0]],
            config=self.cfg.model_dump(mode="json"),
        )

    def timestamps(self) -> np.ndarray:
        return self.trajectory.truth.timestamps

    def controls(self) -> List[ControlInput]:
        return self.trajectory.controls

    def observations(self) -> Dict[int, PositionObservation]:
        return self.trajectory.observations

    def ground_truth(self):
        return self.trajectory.truth.positions, self.trajectory.truth.rotations

    def render(self, frame: int) -> GrayImage:
        """Full-precision frame, before the 8-bit storage rounding."""
        if not 0 <= frame < self.frame_count:
            raise ImageError(f"frame out of range [0, {self.frame_count})", frame=frame)
        truth = self.trajectory.truth
        return render_frame(
            truth.positions[frame], truth.rotations[frame], self.cfg,
            cell_size_m=self.truth_radius, illumination=self.lighting[frame], alias=self.alias,
        )

    def load_frame(self, frame: int) -> GrayImage:
        # Same 8-bit values as the written PGM, so memory and disk runs agree
        return GrayImage(self.render(frame).to_uint8())


def generate_dataset(cfg: SynthConfig, margin: int = 30) -> SynthDataset:
    trajectory = generate_trajectory(cfg, margin)
    alias = None
    if cfg.alias_pair is not None:
        alias = AliasMap(
            trajectory.truth.positions, cfg.alias_pair.arc_a, cfg.alias_pair.arc_b,
            capture_radius=trajectory.truth_radius,
        )
        separation = alias.separation()
        if separation < cfg.alias_min_separation_m:
            raise ConfigError(
                f"alias arcs are only {separation:.2f} m apart (need >= {cfg.alias_min_separation_m} m)"
            )
        logger.info(f"Alias arcs {cfg.alias_pair.arc_a} -> {cfg.alias_pair.arc_b}, separation {separation:.1f} m")
    return SynthDataset(cfg, trajectory, alias)


def write_dataset(ds: SynthDataset, out_dir, threads: int = 1) -> Path:
    """Writes images, controls, ground truth and the manifest; returns the manifest path."""
    out_dir = Path(out_dir)
    image_dir = out_dir / IMAGE_DIR
    image_dir.mkdir(parents=True, exist_ok=True)

    frames = thread_map(ds.load_frame, range(ds.frame_count), threads)
    for k, image in enumerate(frames):
        try:
            save_pgm(image, image_dir / frame_filename(k))
        except OSError as exc:
            raise ImageError(f"cannot write {image_dir / frame_filename(k)}: {exc}", frame=k) from exc

    truth = ds.trajectory.truth
    write_controls(out_dir / CONTROLS_FILE, truth.timestamps, ds.controls(), ds.observations())
    write_trajectory(out_dir / GROUND_TRUTH_FILE, truth.timestamps, truth.positions, truth.rotations)
    manifest_path = write_json(ds.manifest.model_dump(mode="json"), out_dir / MANIFEST_FILE)
    logger.info(f"Wrote {ds.frame_count} frames to {out_dir}")
    return manifest_path


def load_dataset(manifest_path):
    from data.manifest_provider import ManifestDataset

    return ManifestDataset(manifest_path)
