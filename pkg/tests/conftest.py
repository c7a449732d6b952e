"""Shared fixtures: small synthetic datasets, configs and an in-memory image provider."""
import numpy as np
import pytest
import toml

from app.config import PipelineConfig
from app.error_handling import ImageError
from data.base import DatasetManifest, DatasetProvider
from simulation.dataset import generate_dataset, write_dataset
from vision.image import GrayImage

# Two laps of 25 frames on a circle of radius 4 m: ~1 m between frames, 10-frame margin
SMALL_SYNTH = {"frame_count": 50, "scale": 4.0, "seed": 3}
SMALL_SELECTOR = {"margin": 10, "gap_tolerance": 2, "enlargement": 3, "max_area_span": 0}


class StaticDataset(DatasetProvider):
    """Provider over a fixed list of images; `broken` frames raise ImageError without a frame index."""

    def __init__(self, images, broken=()):
        self.images = list(images)
        self.broken = set(broken)
        self.loads = []

    @property
    def frame_count(self):
        return len(self.images)

    @property
    def source_name(self):
        return "static"

    @property
    def manifest(self):
        return DatasetManifest(kind="synthetic", frame_count=self.frame_count)

    def timestamps(self):
        return np.arange(self.frame_count, dtype=float)

    def load_frame(self, frame):
        self.loads.append(frame)
        if frame in self.broken:
            raise ImageError("corrupt image")
        return self.images[frame]


@pytest.fixture
def rng():
    return np.random.default_rng(42)


@pytest.fixture
def textured_image(rng):
    return GrayImage(rng.uniform(40.0, 200.0, (256, 256)))


@pytest.fixture
def static_dataset(rng):
    images = [GrayImage(rng.uniform(40.0, 200.0, (64, 64))) for _ in range(6)]
    return StaticDataset(images)


@pytest.fixture
def broken_dataset(static_dataset):
    return StaticDataset(static_dataset.images, broken={2})


@pytest.fixture
def small_config():
    return PipelineConfig.model_validate({
        "synth": SMALL_SYNTH,
        "selector": SMALL_SELECTOR,
        "retrieval": {"similarity_threshold": 0.5},
    })


@pytest.fixture
def small_dataset(small_config):
    return generate_dataset(small_config.synth, small_config.selector.margin)


@pytest.fixture
def written_dataset(small_dataset, tmp_path):
    return write_dataset(small_dataset, tmp_path / "dataset")


@pytest.fixture
def config_file(tmp_path):
    """TOML config for CLI runs at oracle scale."""
    path = tmp_path / "config.toml"
    path.write_text(toml.dumps({
        "version": "1",
        "synth": dict(SMALL_SYNTH, frame_count=40),
        "selector": SMALL_SELECTOR,
        "retrieval": {"similarity_threshold": 0.5},
        "paths": {"out_dir": str(tmp_path / "out")},
    }), encoding="utf-8")
    return path


def circle_positions(frames_per_lap: int, laps: int, circumference: float) -> np.ndarray:
    radius = circumference / (2.0 * np.pi)
    angles = 2.0 * np.pi * np.arange(frames_per_lap * laps) / frames_per_lap
    return np.stack([radius * np.cos(angles), radius * np.sin(angles), np.zeros_like(angles)], axis=1)


@pytest.fixture
def two_lap_circle():
    """200 exact poses, two laps of a 100 m circle (1 m between frames)."""
    return circle_positions(100, 2, 100.0)
