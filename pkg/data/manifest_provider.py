from pathlib import Path
from typing import Dict, List, Optional

import numpy as np
from pydantic import ValidationError

from app.error_handling import DatasetError, ImageError
from vision.image import GrayImage, load_image
from .base import DatasetManifest, DatasetProvider
from .formats import read_controls, read_json, read_trajectory


class ManifestDataset(DatasetProvider):
    """
    Dataset written by `synth` (or laid out the same way by hand):
    a JSON manifest next to an image directory, a controls file and a
    ground-truth trajectory file.
    """

    def __init__(self, manifest_path):
        path = Path(manifest_path)
        if path.is_dir():
            path = path / "manifest.json"
        self.path = path
        self.root = path.parent
        try:
            self._manifest = DatasetManifest.model_validate(read_json(path))
        except ValidationError as exc:
            raise DatasetError(f"invalid manifest {path}: {exc}") from exc

        self._image_paths = sorted((self.root / self._manifest.image_dir).glob("*.pgm"))
        if len(self._image_paths) != self._manifest.frame_count:
            raise DatasetError(
                f"{path}: manifest lists {self._manifest.frame_count} frames "
                f"but {len(self._image_paths)} images were found"
            )

        self._timestamps: Optional[np.ndarray] = None
        self._controls = None
        self._observations: Dict = {}
        if self._manifest.controls_file:
            self._timestamps, self._controls, self._observations = read_controls(self.root / self._manifest.controls_file)
            self._check_count("controls", len(self._controls))

        self._truth = None
        if self._manifest.ground_truth_file:
            self._truth = read_trajectory(self.root / self._manifest.ground_truth_file)
            self._check_count("ground-truth poses", len(self._truth))
            if self._timestamps is None:
                self._timestamps = self._truth.timestamps

    def _check_count(self, what: str, count: int):
        if count != self._manifest.frame_count:
            raise DatasetError(f"{self.path}: {self._manifest.frame_count} frames but {count} {what}")

    @property
    def source_name(self) -> str:
        return f"manifest:{self.path}"

    @property
    def manifest(self) -> DatasetManifest:
        return self._manifest

    @property
    def frame_count(self) -> int:
        return self._manifest.frame_count

    @property
    def truth_radius(self) -> Optional[float]:
        return self._manifest.truth_radius_m

    def timestamps(self) -> np.ndarray:
        if self._timestamps is None:
            return np.arange(self.frame_count, dtype=float)
        return self._timestamps

    def controls(self) -> Optional[List]:
        return self._controls

    def observations(self) -> Dict:
        return self._observations

    def ground_truth(self):
        if self._truth is None:
            return None
        return self._truth.positions, self._truth.rotations

    def load_frame(self, frame: int) -> GrayImage:
        if not 0 <= frame < self.frame_count:
            raise ImageError(f"frame out of range [0, {self.frame_count})", frame=frame)
        return load_image(self._image_paths[frame], frame=frame)
