from pathlib import Path
from typing import Optional

import numpy as np

from app.error_handling import DatasetError, ImageError
from utils.rotations import quat_from_matrix
from vision.image import GrayImage, load_image
from .base import DatasetManifest, DatasetProvider

IMAGE_SUFFIXES = (".png", ".pgm", ".jpg", ".jpeg")

# KITTI odometry sequences are recorded at 10 Hz
DEFAULT_FRAME_RATE = 10.0


class KittiStyleDataset(DatasetProvider):
    """
    KITTI-odometry layout: a directory of ordered grayscale images and a
    pose file with one row-major 3x4 [R | t] camera pose per line. The poses
    play the ground-truth role; there is no IMU stream, so place records are
    built from the poses directly.
    """

    def __init__(self, image_dir, pose_file, times_file=None):
        self.image_dir = Path(image_dir)
        self.pose_file = Path(pose_file)
        if not self.image_dir.is_dir():
            raise DatasetError(f"image directory not found: {self.image_dir}")
        self._image_paths = sorted(p for p in self.image_dir.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)

        try:
            rows = np.loadtxt(self.pose_file, dtype=float, ndmin=2)
        except (OSError, ValueError) as exc:
            raise DatasetError(f"cannot read pose file {self.pose_file}: {exc}") from exc
        if rows.size and rows.shape[1] != 12:
            raise DatasetError(f"{self.pose_file}: expected 12 values per line, got {rows.shape[1]}")
        if len(rows) != len(self._image_paths):
            raise DatasetError(
                f"{len(self._image_paths)} images in {self.image_dir} but {len(rows)} poses in {self.pose_file}"
            )

        poses = rows.reshape(-1, 3, 4)
        self._positions = poses[:, :, 3].copy()
        self._rotations = (np.stack([quat_from_matrix(p[:, :3]) for p in poses])
                           if len(poses) else np.zeros((0, 4)))

        times_file = Path(times_file) if times_file else self.pose_file.parent / "times.txt"
        self._timestamps = None
        if times_file.exists():
            self._timestamps = np.loadtxt(times_file, dtype=float, ndmin=1)
            if len(self._timestamps) != len(rows):
                raise DatasetError(f"{len(rows)} poses but {len(self._timestamps)} timestamps in {times_file}")

    @property
    def source_name(self) -> str:
        return f"kitti:{self.image_dir}"

    @property
    def frame_count(self) -> int:
        return len(self._image_paths)

    @property
    def truth_radius(self) -> Optional[float]:
        return None

    @property
    def manifest(self) -> DatasetManifest:
        return DatasetManifest(
            kind="kitti",
            frame_count=self.frame_count,
            image_dir=str(self.image_dir),
            ground_truth_file=str(self.pose_file),
        )

    def timestamps(self) -> np.ndarray:
        if self._timestamps is None:
            return np.arange(self.frame_count) / DEFAULT_FRAME_RATE
        return self._timestamps

    def ground_truth(self):
        return self._positions, self._rotations

    def load_frame(self, frame: int) -> GrayImage:
        if not 0 <= frame < self.frame_count:
            raise ImageError(f"frame out of range [0, {self.frame_count})", frame=frame)
        return load_image(self._image_paths[frame], frame=frame)


def load_kitti_style(image_dir, pose_file, times_file=None) -> KittiStyleDataset:
    return KittiStyleDataset(image_dir, pose_file, times_file)
