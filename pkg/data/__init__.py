from pathlib import Path

from app.error_handling import DatasetError
from .base import DatasetManifest, DatasetProvider
from .kitti_provider import KittiStyleDataset, load_kitti_style
from .manifest_provider import ManifestDataset


def get_dataset_provider(dataset=None, image_dir=None, pose_file=None) -> DatasetProvider:
    """
    Factory function to get a dataset provider.
    `dataset` is a manifest file or a directory holding manifest.json;
    image_dir + pose_file select the KITTI-style layout instead.
    """
    if image_dir is not None or pose_file is not None:
        if image_dir is None or pose_file is None:
            raise DatasetError("KITTI-style datasets need both an image directory and a pose file")
        return load_kitti_style(image_dir, pose_file)
    if dataset is None:
        raise DatasetError("no dataset given (pass a manifest path or --images/--poses)")
    path = Path(dataset)
    if not path.exists():
        raise DatasetError(f"dataset not found: {path}")
    return ManifestDataset(path)
