from abc import ABC, abstractmethod
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator
from packaging.version import InvalidVersion, Version

from app.version import CONFIG_SCHEMA_VERSION


class DatasetManifest(BaseModel):
    """Index of an on-disk dataset; paths are relative to the manifest's directory."""

    model_config = ConfigDict(extra="forbid")

    version: str = Field(CONFIG_SCHEMA_VERSION, description="Manifest schema version")
    kind: str = Field("synthetic", description="synthetic | kitti")
    seed: Optional[int] = Field(None, description="Generator seed (synthetic datasets only)")
    frame_count: int = Field(..., ge=0)
    image_dir: str = Field("images", description="Directory of ordered frame images")
    controls_file: Optional[str] = Field(None, description="Controls/observations text file")
    ground_truth_file: Optional[str] = Field(None, description="Trajectory file with ground-truth poses")
    truth_radius_m: Optional[float] = Field(None, gt=0)
    initial_velocity: Optional[List[float]] = Field(None, description="Velocity at frame 0 in m/s")
    config: Dict[str, Any] = Field(default_factory=dict, description="Generator config, when synthetic")

    @field_validator("version")
    @classmethod
    def _supported(cls, v):
        try:
            major = Version(v).major
        except InvalidVersion:
            raise ValueError(f"invalid manifest version {v!r}")
        if major != Version(CONFIG_SCHEMA_VERSION).major:
            raise ValueError(f"unsupported manifest version {v} (expected {CONFIG_SCHEMA_VERSION}.x)")
        return v

    @field_validator("initial_velocity")
    @classmethod
    def _three(cls, v):
        if v is not None and len(v) != 3:
            raise ValueError("initial_velocity must have 3 components")
        return v


class DatasetProvider(ABC):
    """
    Frame source for the pipeline: images plus whatever motion data the
    dataset carries (controls and observations for the filter, or poses).
    """

    @property
    @abstractmethod
    def frame_count(self) -> int:
        pass

    @abstractmethod
    def load_frame(self, frame: int):
        """
        Returns the GrayImage of one frame.
        Raises ImageError carrying the frame index when it cannot be read.
        """
        pass

    @abstractmethod
    def timestamps(self) -> np.ndarray:
        pass

    @property
    @abstractmethod
    def source_name(self) -> str:
        pass

    @property
    @abstractmethod
    def manifest(self) -> DatasetManifest:
        pass

    def controls(self) -> Optional[List]:
        """ControlInput per frame, or None when the dataset has no IMU stream."""
        return None

    def observations(self) -> Dict[int, Any]:
        """Frame index -> PositionObservation."""
        return {}

    def ground_truth(self) -> Optional[Tuple[np.ndarray, np.ndarray]]:
        """(positions (N, 3), quaternions (N, 4) scalar-first), or None."""
        return None

    def initial_velocity(self) -> Optional[np.ndarray]:
        if self.manifest.initial_velocity is None:
            return None
        return np.asarray(self.manifest.initial_velocity, dtype=float)
