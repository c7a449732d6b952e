"""
DIRD-style illumination-robust descriptor.

Pipeline per image: integral image -> Haar filter bank at every offset
pixel around each sample point -> per-pixel L2 normalization -> sum over
offsets -> L2 normalization per sample point -> concatenation (row-major
sample order, shape-major filter order inside a block) -> bit/byte
quantization.

Every kernel is a 4x4 grid of +1/-1 segments, so responses are linear in
intensity and blind to a constant bias; the per-pixel normalization removes
any positive gain.
"""
import logging
from dataclasses import dataclass
from typing import List, Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy.special import expit

from app.error_handling import DescriptorError, ImageError
from vision.image import GrayImage, resample

logger = logging.getLogger(__name__)

# Norms below this are treated as the zero vector (intensity x area units)
ZERO_NORM = 1e-6

KERNEL_WEIGHTS = {
    "edge_x": [[1, 1, -1, -1]] * 4,
    "edge_y": [[1] * 4, [1] * 4, [-1] * 4, [-1] * 4],
    "diagonal": [[1, 1, -1, -1], [1, 1, -1, -1], [-1, -1, 1, 1], [-1, -1, 1, 1]],
    "line_x": [[1, -1, -1, 1]] * 4,
    "line_y": [[1] * 4, [-1] * 4, [-1] * 4, [1] * 4],
    "center_surround": [[1, -1, -1, 1], [-1, 1, 1, -1], [-1, 1, 1, -1], [1, -1, -1, 1]],
}

DEFAULT_OFFSETS = [(dy, dx) for dy in (-2, 0, 2) for dx in (-2, 0, 2)]


# --- Config ---

class DirdConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    segment_grid: Tuple[int, int] = (4, 4)
    filter_count: int = 54
    sample_grid: Tuple[int, int] = (8, 8)
    offset_set: List[Tuple[int, int]] = Field(default_factory=lambda: list(DEFAULT_OFFSETS))
    quantization: Literal["bit", "byte"] = "byte"
    logistic_steepness: float = Field(10.0, gt=0)
    logistic_midpoint: float = Field(0.5, gt=0)
    working_size: int = Field(256, ge=64)
    kernel_shapes: List[str] = Field(default_factory=lambda: list(KERNEL_WEIGHTS))
    kernel_scales: List[int] = Field(default_factory=lambda: [8, 16, 32])
    kernel_placements: List[Tuple[int, int]] = Field(default_factory=lambda: [(0, 0), (-1, -1), (1, 1)])

    @model_validator(mode="after")
    def _check_bank(self):
        if tuple(self.segment_grid) != (4, 4):
            raise ValueError("kernel tables are defined on a 4x4 segment grid")
        unknown = [s for s in self.kernel_shapes if s not in KERNEL_WEIGHTS]
        if unknown:
            raise ValueError(f"unknown kernel shapes: {unknown}")
        bad_scales = [s for s in self.kernel_scales if s <= 0 or s % 4]
        if bad_scales:
            raise ValueError(f"kernel scales must be positive multiples of 4: {bad_scales}")
        bank_size = len(self.kernel_shapes) * len(self.kernel_scales) * len(self.kernel_placements)
        if bank_size != self.filter_count:
            raise ValueError(f"filter_count {self.filter_count} != shapes x scales x placements = {bank_size}")
        if not self.offset_set:
            raise ValueError("offset_set must not be empty")
        if min(self.sample_grid) < 1:
            raise ValueError("sample_grid must be at least 1x1")
        return self

    @property
    def sample_count(self) -> int:
        return self.sample_grid[0] * self.sample_grid[1]

    @property
    def dimension(self) -> int:
        return self.filter_count * self.sample_count


# --- Descriptor value ---

@dataclass(frozen=True)
class DirdDescriptor:
    raw: Optional[np.ndarray] = None
    quantized: Optional[np.ndarray] = None
    mode: Optional[str] = None
    block_size: int = 54

    def __post_init__(self):
        if self.raw is None and self.quantized is None:
            raise DescriptorError("descriptor needs a raw or a quantized vector")
        if self.raw is not None:
            raw = np.array(self.raw, dtype=np.float64)
            if not np.all(np.isfinite(raw)):
                raise DescriptorError("raw descriptor has non-finite entries")
            raw.setflags(write=False)
            object.__setattr__(self, "raw", raw)
        if self.quantized is not None:
            if self.mode not in ("bit", "byte"):
                raise DescriptorError(f"quantized descriptor needs mode bit|byte, got {self.mode!r}")
            quantized = np.array(self.quantized, dtype=np.uint16)
            low, high = (0, 1) if self.mode == "bit" else (1, 256)
            if quantized.size and (quantized.min() < low or quantized.max() > high):
                raise DescriptorError(f"{self.mode} values outside [{low}, {high}]")
            quantized.setflags(write=False)
            object.__setattr__(self, "quantized", quantized)
        if self.raw is not None and self.quantized is not None and self.raw.size != self.quantized.size:
            raise DescriptorError("raw and quantized lengths differ")

    @property
    def dimension(self) -> int:
        return (self.raw if self.raw is not None else self.quantized).size

    def dequantized(self) -> np.ndarray:
        if self.quantized is None:
            raise DescriptorError("descriptor has no quantized part")
        values = self.quantized.astype(np.float64)
        if self.mode == "byte":
            return (values - 1.0) / 255.0 * 2.0 - 1.0
        return (2.0 * values - 1.0) / np.sqrt(self.block_size)

    def as_vector(self) -> np.ndarray:
        """Raw vector when present, else the dequantized one."""
        return self.raw if self.raw is not None else self.dequantized()

    def without_raw(self) -> "DirdDescriptor":
        return DirdDescriptor(quantized=self.quantized, mode=self.mode, block_size=self.block_size)


# --- Filter bank geometry ---

@dataclass(frozen=True)
class FilterBank:
    """Segment rectangles for every (scale, placement) pair and the 6 shape weight rows."""

    rect_dy: np.ndarray  # (n_geometries * 16,)
    rect_dx: np.ndarray
    rect_size: np.ndarray
    weights: np.ndarray  # (n_shapes, 16)
    n_geometries: int
    margin_low: int
    margin_high: int

    @classmethod
    def from_config(cls, cfg: DirdConfig) -> "FilterBank":
        dys, dxs, sizes = [], [], []
        low = high = 0
        for scale in cfg.kernel_scales:
            segment = scale // 4
            for py, px in cfg.kernel_placements:
                top = -scale // 2 + py * segment
                left = -scale // 2 + px * segment
                low = max(low, -top, -left)
                high = max(high, top + scale, left + scale)
                for r in range(4):
                    for c in range(4):
                        dys.append(top + r * segment)
                        dxs.append(left + c * segment)
                        sizes.append(segment)
        weights = np.array([np.ravel(KERNEL_WEIGHTS[s]) for s in cfg.kernel_shapes], dtype=np.float64)
        return cls(
            rect_dy=np.array(dys),
            rect_dx=np.array(dxs),
            rect_size=np.array(sizes),
            weights=weights,
            n_geometries=len(cfg.kernel_scales) * len(cfg.kernel_placements),
            margin_low=low,
            margin_high=high,
        )

    def responses(self, integral: np.ndarray, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
        """(P,) pixel coordinates -> (P, filter_count) responses, shape-major."""
        y0 = rows[:, None] + self.rect_dy[None, :]
        x0 = cols[:, None] + self.rect_dx[None, :]
        y1 = y0 + self.rect_size[None, :]
        x1 = x0 + self.rect_size[None, :]
        sums = integral[y1, x1] - integral[y0, x1] - integral[y1, x0] + integral[y0, x0]
        sums = sums.reshape(len(rows), self.n_geometries, 16)
        # (P, geometries, shapes) -> (P, shapes, geometries)
        per_shape = np.einsum("pgs,ks->pkg", sums, self.weights)
        return per_shape.reshape(len(rows), -1)


def integral_image(pixels: np.ndarray) -> np.ndarray:
    """Zero-padded summed-area table of the mean-centred image."""
    centred = pixels - pixels.mean()
    table = np.zeros((pixels.shape[0] + 1, pixels.shape[1] + 1))
    table[1:, 1:] = centred.cumsum(axis=0).cumsum(axis=1)
    return table


def l2_normalize(vectors: np.ndarray) -> np.ndarray:
    """Row-wise L2 normalization along the last axis; zero rows stay zero."""
    norms = np.linalg.norm(vectors, axis=-1, keepdims=True)
    safe = np.where(norms > ZERO_NORM, norms, 1.0)
    return np.where(norms > ZERO_NORM, vectors / safe, 0.0)


def sample_points(size: Tuple[int, int], cfg: DirdConfig, bank: Optional[FilterBank] = None):
    """Row-major (rows, cols) of the predefined sample pixels for an image of (height, width)."""
    bank = bank or FilterBank.from_config(cfg)
    offsets = np.array(cfg.offset_set)
    height, width = size
    row_lo = bank.margin_low - offsets[:, 0].min()
    row_hi = height - bank.margin_high - offsets[:, 0].max()
    col_lo = bank.margin_low - offsets[:, 1].min()
    col_hi = width - bank.margin_high - offsets[:, 1].max()
    if row_hi < row_lo or col_hi < col_lo:
        raise ImageError(f"image {width}x{height} too small for the filter support (margin {bank.margin_low})")
    rows = np.round(np.linspace(row_lo, row_hi, cfg.sample_grid[0])).astype(int)
    cols = np.round(np.linspace(col_lo, col_hi, cfg.sample_grid[1])).astype(int)
    grid_rows, grid_cols = np.meshgrid(rows, cols, indexing="ij")
    return grid_rows.ravel(), grid_cols.ravel()


# --- Operations ---

def filter_bank_response(img: GrayImage, pixel: Tuple[int, int], cfg: DirdConfig) -> np.ndarray:
    """Auxiliary vector (filter_count,) of signed Haar responses at pixel = (row, col)."""
    bank = FilterBank.from_config(cfg)
    row, col = int(pixel[0]), int(pixel[1])
    if not (bank.margin_low <= row <= img.height - bank.margin_high
            and bank.margin_low <= col <= img.width - bank.margin_high):
        raise ImageError(
            f"pixel {pixel} is too close to the border: needs {bank.margin_low} px before "
            f"and {bank.margin_high} px after in each direction"
        )
    integral = integral_image(img.pixels)
    return bank.responses(integral, np.array([row]), np.array([col]))[0]


def compute_descriptor(img: GrayImage, cfg: DirdConfig) -> DirdDescriptor:
    """Raw (unquantized) descriptor; the image is first resampled to the working size."""
    img = resample(img, cfg.working_size)
    bank = FilterBank.from_config(cfg)
    rows, cols = sample_points((img.height, img.width), cfg, bank)
    offsets = np.array(cfg.offset_set)

    all_rows = (rows[:, None] + offsets[None, :, 0]).ravel()
    all_cols = (cols[:, None] + offsets[None, :, 1]).ravel()
    responses = bank.responses(integral_image(img.pixels), all_rows, all_cols)
    responses = responses.reshape(len(rows), len(offsets), cfg.filter_count)

    blocks = l2_normalize(l2_normalize(responses).sum(axis=1))
    return DirdDescriptor(raw=blocks.ravel(), block_size=cfg.filter_count)


def quantize(d: DirdDescriptor, mode: str) -> DirdDescriptor:
    if d.raw is None:
        raise DescriptorError("quantize needs the raw descriptor")
    if mode == "byte":
        levels = np.clip(np.floor((d.raw + 1.0) / 2.0 * 255.0 + 0.5), 0, 255)
        quantized = levels.astype(np.uint16) + 1
    elif mode == "bit":
        quantized = (d.raw > 0).astype(np.uint16)
    else:
        raise DescriptorError(f"unknown quantization mode {mode!r}")
    return DirdDescriptor(raw=d.raw, quantized=quantized, mode=mode, block_size=d.block_size)


def extract_descriptor(img: GrayImage, cfg: DirdConfig) -> DirdDescriptor:
    return quantize(compute_descriptor(img, cfg), cfg.quantization)


def squared_norms(diff: np.ndarray) -> np.ndarray:
    # np.sum along the last axis so single pairs and row batches agree bit for bit
    return np.sum(diff * diff, axis=-1)


def descriptor_distance(a: DirdDescriptor, b: DirdDescriptor) -> float:
    if a.dimension != b.dimension:
        raise DescriptorError(f"descriptor dimensions differ: {a.dimension} vs {b.dimension}")
    if a.raw is not None and b.raw is not None:
        va, vb = a.raw, b.raw
    else:
        if a.mode != b.mode:
            raise DescriptorError(f"quantization modes differ: {a.mode} vs {b.mode}")
        va, vb = a.dequantized(), b.dequantized()
    return float(np.sqrt(squared_norms(va - vb)))


def normalized_distance(dist, cfg: DirdConfig):
    """RMS distance between sample blocks, so the logistic midpoint is independent of the grid size."""
    return np.asarray(dist, dtype=float) / np.sqrt(cfg.sample_count)


def similarity(dist, cfg: DirdConfig):
    """Logistic similarity of a normalized distance; accepts scalars or arrays."""
    value = expit(-cfg.logistic_steepness * (np.asarray(dist, dtype=float) - cfg.logistic_midpoint))
    return float(value) if np.ndim(value) == 0 else value
