"""
Procedural frames keyed to world position.

The ground texture is integer value noise: every world cell gets a hashed
byte per octave, values are bilinearly interpolated in fixed point and the
octaves are blended with integer weights. Camera windows are world-aligned
squares centred on the camera position. Everything up to the illumination
step is integer arithmetic, so frames are bit-identical across platforms.
"""
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from app.error_handling import ConfigError, ImageError
from simulation.trajectory import TEXTURE_MAX, TEXTURE_MIN, SynthConfig
from vision.image import GrayImage

# Fractional bits of the fixed-point world coordinates
FIXED_BITS = 8
FIXED_ONE = 1 << FIXED_BITS

OCTAVE_DIVISORS = (1, 2, 4)
OCTAVE_WEIGHTS = (4, 2, 1)

_MASK64 = (1 << 64) - 1


def _mix(h: np.ndarray) -> np.ndarray:
    h ^= h >> np.uint64(30)
    h *= np.uint64(0xBF58476D1CE4E5B9)
    h ^= h >> np.uint64(27)
    h *= np.uint64(0x94D049BB133111EB)
    h ^= h >> np.uint64(31)
    return h


def cell_hash(ix: np.ndarray, iy: np.ndarray, octave: int, seed: int) -> np.ndarray:
    """Byte in [0, 255] per integer cell; ix/iy are int64 arrays of any shape."""
    ix, iy = np.broadcast_arrays(ix, iy)
    salt = np.uint64((seed * 0x9E3779B97F4A7C15 + (octave + 1) * 0x632BE59BD9B4E019) & _MASK64)
    with np.errstate(over="ignore"):
        h = ix.astype(np.uint64) * np.uint64(0xD6E8FEB86659FD93)
        h ^= iy.astype(np.uint64) * np.uint64(0xA0761D6478BD642F)
        h ^= salt
        h = _mix(h)
    return (h & np.uint64(0xFF)).astype(np.int64)


def value_noise(x: np.ndarray, y: np.ndarray, cell: int, octave: int, seed: int) -> np.ndarray:
    """Bilinear integer interpolation of cell hashes; x, y and cell are in fixed-point units."""
    ix, fx = np.divmod(x, cell)
    iy, fy = np.divmod(y, cell)
    h00 = cell_hash(ix, iy, octave, seed)
    h10 = cell_hash(ix + 1, iy, octave, seed)
    h01 = cell_hash(ix, iy + 1, octave, seed)
    h11 = cell_hash(ix + 1, iy + 1, octave, seed)
    gx, gy = cell - fx, cell - fy
    total = h00 * gx * gy + h10 * fx * gy + h01 * gx * fy + h11 * fx * fy
    return total // (cell * cell)


def texture(x: np.ndarray, y: np.ndarray, cell_size_m: float, seed: int) -> np.ndarray:
    """Texture values in [TEXTURE_MIN, TEXTURE_MAX] at fixed-point world coordinates."""
    blended = np.zeros(np.broadcast(x, y).shape, dtype=np.int64)
    for octave, (divisor, weight) in enumerate(zip(OCTAVE_DIVISORS, OCTAVE_WEIGHTS)):
        cell = max(1, int(round(cell_size_m / divisor * FIXED_ONE)))
        blended += weight * value_noise(x, y, cell, octave, seed)
    blended //= sum(OCTAVE_WEIGHTS)
    return TEXTURE_MIN + blended * (TEXTURE_MAX - TEXTURE_MIN) // 255


@dataclass(frozen=True)
class Illumination:
    gain: float = 1.0
    bias: float = 0.0
    gamma: float = 1.0

    def apply(self, pixels: np.ndarray) -> np.ndarray:
        out = self.gain * pixels + self.bias
        if self.gamma != 1.0:
            out = 255.0 * np.power(np.clip(out, 0.0, 255.0) / 255.0, self.gamma)
        return np.clip(out, 0.0, 255.0)


class AliasMap:
    """
    World-space translation from arc B onto arc A: a camera within capture
    radius of an arc-B ground-truth position is moved by the offset to the
    matching arc-A position before the texture lookup.
    """

    def __init__(self, positions: np.ndarray, arc_a, arc_b, capture_radius: float):
        a_lo, a_hi = arc_a
        b_lo, b_hi = arc_b
        if max(a_hi, b_hi) >= len(positions):
            raise ConfigError(f"alias arcs {arc_a}/{arc_b} exceed {len(positions)} frames")
        self.source = np.asarray(positions[a_lo:a_hi + 1, :2], dtype=float)
        self.target = np.asarray(positions[b_lo:b_hi + 1, :2], dtype=float)
        self.capture_radius = capture_radius

    def separation(self) -> float:
        """Smallest distance between any arc-A and arc-B position."""
        diff = self.source[:, None, :] - self.target[None, :, :]
        return float(np.sqrt(np.min(np.sum(diff * diff, axis=-1))))

    def offset(self, position) -> np.ndarray:
        xy = np.asarray(position, dtype=float)[:2]
        distances = np.sum((self.target - xy) ** 2, axis=1)
        k = int(np.argmin(distances))
        if distances[k] > self.capture_radius ** 2:
            return np.zeros(2)
        return self.source[k] - self.target[k]


def render_frame(
    position,
    orientation,
    cfg: SynthConfig,
    cell_size_m: float,
    illumination: Optional[Illumination] = None,
    alias: Optional[AliasMap] = None,
) -> GrayImage:
    """
    Renders the world-aligned window under the camera. The orientation is
    accepted for interface symmetry with real cameras; the window ignores
    heading so revisits in either direction look alike.
    """
    position = np.asarray(position, dtype=float)
    if position.shape[0] < 2 or not np.all(np.isfinite(position)):
        raise ImageError(f"cannot render at non-finite position {position}")
    centre = position[:2] + (alias.offset(position) if alias is not None else 0.0)

    size = cfg.image_size
    step = int(round(cfg.footprint_m / size * FIXED_ONE))
    cx = int(round(centre[0] * FIXED_ONE))
    cy = int(round(centre[1] * FIXED_ONE))
    offsets = np.arange(size, dtype=np.int64) * step - (size * step) // 2
    # Row 0 is the far (+y) edge of the window
    xs = (cx + offsets)[None, :]
    ys = (cy - offsets)[:, None]
    pixels = texture(xs, ys, cell_size_m, cfg.seed).astype(np.float64)

    if illumination is not None:
        pixels = illumination.apply(pixels)
    return GrayImage(pixels)


def illuminations(draws: Sequence) -> list:
    return [Illumination(float(g), float(b), float(c)) for g, b, c in draws]
