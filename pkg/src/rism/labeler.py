"""Partial occupancy labels from lidar returns by per-azimuth ray tracing.

Along one ray: cells before the first return are free and observed, return
cells are occupied, cells between the first and last return are partially
observed, and cells beyond the last return are unobserved. An azimuth with no
return at all is partially observed along its whole length.
"""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np

from .grids import OBSERVED, PARTIAL, UNOBSERVED, LabelSet

__all__ = [
    "LidarReturns",
    "RayGeometry",
    "label_azimuth",
    "ray_codes",
    "rasterize_labels",
    "ray_cells",
    "splat_codes",
    "center_mask",
    "CODE_UNOBSERVED",
    "CODE_PARTIAL",
    "CODE_FREE",
    "CODE_OCCUPIED",
]

# Merge priority: a larger code wins on cells shared by several rays.
CODE_UNOBSERVED = 0
CODE_PARTIAL = 1
CODE_FREE = 2
CODE_OCCUPIED = 3

_CODE_TO_OCC = np.array([0, 0, 0, 1], dtype=np.uint8)
_CODE_TO_OBS = np.array([UNOBSERVED, PARTIAL, OBSERVED, OBSERVED], dtype=np.uint8)


@dataclass(frozen=True)
class LidarReturns:
    """Hit ranges (metres) per beam; beam ``b`` has bearing ``b * 2*pi / num_beams``."""

    num_beams: int
    max_range: float
    hits: tuple[tuple[float, ...], ...]

    def __post_init__(self):
        if len(self.hits) != self.num_beams:
            raise ValueError(f"expected {self.num_beams} hit lists, got {len(self.hits)}")
        for b, h in enumerate(self.hits):
            if any(r2 <= r1 for r1, r2 in zip(h, h[1:])):
                raise ValueError(f"hits on beam {b} are not strictly increasing")
            if h and (h[0] < 0 or h[-1] > self.max_range):
                raise ValueError(f"hits on beam {b} fall outside [0, max_range]")

    @classmethod
    def from_pairs(
        cls, pairs: Sequence[tuple[int, float]], num_beams: int, max_range: float
    ) -> LidarReturns:
        per_beam: list[list[float]] = [[] for _ in range(num_beams)]
        for beam, rng in pairs:
            per_beam[int(beam)].append(float(rng))
        return cls(num_beams, float(max_range), tuple(tuple(sorted(h)) for h in per_beam))


@dataclass(frozen=True)
class RayGeometry:
    """Cartesian grid plus the sampling of each labelled ray."""

    height: int
    width: int
    cell_size: float
    bin_size: float
    center_mask_m: float = 2.0

    def num_bins(self, max_range: float) -> int:
        return int(np.floor(max_range / self.bin_size + 1e-9)) + 1


def ray_codes(hits: Sequence[float], max_range: float, num_bins: int, bin_size: float) -> np.ndarray:
    """Per-bin priority codes for one azimuth (see ``CODE_*``)."""
    hits = list(hits)
    if any(b <= a for a, b in zip(hits, hits[1:])):
        raise ValueError(f"hits must be sorted ascending without repeats: {hits}")
    if not hits:
        return np.full(num_bins, CODE_PARTIAL, dtype=np.uint8)
    hit_bins = np.floor(np.asarray(hits) / bin_size + 0.5).astype(np.int64)
    hit_bins = hit_bins[hit_bins < num_bins]
    if hit_bins.size == 0:
        return np.full(num_bins, CODE_PARTIAL, dtype=np.uint8)
    first, last = hit_bins[0], hit_bins[-1]
    codes = np.full(num_bins, CODE_UNOBSERVED, dtype=np.uint8)
    codes[:first] = CODE_FREE
    codes[first:last] = CODE_PARTIAL
    codes[hit_bins] = CODE_OCCUPIED
    return codes


def label_azimuth(
    hits: Sequence[float], max_range: float, num_bins: int, bin_size: float
) -> tuple[np.ndarray, np.ndarray]:
    """Occupancy and observability along one ray of ``num_bins`` bins.

    Returns:
        ``(occupancy, observability)`` as uint8 arrays of length ``num_bins``.
    """
    codes = ray_codes(hits, max_range, num_bins, bin_size)
    return _CODE_TO_OCC[codes], _CODE_TO_OBS[codes]


def center_mask(height: int, width: int, cell_size: float, side_m: float) -> np.ndarray:
    """Cells whose centre lies inside a square of side ``side_m`` around the sensor."""
    mask = np.zeros((height, width), dtype=bool)
    if side_m <= 0:
        return mask
    half = int(np.floor(side_m / (2 * cell_size) + 1e-9))
    cu, cv = height // 2, width // 2
    mask[max(cu - half, 0) : cu + half + 1, max(cv - half, 0) : cv + half + 1] = True
    return mask


def ray_cells(geometry: RayGeometry, num_beams: int, num_bins: int) -> np.ndarray:
    """Flat Cartesian cell index of every (beam, bin) sample, -1 off-grid."""
    bearing = np.arange(num_beams) * (2 * np.pi / num_beams)
    ranges = np.arange(num_bins) * geometry.bin_size
    x = np.cos(bearing)[:, None] * ranges[None, :]
    y = np.sin(bearing)[:, None] * ranges[None, :]
    v = np.floor(x / geometry.cell_size + geometry.width / 2 + 0.5).astype(np.int64)
    u = np.floor(geometry.height / 2 - y / geometry.cell_size + 0.5).astype(np.int64)
    ok = (u >= 0) & (u < geometry.height) & (v >= 0) & (v < geometry.width)
    return np.where(ok, u * geometry.width + v, -1)


def splat_codes(cells: np.ndarray, codes: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    """Merge per-sample codes onto a grid, keeping the highest code per cell.

    ``cells`` holds flat cell indices (-1 to skip) aligned with ``codes``.
    Untouched cells get ``CODE_UNOBSERVED``.
    """
    merged = np.full(shape[0] * shape[1], CODE_UNOBSERVED, dtype=np.uint8)
    keep = cells >= 0
    np.maximum.at(merged, cells[keep], codes[keep])
    return merged.reshape(shape)


def rasterize_labels(returns: LidarReturns, geometry: RayGeometry) -> LabelSet:
    """Splat per-azimuth ray labels onto the Cartesian grid.

    Shared cells take the highest-priority code (occupied > free > partial >
    unobserved), so the merge does not depend on beam order. Cells reached by
    no ray, and the square around the sensor, are unobserved.
    """
    num_bins = geometry.num_bins(returns.max_range)
    cells = ray_cells(geometry, returns.num_beams, num_bins)
    codes = np.stack(
        [ray_codes(h, returns.max_range, num_bins, geometry.bin_size) for h in returns.hits]
    )
    merged = splat_codes(cells, codes, (geometry.height, geometry.width))
    merged[center_mask(geometry.height, geometry.width, geometry.cell_size, geometry.center_mask_m)] = (
        CODE_UNOBSERVED
    )
    return LabelSet(_CODE_TO_OCC[merged], _CODE_TO_OBS[merged])
