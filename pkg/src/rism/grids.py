"""Raster types and the fixed polar -> Cartesian geometry.

Conventions used throughout the package:

* Polar scans are ``(num_azimuths, num_range_bins)`` arrays. Azimuth bin ``a``
  points along bearing ``a * 2*pi / num_azimuths`` measured counter-clockwise
  from the grid +x axis; range bin ``k`` is centred at ``k * range_resolution``.
* Cartesian grids are ``(H, W)`` arrays, row 0 at the top. Cell ``(u, v)`` has
  its centre at ``x = (v - W/2) * cell_size``, ``y = (H/2 - u) * cell_size``, so
  the sensor sits on cell ``(H/2, W/2)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp

__all__ = [
    "PolarScan",
    "CartesianGrid",
    "LabelSet",
    "PolarCartMap",
    "UNOBSERVED",
    "OBSERVED",
    "PARTIAL",
    "build_polar_cart_map",
    "resample_polar_to_cart",
    "resample_polar_to_cart_backward",
    "polar_mask_to_cart",
    "cell_centers",
    "rotate_pair",
]

UNOBSERVED = 0
OBSERVED = 1
PARTIAL = 2


@dataclass(frozen=True)
class PolarScan:
    """One radar sweep: power returns per (azimuth, range bin)."""

    power: np.ndarray
    range_resolution: float

    def __post_init__(self):
        power = np.ascontiguousarray(self.power, dtype=np.float32)
        if power.ndim != 2:
            raise ValueError(f"polar power must be 2-D, got shape {power.shape}")
        if power.shape[0] < 4 or power.shape[1] < 4:
            raise ValueError(f"polar scan needs at least 4x4 bins, got {power.shape}")
        if not np.all(np.isfinite(power)):
            raise ValueError("polar power contains non-finite values")
        if np.any(power < 0):
            raise ValueError("polar power must be non-negative")
        if not self.range_resolution > 0:
            raise ValueError("range_resolution must be positive")
        object.__setattr__(self, "power", power)

    @property
    def num_azimuths(self) -> int:
        return self.power.shape[0]

    @property
    def num_range_bins(self) -> int:
        return self.power.shape[1]

    @property
    def max_range(self) -> float:
        return (self.num_range_bins - 1) * self.range_resolution


@dataclass(frozen=True)
class CartesianGrid:
    values: np.ndarray
    cell_size: float

    def __post_init__(self):
        values = np.ascontiguousarray(self.values, dtype=np.float32)
        if values.ndim != 2:
            raise ValueError(f"grid must be 2-D, got shape {values.shape}")
        if values.shape[0] % 2 or values.shape[1] % 2:
            raise ValueError(f"grid dimensions must be even, got {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("grid contains non-finite values")
        if not self.cell_size > 0:
            raise ValueError("cell_size must be positive")
        object.__setattr__(self, "values", values)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class LabelSet:
    """Partial occupancy labels and per-cell observability (0/1/2)."""

    occupancy: np.ndarray
    observability: np.ndarray

    def __post_init__(self):
        occ = np.ascontiguousarray(self.occupancy, dtype=np.uint8)
        obs = np.ascontiguousarray(self.observability, dtype=np.uint8)
        if occ.shape != obs.shape:
            raise ValueError(f"label shapes differ: {occ.shape} vs {obs.shape}")
        if occ.max(initial=0) > 1:
            raise ValueError("occupancy labels must be 0 or 1")
        if obs.max(initial=0) > 2:
            raise ValueError("observability must be 0, 1 or 2")
        object.__setattr__(self, "occupancy", occ)
        object.__setattr__(self, "observability", obs)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.occupancy.shape


def cell_centers(height: int, width: int, cell_size: float) -> tuple[np.ndarray, np.ndarray]:
    """Metric ``(x, y)`` of every cell centre, each shaped ``(H, W)``."""
    u = np.arange(height, dtype=np.float64)[:, None]
    v = np.arange(width, dtype=np.float64)[None, :]
    x = (v - width / 2) * cell_size
    y = (height / 2 - u) * cell_size
    return np.broadcast_to(x, (height, width)), np.broadcast_to(y, (height, width))


@dataclass(frozen=True)
class PolarCartMap:
    """Bilinear lookup from every Cartesian cell into a polar raster.

    ``indices`` and ``weights`` are ``(H*W, 4)``; indices are flat offsets into
    a row-major ``(num_azimuths, num_range_bins)`` raster. Cells beyond the last
    range bin have ``in_range == False`` and all-zero weights.
    """

    num_azimuths: int
    num_range_bins: int
    range_resolution: float
    height: int
    width: int
    cell_size: float
    azimuth_coord: np.ndarray = field(repr=False)
    range_coord: np.ndarray = field(repr=False)
    indices: np.ndarray = field(repr=False)
    weights: np.ndarray = field(repr=False)
    in_range: np.ndarray = field(repr=False)

    @property
    def polar_shape(self) -> tuple[int, int]:
        return (self.num_azimuths, self.num_range_bins)

    @property
    def cart_shape(self) -> tuple[int, int]:
        return (self.height, self.width)

    @cached_property
    def matrix(self) -> sp.csr_matrix:
        """Sparse ``(H*W, Theta*R)`` operator; ``cart = M @ polar``."""
        n_cells = self.height * self.width
        rows = np.repeat(np.arange(n_cells), 4)
        m = sp.coo_matrix(
            (self.weights.ravel(), (rows, self.indices.ravel())),
            shape=(n_cells, self.num_azimuths * self.num_range_bins),
        )
        return m.tocsr()

    @cached_property
    def matrix_t(self) -> sp.csr_matrix:
        return self.matrix.T.tocsr()

    @cached_property
    def _operator_cache(self) -> dict:
        return {}

    def operators(self, dtype) -> tuple[sp.csr_matrix, sp.csr_matrix]:
        """``(M, M.T)`` cast to ``dtype``, built once per dtype."""
        key = np.dtype(dtype).str
        cache = self._operator_cache
        if key not in cache:
            cache[key] = (self.matrix.astype(dtype), self.matrix_t.astype(dtype))
        return cache[key]

    @cached_property
    def nearest_indices(self) -> np.ndarray:
        """Flat index of the nearest polar bin per cell, -1 when out of range."""
        a = np.floor(self.azimuth_coord + 0.5).astype(np.int64) % self.num_azimuths
        r = np.floor(self.range_coord + 0.5).astype(np.int64)
        flat = a * self.num_range_bins + np.minimum(r, self.num_range_bins - 1)
        return np.where(self.in_range, flat, -1).reshape(self.height, self.width)


def build_polar_cart_map(
    num_azimuths: int,
    num_range_bins: int,
    range_resolution: float,
    height: int,
    width: int,
    cell_size: float,
) -> PolarCartMap:
    for name, value in [
        ("num_azimuths", num_azimuths),
        ("num_range_bins", num_range_bins),
        ("range_resolution", range_resolution),
        ("height", height),
        ("width", width),
        ("cell_size", cell_size),
    ]:
        if not value > 0:
            raise ValueError(f"{name} must be positive, got {value}")

    x, y = cell_centers(height, width, cell_size)
    rng = np.hypot(x, y).ravel()
    bearing = np.mod(np.arctan2(y, x).ravel(), 2 * np.pi)
    az = bearing / (2 * np.pi / num_azimuths)
    # Guard the 2*pi seam: mod can round up to exactly num_azimuths.
    az = np.where(az >= num_azimuths, az - num_azimuths, az)
    rc = rng / range_resolution

    in_range = rc <= (num_range_bins - 1) + 1e-9
    a0 = np.floor(az).astype(np.int64)
    fa = az - a0
    a0 %= num_azimuths
    a1 = (a0 + 1) % num_azimuths
    r0 = np.minimum(np.floor(rc).astype(np.int64), num_range_bins - 1)
    fr = np.clip(rc - r0, 0.0, 1.0)
    r1 = np.minimum(r0 + 1, num_range_bins - 1)

    indices = np.stack(
        [
            a0 * num_range_bins + r0,
            a0 * num_range_bins + r1,
            a1 * num_range_bins + r0,
            a1 * num_range_bins + r1,
        ],
        axis=1,
    )
    weights = np.stack(
        [(1 - fa) * (1 - fr), (1 - fa) * fr, fa * (1 - fr), fa * fr], axis=1
    )
    weights[~in_range] = 0.0
    indices[~in_range] = 0
    return PolarCartMap(
        num_azimuths=num_azimuths,
        num_range_bins=num_range_bins,
        range_resolution=float(range_resolution),
        height=height,
        width=width,
        cell_size=float(cell_size),
        azimuth_coord=az,
        range_coord=rc,
        indices=indices,
        weights=weights,
        in_range=in_range,
    )


def resample_polar_to_cart(pmap: PolarCartMap, polar: np.ndarray) -> np.ndarray:
    """Bilinear polar -> Cartesian resampling. Leading batch axes are kept."""
    polar = np.asarray(polar)
    if polar.shape[-2:] != pmap.polar_shape:
        raise ValueError(
            f"polar raster shape {polar.shape[-2:]} does not match map {pmap.polar_shape}"
        )
    lead = polar.shape[:-2]
    flat = polar.reshape(-1, pmap.num_azimuths * pmap.num_range_bins)
    out = np.asarray((pmap.matrix @ flat.T).T, dtype=polar.dtype)
    return out.reshape(lead + pmap.cart_shape)


def resample_polar_to_cart_backward(pmap: PolarCartMap, grad_out: np.ndarray) -> np.ndarray:
    """Adjoint of :func:`resample_polar_to_cart`."""
    grad_out = np.asarray(grad_out)
    if grad_out.shape[-2:] != pmap.cart_shape:
        raise ValueError(
            f"gradient shape {grad_out.shape[-2:]} does not match map {pmap.cart_shape}"
        )
    lead = grad_out.shape[:-2]
    flat = grad_out.reshape(-1, pmap.height * pmap.width)
    out = np.asarray((pmap.matrix_t @ flat.T).T, dtype=grad_out.dtype)
    return out.reshape(lead + pmap.polar_shape)


def polar_mask_to_cart(pmap: PolarCartMap, mask: np.ndarray) -> np.ndarray:
    """Nearest-bin lookup of a boolean polar mask onto the Cartesian grid."""
    mask = np.asarray(mask, dtype=bool)
    if mask.shape[-2:] != pmap.polar_shape:
        raise ValueError(
            f"mask shape {mask.shape[-2:]} does not match map {pmap.polar_shape}"
        )
    lead = mask.shape[:-2]
    flat = mask.reshape(lead + (-1,))
    near = pmap.nearest_indices
    out = np.take(flat, np.maximum(near, 0), axis=-1)
    return out & (near >= 0)


def _rotate_cartesian(raster: np.ndarray, angle: float, fill: int) -> np.ndarray:
    """Nearest-neighbour rotation about the sensor cell, counter-clockwise."""
    h, w = raster.shape
    u = np.arange(h, dtype=np.float64)[:, None]
    v = np.arange(w, dtype=np.float64)[None, :]
    x = v - w / 2
    y = h / 2 - u
    c, s = np.cos(angle), np.sin(angle)
    # Pull each destination cell from its pre-image under the rotation.
    xs = c * x + s * y
    ys = -s * x + c * y
    src_v = np.floor(xs + w / 2 + 0.5).astype(np.int64)
    src_u = np.floor(h / 2 - ys + 0.5).astype(np.int64)
    valid = (src_u >= 0) & (src_u < h) & (src_v >= 0) & (src_v < w)
    out = np.full((h, w), fill, dtype=raster.dtype)
    out[valid] = raster[src_u[valid], src_v[valid]]
    return out


def rotate_pair(
    polar: PolarScan, labels: LabelSet, angle_bins: int
) -> tuple[PolarScan, LabelSet]:
    """Rotate a scan/label pair by ``angle_bins`` azimuth bins about the sensor."""
    n_az = polar.num_azimuths
    k = int(angle_bins) % n_az
    if k == 0:
        return polar, labels
    power = np.roll(polar.power, k, axis=0)
    angle = k * 2 * np.pi / n_az
    occ = _rotate_cartesian(labels.occupancy, angle, fill=0)
    obs = _rotate_cartesian(labels.observability, angle, fill=UNOBSERVED)
    return PolarScan(power, polar.range_resolution), LabelSet(occ, obs)
