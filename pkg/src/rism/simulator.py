"""Synthetic 2-D worlds with matching radar scans and lidar returns.

The radar model reproduces the artefacts that make raw scans hard to read:
exponential speckle, partially transmissive surfaces (true second returns),
saturated azimuth stripes, range-displaced ghost copies and one-bin azimuth
jitter standing in for phase noise. Each azimuth bin is a beam of several
rays, so anything inside the beam footprint returns power. Everything is a
pure function of its inputs and an integer seed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grids import PolarScan

__all__ = [
    "WorldSpec",
    "RadarNoiseConfig",
    "LidarConfig",
    "make_rng",
    "generate_world",
    "march_rays",
    "render_lidar",
    "render_radar",
    "beam_bearings",
]

MIN_OCCUPIED_FRACTION = 0.02
MAX_OCCUPIED_FRACTION = 0.25
SENSOR_CLEARANCE_M = 1.5


def make_rng(*key: int) -> np.random.Generator:
    """Counter-based generator keyed on integers, e.g. ``(master_seed, index, stream)``."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(k) for k in key])))


@dataclass(frozen=True)
class WorldSpec:
    occupancy_truth: np.ndarray
    reflectivity: np.ndarray
    rng_seed: int
    cell_size: float = 0.3

    def __post_init__(self):
        occ = np.ascontiguousarray(self.occupancy_truth, dtype=np.uint8)
        refl = np.ascontiguousarray(self.reflectivity, dtype=np.float32)
        if occ.shape != refl.shape:
            raise ValueError("occupancy and reflectivity shapes differ")
        if np.any(refl < 0) or np.any(refl > 1):
            raise ValueError("reflectivity must lie in [0, 1]")
        if np.any((refl > 0) & (occ == 0)):
            raise ValueError("reflectivity is non-zero on a free cell")
        object.__setattr__(self, "occupancy_truth", occ)
        object.__setattr__(self, "reflectivity", refl)

    @property
    def shape(self) -> tuple[int, int]:
        return self.occupancy_truth.shape

    @property
    def occupied_fraction(self) -> float:
        return float(self.occupancy_truth.mean())


@dataclass(frozen=True)
class RadarNoiseConfig:
    """Radar artefact model. Powers are in arbitrary linear units."""

    speckle_mean_power: float = 1.0
    return_gain: float = 20.0
    attenuation_per_hit: float = 0.4
    saturation_prob: float = 0.03
    ghost_prob: float = 0.1
    noise_floor: float = 1e-3
    saturation_gain: float = 15.0
    jitter_prob: float = 0.15
    beam_subrays: int = 8

    def __post_init__(self):
        for name in ("saturation_prob", "ghost_prob", "jitter_prob", "attenuation_per_hit"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {value}")
        for name in ("return_gain", "saturation_gain", "speckle_mean_power"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.noise_floor < 0:
            raise ValueError("noise_floor must be non-negative")
        if self.beam_subrays < 1:
            raise ValueError("beam_subrays must be >= 1")


@dataclass(frozen=True)
class LidarConfig:
    max_range: float
    num_beams: int
    dropout_prob: float = 0.0

    def __post_init__(self):
        if not self.max_range > 0:
            raise ValueError("max_range must be positive")
        if self.num_beams < 1:
            raise ValueError("num_beams must be >= 1")
        if not 0.0 <= self.dropout_prob <= 1.0:
            raise ValueError("dropout_prob must lie in [0, 1]")


def _stamp_world(height: int, width: int, cell_size: float, complexity: int, rng: np.random.Generator):
    occ = np.zeros((height, width), dtype=np.uint8)
    refl = np.zeros((height, width), dtype=np.float32)

    def put(u0, u1, v0, v1, r):
        u0, u1 = max(u0, 0), min(u1, height)
        v0, v1 = max(v0, 0), min(v1, width)
        if u0 >= u1 or v0 >= v1:
            return
        occ[u0:u1, v0:v1] = 1
        refl[u0:u1, v0:v1] = r

    cells_per_m = 1.0 / cell_size
    # Walls: one cell thick, 3-15 m long, axis aligned.
    for _ in range(2 * complexity):
        length = max(int(rng.uniform(3.0, 15.0) * cells_per_m), 2)
        r = rng.uniform(0.5, 1.0)
        if rng.random() < 0.5:
            u = int(rng.integers(0, height))
            v0 = int(rng.integers(-length // 2, width))
            put(u, u + 1, v0, v0 + length, r)
        else:
            v = int(rng.integers(0, width))
            u0 = int(rng.integers(-length // 2, height))
            put(u0, u0 + length, v, v + 1, r)
    # Vehicles: filled ~1.8 x 4.5 m rectangles, weak reflectors.
    for _ in range(2 * complexity):
        a = max(int(round(1.8 * cells_per_m)), 1)
        b = max(int(round(4.5 * cells_per_m)), 2)
        if rng.random() < 0.5:
            a, b = b, a
        u0 = int(rng.integers(0, height - a + 1))
        v0 = int(rng.integers(0, width - b + 1))
        put(u0, u0 + a, v0, v0 + b, rng.uniform(0.2, 0.6))
    # Isolated point scatterers (poles, signs).
    for _ in range(4 * complexity):
        u = int(rng.integers(0, height))
        v = int(rng.integers(0, width))
        put(u, u + 1, v, v + 1, rng.uniform(0.3, 1.0))

    # Keep the sensor's neighbourhood free.
    clear = max(int(np.ceil(SENSOR_CLEARANCE_M * cells_per_m)), 1)
    uu, vv = np.ogrid[:height, :width]
    near = (uu - height // 2) ** 2 + (vv - width // 2) ** 2 <= clear**2
    near[height // 2 - 1 : height // 2 + 2, width // 2 - 1 : width // 2 + 2] = True
    occ[near] = 0
    refl[near] = 0.0
    return occ, refl


def generate_world(
    height: int, width: int, complexity: int, seed: int, cell_size: float = 0.3, max_tries: int = 200
) -> WorldSpec:
    """Random scene of walls, vehicles and point scatterers around the sensor.

    ``complexity`` scales the number of objects; 0 gives an empty world. For
    non-empty worlds draws are rejected until the occupied fraction lies in
    [2%, 25%].
    """
    if height < 16 or width < 16:
        raise ValueError(f"world must be at least 16x16, got {height}x{width}")
    if complexity < 0:
        raise ValueError("complexity must be non-negative")
    if complexity == 0:
        return WorldSpec(
            np.zeros((height, width), np.uint8), np.zeros((height, width), np.float32), seed, cell_size
        )
    rng = make_rng(seed, 0x5EED)
    for _ in range(max_tries):
        occ, refl = _stamp_world(height, width, cell_size, complexity, rng)
        frac = occ.mean()
        if MIN_OCCUPIED_FRACTION <= frac <= MAX_OCCUPIED_FRACTION:
            return WorldSpec(occ, refl, seed, cell_size)
    raise RuntimeError(
        f"could not draw a world with occupied fraction in "
        f"[{MIN_OCCUPIED_FRACTION}, {MAX_OCCUPIED_FRACTION}] after {max_tries} tries"
    )


def march_rays(
    world: WorldSpec, bearings: np.ndarray, step: float, max_range: float
) -> tuple[np.ndarray, np.ndarray]:
    """Sample every ray at constant ``step`` from the sensor.

    Returns:
        ``(ranges, cells)``: sample ranges ``(J,)`` and the flat index of the
        cell containing each sample ``(len(bearings), J)``, -1 when off-grid.
    """
    h, w = world.shape
    n = int(np.floor(max_range / step + 1e-9)) + 1
    ranges = np.arange(n) * step
    x = np.cos(bearings)[:, None] * ranges[None, :]
    y = np.sin(bearings)[:, None] * ranges[None, :]
    v = np.floor(x / world.cell_size + w / 2 + 0.5).astype(np.int64)
    u = np.floor(h / 2 - y / world.cell_size + 0.5).astype(np.int64)
    ok = (u >= 0) & (u < h) & (v >= 0) & (v < w)
    return ranges, np.where(ok, u * w + v, -1)


def _occupied_samples(world: WorldSpec, cells: np.ndarray) -> np.ndarray:
    flat = world.occupancy_truth.ravel()
    return (cells >= 0) & (flat[np.maximum(cells, 0)] == 1)


def render_lidar(world: WorldSpec, cfg: LidarConfig, seed: int) -> list[tuple[int, float]]:
    """First-return range per beam, as ``(beam_index, range_m)`` pairs.

    Beams that drop out or hit nothing within ``max_range`` yield no pair.
    """
    rng = make_rng(seed, 0x11DA)
    bearings = np.arange(cfg.num_beams) * (2 * np.pi / cfg.num_beams)
    ranges, cells = march_rays(world, bearings, world.cell_size / 2, cfg.max_range)
    occ = _occupied_samples(world, cells)
    dropped = rng.random(cfg.num_beams) < cfg.dropout_prob
    any_hit = occ.any(axis=1)
    first = occ.argmax(axis=1)
    return [
        (int(b), float(ranges[first[b]]))
        for b in range(cfg.num_beams)
        if any_hit[b] and not dropped[b]
    ]


def _surface_crossings(world: WorldSpec, bearings: np.ndarray, max_range: float):
    """Entry points of each ray into occupied regions.

    Returns arrays ``(ray, range_m, reflectivity)`` ordered by ray then range.
    """
    ranges, cells = march_rays(world, bearings, world.cell_size / 2, max_range)
    occ = _occupied_samples(world, cells)
    entry = occ.copy()
    entry[:, 1:] &= ~occ[:, :-1]
    ray, j = np.nonzero(entry)
    refl = world.reflectivity.ravel()[cells[ray, j]]
    return ray, ranges[j], refl.astype(np.float64)


def beam_bearings(num_azimuths: int, subrays: int) -> np.ndarray:
    """Sub-ray bearings ``(num_azimuths * subrays,)`` spread evenly across each azimuth bin."""
    width = 2 * np.pi / num_azimuths
    offsets = ((np.arange(subrays) + 0.5) / subrays - 0.5) * width if subrays > 1 else np.zeros(1)
    return (np.arange(num_azimuths)[:, None] * width + offsets[None, :]).ravel()


def render_radar(
    world: WorldSpec,
    cfg: RadarNoiseConfig,
    num_azimuths: int,
    num_range_bins: int,
    range_resolution: float,
    seed: int,
) -> PolarScan:
    """Polar power scan of ``world`` under the radar artefact model.

    Each azimuth bin is a beam of ``cfg.beam_subrays`` rays spread over the
    bin width. Every ray carries a transmission factor that starts at 1 and is
    multiplied by ``attenuation_per_hit`` at each surface it enters. An entry
    adds ``return_gain * reflectivity * transmission / beam_subrays`` at its
    range bin, and background bins draw exponential speckle scaled by the
    beam-averaged transmission reaching them.
    """
    rng = make_rng(seed, 0xAD4A)
    n_az, n_r, n_sub = num_azimuths, num_range_bins, cfg.beam_subrays
    max_range = (n_r - 1) * range_resolution
    ray, rng_m, refl = _surface_crossings(world, beam_bearings(n_az, n_sub), max_range)
    az = ray // n_sub
    bins = np.minimum(np.floor(rng_m / range_resolution + 0.5).astype(np.int64), n_r - 1)

    # Surfaces entered before each crossing on the same ray.
    order_in_ray = np.zeros(ray.size, dtype=np.int64)
    if ray.size:
        starts = np.r_[0, np.flatnonzero(np.diff(ray)) + 1]
        counts = np.diff(np.r_[starts, ray.size])
        order_in_ray = np.arange(ray.size) - np.repeat(starts, counts)
    true_power = cfg.return_gain * refl * cfg.attenuation_per_hit**order_in_ray / n_sub

    # Transmission reaching each bin, per ray then averaged over the beam:
    # the product over crossings in strictly earlier bins.
    hits_per_bin = np.zeros((n_az * n_sub, n_r), dtype=np.int64)
    np.add.at(hits_per_bin, (ray, bins), 1)
    before = np.cumsum(hits_per_bin, axis=1) - hits_per_bin
    transmission = (cfg.attenuation_per_hit ** before.astype(np.float64)).reshape(n_az, n_sub, n_r).mean(axis=1)

    power = rng.exponential(1.0, size=(n_az, n_r)) * (cfg.speckle_mean_power * transmission)

    # Phase-noise stand-in: some true returns land one azimuth bin off.
    jitter = rng.random(ray.size) < cfg.jitter_prob
    shift = np.where(rng.random(ray.size) < 0.5, -1, 1)
    ret_az = np.where(jitter, (az + shift) % n_az, az)
    returns = np.zeros((n_az, n_r))
    np.add.at(returns, (az, bins), true_power)
    np.add.at(power, (ret_az, bins), true_power)

    # Ghosts: a displaced copy of one true return further down the azimuth.
    ghost_draw = rng.random(n_az)
    ghost_shift = rng.integers(n_r // 8, n_r // 3 + 1, size=n_az)
    ghost_pick = rng.random(n_az)
    for a in np.flatnonzero(ghost_draw < cfg.ghost_prob):
        lit = np.flatnonzero(returns[a])
        if lit.size == 0:
            continue
        src = lit[min(int(ghost_pick[a] * lit.size), lit.size - 1)]
        gb = src + ghost_shift[a]
        if gb < n_r:
            power[a, gb] += returns[a, src]

    # Amplifier saturation: a bright speckled stripe over a contiguous range span.
    sat_draw = rng.random(n_az)
    sat_len = rng.integers(n_r // 4, n_r + 1, size=n_az)
    sat_start = rng.integers(0, n_r // 4 + 1, size=n_az)
    sat_tex = rng.exponential(1.0, size=(n_az, n_r))
    for a in np.flatnonzero(sat_draw < cfg.saturation_prob):
        s0 = sat_start[a]
        s1 = min(s0 + sat_len[a], n_r)
        power[a, s0:s1] += cfg.saturation_gain * sat_tex[a, s0:s1]

    np.maximum(power, cfg.noise_floor, out=power)
    return PolarScan(power.astype(np.float32), range_resolution)
