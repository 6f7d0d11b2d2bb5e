"""Synthetic dataset assembly and its on-disk layout.

A dataset directory holds ``manifest.json`` plus one ``sample_NNNNN.rsmp``
file per sample. Sample files are little-endian::

    b"RSMP"  u32 version
    u32 num_azimuths, u32 num_range_bins, u32 height, u32 width
    f32 range_resolution, f32 cell_size, u32 has_world
    f32[num_azimuths * num_range_bins]   polar power
    u8[height * width]                   occupancy labels
    u8[height * width]                   observability
    (has_world only)
    u8[height * width]                   occupancy truth
    f32[height * width]                  reflectivity
    u64 world seed
"""

from __future__ import annotations

import json
import math
import os
import struct
import tempfile
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .grids import LabelSet, PolarScan
from .labeler import LidarReturns, RayGeometry, rasterize_labels
from .simulator import (
    LidarConfig,
    RadarNoiseConfig,
    WorldSpec,
    generate_world,
    render_lidar,
    render_radar,
)

__all__ = [
    "SimConfig",
    "Sample",
    "Dataset",
    "DatasetIOError",
    "make_sample",
    "make_dataset",
    "split_counts",
    "write_dataset",
    "load_dataset",
    "write_sample",
    "read_sample",
    "atomic_write_bytes",
    "atomic_write_text",
]

SAMPLE_MAGIC = b"RSMP"
SAMPLE_VERSION = 1
MANIFEST_NAME = "manifest.json"
MANIFEST_FORMAT = "rism-dataset/1"
_HEADER = struct.Struct("<4sIIIIIffI")


class DatasetIOError(OSError):
    """Raised when a dataset cannot be read or written; names the sample involved."""


@dataclass(frozen=True)
class SimConfig:
    height: int = 128
    width: int = 128
    cell_size: float = 0.3
    num_azimuths: int = 64
    num_range_bins: int = 128
    range_resolution: float = 0.2
    complexity: int = 3
    lidar_beams: int = 512
    lidar_max_range: float | None = None
    lidar_dropout: float = 0.02
    center_mask_m: float = 2.0
    test_fraction: float = 0.1
    radar: RadarNoiseConfig = field(default_factory=RadarNoiseConfig)

    @property
    def radar_max_range(self) -> float:
        return (self.num_range_bins - 1) * self.range_resolution

    @property
    def lidar(self) -> LidarConfig:
        max_range = self.radar_max_range if self.lidar_max_range is None else self.lidar_max_range
        if max_range > self.radar_max_range + 1e-9:
            raise ValueError("lidar max_range may not exceed the radar's")
        return LidarConfig(max_range=max_range, num_beams=self.lidar_beams, dropout_prob=self.lidar_dropout)

    @property
    def ray_geometry(self) -> RayGeometry:
        return RayGeometry(
            self.height, self.width, self.cell_size, bin_size=self.cell_size / 2,
            center_mask_m=self.center_mask_m,
        )

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> SimConfig:
        d = dict(d)
        d["radar"] = RadarNoiseConfig(**d.get("radar", {}))
        return cls(**d)


@dataclass(frozen=True)
class Sample:
    index: int
    scan: PolarScan
    labels: LabelSet
    world: WorldSpec | None = None


@dataclass
class Dataset:
    config: SimConfig
    master_seed: int
    samples: list[Sample]
    train_indices: list[int]
    test_indices: list[int]

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def train(self) -> list[Sample]:
        return [self.samples[i] for i in self.train_indices]

    @property
    def test(self) -> list[Sample]:
        return [self.samples[i] for i in self.test_indices]


def sample_seed(master_seed: int, index: int) -> int:
    words = np.random.SeedSequence([int(master_seed), int(index)]).generate_state(2, np.uint32)
    return (int(words[0]) << 31) ^ int(words[1])


def make_sample(config: SimConfig, master_seed: int, index: int) -> Sample:
    seed = sample_seed(master_seed, index)
    world = generate_world(config.height, config.width, config.complexity, seed, config.cell_size)
    lidar_cfg = config.lidar
    pairs = render_lidar(world, lidar_cfg, seed)
    returns = LidarReturns.from_pairs(pairs, lidar_cfg.num_beams, lidar_cfg.max_range)
    labels = rasterize_labels(returns, config.ray_geometry)
    scan = render_radar(
        world, config.radar, config.num_azimuths, config.num_range_bins, config.range_resolution, seed
    )
    return Sample(index, scan, labels, world)


def split_counts(n: int, test_fraction: float) -> tuple[int, int]:
    n_test = int(math.floor(n * test_fraction + 1e-9))
    return n - n_test, n_test


def make_dataset(n: int, config: SimConfig, master_seed: int, out: str | os.PathLike | None = None) -> Dataset:
    """Generate ``n`` independent samples; the last ``floor(n * test_fraction)`` form the test split."""
    if n < 1:
        raise ValueError("dataset needs at least one sample")
    samples = [make_sample(config, master_seed, i) for i in range(n)]
    n_train, _ = split_counts(n, config.test_fraction)
    ds = Dataset(config, int(master_seed), samples, list(range(n_train)), list(range(n_train, n)))
    if out is not None:
        write_dataset(ds, out)
    return ds


def atomic_write_bytes(path: str | os.PathLike, data: bytes) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path: str | os.PathLike, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def encode_sample(sample: Sample) -> bytes:
    scan, labels = sample.scan, sample.labels
    n_az, n_r = scan.power.shape
    h, w = labels.shape
    world = sample.world
    cell_size = world.cell_size if world is not None else 0.0
    parts = [
        _HEADER.pack(
            SAMPLE_MAGIC, SAMPLE_VERSION, n_az, n_r, h, w,
            scan.range_resolution, cell_size, int(world is not None),
        ),
        scan.power.astype("<f4").tobytes(),
        labels.occupancy.tobytes(),
        labels.observability.tobytes(),
    ]
    if world is not None:
        parts += [
            world.occupancy_truth.tobytes(),
            world.reflectivity.astype("<f4").tobytes(),
            struct.pack("<Q", world.rng_seed & 0xFFFFFFFFFFFFFFFF),
        ]
    return b"".join(parts)


def decode_sample(data: bytes, index: int) -> Sample:
    if len(data) < _HEADER.size:
        raise DatasetIOError(f"sample {index}: truncated header")
    magic, version, n_az, n_r, h, w, rres, cell, has_world = _HEADER.unpack_from(data, 0)
    if magic != SAMPLE_MAGIC:
        raise DatasetIOError(f"sample {index}: bad magic {magic!r}")
    if version != SAMPLE_VERSION:
        raise DatasetIOError(f"sample {index}: unsupported version {version}")
    need = _HEADER.size + 4 * n_az * n_r + 2 * h * w
    if has_world:
        need += 5 * h * w + 8
    if len(data) != need:
        raise DatasetIOError(f"sample {index}: expected {need} bytes, found {len(data)}")
    off = _HEADER.size
    power = np.frombuffer(data, "<f4", n_az * n_r, off).reshape(n_az, n_r)
    off += 4 * n_az * n_r
    occ = np.frombuffer(data, np.uint8, h * w, off).reshape(h, w)
    off += h * w
    obs = np.frombuffer(data, np.uint8, h * w, off).reshape(h, w)
    off += h * w
    world = None
    if has_world:
        truth = np.frombuffer(data, np.uint8, h * w, off).reshape(h, w)
        off += h * w
        refl = np.frombuffer(data, "<f4", h * w, off).reshape(h, w)
        off += 4 * h * w
        (seed,) = struct.unpack_from("<Q", data, off)
        world = WorldSpec(truth.copy(), refl.astype(np.float32), int(seed), float(cell))
    return Sample(index, PolarScan(power.astype(np.float32), float(rres)), LabelSet(occ.copy(), obs.copy()), world)


def sample_path(root: str | os.PathLike, index: int) -> Path:
    return Path(root) / f"sample_{index:05d}.rsmp"


def write_sample(root: str | os.PathLike, sample: Sample) -> None:
    try:
        atomic_write_bytes(sample_path(root, sample.index), encode_sample(sample))
    except OSError as exc:
        raise DatasetIOError(f"sample {sample.index}: {exc}") from exc


def read_sample(root: str | os.PathLike, index: int) -> Sample:
    try:
        data = sample_path(root, index).read_bytes()
    except OSError as exc:
        raise DatasetIOError(f"sample {index}: {exc}") from exc
    return decode_sample(data, index)


def manifest_dict(ds: Dataset) -> dict:
    c = ds.config
    return {
        "format": MANIFEST_FORMAT,
        "num_samples": len(ds),
        "num_train": len(ds.train_indices),
        "num_test": len(ds.test_indices),
        "master_seed": ds.master_seed,
        "dims": {
            "num_azimuths": c.num_azimuths,
            "num_range_bins": c.num_range_bins,
            "height": c.height,
            "width": c.width,
        },
        "sim_config": c.to_dict(),
        "split": {"train": ds.train_indices, "test": ds.test_indices},
        "files": [sample_path(".", s.index).name for s in ds.samples],
    }


def write_dataset(ds: Dataset, root: str | os.PathLike, extra: dict | None = None) -> None:
    """Write every sample, then the manifest (plus any ``extra`` top-level keys)."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    for s in ds.samples:
        write_sample(root, s)
    manifest = manifest_dict(ds) | (extra or {})
    atomic_write_text(root / MANIFEST_NAME, json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def load_manifest(root: str | os.PathLike) -> dict:
    path = Path(root) / MANIFEST_NAME
    try:
        manifest = json.loads(path.read_text())
    except FileNotFoundError as exc:
        raise DatasetIOError(f"no dataset manifest at {path}") from exc
    except (OSError, json.JSONDecodeError) as exc:
        raise DatasetIOError(f"unreadable manifest {path}: {exc}") from exc
    if manifest.get("format") != MANIFEST_FORMAT:
        raise DatasetIOError(f"{path}: unknown dataset format {manifest.get('format')!r}")
    return manifest


def load_dataset(root: str | os.PathLike) -> Dataset:
    manifest = load_manifest(root)
    config = SimConfig.from_dict(manifest["sim_config"])
    samples = [read_sample(root, i) for i in range(manifest["num_samples"])]
    return Dataset(
        config,
        int(manifest["master_seed"]),
        samples,
        list(manifest["split"]["train"]),
        list(manifest["split"]["test"]),
    )
