"""Top-level run configuration with a lossless JSON form."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .dataset import SimConfig
from .nn.network import NetworkConfig
from .training import TrainConfig

__all__ = ["RunConfig"]


@dataclass(frozen=True)
class RunConfig:
    sim: SimConfig = field(default_factory=SimConfig)
    network: NetworkConfig = field(default_factory=NetworkConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    master_seed: int = 0
    data_dir: str | None = None
    out_dir: str | None = None

    def to_dict(self) -> dict:
        return {
            "sim": self.sim.to_dict(),
            "network": json.loads(self.network.to_json()),
            "train": self.train.to_dict(),
            "master_seed": self.master_seed,
            "data_dir": self.data_dir,
            "out_dir": self.out_dir,
        }

    @classmethod
    def from_dict(cls, d: dict) -> RunConfig:
        return cls(
            sim=SimConfig.from_dict(d["sim"]),
            network=NetworkConfig.from_json(json.dumps(d["network"])),
            train=TrainConfig.from_dict(d["train"]),
            master_seed=int(d["master_seed"]),
            data_dir=d.get("data_dir"),
            out_dir=d.get("out_dir"),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> RunConfig:
        return cls.from_dict(json.loads(text))

    def network_for_sim(self, **overrides) -> NetworkConfig:
        """Network config whose raster dimensions match ``self.sim``."""
        s = self.sim
        base = dict(json.loads(self.network.to_json()))
        base.update(
            num_azimuths=s.num_azimuths,
            num_range_bins=s.num_range_bins,
            range_resolution=s.range_resolution,
            height=s.height,
            width=s.width,
            cell_size=s.cell_size,
        )
        base.update(overrides)
        return NetworkConfig(**base)
