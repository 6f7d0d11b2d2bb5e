"""Mini-batch training of the inverse sensor model and its evaluation wrapper."""

from __future__ import annotations

import csv
import io
import json
import logging
import os
from collections.abc import Sequence
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .dataset import Sample, atomic_write_bytes, atomic_write_text
from .grids import rotate_pair
from .inference import analytic_marginal, binarize
from .nn import autograd as ag
from .nn.network import IsmNetwork, IsmOutput, NetworkConfig
from .nn.optim import Adam
from .nn.weights import load_weights, save_weights
from .simulator import make_rng
from .vloss import LossConfig, loss_terms

logger = logging.getLogger(__name__)

__all__ = [
    "TrainConfig",
    "NumericError",
    "LOG_COLUMNS",
    "features",
    "stack_batch",
    "evaluate_loss",
    "Trainer",
    "train",
    "DeepIsm",
]

LOG_COLUMNS = ("epoch", "step", "kind", "loss", "likelihood", "kl")


class NumericError(FloatingPointError):
    """Raised when the training loss stops being finite."""


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 8
    learning_rate: float = 1e-3
    seed: int = 0
    augment: bool = True
    eval_samples: int = 32
    loss: LossConfig = field(default_factory=LossConfig)

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1 or self.eval_samples < 1:
            raise ValueError("epochs >= 0, batch_size >= 1 and eval_samples >= 1 required")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if isinstance(self.loss, dict):
            object.__setattr__(self, "loss", LossConfig(**self.loss))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> TrainConfig:
        return cls(**d)


def features(power: np.ndarray) -> np.ndarray:
    """Network input: compressed return power."""
    return np.log1p(np.asarray(power, dtype=np.float32))


def stack_batch(samples: Sequence[Sample], rotations: Sequence[int] | None = None):
    """Stack samples into ``(x, occupancy, observability)`` arrays, optionally rotated."""
    xs, occ, obs = [], [], []
    for i, s in enumerate(samples):
        scan, labels = s.scan, s.labels
        if rotations is not None and rotations[i]:
            scan, labels = rotate_pair(scan, labels, int(rotations[i]))
        xs.append(features(scan.power))
        occ.append(labels.occupancy)
        obs.append(labels.observability)
    return np.stack(xs)[:, None], np.stack(occ)[:, None], np.stack(obs)[:, None]


def evaluate_loss(network: IsmNetwork, samples: Sequence[Sample], cfg: TrainConfig) -> tuple[float, float, float]:
    """Mean loss terms over ``samples`` with fixed noise draws and no augmentation."""
    total = lik = kl = 0.0
    n = 0
    with ag.no_grad():
        for start in range(0, len(samples), cfg.batch_size):
            chunk = samples[start : start + cfg.batch_size]
            x, occ, obs = stack_batch(chunk)
            terms = loss_terms(network(x), (occ, obs), cfg.loss, seed=(cfg.seed, 0xE7A1, start))
            w = len(chunk)
            total += w * float(terms.total.data)
            lik += w * terms.likelihood
            kl += w * terms.kl
            n += w
    return total / n, lik / n, kl / n


def _format_row(row: dict) -> dict:
    return {k: (f"{v:.9g}" if isinstance(v, float) else v) for k, v in row.items()}


class Trainer:
    """Owns a network, its optimizer and the run directory layout.

    Files in ``out_dir``: ``config.json``, ``log.csv``, ``best.rism``,
    ``final.rism``, ``optimizer.npz`` and ``state.json``.
    """

    def __init__(self, network: IsmNetwork, cfg: TrainConfig, out_dir: str | os.PathLike | None = None):
        self.network = network
        self.cfg = cfg
        self.out_dir = Path(out_dir) if out_dir is not None else None
        self.optimizer = Adam(network.params, lr=cfg.learning_rate)
        self.epochs_done = 0
        self.best_loss = float("inf")
        self.rows: list[dict] = []

    # -- persistence ------------------------------------------------------
    def _path(self, name: str) -> Path:
        assert self.out_dir is not None
        return self.out_dir / name

    def _write_log(self) -> None:
        if self.out_dir is None:
            return
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=LOG_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for row in self.rows:
            writer.writerow(_format_row(row))
        atomic_write_text(self._path("log.csv"), buf.getvalue())

    def _save_state(self) -> None:
        if self.out_dir is None:
            return
        save_weights(self.network, self._path("final.rism"))
        opt = self.optimizer
        buf = io.BytesIO()
        arrays = {f"m/{k}": v for k, v in opt.m.items()} | {f"v/{k}": v for k, v in opt.v.items()}
        np.savez(buf, t=np.array(opt.t), **arrays)
        atomic_write_bytes(self._path("optimizer.npz"), buf.getvalue())
        state = {"epochs_done": self.epochs_done, "best_loss": self.best_loss}
        atomic_write_text(self._path("state.json"), json.dumps(state, sort_keys=True, indent=2) + "\n")

    @classmethod
    def resume(cls, out_dir: str | os.PathLike, cfg: TrainConfig | None = None) -> Trainer:
        """Reload network, optimizer moments, counters and log from a run directory."""
        out_dir = Path(out_dir)
        saved = json.loads((out_dir / "config.json").read_text())
        cfg = cfg or TrainConfig.from_dict(saved["train"])
        network = load_weights(out_dir / "final.rism")
        trainer = cls(network, cfg, out_dir)
        with np.load(out_dir / "optimizer.npz") as z:
            trainer.optimizer.t = int(z["t"])
            for k in network.params:
                trainer.optimizer.m[k] = z[f"m/{k}"].copy()
                trainer.optimizer.v[k] = z[f"v/{k}"].copy()
        state = json.loads((out_dir / "state.json").read_text())
        trainer.epochs_done = int(state["epochs_done"])
        trainer.best_loss = float(state["best_loss"])
        with open(out_dir / "log.csv", newline="") as fh:
            for row in csv.DictReader(fh):
                trainer.rows.append(
                    {
                        "epoch": int(row["epoch"]),
                        "step": int(row["step"]),
                        "kind": row["kind"],
                        "loss": float(row["loss"]),
                        "likelihood": float(row["likelihood"]),
                        "kl": float(row["kl"]),
                    }
                )
        return trainer

    # -- training ---------------------------------------------------------
    def _log(self, epoch: int, step: int, kind: str, terms: tuple[float, float, float]) -> None:
        self.rows.append(
            {"epoch": epoch, "step": step, "kind": kind, "loss": terms[0], "likelihood": terms[1], "kl": terms[2]}
        )

    def _dump_diagnostics(self, epoch: int, step: int, batch_ids: list[int]) -> None:
        if self.out_dir is None:
            return
        info = {
            "epoch": epoch,
            "step": step,
            "batch_sample_indices": batch_ids,
            "nonfinite_params": [k for k, p in self.network.params.items() if not np.all(np.isfinite(p.data))],
            "skipped_optimizer_steps": self.optimizer.skipped,
        }
        atomic_write_text(self._path("diagnostics.json"), json.dumps(info, indent=2) + "\n")

    def fit(self, samples: Sequence[Sample], epochs: int | None = None) -> list[dict]:
        """Train until ``epochs`` epochs are complete in total (defaults to the config)."""
        cfg = self.cfg
        target = cfg.epochs if epochs is None else epochs
        if not samples:
            raise ValueError("no training samples")
        if self.out_dir is not None:
            self.out_dir.mkdir(parents=True, exist_ok=True)
            payload = {"network": json.loads(self.network.config.to_json()), "train": cfg.to_dict()}
            atomic_write_text(self._path("config.json"), json.dumps(payload, sort_keys=True, indent=2) + "\n")
        eval_set = list(samples[: cfg.eval_samples])
        num_az = self.network.config.num_azimuths
        self._log(self.epochs_done, self.optimizer.t, "eval", evaluate_loss(self.network, eval_set, cfg))
        self._write_log()
        while self.epochs_done < target:
            epoch = self.epochs_done
            rng = make_rng(cfg.seed, 0x7A1, epoch)
            order = rng.permutation(len(samples))
            sums = np.zeros(3)
            seen = 0
            for start in range(0, len(order), cfg.batch_size):
                ids = order[start : start + cfg.batch_size]
                batch = [samples[i] for i in ids]
                rot = rng.integers(0, num_az, size=len(batch)) if cfg.augment else None
                x, occ, obs = stack_batch(batch, rot)
                out = self.network(x)
                terms = loss_terms(out, (occ, obs), cfg.loss, seed=(cfg.seed, epoch, start))
                loss = float(terms.total.data)
                if not np.isfinite(loss):
                    self._dump_diagnostics(epoch, self.optimizer.t, [int(batch[i].index) for i in range(len(batch))])
                    raise NumericError(f"non-finite loss {loss} at epoch {epoch}, optimizer step {self.optimizer.t}")
                self.network.zero_grad()
                terms.total.backward()
                self.optimizer.step()
                sums += len(batch) * np.array([loss, terms.likelihood, terms.kl])
                seen += len(batch)
            self.epochs_done += 1
            mean = tuple(float(v) for v in sums / seen)
            self._log(self.epochs_done, self.optimizer.t, "train", mean)
            logger.info("epoch %d loss %.5g (likelihood %.5g, kl %.5g)", self.epochs_done, *mean)
            if mean[0] < self.best_loss and self.out_dir is not None:
                save_weights(self.network, self._path("best.rism"))
            self.best_loss = min(self.best_loss, mean[0])
            self._write_log()
            self._save_state()
        self._log(self.epochs_done, self.optimizer.t, "eval", evaluate_loss(self.network, eval_set, cfg))
        self._write_log()
        self._save_state()
        return self.rows


def train(
    samples: Sequence[Sample],
    network_config: NetworkConfig,
    cfg: TrainConfig = TrainConfig(),
    out_dir: str | os.PathLike | None = None,
) -> Trainer:
    network = IsmNetwork(network_config, seed=cfg.seed)
    trainer = Trainer(network, cfg, out_dir)
    trainer.fit(samples)
    return trainer


class DeepIsm:
    """Evaluation wrapper: occupied where the marginal probability exceeds ``threshold``."""

    name = "Deep ISM"

    def __init__(self, network: IsmNetwork, threshold: float = 0.5, batch_size: int = 8):
        self.network = network
        self.threshold = threshold
        self.batch_size = batch_size

    def outputs(self, samples: Sequence[Sample]) -> IsmOutput:
        x = np.stack([features(s.scan.power) for s in samples])[:, None]
        return self.network.predict(x, self.batch_size)

    def probabilities(self, sample: Sample) -> np.ndarray:
        return analytic_marginal(self.outputs([sample])).p[0, 0]

    def predict(self, sample: Sample) -> np.ndarray:
        return binarize(self.probabilities(sample), self.threshold)

    def describe(self) -> dict:
        return {"network": json.loads(self.network.config.to_json()), "threshold": self.threshold}
