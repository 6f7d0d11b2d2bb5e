"""IoU metrics and the method-comparison / ablation harness."""

from __future__ import annotations

import hashlib
import json
import logging
from collections.abc import Callable, Iterable, Sequence
from dataclasses import dataclass
from typing import Protocol

import numpy as np

from .grids import OBSERVED, UNOBSERVED

logger = logging.getLogger(__name__)

__all__ = [
    "ConfusionCounts",
    "IouReport",
    "EmptyMaskError",
    "UntrainedMethodError",
    "confusion_counts",
    "iou",
    "compare_methods",
    "omega_sweep",
    "conservatism_statistic",
    "OcclusionStats",
    "occlusion_uncertainty_stat",
    "config_digest",
]


class EmptyMaskError(ValueError):
    """The evaluation mask selects no cells."""


class UntrainedMethodError(RuntimeError):
    """A method was evaluated before being tuned or trained."""


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    def __add__(self, other: ConfusionCounts) -> ConfusionCounts:
        return ConfusionCounts(
            self.tp + other.tp, self.fp + other.fp, self.fn + other.fn, self.tn + other.tn
        )

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    @property
    def iou_occupied(self) -> float:
        union = self.tp + self.fp + self.fn
        return 1.0 if union == 0 else self.tp / union

    @property
    def iou_free(self) -> float:
        union = self.tn + self.fp + self.fn
        return 1.0 if union == 0 else self.tn / union

    @property
    def mean_iou(self) -> float:
        return (self.iou_occupied + self.iou_free) / 2


@dataclass(frozen=True)
class IouReport:
    method: str
    iou_occupied: float
    iou_free: float
    mean_iou: float
    counts: ConfusionCounts
    config_digest: str = ""

    @classmethod
    def from_counts(cls, method: str, counts: ConfusionCounts, digest: str = "") -> IouReport:
        if counts.total == 0:
            raise EmptyMaskError(f"{method}: no observed cells to score")
        return cls(method, counts.iou_occupied, counts.iou_free, counts.mean_iou, counts, digest)


def config_digest(config) -> str:
    blob = json.dumps(config, sort_keys=True, default=repr).encode()
    return hashlib.sha256(blob).hexdigest()[:12]


def confusion_counts(pred: np.ndarray, truth: np.ndarray, mask: np.ndarray) -> ConfusionCounts:
    """Pooled confusion counts of ``pred`` against ``truth`` over ``mask`` cells."""
    pred = np.asarray(pred, dtype=bool)
    truth = np.asarray(truth).astype(bool)
    mask = np.asarray(mask, dtype=bool)
    if not (pred.shape == truth.shape == mask.shape):
        raise ValueError(f"shape mismatch: {pred.shape}, {truth.shape}, {mask.shape}")
    p = pred[mask]
    t = truth[mask]
    tp = int(np.count_nonzero(p & t))
    fp = int(np.count_nonzero(p & ~t))
    fn = int(np.count_nonzero(~p & t))
    tn = int(p.size - tp - fp - fn)
    return ConfusionCounts(tp, fp, fn, tn)


def iou(pred: np.ndarray, truth: np.ndarray, mask: np.ndarray, method: str = "") -> IouReport:
    """Per-class IoU of a binary prediction on the masked (observed) cells.

    A class whose prediction and truth are both empty scores 1.
    """
    counts = confusion_counts(pred, truth, mask)
    return IouReport.from_counts(method, counts)


class Method(Protocol):
    name: str

    def predict(self, sample) -> np.ndarray: ...

    def describe(self) -> dict: ...


def compare_methods(samples: Sequence, methods: Sequence[Method]) -> list[IouReport]:
    """Score each method on ``samples`` by pooling confusion counts over observed cells."""
    reports = []
    for method in methods:
        total = ConfusionCounts()
        for sample in samples:
            pred = method.predict(sample)
            labels = sample.labels
            total = total + confusion_counts(pred, labels.occupancy, labels.observability == OBSERVED)
        reports.append(IouReport.from_counts(method.name, total, config_digest(method.describe())))
    return reports


def conservatism_statistic(probabilities: Iterable[np.ndarray], observability: Iterable[np.ndarray]) -> float:
    """Fraction of unobserved cells predicted with ``|p - 0.5| > 0.25``."""
    confident = 0
    total = 0
    for p, o in zip(probabilities, observability):
        sel = np.asarray(o) == UNOBSERVED
        confident += int(np.count_nonzero(np.abs(np.asarray(p)[sel] - 0.5) > 0.25))
        total += int(np.count_nonzero(sel))
    return confident / total if total else float("nan")


def omega_sweep(
    train: Callable[[float], Callable[[object], np.ndarray]],
    omegas: Sequence[float],
    samples: Sequence,
) -> list[tuple[float, float]]:
    """Train one model per ``omega`` and report the conservatism statistic.

    ``train(omega)`` must return a callable mapping a sample to its occupancy
    probability grid.
    """
    rows = []
    for omega in omegas:
        predict = train(float(omega))
        stat = conservatism_statistic(
            (predict(s) for s in samples), (s.labels.observability for s in samples)
        )
        logger.info("omega=%g conservatism=%.4f", omega, stat)
        rows.append((float(omega), stat))
    return rows


@dataclass(frozen=True)
class OcclusionStats:
    median_gamma_unobserved: float | None
    median_gamma_observed: float | None

    @property
    def ratio(self) -> float | None:
        if self.median_gamma_unobserved is None or self.median_gamma_observed is None:
            return None
        return self.median_gamma_unobserved / self.median_gamma_observed


def occlusion_uncertainty_stat(gammas: Iterable[np.ndarray], observability: Iterable[np.ndarray]) -> OcclusionStats:
    """Median predicted deviation over unobserved vs observed cells, pooled."""
    g0, g1 = [], []
    for g, o in zip(gammas, observability):
        g = np.asarray(g).reshape(np.shape(o))
        g0.append(g[o == UNOBSERVED])
        g1.append(g[o == OBSERVED])
    g0 = np.concatenate(g0) if g0 else np.empty(0)
    g1 = np.concatenate(g1) if g1 else np.empty(0)
    return OcclusionStats(
        float(np.median(g0)) if g0.size else None,
        float(np.median(g1)) if g1.size else None,
    )
