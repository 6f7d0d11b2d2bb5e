"""Cell-averaging CFAR and static-threshold baselines, with grid-search tuning."""

from __future__ import annotations

import itertools
import logging
from collections.abc import Sequence
from dataclasses import asdict, dataclass

import numpy as np

from .evaluation import ConfusionCounts, UntrainedMethodError, confusion_counts
from .grids import OBSERVED, PolarCartMap, polar_mask_to_cart, resample_polar_to_cart

logger = logging.getLogger(__name__)

__all__ = [
    "CfarConfig",
    "threshold_factor",
    "ca_cfar_1d",
    "ca_cfar_2d",
    "static_threshold",
    "Baseline",
    "TuneResult",
    "tune",
    "DEFAULT_SEARCH",
]


@dataclass(frozen=True)
class CfarConfig:
    num_train_cells: int
    num_guard_cells: int
    prob_false_alarm: float

    def __post_init__(self):
        if self.num_train_cells < 1:
            raise ValueError("num_train_cells must be >= 1")
        if self.num_guard_cells < 0:
            raise ValueError("num_guard_cells must be >= 0")
        if not 0.0 < self.prob_false_alarm < 1.0:
            raise ValueError("prob_false_alarm must lie in (0, 1)")

    @property
    def half_window(self) -> int:
        return self.num_train_cells + self.num_guard_cells


def threshold_factor(num_train: np.ndarray | int, pfa: float) -> np.ndarray:
    """CA-CFAR multiplier for exponential noise: ``N * (Pfa**(-1/N) - 1)``."""
    n = np.asarray(num_train, dtype=np.float64)
    return n * (pfa ** (-1.0 / n) - 1.0)


def _window_sum_1d(csum: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    return csum[..., hi] - csum[..., lo]


def ca_cfar_1d(signal: np.ndarray, cfg: CfarConfig) -> np.ndarray:
    """1-D CA-CFAR along the last axis.

    Training cells are the ``num_train_cells`` on each side beyond the guard
    cells; near the ends the window is clipped and the threshold factor uses
    the number of cells actually averaged.
    """
    x = np.asarray(signal, dtype=np.float64)
    n = x.shape[-1]
    t, g = cfg.num_train_cells, cfg.num_guard_cells
    if n <= 2 * (t + g):
        raise ValueError(f"signal of length {n} is too short for window half-size {t + g}")
    csum = np.concatenate([np.zeros(x.shape[:-1] + (1,)), np.cumsum(x, axis=-1)], axis=-1)
    i = np.arange(n)
    l_lo, l_hi = np.clip(i - g - t, 0, n), np.clip(i - g, 0, n)
    r_lo, r_hi = np.clip(i + g + 1, 0, n), np.clip(i + g + t + 1, 0, n)
    count = (l_hi - l_lo) + (r_hi - r_lo)
    total = _window_sum_1d(csum, l_lo, l_hi) + _window_sum_1d(csum, r_lo, r_hi)
    noise = total / count
    return x > threshold_factor(count, cfg.prob_false_alarm) * noise


def _box_sums(integral: np.ndarray, half: int, h: int, w: int):
    u = np.arange(h)
    v = np.arange(w)
    u0, u1 = np.clip(u - half, 0, h), np.clip(u + half + 1, 0, h)
    v0, v1 = np.clip(v - half, 0, w), np.clip(v + half + 1, 0, w)
    s = (
        integral[..., u1[:, None], v1[None, :]]
        - integral[..., u0[:, None], v1[None, :]]
        - integral[..., u1[:, None], v0[None, :]]
        + integral[..., u0[:, None], v0[None, :]]
    )
    area = (u1 - u0)[:, None] * (v1 - v0)[None, :]
    return s, area


def ca_cfar_2d(grid: np.ndarray, cfg: CfarConfig) -> np.ndarray:
    """2-D CA-CFAR over the last two axes with a square training ring.

    The ring is the ``(2(g+t)+1)^2`` square minus the ``(2g+1)^2`` guard
    square around the cell under test, clipped at the borders.
    """
    x = np.asarray(grid, dtype=np.float64)
    h, w = x.shape[-2:]
    t, g = cfg.num_train_cells, cfg.num_guard_cells
    if h <= 2 * (t + g) or w <= 2 * (t + g):
        raise ValueError(f"grid {h}x{w} is too small for window half-size {t + g}")
    integral = np.zeros(x.shape[:-2] + (h + 1, w + 1))
    integral[..., 1:, 1:] = x.cumsum(axis=-2).cumsum(axis=-1)
    outer, outer_n = _box_sums(integral, t + g, h, w)
    inner, inner_n = _box_sums(integral, g, h, w)
    count = outer_n - inner_n
    noise = (outer - inner) / count
    return x > threshold_factor(count, cfg.prob_false_alarm) * noise


def static_threshold(values: np.ndarray, tau: float) -> np.ndarray:
    if np.isnan(tau):
        raise ValueError("threshold must not be NaN")
    return np.asarray(values) > tau


@dataclass
class Baseline:
    """A classical detector producing a Cartesian occupancy mask from a polar scan.

    ``kind`` is ``"cfar1d"`` (along range in polar, nearest-bin to Cartesian),
    ``"cfar2d"`` (on the bilinearly resampled Cartesian power) or ``"static"``
    (threshold on the Cartesian power).
    """

    kind: str
    pmap: PolarCartMap
    config: CfarConfig | float | None = None

    NAMES = {"cfar1d": "CFAR (1D polar)", "cfar2d": "CFAR (2D Cartesian)", "static": "Static thresholding"}

    def __post_init__(self):
        if self.kind not in self.NAMES:
            raise ValueError(f"unknown baseline kind {self.kind!r}")

    @property
    def name(self) -> str:
        return self.NAMES[self.kind]

    def describe(self) -> dict:
        cfg = asdict(self.config) if isinstance(self.config, CfarConfig) else self.config
        return {"kind": self.kind, "config": cfg}

    def detect(self, power: np.ndarray, cart: np.ndarray | None = None) -> np.ndarray:
        """Cartesian masks for polar ``power`` (leading batch axes allowed)."""
        if self.config is None:
            raise UntrainedMethodError(f"{self.name} has not been tuned")
        if self.kind == "cfar1d":
            return polar_mask_to_cart(self.pmap, ca_cfar_1d(power, self.config))
        if cart is None:
            cart = resample_polar_to_cart(self.pmap, power)
        if self.kind == "cfar2d":
            return ca_cfar_2d(cart, self.config)
        return static_threshold(cart, float(self.config))

    def predict(self, sample) -> np.ndarray:
        return self.detect(sample.scan.power)


@dataclass(frozen=True)
class TuneResult:
    config: CfarConfig | float
    mean_iou: float
    counts: ConfusionCounts
    evaluated: int


DEFAULT_SEARCH = {
    "cfar1d": {
        "num_train_cells": (4, 8, 16, 24),
        "num_guard_cells": (0, 1, 2, 4),
        "prob_false_alarm": (1e-1, 3e-2, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6),
    },
    "cfar2d": {
        "num_train_cells": (1, 2, 4, 6),
        "num_guard_cells": (0, 1, 2, 4),
        "prob_false_alarm": (1e-1, 3e-2, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6),
    },
    "static": {"tau": tuple(float(t) for t in np.geomspace(0.5, 200.0, 61))},
}


def _candidates(kind: str, search) -> list:
    if kind == "static":
        taus = search["tau"] if isinstance(search, dict) else search
        return [float(t) for t in taus]
    if isinstance(search, dict):
        return [
            CfarConfig(t, g, p)
            for t, g, p in itertools.product(
                search["num_train_cells"], search["num_guard_cells"], search["prob_false_alarm"]
            )
        ]
    return list(search)


def _tie_key(candidate) -> tuple:
    # Smaller window, then smaller Pfa; for thresholds the higher (sparser) one.
    if isinstance(candidate, CfarConfig):
        return (candidate.half_window, candidate.prob_false_alarm, candidate.num_train_cells)
    return (-float(candidate),)


def tune(kind: str, samples: Sequence, pmap: PolarCartMap, search=None) -> TuneResult:
    """Exhaustive grid search maximising pooled mean IoU on ``samples``.

    Detections are scored against the lidar labels on observed cells only.
    """
    if not samples:
        raise ValueError("tuning needs at least one sample")
    candidates = _candidates(kind, DEFAULT_SEARCH[kind] if search is None else search)
    if not candidates:
        raise ValueError("empty search grid")
    power = np.stack([s.scan.power for s in samples]).astype(np.float64)
    cart = resample_polar_to_cart(pmap, power) if kind != "cfar1d" else None
    truth = np.stack([s.labels.occupancy for s in samples])
    mask = np.stack([s.labels.observability == OBSERVED for s in samples])

    scored = []
    for cand in candidates:
        if isinstance(cand, CfarConfig):
            limit = power.shape[-1] if kind == "cfar1d" else min(cart.shape[-2:])
            if limit <= 2 * cand.half_window:
                continue
        pred = Baseline(kind, pmap, cand).detect(power, cart)
        counts = confusion_counts(pred, truth, mask)
        scored.append((cand, counts))
    if not scored:
        raise ValueError("no search-grid point fits the data dimensions")
    best, best_counts = min(scored, key=lambda item: (-item[1].mean_iou,) + _tie_key(item[0]))
    logger.info("tuned %s: %s mean IoU %.4f over %d candidates", kind, best, best_counts.mean_iou, len(scored))
    return TuneResult(best, best_counts.mean_iou, best_counts, len(scored))
