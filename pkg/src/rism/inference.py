"""Turning (mu, gamma) predictions into occupancy probabilities and tri-state maps."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .nn.network import IsmOutput

__all__ = [
    "ProbabilityGrid",
    "UncertaintySegmentation",
    "FREE",
    "OCCUPIED",
    "UNKNOWN",
    "analytic_marginal",
    "mc_marginal",
    "binarize",
    "uncertainty_segment",
]

FREE = 0
OCCUPIED = 1
UNKNOWN = 2

_PROBIT_SCALE = np.pi / 8.0


@dataclass(frozen=True)
class ProbabilityGrid:
    p: np.ndarray
    source_mu: np.ndarray
    source_gamma: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.p)
        if not np.all(np.isfinite(p)) or p.min(initial=0.0) < 0 or p.max(initial=0.0) > 1:
            raise ValueError("probabilities must be finite and within [0, 1]")


@dataclass(frozen=True)
class UncertaintySegmentation:
    """Per-cell ``FREE``/``OCCUPIED``/``UNKNOWN`` labels and the deviation threshold used."""

    labels: np.ndarray
    gamma_max: float

    @property
    def unknown(self) -> np.ndarray:
        return self.labels == UNKNOWN


def _arrays(out: IsmOutput) -> tuple[np.ndarray, np.ndarray]:
    out = out.numpy()
    mu = np.asarray(out.mu, dtype=np.float64)
    gamma = np.asarray(out.gamma, dtype=np.float64)
    if mu.shape != gamma.shape:
        raise ValueError(f"mu {mu.shape} and gamma {gamma.shape} differ")
    return mu, gamma


def analytic_marginal(out: IsmOutput) -> ProbabilityGrid:
    """Closed-form ``E[sigmoid(z)]`` under the probit approximation."""
    mu, gamma = _arrays(out)
    s = np.sqrt(1.0 + gamma * gamma * _PROBIT_SCALE)
    return ProbabilityGrid(expit(mu / s), mu, gamma)


def mc_marginal(out: IsmOutput, num_samples: int, seed=0, chunk_cells: int = 1 << 22) -> ProbabilityGrid:
    """Monte-Carlo ``E[sigmoid(mu + gamma * eps)]``.

    Draws are generated in blocks of at most ``chunk_cells`` values to bound
    memory; the block size changes the result only through summation rounding.
    """
    if int(num_samples) < 1:
        raise ValueError("num_samples must be at least 1")
    mu, gamma = _arrays(out)
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    flat_mu, flat_gamma = mu.ravel(), gamma.ravel()
    acc = np.zeros_like(flat_mu)
    remaining = int(num_samples)
    # Draw sample-major so the stream, and therefore the estimate, is chunk independent.
    per_block = max(1, chunk_cells // max(1, flat_mu.size))
    while remaining:
        n = min(per_block, remaining)
        eps = rng.standard_normal((n, flat_mu.size))
        acc += expit(flat_mu + flat_gamma * eps).sum(axis=0)
        remaining -= n
    p = (acc / int(num_samples)).reshape(mu.shape)
    return ProbabilityGrid(p, mu, gamma)


def binarize(p: ProbabilityGrid | np.ndarray, threshold: float = 0.5) -> np.ndarray:
    """Occupied where ``p > threshold`` (ties count as free)."""
    if not 0.0 < threshold < 1.0:
        raise ValueError("threshold must lie in (0, 1)")
    values = p.p if isinstance(p, ProbabilityGrid) else np.asarray(p)
    return values > threshold


def uncertainty_segment(out: IsmOutput, gamma_max: float, threshold: float = 0.5) -> UncertaintySegmentation:
    """Label cells with ``gamma > gamma_max`` unknown and binarize the rest."""
    if not gamma_max > 0:
        raise ValueError("gamma_max must be positive")
    grid = analytic_marginal(out)
    labels = np.where(binarize(grid, threshold), OCCUPIED, FREE).astype(np.uint8)
    labels[grid.source_gamma > gamma_max] = UNKNOWN
    return UncertaintySegmentation(labels, float(gamma_max))
