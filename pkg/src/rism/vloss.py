"""Variational training objective on partially observed occupancy labels.

Per sample the loss is

    (w_bar / L) * sum_l sum_{o=1} H_alpha(y, z_l)  +  sum_{o=0} KL(N(mu, gamma^2) || N(0, prior^2))

with ``z_l = mu + gamma * eps_l`` and ``w_bar = omega * H * W / #(o=1)``.
Partially observed cells contribute nothing. The batch loss is the sample mean.
"""

from __future__ import annotations

import logging
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np

from .grids import OBSERVED, UNOBSERVED, LabelSet
from .nn import autograd as ag
from .nn.autograd import Tensor
from .nn.network import IsmOutput

logger = logging.getLogger(__name__)

__all__ = [
    "LossConfig",
    "LossTerms",
    "label_arrays",
    "reparam_samples",
    "weighted_bce",
    "kl_unobserved",
    "loss_terms",
    "total_loss",
]


@dataclass(frozen=True)
class LossConfig:
    omega: float = 1.0
    alpha: float = 0.5
    prior_gamma: float = 1.0
    num_samples: int = 25

    def __post_init__(self):
        if not self.omega > 0:
            raise ValueError("omega must be positive")
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if not self.prior_gamma > 0:
            raise ValueError("prior_gamma must be positive")
        if int(self.num_samples) < 1:
            raise ValueError("num_samples must be at least 1")


@dataclass
class LossTerms:
    """Batch-mean loss and its two parts. ``total`` carries the graph."""

    total: Tensor
    likelihood: float
    kl: float
    omega_bar: np.ndarray


def label_arrays(labels: LabelSet | Sequence[LabelSet] | tuple[np.ndarray, np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    """Normalise labels to ``(occupancy, observability)`` arrays shaped ``(B, 1, H, W)``."""
    if isinstance(labels, LabelSet):
        occ, obs = labels.occupancy[None], labels.observability[None]
    elif isinstance(labels, tuple) and len(labels) == 2 and isinstance(labels[0], np.ndarray):
        occ, obs = np.asarray(labels[0]), np.asarray(labels[1])
    else:
        occ = np.stack([lab.occupancy for lab in labels])
        obs = np.stack([lab.observability for lab in labels])
    if occ.shape != obs.shape:
        raise ValueError(f"occupancy {occ.shape} and observability {obs.shape} differ")
    if occ.ndim == 2:
        occ, obs = occ[None], obs[None]
    if occ.ndim == 3:
        occ, obs = occ[:, None], obs[:, None]
    return occ, obs


def _rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))


def reparam_samples(out: IsmOutput, num_samples: int, seed) -> Tensor:
    """``z = mu + gamma * eps`` with a leading sample axis of length ``num_samples``."""
    mu, gamma = ag.as_tensor(out.mu), ag.as_tensor(out.gamma)
    eps = _rng(seed).standard_normal((int(num_samples),) + mu.shape).astype(mu.dtype)
    return mu + gamma * Tensor(eps)


def weighted_bce(z, occupancy: np.ndarray, observability: np.ndarray, alpha: float, weight=None) -> Tensor:
    """Sum over observed cells of ``alpha*y*softplus(-z) + (1-y)*softplus(z)``.

    ``weight`` optionally scales each cell (broadcast against ``z``).
    """
    z = ag.as_tensor(z)
    seen = (observability == OBSERVED).astype(z.dtype)
    y = occupancy.astype(z.dtype)
    w_occ = alpha * y * seen
    w_free = (1 - y) * seen
    if weight is not None:
        w_occ = w_occ * weight
        w_free = w_free * weight
    return ag.sum(ag.softplus(-z) * w_occ.astype(z.dtype) + ag.softplus(z) * w_free.astype(z.dtype))


def kl_unobserved(out: IsmOutput, observability: np.ndarray, prior_gamma: float = 1.0) -> Tensor:
    """Sum over unobserved cells of ``KL(N(mu, gamma^2) || N(0, prior_gamma^2))``."""
    mu, gamma = ag.as_tensor(out.mu), ag.as_tensor(out.gamma)
    mask = (observability == UNOBSERVED).astype(mu.dtype)
    pg2 = prior_gamma * prior_gamma
    per_cell = (
        ag.log(gamma) * -1.0
        + (ag.square(gamma) + ag.square(mu)) * (0.5 / pg2)
        + (np.log(prior_gamma) - 0.5)
    )
    return ag.sum(per_cell * mask)


def loss_terms(out: IsmOutput, labels, cfg: LossConfig = LossConfig(), seed=0) -> LossTerms:
    """Batch loss for ``out`` (``(B, 1, H, W)``) against ``labels``."""
    occ, obs = label_arrays(labels)
    mu = ag.as_tensor(out.mu)
    if mu.shape != occ.shape:
        raise ValueError(f"prediction shape {mu.shape} does not match labels {occ.shape}")
    batch = mu.shape[0]
    cells = int(np.prod(mu.shape[1:]))
    n_obs = (obs == OBSERVED).reshape(batch, -1).sum(axis=1)
    omega_bar = np.zeros(batch, dtype=np.float64)
    has = n_obs > 0
    omega_bar[has] = cfg.omega * cells / n_obs[has]
    if not has.all():
        logger.info("%d sample(s) without observed cells: likelihood term set to 0", int((~has).sum()))
    L = int(cfg.num_samples)
    weight = (omega_bar / (L * batch)).reshape(batch, 1, 1, 1)
    z = reparam_samples(out, L, seed)
    nll = weighted_bce(z, occ, obs, cfg.alpha, weight=weight.astype(mu.dtype))
    kl = kl_unobserved(out, obs, cfg.prior_gamma) * (1.0 / batch)
    total = nll + kl
    return LossTerms(total, float(nll.data), float(kl.data), omega_bar)


def total_loss(out: IsmOutput, labels, cfg: LossConfig = LossConfig(), seed=0) -> Tensor:
    return loss_terms(out, labels, cfg, seed).total
