from __future__ import annotations

import logging
from collections.abc import Mapping

import numpy as np

from .autograd import Tensor

logger = logging.getLogger(__name__)

__all__ = ["Adam", "adam_step"]


def adam_step(
    param: np.ndarray,
    grad: np.ndarray,
    m: np.ndarray,
    v: np.ndarray,
    t: int,
    lr: float = 1e-3,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """One bias-corrected ADAM update, in place on ``param``, ``m`` and ``v``."""
    if t < 1:
        raise ValueError("step counter t starts at 1")
    m *= beta1
    m += (1 - beta1) * grad
    v *= beta2
    v += (1 - beta2) * grad * grad
    m_hat = m / (1 - beta1**t)
    v_hat = v / (1 - beta2**t)
    param -= (lr * m_hat / (np.sqrt(v_hat) + eps)).astype(param.dtype, copy=False)


class Adam:
    """ADAM over a name -> :class:`Tensor` mapping.

    A step whose gradients contain NaN or Inf is skipped entirely and
    reported through the return value and the log.
    """

    def __init__(
        self,
        params: Mapping[str, Tensor],
        lr: float = 1e-3,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        self.params = dict(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.skipped = 0

    def step(self) -> bool:
        grads = {k: p.grad for k, p in self.params.items() if p.grad is not None}
        bad = [k for k, g in grads.items() if not np.all(np.isfinite(g))]
        if bad:
            self.skipped += 1
            logger.warning("skipping ADAM step: non-finite gradient in %s", ", ".join(bad))
            return False
        self.t += 1
        for k, g in grads.items():
            adam_step(self.params[k].data, g, self.m[k], self.v[k], self.t,
                      self.lr, self.beta1, self.beta2, self.eps)
        return True
