"""Polar encoder / Cartesian decoder producing per-cell logit mean and deviation."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from functools import cached_property

import numpy as np

from ..grids import PolarCartMap, build_polar_cart_map
from . import autograd as ag
from .autograd import Tensor

__all__ = ["NetworkConfig", "IsmOutput", "IsmNetwork"]


@dataclass(frozen=True)
class NetworkConfig:
    """Shape of the encoder/decoder. Channel tuples are indexed finest stage first."""

    num_azimuths: int = 64
    num_range_bins: int = 128
    range_resolution: float = 0.2
    height: int = 128
    width: int = 128
    cell_size: float = 0.3
    encoder_channels: tuple[int, ...] = (16, 32, 64)
    decoder_channels: tuple[int, ...] = (16, 32, 64)
    kernel_size: int = 4
    leaky_slope: float = 0.1
    gamma_floor: float = 1e-3
    in_channels: int = 1

    def __post_init__(self):
        object.__setattr__(self, "encoder_channels", tuple(int(c) for c in self.encoder_channels))
        object.__setattr__(self, "decoder_channels", tuple(int(c) for c in self.decoder_channels))
        n = len(self.encoder_channels)
        if n < 1 or len(self.decoder_channels) != n:
            raise ValueError("encoder and decoder need the same, non-zero number of stages")
        f = 2**n
        for name in ("num_azimuths", "num_range_bins", "height", "width"):
            value = getattr(self, name)
            if value % f:
                raise ValueError(f"{name}={value} is not divisible by 2**stages={f}")
        if self.kernel_size < 1:
            raise ValueError("kernel_size must be positive")
        if self.gamma_floor <= 0:
            raise ValueError("gamma_floor must be positive")

    @property
    def num_stages(self) -> int:
        return len(self.encoder_channels)

    def stage_map(self, stage: int) -> PolarCartMap:
        f = 2**stage
        return build_polar_cart_map(
            self.num_azimuths // f,
            self.num_range_bins // f,
            self.range_resolution * f,
            self.height // f,
            self.width // f,
            self.cell_size * f,
        )

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> NetworkConfig:
        d = json.loads(text)
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        k = self.kernel_size
        shapes: dict[str, tuple[int, ...]] = {}
        c_in = self.in_channels
        for s, c in enumerate(self.encoder_channels):
            shapes[f"enc{s}.conv0.weight"] = (c, c_in, k, k)
            shapes[f"enc{s}.conv0.bias"] = (c,)
            shapes[f"enc{s}.conv1.weight"] = (c, c, k, k)
            shapes[f"enc{s}.conv1.bias"] = (c,)
            c_in = c
        for s in reversed(range(self.num_stages)):
            c = self.decoder_channels[s]
            c_cat = c_in + self.encoder_channels[s]
            shapes[f"dec{s}.conv0.weight"] = (c, c_cat, k, k)
            shapes[f"dec{s}.conv0.bias"] = (c,)
            shapes[f"dec{s}.conv1.weight"] = (c, c, k, k)
            shapes[f"dec{s}.conv1.bias"] = (c,)
            c_in = c
        shapes["head.weight"] = (2, c_in, 1, 1)
        shapes["head.bias"] = (2,)
        return shapes


@dataclass
class IsmOutput:
    """Per-cell logit mean ``mu`` and deviation ``gamma``, each ``(B, 1, H, W)``.

    Holds :class:`Tensor` values during training and plain arrays otherwise.
    """

    mu: Tensor | np.ndarray
    gamma: Tensor | np.ndarray

    def numpy(self) -> IsmOutput:
        unwrap = lambda v: v.data if isinstance(v, Tensor) else np.asarray(v)  # noqa: E731
        return IsmOutput(unwrap(self.mu), unwrap(self.gamma))


class IsmNetwork:
    """U-net style inverse sensor model.

    Encoder stages (on the polar raster) apply two convolutions with leaky
    rectifiers and a 2x2 max pool. The bottleneck and every stage's pre-pool
    features are resampled onto the Cartesian grid at the matching scale and
    feed the decoder, which upsamples 2x, concatenates the skip and applies two
    more convolutions. A 1x1 head emits the logit mean and, through
    ``softplus + gamma_floor``, the deviation.
    """

    def __init__(self, config: NetworkConfig, seed: int = 0, dtype=np.float32, zero_head: bool = True):
        self.config = config
        self.dtype = np.dtype(dtype)
        self.params: dict[str, Tensor] = {}
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), 0x1E1])))
        for name, shape in config.param_shapes().items():
            if name.endswith(".bias") or (zero_head and name.startswith("head.")):
                data = np.zeros(shape, dtype=self.dtype)
            else:
                fan_in = int(np.prod(shape[1:]))
                data = (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(self.dtype)
            self.params[name] = Tensor(data, requires_grad=True, name=name)

    @cached_property
    def maps(self) -> list[PolarCartMap]:
        return [self.config.stage_map(s) for s in range(self.config.num_stages + 1)]

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def num_parameters(self) -> int:
        return int(sum(p.data.size for p in self.params.values()))

    def _conv_block(self, h: Tensor, prefix: str) -> Tensor:
        p = self.params
        slope = self.config.leaky_slope
        h = ag.leaky_relu(ag.conv2d(h, p[f"{prefix}.conv0.weight"], p[f"{prefix}.conv0.bias"]), slope)
        return ag.leaky_relu(ag.conv2d(h, p[f"{prefix}.conv1.weight"], p[f"{prefix}.conv1.bias"]), slope)

    def forward(self, x: np.ndarray) -> IsmOutput:
        """Map polar inputs ``(B, C_in, Theta, R)`` to Cartesian ``mu``/``gamma`` ``(B, 1, H, W)``."""
        cfg = self.config
        x = np.asarray(x, dtype=self.dtype)
        if x.ndim == 3:
            x = x[:, None]
        expected = (cfg.in_channels, cfg.num_azimuths, cfg.num_range_bins)
        if x.ndim != 4 or x.shape[1:] != expected:
            raise ValueError(f"input shape {x.shape} does not match (B, {expected})")
        h = Tensor(np.ascontiguousarray(x.transpose(1, 0, 2, 3)))
        skips = []
        for s in range(cfg.num_stages):
            h = self._conv_block(h, f"enc{s}")
            skips.append(h)
            h = ag.max_pool2d(h)
        d = ag.polar_to_cart(h, self.maps[cfg.num_stages])
        for s in reversed(range(cfg.num_stages)):
            d = ag.upsample2d(d)
            d = ag.concat([d, ag.polar_to_cart(skips[s], self.maps[s])], axis=0)
            d = self._conv_block(d, f"dec{s}")
        out = ag.conv2d(d, self.params["head.weight"], self.params["head.bias"])
        mu = ag.transpose(out[0:1], (1, 0, 2, 3))
        gamma = ag.transpose(ag.softplus(out[1:2]) + cfg.gamma_floor, (1, 0, 2, 3))
        return IsmOutput(mu, gamma)

    __call__ = forward

    def predict(self, x: np.ndarray, batch_size: int = 8) -> IsmOutput:
        """Forward pass without a graph, returning numpy arrays."""
        x = np.asarray(x)
        mus, gammas = [], []
        with ag.no_grad():
            for i in range(0, x.shape[0], batch_size):
                out = self.forward(x[i : i + batch_size]).numpy()
                mus.append(out.mu)
                gammas.append(out.gamma)
        return IsmOutput(np.concatenate(mus), np.concatenate(gammas))

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data for k, v in self.params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        for name, p in self.params.items():
            p.data = np.array(state[name], dtype=self.dtype)
            p.grad = None
