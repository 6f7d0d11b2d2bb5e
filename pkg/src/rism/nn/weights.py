"""Weight files.

Layout (little-endian)::

    b"RISM"  u32 version
    u32 len, utf-8 JSON NetworkConfig
    u32 tensor count
    per tensor: u32 name len, name, u32 ndim, u32[ndim] shape, f32 payload
"""

from __future__ import annotations

import os
import struct

import numpy as np

from ..dataset import atomic_write_bytes
from .network import IsmNetwork, NetworkConfig

__all__ = ["WeightFileError", "save_weights", "load_weights", "read_weights"]

MAGIC = b"RISM"
VERSION = 1


class WeightFileError(ValueError):
    """Malformed or incompatible weight file. ``tensor`` names the offending entry, if any."""

    def __init__(self, message: str, tensor: str | None = None):
        super().__init__(message)
        self.tensor = tensor


def save_weights(network: IsmNetwork, path: str | os.PathLike) -> None:
    cfg = network.config.to_json().encode("utf-8")
    parts = [MAGIC, struct.pack("<I", VERSION), struct.pack("<I", len(cfg)), cfg,
             struct.pack("<I", len(network.params))]
    for name, p in network.params.items():
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)) + raw)
        parts.append(struct.pack(f"<I{p.data.ndim}I", p.data.ndim, *p.data.shape))
        parts.append(np.ascontiguousarray(p.data, dtype="<f4").tobytes())
    atomic_write_bytes(path, b"".join(parts))


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise WeightFileError(f"truncated weight file while reading {what}")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]


def read_weights(path: str | os.PathLike) -> tuple[NetworkConfig, dict[str, np.ndarray]]:
    """Parse a weight file completely before returning anything."""
    with open(path, "rb") as fh:
        r = _Reader(fh.read())
    if r.take(4, "magic") != MAGIC:
        raise WeightFileError(f"{path}: not a weight file (bad magic)")
    version = r.u32("version")
    if version != VERSION:
        raise WeightFileError(f"{path}: unsupported weight file version {version}")
    config = NetworkConfig.from_json(r.take(r.u32("config length"), "config").decode("utf-8"))
    tensors: dict[str, np.ndarray] = {}
    for _ in range(r.u32("tensor count")):
        name = r.take(r.u32("name length"), "tensor name").decode("utf-8")
        ndim = r.u32(f"{name} rank")
        shape = struct.unpack(f"<{ndim}I", r.take(4 * ndim, f"{name} shape"))
        count = int(np.prod(shape, dtype=np.int64))
        payload = r.take(4 * count, f"{name} payload")
        tensors[name] = np.frombuffer(payload, dtype="<f4").reshape(shape).copy()
    if r.pos != len(r.data):
        raise WeightFileError(f"{path}: {len(r.data) - r.pos} trailing bytes")
    return config, tensors


def load_weights(path: str | os.PathLike, network: IsmNetwork | None = None) -> IsmNetwork:
    """Load weights into ``network`` (checked tensor by tensor) or into a fresh one."""
    config, tensors = read_weights(path)
    if network is None:
        network = IsmNetwork(config)
    expected = network.config.param_shapes()
    for name, shape in expected.items():
        if name not in tensors:
            raise WeightFileError(f"{path}: missing tensor {name}", tensor=name)
        if tensors[name].shape != tuple(shape):
            raise WeightFileError(
                f"{path}: tensor {name} has shape {tensors[name].shape}, network expects {tuple(shape)}",
                tensor=name,
            )
    extra = sorted(set(tensors) - set(expected))
    if extra:
        raise WeightFileError(f"{path}: unexpected tensor {extra[0]}", tensor=extra[0])
    network.load_state_dict(tensors)
    return network
