"""Binary PGM and raw float raster output."""

from __future__ import annotations

import os

import numpy as np

from .dataset import atomic_write_bytes

__all__ = ["encode_pgm", "decode_pgm", "write_pgm", "write_f32", "to_u8"]


def to_u8(values: np.ndarray, lo: float | None = None, hi: float | None = None) -> np.ndarray:
    """Linearly map ``[lo, hi]`` (default: data range) onto 0..255."""
    v = np.asarray(values, dtype=np.float64)
    lo = float(np.nanmin(v)) if lo is None else lo
    hi = float(np.nanmax(v)) if hi is None else hi
    if hi <= lo:
        return np.zeros(v.shape, dtype=np.uint8)
    scaled = np.clip((v - lo) / (hi - lo), 0.0, 1.0)
    return np.round(scaled * 255.0).astype(np.uint8)


def encode_pgm(image: np.ndarray) -> bytes:
    img = np.asarray(image)
    if img.ndim != 2 or img.dtype != np.uint8:
        raise ValueError("PGM output needs a 2-D uint8 array")
    h, w = img.shape
    return f"P5\n{w} {h}\n255\n".encode("ascii") + np.ascontiguousarray(img).tobytes()


def decode_pgm(data: bytes) -> np.ndarray:
    parts = data.split(maxsplit=4)
    if len(parts) < 5 or parts[0] != b"P5" or parts[3] != b"255":
        raise ValueError("not an 8-bit binary PGM")
    w, h = int(parts[1]), int(parts[2])
    pixels = data[len(data) - w * h :]
    return np.frombuffer(pixels, dtype=np.uint8).reshape(h, w).copy()


def write_pgm(path: str | os.PathLike, image: np.ndarray) -> None:
    atomic_write_bytes(path, encode_pgm(image))


def write_f32(path: str | os.PathLike, values: np.ndarray) -> None:
    """Row-major little-endian float32 dump (no header)."""
    atomic_write_bytes(path, np.ascontiguousarray(values, dtype="<f4").tobytes())
