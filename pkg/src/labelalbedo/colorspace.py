"""sRGB transfer function (IEC 61966-2-1) and 8-bit PNG I/O for linear images."""

from pathlib import Path

import numpy as np
from PIL import Image


def srgb_encode(linear):
    x = np.clip(np.asarray(linear, dtype=np.float64), 0.0, 1.0)
    return np.where(x <= 0.0031308, 12.92 * x, 1.055 * np.power(x, 1.0 / 2.4) - 0.055)


def srgb_decode(encoded):
    c = np.clip(np.asarray(encoded, dtype=np.float64), 0.0, 1.0)
    return np.where(c <= 0.04045, c / 12.92, np.power((c + 0.055) / 1.055, 2.4))


def to_uint8(linear):
    return np.round(srgb_encode(linear) * 255.0).astype(np.uint8)


def from_uint8(codes):
    return srgb_decode(np.asarray(codes, dtype=np.float64) / 255.0)


def save_png(path, linear):
    arr = np.asarray(linear)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"expected HxWx3 image, got shape {arr.shape}")
    Image.fromarray(to_uint8(arr), mode="RGB").save(Path(path), format="PNG")


def load_png(path):
    """Read any Pillow-readable image as an HxWx3 float64 linear-RGB array."""
    with Image.open(Path(path)) as im:
        im.load()
        rgb = im.convert("RGB")
    return from_uint8(np.asarray(rgb))


def max_roundtrip_error():
    """Largest linear-space error of an 8-bit sRGB round trip.

    Half the widest gap between adjacent decoded code values; the gap is
    widest at the top of the range (about 1.13/255).
    """
    levels = from_uint8(np.arange(256))
    return float(np.max(np.diff(levels)) / 2.0)
