"""Procedural training images and LR/HR pair construction."""
from __future__ import annotations

import os

import numpy as np

from .errors import InputError
from .imaging import bicubic_resize, load_png
from .inference import IMAGE_EXTENSIONS

__all__ = ["synthetic_texture", "synthetic_textures", "make_pairs", "load_hr_dir"]


def _stripes(rng, yy, xx, size):
    theta = rng.uniform(0, np.pi)
    period = rng.uniform(3.0, size / 3)
    phase = (np.cos(theta) * xx + np.sin(theta) * yy) / period
    return (np.floor(phase) % 2).astype(float)


def _checker(rng, yy, xx, size):
    cell = rng.integers(3, max(4, size // 4))
    return ((yy // cell + xx // cell) % 2).astype(float)


def _disks(rng, yy, xx, size):
    m = np.zeros_like(yy, dtype=float)
    for _ in range(rng.integers(2, 7)):
        cy, cx = rng.uniform(0, size, 2)
        r = rng.uniform(2, size / 4)
        m[(yy - cy) ** 2 + (xx - cx) ** 2 <= r * r] = rng.uniform()
    return m


def _rects(rng, yy, xx, size):
    m = np.zeros_like(yy, dtype=float)
    for _ in range(rng.integers(2, 8)):
        y0, x0 = rng.integers(0, size, 2)
        h, w = rng.integers(2, size // 2, 2)
        m[y0:y0 + h, x0:x0 + w] = rng.uniform()
    return m


_PATTERNS = (_stripes, _checker, _disks, _rects)


def synthetic_texture(rng, size=64):
    """One ``(3, size, size)`` image: two or three layered geometric patterns in random colors."""
    yy, xx = np.mgrid[0:size, 0:size].astype(float)
    img = np.broadcast_to(rng.uniform(0, 1, (3, 1, 1)), (3, size, size)).copy()
    for _ in range(rng.integers(2, 4)):
        mask = _PATTERNS[rng.integers(len(_PATTERNS))](rng, yy, xx, size)
        color = rng.uniform(0, 1, (3, 1, 1))
        img = img * (1 - mask) + color * mask
    return np.clip(img, 0.0, 1.0)


def synthetic_textures(count, size=64, seed=0):
    rng = np.random.default_rng(seed)
    return [synthetic_texture(rng, size) for _ in range(count)]


def make_pairs(hr_images, scale):
    """Bicubic-degraded ``(lr, hr)`` pairs; HR is cropped to a multiple of ``scale``."""
    pairs = []
    for hr in hr_images:
        h, w = hr.shape[-2:]
        hr = hr[..., : h - h % scale, : w - w % scale]
        lr = np.clip(bicubic_resize(hr, hr.shape[-1] // scale, hr.shape[-2] // scale), 0.0, 1.0)
        pairs.append((lr, hr))
    return pairs


def load_hr_dir(path):
    names = sorted(f for f in os.listdir(path) if f.lower().endswith(IMAGE_EXTENSIONS))
    if not names:
        raise InputError(f"no images found in {path}")
    return [load_png(os.path.join(path, f)) for f in names]
