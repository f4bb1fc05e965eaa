"""PSNR and SSIM on single-channel planes with values in [0, 1]."""
from __future__ import annotations

import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DimensionError

__all__ = ["PSNR_CAP", "psnr", "ssim", "gaussian_window"]

PSNR_CAP = 100.0


def _shaved(a, b, shave):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"metric inputs differ in shape: {a.shape} vs {b.shape}")
    if shave:
        a = a[..., shave:-shave, shave:-shave]
        b = b[..., shave:-shave, shave:-shave]
    if a.size == 0:
        raise DimensionError(f"nothing left after shaving {shave} pixels")
    return a, b


def psnr(a, b, shave=0):
    """Peak signal-to-noise ratio in dB for peak value 1, capped at 100 dB."""
    a, b = _shaved(a, b, shave)
    d = a - b
    mse = float(np.mean(d * d))
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(1.0 / mse))


def gaussian_window(size=11, sigma=1.5):
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return g / g.sum()


def _filter_valid(img, g):
    k = len(g)
    rows = sliding_window_view(img, k, axis=-2) @ g
    return sliding_window_view(rows, k, axis=-1) @ g


def ssim(a, b, shave=0, k1=0.01, k2=0.03, window=11, sigma=1.5):
    """Mean structural similarity over 'valid' Gaussian windows (peak value 1)."""
    a, b = _shaved(a, b, shave)
    if min(a.shape[-2:]) < window:
        raise DimensionError(f"image {a.shape[-2:]} smaller than the {window}x{window} SSIM window")
    g = gaussian_window(window, sigma)
    c1, c2 = k1 ** 2, k2 ** 2
    mu_a, mu_b = _filter_valid(a, g), _filter_valid(b, g)
    e_aa, e_bb, e_ab = _filter_valid(a * a, g), _filter_valid(b * b, g), _filter_valid(a * b, g)
    mu_ab = mu_a * mu_b
    var_a = e_aa - mu_a * mu_a
    var_b = e_bb - mu_b * mu_b
    cov = e_ab - mu_ab
    num = (2.0 * mu_ab + c1) * (2.0 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))
