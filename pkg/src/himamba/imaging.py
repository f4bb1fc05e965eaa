"""Image I/O, luma conversion and bicubic resampling.

Images are float arrays of shape ``(3, H, W)`` with values in [0, 1].
"""
from __future__ import annotations

import numpy as np
from PIL import Image

from .errors import InputError, ParameterError

__all__ = ["load_png", "save_png", "to_uint8", "rgb_to_y", "cubic", "resize_matrix", "bicubic_resize"]


def to_uint8(img):
    """Clamp to [0, 1] and round half away from zero to 8-bit."""
    return np.floor(np.clip(img, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def load_png(path):
    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.float64)
    except (OSError, ValueError) as e:
        raise InputError(f"cannot read image {path}: {e}") from e
    return arr.transpose(2, 0, 1) / 255.0


def save_png(img, path):
    Image.fromarray(to_uint8(img).transpose(1, 2, 0), mode="RGB").save(path)


def rgb_to_y(img):
    """BT.601 studio-swing luma, returned in [16/255, 235/255]."""
    r, g, b = img[..., 0, :, :], img[..., 1, :, :], img[..., 2, :, :]
    return (16.0 + 65.481 * r + 128.553 * g + 24.966 * b) / 255.0


def cubic(x, a=-0.5):
    """Keys cubic convolution kernel; ``a = -0.5`` is Catmull-Rom."""
    x = np.abs(np.asarray(x, dtype=np.float64))
    x2, x3 = x * x, x * x * x
    near = (a + 2.0) * x3 - (a + 3.0) * x2 + 1.0
    far = a * x3 - 5.0 * a * x2 + 8.0 * a * x - 4.0 * a
    return np.where(x <= 1.0, near, np.where(x < 2.0, far, 0.0))


def resize_matrix(n_in, n_out):
    """Dense ``(n_out, n_in)`` bicubic resampling matrix along one axis.

    Pixel centers are aligned (half-pixel convention). When shrinking, the
    kernel is stretched by the inverse scale to act as an anti-aliasing
    filter. Taps that fall outside the image are folded onto the edge pixel,
    and each row is normalized to sum to one.
    """
    if n_in < 1 or n_out < 1:
        raise ParameterError(f"resize sizes must be positive, got {n_in} -> {n_out}")
    scale = n_out / n_in
    stretch = min(scale, 1.0)
    support = 2.0 / stretch
    centers = (np.arange(n_out) + 0.5) / scale - 0.5
    first = np.floor(centers - support).astype(int) + 1
    taps = int(np.ceil(2 * support)) + 1
    idx = first[:, None] + np.arange(taps)[None, :]
    wts = cubic((centers[:, None] - idx) * stretch)
    wts /= wts.sum(axis=1, keepdims=True)
    m = np.zeros((n_out, n_in))
    rows = np.repeat(np.arange(n_out), taps)
    np.add.at(m, (rows, np.clip(idx, 0, n_in - 1).ravel()), wts.ravel())
    return m


def bicubic_resize(img, out_w, out_h):
    """Resize ``(..., H, W)`` to ``(..., out_h, out_w)``."""
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape[-2:]
    if out_w < 1 or out_h < 1:
        raise ParameterError(f"target size must be positive, got {out_w}x{out_h}")
    out = img
    if out_h != h:
        out = np.einsum("oh,...hw->...ow", resize_matrix(h, out_h), out)
    if out_w != w:
        out = np.einsum("ow,...hw->...ho", resize_matrix(w, out_w), out)
    return out.copy() if out is img else out
