"""Super-resolving images: single pass, self-ensemble and benchmark evaluation."""
from __future__ import annotations

import csv
import logging
import os
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import InputError
from .imaging import bicubic_resize, load_png, rgb_to_y
from .metrics import psnr, ssim
from .network import ModelWeights, himamba_forward

__all__ = [
    "DIHEDRAL", "dihedral", "dihedral_inverse", "self_ensemble", "upscaler",
    "EvalRow", "run_eval", "write_eval_csv", "IMAGE_EXTENSIONS",
]

log = logging.getLogger(__name__)

IMAGE_EXTENSIONS = (".png", ".bmp", ".jpg", ".jpeg", ".tif", ".tiff")

# (quarter turns, mirror) in a fixed enumeration order
DIHEDRAL = tuple((k, f) for f in (False, True) for k in range(4))


def dihedral(img, index):
    """Apply dihedral transform ``index`` (0..7) to the last two axes."""
    k, flip = DIHEDRAL[index]
    out = np.flip(img, axis=-1) if flip else img
    return np.rot90(out, k, axes=(-2, -1))


def dihedral_inverse(img, index):
    k, flip = DIHEDRAL[index]
    out = np.rot90(img, -k, axes=(-2, -1))
    return np.flip(out, axis=-1) if flip else out


def self_ensemble(img, model):
    """Average ``model`` over the eight dihedral transforms of ``img``.

    Outputs are mapped back by the inverse transform and summed as a fixed
    pairwise tree, so identical passes average to exactly the same value.
    """
    outs = [np.ascontiguousarray(dihedral_inverse(model(np.ascontiguousarray(dihedral(img, i))), i))
            for i in range(len(DIHEDRAL))]
    while len(outs) > 1:
        outs = [outs[i] + outs[i + 1] for i in range(0, len(outs), 2)]
    return outs[0] / len(DIHEDRAL)


def upscaler(weights: ModelWeights, ensemble=False):
    """Callable mapping a ``(3, H, W)`` LR image to its SR estimate, clipped to [0, 1]."""
    def run(img):
        return himamba_forward(img, weights)

    def sr(img):
        out = self_ensemble(img, run) if ensemble else run(img)
        return np.clip(out, 0.0, 1.0)

    return sr


@dataclass
class EvalRow:
    name: str
    psnr: float
    ssim: float
    psnr_bicubic: float
    ssim_bicubic: float


def _list_images(hr_dir):
    if not os.path.isdir(hr_dir):
        raise InputError(f"{hr_dir} is not a directory")
    names = sorted(f for f in os.listdir(hr_dir) if f.lower().endswith(IMAGE_EXTENSIONS))
    if not names:
        raise InputError(f"no images found in {hr_dir}")
    return names


def evaluate_image(hr, sr_fn, scale):
    """Degrade ``hr`` by bicubic downsampling, restore it and score on luma.

    Returns ``(psnr, ssim, psnr_bicubic, ssim_bicubic)``; the bicubic columns
    score plain bicubic upsampling of the same LR image.
    """
    h, w = hr.shape[-2:]
    h, w = h - h % scale, w - w % scale
    hr = hr[..., :h, :w]
    lr = np.clip(bicubic_resize(hr, w // scale, h // scale), 0.0, 1.0)
    sr = sr_fn(lr)
    base = np.clip(bicubic_resize(lr, w, h), 0.0, 1.0)
    y_hr, y_sr, y_bi = rgb_to_y(hr), rgb_to_y(sr), rgb_to_y(base)
    return (psnr(y_sr, y_hr, scale), ssim(y_sr, y_hr, scale),
            psnr(y_bi, y_hr, scale), ssim(y_bi, y_hr, scale))


def run_eval(weights, hr_dir, scale=None, ensemble=False, sr_fn=None):
    """Score every image in ``hr_dir``; unreadable files are skipped with a warning.

    Rows come back in sorted file-name order. ``sr_fn`` replaces the model
    (used to evaluate other upscalers through the same pipeline).
    """
    if scale is None:
        scale = weights.config.scale
    if sr_fn is None:
        if scale != weights.config.scale:
            raise InputError(f"weights upscale by {weights.config.scale}, evaluation asked for x{scale}")
        sr_fn = upscaler(weights, ensemble)
    rows = []
    for name in _list_images(hr_dir):
        try:
            hr = load_png(os.path.join(hr_dir, name))
        except InputError as e:
            warnings.warn(str(e))
            continue
        rows.append(EvalRow(name, *evaluate_image(hr, sr_fn, scale)))
        log.info("%s: %.4f dB / %.4f", name, rows[-1].psnr, rows[-1].ssim)
    if not rows:
        raise InputError(f"no readable images in {hr_dir}")
    return rows


def mean_row(rows):
    return EvalRow("mean", *(float(np.mean([getattr(r, f) for r in rows]))
                             for f in ("psnr", "ssim", "psnr_bicubic", "ssim_bicubic")))


def write_eval_csv(rows, fh):
    out = csv.writer(fh)
    out.writerow(["image", "psnr", "ssim", "psnr_bicubic", "ssim_bicubic"])
    for r in list(rows) + [mean_row(rows)]:
        out.writerow([r.name, f"{r.psnr:.4f}", f"{r.ssim:.4f}", f"{r.psnr_bicubic:.4f}", f"{r.ssim_bicubic:.4f}"])
