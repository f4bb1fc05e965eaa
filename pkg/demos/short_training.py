"""Fit the tiny preset to synthetic x2 pairs for a few hundred steps.

Prints the loss every 50 steps and compares held-out PSNR with plain bicubic
upscaling. At 300 steps the network usually still trails bicubic; the full
acceptance run (1000 steps, `himamba verify --slow --filter toy`) overtakes it.

    python3 demos/short_training.py [ITERS]
"""
import sys

import numpy as np

from himamba import preset
from himamba.data import make_pairs, synthetic_textures
from himamba.inference import evaluate_image, upscaler
from himamba.train import TrainSchedule, train

iters = int(sys.argv[1]) if len(sys.argv) > 1 else 300
cfg = preset("tiny")
pairs = make_pairs(synthetic_textures(64, 64, seed=0), cfg.scale)
weights, curve = train(cfg, pairs, TrainSchedule(iters=iters, lr=1e-3, batch_size=8, patch_size=16, log_every=0))

for it, lr, loss in curve[::50]:
    print(f"iter {it:5d}  lr {lr:.1e}  L1 {loss:.4f}")

sr = upscaler(weights)
scores = np.array([evaluate_image(hr, sr, cfg.scale) for hr in synthetic_textures(8, 64, seed=1)])
print(f"held-out PSNR {scores[:, 0].mean():.2f} dB, bicubic {scores[:, 2].mean():.2f} dB")
