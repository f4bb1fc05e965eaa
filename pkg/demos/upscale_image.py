"""Build the tiny network, report its size and super-resolve a synthetic image.

The weights are freshly initialized, so the picture will not look good; the
point is the plumbing: config, parameter and FLOP counts, a weight file
round trip, plain and self-ensembled inference. Pass an output directory to
keep the PNGs (default: a temporary directory).

    python3 demos/upscale_image.py [OUT_DIR]
"""
import sys
import tempfile
from pathlib import Path

import numpy as np

from himamba import count_flops, count_params, himamba_forward, init_weights, load_weights, preset, save_weights
from himamba.data import synthetic_textures
from himamba.imaging import save_png
from himamba.inference import self_ensemble

out = Path(sys.argv[1] if len(sys.argv) > 1 else tempfile.mkdtemp())
out.mkdir(parents=True, exist_ok=True)

cfg = preset("tiny")
print(cfg)
print(f"params {count_params(cfg):,}   FLOPs at 64x64 input {count_flops(cfg, 64, 64):,}")

weights = init_weights(cfg, seed=0)
save_weights(weights, out / "tiny.himb")
weights = load_weights(out / "tiny.himb")

lr = synthetic_textures(1, 40, seed=7)[0]
sr = himamba_forward(lr, weights)
sr_ens = self_ensemble(lr, lambda x: himamba_forward(x, weights))
print(f"input {lr.shape} -> output {sr.shape}; ensemble changes pixels by up to {np.abs(sr - sr_ens).max():.3f}")

save_png(lr, out / "input.png")
save_png(sr, out / "output.png")
save_png(sr_ens, out / "output_ensemble.png")
print("wrote", ", ".join(p.name for p in sorted(out.iterdir())), "to", out)
