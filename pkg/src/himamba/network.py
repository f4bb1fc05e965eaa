"""Full super-resolution network: shallow conv, DA-HMG body, pixel-shuffle head.

The deep path is the chain of groups applied to the shallow features ``F_l``;
its output ``F_d`` is added back to ``F_l`` before reconstruction. With no
groups the chain is empty and ``F_d = F_l``.

Parameter names (``g`` = group, ``i`` = block):

    head.weight / head.bias                       3x3 conv, 3 -> C
    groups.g.region_proj.weight / .bias           n x n stride-n conv, C -> C_r
    groups.g.blocks.i.<block params>              see blocks.hmb_shapes
    groups.g.refine.weight / .bias                3x3 conv, C -> C
    recon.weight / recon.bias                     3x3 conv, C -> 3*scale^2
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import grad as G
from .blocks import branch_width, hmb_forward, hmb_shapes, region_project, sub
from .config import HiMambaConfig
from .errors import InputError

__all__ = [
    "ModelWeights", "param_shapes", "init_weights", "zero_residual_branches",
    "dahmg_forward", "himamba_forward", "count_params", "count_flops", "MIN_INPUT_SIZE",
]

MIN_INPUT_SIZE = 8


@dataclass
class ModelWeights:
    config: HiMambaConfig
    params: dict

    def num_elements(self):
        return sum(int(np.size(v)) for v in self.params.values())

    def copy(self):
        return ModelWeights(self.config, {k: np.array(v, copy=True) for k, v in self.params.items()})


def param_shapes(cfg: HiMambaConfig):
    """Ordered ``name -> shape`` for every parameter of ``cfg``."""
    c, cr, n = cfg.channels, cfg.region_channels, cfg.region_size
    shapes = {"head.weight": (c, 3, 3, 3), "head.bias": (c,)}
    for g in range(cfg.groups):
        p = f"groups.{g}."
        shapes[p + "region_proj.weight"] = (cr, c, n, n)
        shapes[p + "region_proj.bias"] = (cr,)
        for i in range(cfg.blocks_per_group):
            carries = i < cfg.blocks_per_group - 1
            blk = hmb_shapes(c, cr, cfg.expand, cfg.state_size, cfg.ffn_channels, carries)
            shapes.update({f"{p}blocks.{i}.{k}": s for k, s in blk.items()})
        shapes[p + "refine.weight"] = (c, c, 3, 3)
        shapes[p + "refine.bias"] = (c,)
    out = 3 * cfg.scale ** 2
    shapes["recon.weight"] = (out, c, 3, 3)
    shapes["recon.bias"] = (out,)
    return shapes


def _fan_in(shape):
    return int(np.prod(shape[1:])) if len(shape) > 1 else 1


def init_weights(cfg: HiMambaConfig, seed=0, zero_tail=False):
    """Random initialization.

    Dense weights are uniform in +-1/sqrt(fan_in), biases zero, norms identity,
    ``a_log = log(1..N)``, skip ``d_skip = 1``, step-size bias chosen so that
    ``softplus(bias)`` is log-uniform in [1e-3, 1e-1], ``s1 = s2 = 1`` and
    ``s_f = 0.5``. With ``zero_tail`` every residual branch output is zeroed
    (see :func:`zero_residual_branches`).
    """
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in param_shapes(cfg).items():
        leaf = name.rsplit(".", 1)[-1]
        parent = name.rsplit(".", 2)[-2] if name.count(".") >= 1 else ""
        if leaf == "a_log":
            v = np.tile(np.log(np.arange(1, shape[1] + 1, dtype=float)), (shape[0], 1))
        elif leaf == "d_skip" or leaf in ("s1", "s2"):
            v = np.ones(shape)
        elif leaf == "s_f":
            v = np.full(shape, 0.5)
        elif parent.startswith("ln") or parent == "norm":
            v = np.ones(shape) if leaf == "weight" else np.zeros(shape)
        elif parent == "delta" and leaf == "bias":
            dt = np.exp(rng.uniform(math.log(1e-3), math.log(1e-1), size=shape))
            v = dt + np.log(-np.expm1(-dt))
        elif leaf == "bias":
            v = np.zeros(shape)
        else:
            bound = 1.0 / math.sqrt(_fan_in(shape))
            v = rng.uniform(-bound, bound, size=shape)
        params[name] = v
    w = ModelWeights(cfg, params)
    return zero_residual_branches(w) if zero_tail else w


def zero_residual_branches(weights: ModelWeights):
    """Zero every branch output and refinement conv; set ``s1 = s2 = 1``.

    Each group then maps its input to itself, so ``F_d = F_l`` and the network
    reduces to ``pixel_shuffle(recon(F_l + F_l))`` with ``F_l = head(x)``.
    """
    out = weights.copy()
    for name, v in out.params.items():
        if any(t in name for t in (".lssm.out.", ".rssm.out.", ".gffn.w2.", ".refine.")):
            v[...] = 0.0
        elif name.endswith((".s1", ".s2")):
            v[...] = 1.0
    return out


def dahmg_forward(f_in, w, cfg: HiMambaConfig):
    """One direction-alternation group: region projection, N1 blocks, refine conv, residual."""
    n = cfg.region_size
    i_r = region_project(f_in, n, w["region_proj.weight"], w["region_proj.bias"])
    f_l = f_in
    for i in range(cfg.blocks_per_group):
        f_l, i_r = hmb_forward(f_l, i_r, sub(w, f"blocks.{i}"), cfg.direction(i), n)
    return G.conv2d(f_l, w["refine.weight"], w["refine.bias"], pad=1) + f_in


def _resolve(weights, cfg):
    if isinstance(weights, ModelWeights):
        return weights.params, cfg or weights.config
    if cfg is None:
        raise ValueError("a config is required when passing a bare parameter mapping")
    return weights, cfg


def himamba_forward(img, weights, cfg: HiMambaConfig | None = None):
    """Super-resolve ``(3, H, W)`` or ``(B, 3, H, W)`` images in [0, 1].

    Sides that are not multiples of the region size are reflect-padded and
    the output is cropped back to ``scale*H x scale*W``.
    """
    params, cfg = _resolve(weights, cfg)
    img = np.asarray(G.value_of(img)) if not isinstance(img, G.Node) else img
    h, w = img.shape[-2:]
    if img.shape[-3] != 3:
        raise InputError(f"expected 3 input channels, got {img.shape[-3]}")
    if h < MIN_INPUT_SIZE or w < MIN_INPUT_SIZE:
        raise InputError(f"input {h}x{w} is smaller than {MIN_INPUT_SIZE}x{MIN_INPUT_SIZE}")
    n = cfg.region_size
    ph, pw = -h % n, -w % n
    if ph or pw:
        if isinstance(img, G.Node):
            raise InputError("differentiable input must already be a multiple of the region size")
        widths = [(0, 0)] * (img.ndim - 2) + [(0, ph), (0, pw)]
        img = np.pad(img, widths, mode="reflect")
    f_l = G.conv2d(img, params["head.weight"], params["head.bias"], pad=1)
    f_d = f_l
    for g in range(cfg.groups):
        f_d = dahmg_forward(f_d, sub(params, f"groups.{g}"), cfg)
    out = G.pixel_shuffle(G.conv2d(G.add(f_l, f_d), params["recon.weight"], params["recon.bias"], pad=1), cfg.scale)
    if ph or pw:
        out = G.crop(out, cfg.scale * h, cfg.scale * w)
    return out


# ------------------------------------------------------------------ accounting

def _branch_params(c_in, c_out, expand, state, kernel=3):
    di = branch_width(c_in, expand)
    return (2 * di * c_in            # in_x, in_z
            + di * kernel ** 2 + di  # depthwise conv
            + di * di + di           # step-size projection
            + 2 * state * di         # B and C projections
            + di * state + di        # a_log, d_skip
            + 2 * di                 # output norm
            + c_out * di)            # out projection


def count_params(cfg: HiMambaConfig):
    """Closed-form parameter count."""
    c, cr, n, ch = cfg.channels, cfg.region_channels, cfg.region_size, cfg.ffn_channels
    block = (2 * c + 2 * cr
             + _branch_params(c, c, cfg.expand, cfg.state_size)
             + _branch_params(cr, c, cfg.expand, cfg.state_size)
             + 3 * c                        # s_f, s1, s2
             + 2 * c                        # ffn norm
             + 2 * ch * c + 2 * ch          # w1
             + c * ch + c)                  # w2
    group = (cr * c * n * n + cr
             + cfg.blocks_per_group * block
             + (cfg.blocks_per_group - 1) * cr * c
             + 9 * c * c + c)
    total = 27 * c + c + cfg.groups * group
    out = 3 * cfg.scale ** 2
    return total + 9 * c * out + out


def _branch_macs(c_in, c_out, expand, state, positions, kernel=3):
    di = branch_width(c_in, expand)
    per_pos = (2 * di * c_in + di * kernel ** 2 + di * di + 2 * state * di
               + 3 * di * state + di      # recurrence: a_bar*h, b_bar*u, <c,h>, skip
               + c_out * di)
    return per_pos * positions


def count_flops(cfg: HiMambaConfig, height, width):
    """2 x multiply-accumulates of every conv, linear and scan at an LR input size.

    Elementwise work (norms, activations, gating) is not counted. Sizes are
    rounded up to the region-size multiple actually processed.
    """
    n = cfg.region_size
    hp, wp = height + (-height % n), width + (-width % n)
    pos = hp * wp
    rpos = pos // (n * n)
    c, cr, ch = cfg.channels, cfg.region_channels, cfg.ffn_channels
    macs = 27 * c * pos
    for _ in range(cfg.groups):
        macs += cr * c * n * n * rpos
        for i in range(cfg.blocks_per_group):
            macs += _branch_macs(c, c, cfg.expand, cfg.state_size, pos)
            macs += _branch_macs(cr, c, cfg.expand, cfg.state_size, rpos)
            macs += (2 * ch * c + c * ch) * pos
            if i < cfg.blocks_per_group - 1:
                macs += cr * c * rpos
        macs += 9 * c * c * pos
    macs += 9 * c * 3 * cfg.scale ** 2 * pos
    return 2 * macs
