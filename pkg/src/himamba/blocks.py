"""Hierarchical Mamba block: local/region SSM branches, fusion and gated FFN.

Weights are passed as flat mappings from dotted names to arrays (or tape
nodes), e.g. ``w["lssm.in_x.weight"]``; :func:`sub` strips a prefix. All
functions accept ``(C, H, W)`` or batched ``(B, C, H, W)`` feature maps, and
work unchanged on :class:`himamba.grad.Node` values.
"""
from __future__ import annotations

from . import grad as G
from .errors import ContractError, DimensionError
from .scan import Direction

__all__ = [
    "sub", "branch_width", "ssm_branch_shapes", "hmb_shapes",
    "ssm_branch", "region_project", "fuse", "gffn", "hmb_forward",
]

CHANNEL_AXIS = -3


def sub(w, prefix):
    """Entries of ``w`` under ``prefix.`` with the prefix removed."""
    p = prefix + "."
    return {k[len(p):]: v for k, v in w.items() if k.startswith(p)}


def branch_width(channels, expand):
    width = int(round(expand * channels))
    if width < 1:
        raise ContractError(f"expansion {expand} x {channels} channels leaves no width")
    return width


def ssm_branch_shapes(c_in, c_out, expand, state, kernel=3):
    di = branch_width(c_in, expand)
    return {
        "in_x.weight": (di, c_in),
        "in_z.weight": (di, c_in),
        "dwconv.weight": (di, 1, kernel, kernel),
        "dwconv.bias": (di,),
        "delta.weight": (di, di),
        "delta.bias": (di,),
        "b_proj.weight": (state, di),
        "c_proj.weight": (state, di),
        "a_log": (di, state),
        "d_skip": (di,),
        "norm.weight": (di,),
        "norm.bias": (di,),
        "out.weight": (c_out, di),
    }


def hmb_shapes(channels, region_channels, expand, state, ffn_channels, carries_region=True):
    """Parameter shapes of one block; the last block of a group carries no region state."""
    c, cr = channels, region_channels
    shapes = {
        "ln1.weight": (c,), "ln1.bias": (c,),
        "ln1r.weight": (cr,), "ln1r.bias": (cr,),
    }
    shapes.update({"lssm." + k: s for k, s in ssm_branch_shapes(c, c, expand, state).items()})
    shapes.update({"rssm." + k: s for k, s in ssm_branch_shapes(cr, c, expand, state).items()})
    shapes.update({
        "s_f": (c,), "s1": (c,), "s2": (c,),
        "gffn.norm.weight": (c,), "gffn.norm.bias": (c,),
        "gffn.w1.weight": (2 * ffn_channels, c, 1, 1), "gffn.w1.bias": (2 * ffn_channels,),
        "gffn.w2.weight": (c, ffn_channels, 1, 1), "gffn.w2.bias": (c,),
    })
    if carries_region:
        shapes["region_next.weight"] = (cr, c)
    return shapes


def _per_channel(v):
    # (C,) -> (C, 1, 1) so it broadcasts against (..., C, H, W)
    return G.reshape(v, (-1, 1, 1))


def ssm_branch(x, w, direction):
    """One single-direction SSM branch; output has the shape of ``x``.

    gate path:  SiLU(Linear(x))
    scan path:  LN(SSM(SiLU(DWConv(Linear(x)))))
    output:     Linear(scan * gate)
    """
    direction = Direction(direction) if not isinstance(direction, Direction) else direction
    height, width = x.shape[-2:]
    dw = w["dwconv.weight"]
    di = dw.shape[0]
    xs = G.linear(x, w["in_x.weight"], axis=CHANNEL_AXIS)
    xs = G.conv2d(xs, dw, w["dwconv.bias"], pad=dw.shape[-1] // 2, groups=di)
    xs = G.silu(xs)
    seq = G.flatten_direction(xs, direction)
    delta = G.softplus(G.linear(seq, w["delta.weight"], w["delta.bias"]))
    b_seq = G.linear(seq, w["b_proj.weight"])
    c_seq = G.linear(seq, w["c_proj.weight"])
    ys = G.selective_scan(seq, delta, w["a_log"], b_seq, c_seq, w["d_skip"])
    ys = G.layernorm(ys, w["norm.weight"], w["norm.bias"])
    ys = G.unflatten_direction(ys, direction, height, width)
    gate = G.silu(G.linear(x, w["in_z.weight"], axis=CHANNEL_AXIS))
    return G.linear(ys * gate, w["out.weight"], axis=CHANNEL_AXIS)


def region_project(local, n, weight, bias=None):
    """Strided ``n x n`` convolution from local features to region tokens."""
    h, wd = local.shape[-2:]
    if h % n or wd % n:
        raise ContractError(f"feature size {h}x{wd} is not a multiple of region size {n}")
    return G.conv2d(local, weight, bias, stride=n)


def fuse(x_local, x_region, s_f, n):
    """Blend local features with region features repeated over their n x n blocks.

    ``s_f`` is clamped to [0, 1] so the result is a per-channel convex combination.
    """
    if x_region.shape[-3] != x_local.shape[-3]:
        raise DimensionError(f"fuse: region has {x_region.shape[-3]} channels, local {x_local.shape[-3]}")
    if (x_region.shape[-2] * n, x_region.shape[-1] * n) != tuple(x_local.shape[-2:]):
        raise DimensionError(f"fuse: region grid {x_region.shape[-2:]} x{n} != local {x_local.shape[-2:]}")
    s = _per_channel(G.clamp(s_f, 0.0, 1.0))
    return s * x_local + (1.0 - s) * G.repeat_regions(x_region, n)


def gffn(f, w):
    """Gated feed-forward: expand, split channels in two, multiply, project back."""
    w1 = w["w1.weight"]
    if w1.shape[0] % 2:
        raise ContractError(f"gffn expansion must have an even channel count, got {w1.shape[0]}")
    half = w1.shape[0] // 2
    h = G.layernorm(f, w["norm.weight"], w["norm.bias"], axis=CHANNEL_AXIS)
    h = G.conv2d(h, w1, w.get("w1.bias"))
    gated = G.channel_slice(h, 0, half, axis=CHANNEL_AXIS) * G.channel_slice(h, half, 2 * half, axis=CHANNEL_AXIS)
    return G.conv2d(gated, w["w2.weight"], w.get("w2.bias"))


def hmb_forward(i_local, i_region, w, direction, n):
    """Run one block; returns ``(next_local, next_region)``.

    ``next_region`` is None for blocks without a ``region_next`` projection.
    """
    f_l = ssm_branch(G.layernorm(i_local, w["ln1.weight"], w["ln1.bias"], axis=CHANNEL_AXIS),
                     sub(w, "lssm"), direction)
    f_r = ssm_branch(G.layernorm(i_region, w["ln1r.weight"], w["ln1r.bias"], axis=CHANNEL_AXIS),
                     sub(w, "rssm"), direction)
    f = fuse(f_l, f_r, w["s_f"], n) + _per_channel(w["s1"]) * i_local
    nxt = gffn(f, sub(w, "gffn")) + _per_channel(w["s2"]) * f
    r_next = None
    if "region_next.weight" in w:
        r_next = G.linear(f_r, w["region_next.weight"], axis=CHANNEL_AXIS)
    return nxt, r_next
