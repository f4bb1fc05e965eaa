"""Dense array primitives used to build the network, with their adjoints.

Tensors are plain :class:`numpy.ndarray` objects. Images and feature maps are
channel-major, ``(C, H, W)`` or batched ``(B, C, H, W)``. Every forward
function here has a matching ``*_backward`` that maps the output cotangent to
input cotangents; :mod:`himamba.grad` wires those into the tape.

Convolution is cross-correlation (the kernel is not flipped) with zero padding.
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DimensionError, ParameterError

__all__ = [
    "linear", "linear_backward",
    "conv2d", "conv2d_backward",
    "layernorm", "layernorm_backward",
    "sigmoid", "silu", "silu_backward", "softplus", "softplus_backward",
    "pixel_shuffle", "pixel_unshuffle",
    "repeat_regions", "repeat_regions_backward",
    "unbroadcast",
]


def unbroadcast(g, shape):
    """Sum ``g`` down to ``shape``, undoing numpy broadcasting."""
    shape = tuple(shape)
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _split_axis(x, axis):
    axis = axis % x.ndim
    pre = int(np.prod(x.shape[:axis], dtype=np.int64))
    post = int(np.prod(x.shape[axis + 1:], dtype=np.int64))
    return axis, pre, post


def _along(v, ndim, axis):
    """Reshape a per-channel vector so it broadcasts along ``axis``."""
    shape = [1] * ndim
    shape[axis % ndim] = v.shape[0]
    return v.reshape(shape)


# ---------------------------------------------------------------- linear

def linear(x, w, b=None, axis=-1):
    """Apply ``y[..., o] = sum_i w[o, i] x[..., i] + b[o]`` along ``axis``."""
    x = np.asarray(x)
    w = np.asarray(w)
    if w.ndim != 2:
        raise DimensionError(f"linear weight must be 2-D, got shape {w.shape}")
    if x.shape[axis] != w.shape[1]:
        raise DimensionError(
            f"linear: input has {x.shape[axis]} features on axis {axis}, weight expects {w.shape[1]}")
    if b is not None and np.shape(b) != (w.shape[0],):
        raise DimensionError(f"linear bias shape {np.shape(b)} != ({w.shape[0]},)")
    axis, pre, post = _split_axis(x, axis)
    if post == 1:
        y = x.reshape(pre, -1) @ w.T
    else:
        y = np.matmul(w, x.reshape(pre, w.shape[1], post))
    out_shape = x.shape[:axis] + (w.shape[0],) + x.shape[axis + 1:]
    y = y.reshape(out_shape)
    if b is not None:
        y = y + _along(np.asarray(b), y.ndim, axis)
    return y


def linear_backward(gy, x, w, has_bias=True, axis=-1):
    axis, pre, post = _split_axis(x, axis)
    cout, cin = w.shape
    if post == 1:
        g2 = gy.reshape(pre, cout)
        x2 = x.reshape(pre, cin)
        gx = (g2 @ w).reshape(x.shape)
        gw = g2.T @ x2
    else:
        g3 = gy.reshape(pre, cout, post)
        x3 = x.reshape(pre, cin, post)
        gx = np.matmul(w.T, g3).reshape(x.shape)
        gw = np.tensordot(g3, x3, axes=([0, 2], [0, 2]))
    gb = None
    if has_bias:
        red = tuple(i for i in range(gy.ndim) if i != axis)
        gb = gy.sum(axis=red)
    return gx, gw, gb


# ---------------------------------------------------------------- conv2d

def _conv_geometry(x, w, stride, pad, groups):
    if stride < 1 or pad < 0 or groups < 1:
        raise ParameterError(f"invalid conv2d stride={stride} pad={pad} groups={groups}")
    if x.ndim != 4:
        raise DimensionError(f"conv2d input must be (C,H,W) or (B,C,H,W), got {x.shape}")
    if w.ndim != 4:
        raise DimensionError(f"conv2d weight must be 4-D, got {w.shape}")
    _, c, h, wd = x.shape
    cout, cg, kh, kw = w.shape
    if c % groups or cout % groups:
        raise ParameterError(f"channels ({c} in, {cout} out) not divisible by groups={groups}")
    if cg != c // groups:
        raise DimensionError(f"conv2d weight expects {cg} channels per group, input gives {c // groups}")
    if h + 2 * pad < kh or wd + 2 * pad < kw:
        raise ParameterError(f"kernel {kh}x{kw} larger than padded input {h + 2 * pad}x{wd + 2 * pad}")
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (wd + 2 * pad - kw) // stride + 1
    return ho, wo


def _pad(x, pad):
    if pad == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))


def _im2col(xp, kh, kw, stride, ho, wo):
    v = sliding_window_view(xp, (kh, kw), axis=(2, 3))
    v = v[:, :, : (ho - 1) * stride + 1: stride, : (wo - 1) * stride + 1: stride]
    b, c = xp.shape[:2]
    return v.transpose(0, 2, 3, 1, 4, 5).reshape(b * ho * wo, c * kh * kw)


def conv2d(x, w, b=None, stride=1, pad=0, groups=1):
    """2-D cross-correlation. ``x`` is ``(C,H,W)`` or ``(B,C,H,W)``."""
    x = np.asarray(x)
    w = np.asarray(w)
    single = x.ndim == 3
    if single:
        x = x[None]
    ho, wo = _conv_geometry(x, w, stride, pad, groups)
    bsz, c = x.shape[:2]
    cout, cg, kh, kw = w.shape
    xp = _pad(x, pad)
    if cg == 1 and cout == c:
        # depthwise (or single-channel dense): the same accumulation order either way,
        # so a depthwise conv equals per-channel convs bit for bit
        y = np.zeros((bsz, cout, ho, wo), dtype=np.result_type(x, w))
        for i in range(kh):
            for j in range(kw):
                patch = xp[:, :, i: i + (ho - 1) * stride + 1: stride, j: j + (wo - 1) * stride + 1: stride]
                y += w[:, 0, i, j][None, :, None, None] * patch
    elif groups == 1:
        cols = _im2col(xp, kh, kw, stride, ho, wo)
        y = (cols @ w.reshape(cout, -1).T).reshape(bsz, ho, wo, cout).transpose(0, 3, 1, 2)
        y = np.ascontiguousarray(y)
    else:
        og = cout // groups
        xg = xp.reshape(bsz, groups, cg, *xp.shape[2:])
        wg = w.reshape(groups, og, cg, kh, kw)
        y = np.zeros((bsz, groups, og, ho, wo), dtype=np.result_type(x, w))
        for i in range(kh):
            for j in range(kw):
                patch = xg[..., i: i + (ho - 1) * stride + 1: stride, j: j + (wo - 1) * stride + 1: stride]
                y += np.einsum("goc,bgchw->bgohw", wg[..., i, j], patch)
        y = y.reshape(bsz, cout, ho, wo)
    if b is not None:
        if np.shape(b) != (cout,):
            raise DimensionError(f"conv2d bias shape {np.shape(b)} != ({cout},)")
        y = y + np.asarray(b)[None, :, None, None]
    return y[0] if single else y


def conv2d_backward(gy, x, w, has_bias=True, stride=1, pad=0, groups=1):
    """Return ``(gx, gw, gb)`` for :func:`conv2d`."""
    single = x.ndim == 3
    if single:
        x, gy = x[None], gy[None]
    bsz, c, h, wd = x.shape
    cout, cg, kh, kw = w.shape
    ho, wo = gy.shape[2:]
    xp = _pad(x, pad)
    gxp = np.zeros(xp.shape, dtype=np.result_type(gy, w))
    sh = (ho - 1) * stride + 1
    sw = (wo - 1) * stride + 1
    if cg == 1 and cout == c:
        gw = np.zeros(w.shape, dtype=gxp.dtype)
        for i in range(kh):
            for j in range(kw):
                patch = xp[:, :, i: i + sh: stride, j: j + sw: stride]
                gw[:, 0, i, j] = (gy * patch).sum(axis=(0, 2, 3))
                gxp[:, :, i: i + sh: stride, j: j + sw: stride] += w[:, 0, i, j][None, :, None, None] * gy
    elif groups == 1:
        cols = _im2col(xp, kh, kw, stride, ho, wo)
        g2 = gy.transpose(0, 2, 3, 1).reshape(-1, cout)
        gw = (g2.T @ cols).reshape(w.shape)
        gcols = (g2 @ w.reshape(cout, -1)).reshape(bsz, ho, wo, c, kh, kw)
        for i in range(kh):
            for j in range(kw):
                gxp[:, :, i: i + sh: stride, j: j + sw: stride] += gcols[..., i, j].transpose(0, 3, 1, 2)
    else:
        og = cout // groups
        xg = xp.reshape(bsz, groups, cg, *xp.shape[2:])
        gxg = gxp.reshape(xg.shape)
        wg = w.reshape(groups, og, cg, kh, kw)
        gyg = gy.reshape(bsz, groups, og, ho, wo)
        gwg = np.zeros(wg.shape, dtype=gxp.dtype)
        for i in range(kh):
            for j in range(kw):
                patch = xg[..., i: i + sh: stride, j: j + sw: stride]
                gwg[..., i, j] = np.einsum("bgohw,bgchw->goc", gyg, patch)
                gxg[..., i: i + sh: stride, j: j + sw: stride] += np.einsum("goc,bgohw->bgchw", wg[..., i, j], gyg)
        gw = gwg.reshape(w.shape)
    gx = gxp[:, :, pad: pad + h, pad: pad + wd] if pad else gxp
    gb = gy.sum(axis=(0, 2, 3)) if has_bias else None
    if single:
        gx = gx[0]
    return np.ascontiguousarray(gx), gw, gb


# ---------------------------------------------------------------- layernorm

def layernorm(x, gamma, beta, eps=1e-5, axis=-1):
    """Normalize over the channel ``axis`` at every other position."""
    x = np.asarray(x)
    if x.shape[axis] < 1 or np.shape(gamma) != (x.shape[axis],) or np.shape(beta) != (x.shape[axis],):
        raise DimensionError(f"layernorm affine shapes {np.shape(gamma)}, {np.shape(beta)} "
                             f"do not match {x.shape[axis]} channels")
    mu = x.mean(axis=axis, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=axis, keepdims=True)
    xhat = xc / np.sqrt(var + eps)
    return xhat * _along(np.asarray(gamma), x.ndim, axis) + _along(np.asarray(beta), x.ndim, axis)


def layernorm_backward(gy, x, gamma, eps=1e-5, axis=-1):
    mu = x.mean(axis=axis, keepdims=True)
    xc = x - mu
    rstd = 1.0 / np.sqrt((xc * xc).mean(axis=axis, keepdims=True) + eps)
    xhat = xc * rstd
    red = tuple(i for i in range(x.ndim) if i != axis % x.ndim)
    ggamma = (gy * xhat).sum(axis=red)
    gbeta = gy.sum(axis=red)
    gxhat = gy * _along(gamma, x.ndim, axis)
    gx = rstd * (gxhat - gxhat.mean(axis=axis, keepdims=True)
                 - xhat * (gxhat * xhat).mean(axis=axis, keepdims=True))
    return gx, ggamma, gbeta


# ---------------------------------------------------------------- activations

def sigmoid(x):
    x = np.asarray(x, dtype=float)
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def silu(x):
    return x * sigmoid(x)


def silu_backward(gy, x):
    s = sigmoid(x)
    return gy * (s * (1.0 + x * (1.0 - s)))


def softplus(x):
    return np.logaddexp(0.0, x)


def softplus_backward(gy, x):
    return gy * sigmoid(x)


# ---------------------------------------------------------------- resampling

def pixel_shuffle(x, r):
    """Rearrange ``(..., C*r*r, H, W)`` into ``(..., C, r*H, r*W)``."""
    x = np.asarray(x)
    if r < 1 or x.shape[-3] % (r * r):
        raise ParameterError(f"pixel_shuffle: {x.shape[-3]} channels not divisible by r^2={r * r}")
    *lead, c, h, w = x.shape
    c //= r * r
    y = x.reshape(*lead, c, r, r, h, w)
    n = len(lead)
    y = y.transpose(*range(n), n, n + 3, n + 1, n + 4, n + 2)
    return y.reshape(*lead, c, h * r, w * r)


def pixel_unshuffle(y, r):
    """Inverse of :func:`pixel_shuffle`."""
    y = np.asarray(y)
    *lead, c, hr, wr = y.shape
    if r < 1 or hr % r or wr % r:
        raise ParameterError(f"pixel_unshuffle: spatial size {hr}x{wr} not divisible by r={r}")
    h, w = hr // r, wr // r
    n = len(lead)
    x = y.reshape(*lead, c, h, r, w, r)
    x = x.transpose(*range(n), n, n + 2, n + 4, n + 1, n + 3)
    return x.reshape(*lead, c * r * r, h, w)


def repeat_regions(x, n):
    """Copy every region value over its ``n x n`` block of local positions."""
    return np.repeat(np.repeat(x, n, axis=-2), n, axis=-1)


def repeat_regions_backward(gy, n):
    *lead, c, h, w = gy.shape
    return gy.reshape(*lead, c, h // n, n, w // n, n).sum(axis=(-3, -1))
