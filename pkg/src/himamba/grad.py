"""Reverse-mode differentiation over the network primitives.

Model code is written once against the functions in this module. Called on
plain arrays they simply compute; called with :class:`Node` inputs that
belong to a :class:`Tape` they also record the application so that
:meth:`Tape.backward` can run the hand-written adjoints in reverse order.

    tape = Tape()
    w = tape.param("w", np.ones((2, 3)))
    loss = l1_loss(linear(x, w), target)
    grads = tape.backward(loss)      # {"w": array of shape (2, 3)}
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np

from . import scan as _scan
from . import tensor as T
from .errors import ContractError, DimensionError

__all__ = [
    "Node", "Tape", "value_of",
    "add", "sub", "mul", "neg", "reshape", "clamp", "channel_slice", "crop", "sum_all",
    "linear", "conv2d", "layernorm", "silu", "softplus", "pixel_shuffle", "repeat_regions",
    "flatten_direction", "unflatten_direction", "selective_scan", "l1_loss",
]


class Node:
    """A value recorded on a tape."""

    __slots__ = ("value", "tape", "name", "__weakref__")

    def __init__(self, value, tape, name=None):
        self.value = value
        self.tape = tape
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    def __repr__(self):
        return f"Node(name={self.name!r}, shape={self.value.shape})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)


@dataclass
class Record:
    op: str
    inputs: tuple
    kwargs: dict
    out: Node
    saved: Any = None


@dataclass
class Primitive:
    name: str
    forward: Callable
    vjp: Callable
    # returns (out, saved); defaults to (forward(...), None)
    forward_saving: Callable | None = None


_PRIMITIVES: dict[str, Primitive] = {}


def value_of(x):
    return x.value if isinstance(x, Node) else x


def _tape_of(inputs):
    tape = None
    for x in inputs:
        if isinstance(x, Node):
            if tape is None:
                tape = x.tape
            elif x.tape is not tape:
                raise ContractError("operands come from different tapes")
    return tape


def _apply(name, *inputs, **kwargs):
    prim = _PRIMITIVES[name]
    vals = [value_of(x) for x in inputs]
    tape = _tape_of(inputs)
    if tape is None:
        return prim.forward(*vals, **kwargs)
    if prim.forward_saving is not None:
        out, saved = prim.forward_saving(*vals, **kwargs)
    else:
        out, saved = prim.forward(*vals, **kwargs), None
    node = Node(out, tape)
    tape.records.append(Record(name, inputs, kwargs, node, saved))
    return node


def _primitive(name, forward, vjp, forward_saving=None):
    _PRIMITIVES[name] = Primitive(name, forward, vjp, forward_saving)


@dataclass
class Tape:
    """Ordered record of primitive applications plus the named leaf parameters."""

    records: list = field(default_factory=list)
    leaves: dict = field(default_factory=dict)

    def param(self, name, value):
        if name in self.leaves:
            raise ContractError(f"parameter {name!r} already on tape")
        node = Node(np.asarray(value), self, name)
        self.leaves[name] = node
        return node

    def params(self, mapping):
        return {k: self.param(k, v) for k, v in mapping.items()}

    def backward(self, loss, loss_grad=1.0):
        """Accumulate gradients of scalar ``loss`` into every leaf.

        Records are visited in reverse recording order, which is a reverse
        topological order; contributions to a shared input are summed in that
        fixed order.
        """
        if not isinstance(loss, Node) or loss.tape is not self:
            raise ContractError("loss is not a value on this tape")
        if loss.value.size != 1:
            raise ContractError(f"backward needs a scalar loss, got shape {loss.value.shape}")
        grads = {id(loss): np.full(loss.value.shape, float(loss_grad))}
        for rec in reversed(self.records):
            g = grads.pop(id(rec.out), None)
            if g is None:
                continue
            prim = _PRIMITIVES[rec.op]
            vals = [value_of(x) for x in rec.inputs]
            gins = prim.vjp(g, rec.out.value, rec.saved, *vals, **rec.kwargs)
            for x, gx in zip(rec.inputs, gins):
                if gx is None or not isinstance(x, Node):
                    continue
                key = id(x)
                grads[key] = gx if key not in grads else grads[key] + gx
        return {name: grads.get(id(node), np.zeros_like(node.value, dtype=float))
                for name, node in self.leaves.items()}

    def replay(self):
        """Re-run every record from the leaf values; True if all outputs match bit for bit."""
        env = {id(n): n.value for n in self.leaves.values()}
        ok = True
        for rec in self.records:
            prim = _PRIMITIVES[rec.op]
            vals = [env[id(x)] if isinstance(x, Node) else x for x in rec.inputs]
            out = prim.forward(*vals, **rec.kwargs)
            ref = rec.out.value
            if out.shape != ref.shape or out.tobytes() != ref.tobytes():
                ok = False
            env[id(rec.out)] = out
        return ok


# ------------------------------------------------------------------ elementwise

def _add_vjp(g, out, saved, x, y):
    return T.unbroadcast(g, np.shape(x)), T.unbroadcast(g, np.shape(y))


def _sub_vjp(g, out, saved, x, y):
    return T.unbroadcast(g, np.shape(x)), T.unbroadcast(-g, np.shape(y))


def _mul_vjp(g, out, saved, x, y):
    return T.unbroadcast(g * y, np.shape(x)), T.unbroadcast(g * x, np.shape(y))


_primitive("add", np.add, _add_vjp)
_primitive("sub", np.subtract, _sub_vjp)
_primitive("mul", np.multiply, _mul_vjp)
_primitive("neg", np.negative, lambda g, out, saved, x: (-g,))


def add(x, y):
    return _apply("add", x, y)


def sub(x, y):
    return _apply("sub", x, y)


def mul(x, y):
    return _apply("mul", x, y)


def neg(x):
    return _apply("neg", x)


_primitive("reshape", lambda x, shape: np.reshape(x, shape),
           lambda g, out, saved, x, shape: (g.reshape(np.shape(x)),))


def reshape(x, shape):
    return _apply("reshape", x, shape=tuple(shape))


def _clamp_vjp(g, out, saved, x, lo, hi):
    return (g * ((x >= lo) & (x <= hi)),)


_primitive("clamp", lambda x, lo, hi: np.clip(x, lo, hi), _clamp_vjp)


def clamp(x, lo=0.0, hi=1.0):
    return _apply("clamp", x, lo=lo, hi=hi)


def _slice_fwd(x, lo, hi, axis):
    idx = [slice(None)] * x.ndim
    idx[axis] = slice(lo, hi)
    return x[tuple(idx)]


def _slice_vjp(g, out, saved, x, lo, hi, axis):
    gx = np.zeros(x.shape, dtype=g.dtype)
    idx = [slice(None)] * x.ndim
    idx[axis] = slice(lo, hi)
    gx[tuple(idx)] = g
    return (gx,)


_primitive("channel_slice", _slice_fwd, _slice_vjp)


def channel_slice(x, lo, hi, axis=1):
    return _apply("channel_slice", x, lo=lo, hi=hi, axis=axis)


def _crop_vjp(g, out, saved, x, height, width):
    gx = np.zeros(x.shape, dtype=g.dtype)
    gx[..., :height, :width] = g
    return (gx,)


_primitive("crop", lambda x, height, width: x[..., :height, :width], _crop_vjp)


def crop(x, height, width):
    """Keep the top-left ``height x width`` window of the last two axes."""
    return _apply("crop", x, height=height, width=width)


_primitive("sum_all", lambda x: np.asarray(np.sum(x)),
           lambda g, out, saved, x: (np.full(x.shape, g.reshape(())),))


def sum_all(x):
    return _apply("sum_all", x)


# ------------------------------------------------------------------ layers

def _linear_vjp(g, out, saved, x, w, b, axis):
    return T.linear_backward(g, x, w, has_bias=b is not None, axis=axis)


_primitive("linear", lambda x, w, b, axis: T.linear(x, w, b, axis=axis), _linear_vjp)


def linear(x, w, b=None, axis=-1):
    return _apply("linear", x, w, b, axis=axis)


def _conv_vjp(g, out, saved, x, w, b, stride, pad, groups):
    return T.conv2d_backward(g, x, w, has_bias=b is not None, stride=stride, pad=pad, groups=groups)


_primitive("conv2d", lambda x, w, b, stride, pad, groups: T.conv2d(x, w, b, stride, pad, groups), _conv_vjp)


def conv2d(x, w, b=None, stride=1, pad=0, groups=1):
    return _apply("conv2d", x, w, b, stride=stride, pad=pad, groups=groups)


def _ln_vjp(g, out, saved, x, gamma, beta, eps, axis):
    return T.layernorm_backward(g, x, gamma, eps=eps, axis=axis)


_primitive("layernorm", lambda x, gamma, beta, eps, axis: T.layernorm(x, gamma, beta, eps, axis), _ln_vjp)


def layernorm(x, gamma, beta, eps=1e-5, axis=-1):
    return _apply("layernorm", x, gamma, beta, eps=eps, axis=axis)


_primitive("silu", T.silu, lambda g, out, saved, x: (T.silu_backward(g, x),))
_primitive("softplus", T.softplus, lambda g, out, saved, x: (T.softplus_backward(g, x),))


def silu(x):
    return _apply("silu", x)


def softplus(x):
    return _apply("softplus", x)


_primitive("pixel_shuffle", lambda x, r: T.pixel_shuffle(x, r),
           lambda g, out, saved, x, r: (T.pixel_unshuffle(g, r),))


def pixel_shuffle(x, r):
    return _apply("pixel_shuffle", x, r=r)


_primitive("repeat_regions", lambda x, n: T.repeat_regions(x, n),
           lambda g, out, saved, x, n: (T.repeat_regions_backward(g, n),))


def repeat_regions(x, n):
    return _apply("repeat_regions", x, n=n)


# ------------------------------------------------------------------ scan

_primitive(
    "flatten_direction",
    lambda x, direction: _scan.flatten_direction(x, direction),
    lambda g, out, saved, x, direction: (
        _scan.unflatten_direction(g, direction, x.shape[-2], x.shape[-1]),),
)
_primitive(
    "unflatten_direction",
    lambda s, direction, height, width: _scan.unflatten_direction(s, direction, height, width),
    lambda g, out, saved, s, direction, height, width: (_scan.flatten_direction(g, direction),),
)


def flatten_direction(x, direction):
    return _apply("flatten_direction", x, direction=direction)


def unflatten_direction(seq, direction, height, width):
    return _apply("unflatten_direction", seq, direction=direction, height=height, width=width)


def _scan_params(delta, a_log, b_seq, c_seq, d_skip):
    return _scan.SelectiveParams(a_log=a_log, delta=delta, b_seq=b_seq, c_seq=c_seq, d_skip=d_skip)


def _scan_fwd(u, delta, a_log, b_seq, c_seq, d_skip):
    return _scan.selective_scan(u, _scan_params(delta, a_log, b_seq, c_seq, d_skip))


def _scan_fwd_saving(u, delta, a_log, b_seq, c_seq, d_skip):
    return _scan.selective_scan(u, _scan_params(delta, a_log, b_seq, c_seq, d_skip), return_states=True)


def _scan_vjp(g, out, states, u, delta, a_log, b_seq, c_seq, d_skip):
    gr = _scan.selective_scan_backward(g, u, _scan_params(delta, a_log, b_seq, c_seq, d_skip), states)
    return gr["u"], gr["delta"], gr["a_log"], gr["b_seq"], gr["c_seq"], gr["d_skip"]


_primitive("selective_scan", _scan_fwd, _scan_vjp, _scan_fwd_saving)


def selective_scan(u, delta, a_log, b_seq, c_seq, d_skip):
    """Tape-aware :func:`himamba.scan.selective_scan` taking the parameters unpacked."""
    return _apply("selective_scan", u, delta, a_log, b_seq, c_seq, d_skip)


# ------------------------------------------------------------------ loss

def _l1_fwd(pred, target):
    if np.shape(pred) != np.shape(target):
        raise DimensionError(f"l1_loss shapes differ: {np.shape(pred)} vs {np.shape(target)}")
    return np.asarray(np.mean(np.abs(pred - target)))


def _l1_vjp(g, out, saved, pred, target):
    # sign(0) == 0 gives the symmetric subgradient at ties
    gp = np.sign(pred - target) * (g.reshape(()) / np.size(pred))
    return gp, -gp


_primitive("l1_loss", _l1_fwd, _l1_vjp)


def l1_loss(pred, target):
    """Mean absolute difference."""
    return _apply("l1_loss", pred, target)
