"""Selective state-space scan.

A diagonal continuous system ``h' = A h + B x``, ``y = C h + D x`` is
discretized per step with zero-order hold and run as a linear recurrence over
a 1-D sequence. ``B``, ``C`` and the step size are produced from the input
itself (the "selective" relaxation), while ``A = -exp(a_log)`` and the skip
``D`` are per-channel parameters.

Also here: the time-invariant convolution-kernel form of the same system,
used as an independent oracle, and the four raster orders that turn a 2-D
feature map into a scan sequence.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from ._threads import run_chunks
from .errors import DimensionError, ParameterError
from .tensor import linear, softplus

__all__ = [
    "Direction", "SelectiveParams",
    "discretize_zoh", "selective_scan", "selective_scan_chunked", "selective_scan_backward",
    "lti_kernel", "lti_apply", "selective_params_from_input",
    "flatten_direction", "unflatten_direction",
]

# channels per work item; fixed so results do not depend on the thread cap
CHANNEL_BLOCK = 8


class Direction(enum.Enum):
    """Raster order used to unfold a ``(H, W)`` grid into a sequence."""

    H = "H"
    V = "V"
    RH = "RH"
    RV = "RV"

    @property
    def code(self):
        return _DIR_CODES[self]

    @classmethod
    def from_code(cls, code):
        for d, c in _DIR_CODES.items():
            if c == code:
                return d
        raise ParameterError(f"unknown direction code {code}")


_DIR_CODES = {Direction.H: 0, Direction.V: 1, Direction.RH: 2, Direction.RV: 3}


@dataclass(frozen=True)
class SelectiveParams:
    """Per-step SSM parameters for one sequence (or a batch of them).

    Shapes: ``a_log`` (D, N); ``delta`` (..., L, D); ``b_seq``/``c_seq``
    (..., L, N); ``d_skip`` (D,). ``delta`` must be strictly positive.
    """

    a_log: np.ndarray
    delta: np.ndarray
    b_seq: np.ndarray
    c_seq: np.ndarray
    d_skip: np.ndarray

    def __post_init__(self):
        if not np.all(self.delta > 0):
            raise ParameterError("delta must be strictly positive")

    @property
    def a(self):
        return -np.exp(self.a_log)

    def time_slice(self, lo, hi):
        return SelectiveParams(self.a_log, self.delta[..., lo:hi, :], self.b_seq[..., lo:hi, :],
                               self.c_seq[..., lo:hi, :], self.d_skip)


def discretize_zoh(delta, a, b):
    """Zero-order-hold discretization of a diagonal (or scalar) system.

    Returns ``(a_bar, b_bar)`` with ``a_bar = exp(delta*a)`` and
    ``b_bar = (exp(delta*a) - 1) / a * b``. For ``|delta*a| < 1e-6`` the
    second factor switches to its series ``delta * (1 + z/2 + z^2/6)``, ``z = delta*a``.
    """
    delta = np.asarray(delta, dtype=float)
    a = np.asarray(a, dtype=float)
    if np.any(delta <= 0):
        raise ParameterError("discretize_zoh: delta must be positive")
    if np.any(a >= 0):
        raise ParameterError("discretize_zoh: a must be negative")
    z = delta * a
    small = np.abs(z) < _kernels.ZOH_SERIES_CUTOFF
    phi = np.where(small, delta * (1.0 + z * (0.5 + z / 6.0)), np.expm1(z) / np.where(small, -1.0, a))
    a_bar = np.exp(z)
    b_bar = phi * b
    if a_bar.ndim == 0 and np.ndim(b) == 0:
        return float(a_bar), float(b_bar)
    return a_bar, b_bar


def _check(u, p):
    if u.ndim not in (2, 3):
        raise DimensionError(f"scan input must be (L, D) or (B, L, D), got {u.shape}")
    lead = u.shape[:-1]
    dim = u.shape[-1]
    n = p.a_log.shape[-1] if p.a_log.ndim == 2 else -1
    if p.a_log.shape != (dim, n):
        raise DimensionError(f"a_log shape {p.a_log.shape} does not match D={dim}")
    if p.delta.shape != u.shape:
        raise DimensionError(f"delta shape {p.delta.shape} != input shape {u.shape}")
    for name, s in (("b_seq", p.b_seq), ("c_seq", p.c_seq)):
        if s.shape != lead + (n,):
            raise DimensionError(f"{name} shape {s.shape} != {lead + (n,)}")
    if p.d_skip.shape != (dim,):
        raise DimensionError(f"d_skip shape {p.d_skip.shape} != ({dim},)")
    if u.shape[-2] < 1:
        raise DimensionError("scan needs at least one step")


def _batched(x):
    return np.ascontiguousarray(x[None] if x.ndim == 2 else x, dtype=np.float64)


def _chunks(dim):
    return [(lo, min(lo + CHANNEL_BLOCK, dim)) for lo in range(0, dim, CHANNEL_BLOCK)]


def selective_scan(u, p, *, h0=None, return_states=False, return_final=False):
    """Run the discretized recurrence over the sequence axis.

    ``h_k = a_bar_k * h_{k-1} + b_bar_k * u_k`` and
    ``y_k = <c_k, h_k> + d_skip * u_k`` per channel, starting from
    ``h0`` (zeros by default). Cost is O(L*D*N).

    With ``return_states`` the per-step states (..., L, D, N) are returned as
    well (the backward pass needs them); ``return_final`` adds the last state.
    """
    u = np.asarray(u)
    _check(u, p)
    single = u.ndim == 2
    ub = _batched(u)
    delta, bseq, cseq = _batched(p.delta), _batched(p.b_seq), _batched(p.c_seq)
    a = np.ascontiguousarray(p.a, dtype=np.float64)
    dskip = np.ascontiguousarray(p.d_skip, dtype=np.float64)
    nb, nl, dim = ub.shape
    nn = a.shape[1]
    h = np.zeros((nb, dim, nn)) if h0 is None else np.array(h0, dtype=np.float64).reshape(nb, dim, nn)
    y = np.empty((nb, nl, dim))
    hs = np.empty((nb, nl, dim, nn)) if return_states else np.empty((1, 1, 1, 1))

    def work(lo, hi):
        _kernels.scan_forward(ub, delta, a, bseq, cseq, dskip, h, y, hs, return_states, lo, hi)

    run_chunks(work, _chunks(dim))
    out = [y[0] if single else y]
    if return_states:
        out.append(hs[0] if single else hs)
    if return_final:
        out.append(h[0] if single else h)
    return out[0] if len(out) == 1 else tuple(out)


def selective_scan_chunked(u, p, chunk=64):
    """Same result as :func:`selective_scan`, processed ``chunk`` steps at a time.

    The state is handed from one chunk to the next, so only one chunk of
    per-step parameters needs to be resident at once.
    """
    u = np.asarray(u)
    _check(u, p)
    if chunk < 1:
        raise ParameterError("chunk must be >= 1")
    nl = u.shape[-2]
    h = None
    ys = []
    for lo in range(0, nl, chunk):
        hi = min(lo + chunk, nl)
        y, h = selective_scan(u[..., lo:hi, :], p.time_slice(lo, hi), h0=h, return_final=True)
        ys.append(y)
    return np.concatenate(ys, axis=-2)


def selective_scan_backward(gy, u, p, states):
    """Gradients of :func:`selective_scan` (zero initial state).

    ``states`` is the ``return_states`` output of the forward call. Returns a
    dict with keys ``u, delta, a_log, b_seq, c_seq, d_skip``.
    """
    single = np.ndim(u) == 2
    ub, gyb = _batched(u), _batched(gy)
    delta, bseq, cseq = _batched(p.delta), _batched(p.b_seq), _batched(p.c_seq)
    hs = np.ascontiguousarray(states[None] if single else states, dtype=np.float64)
    a = np.ascontiguousarray(p.a, dtype=np.float64)
    dskip = np.ascontiguousarray(p.d_skip, dtype=np.float64)
    nb, nl, dim = ub.shape
    nn = a.shape[1]
    gu = np.empty_like(ub)
    gdelta = np.empty_like(ub)
    ga = np.zeros((dim, nn))
    gd = np.zeros(dim)
    gbd = np.empty((nb, nl, dim, nn))

    def work(lo, hi):
        _kernels.scan_backward(gyb, ub, delta, a, bseq, cseq, dskip, hs,
                               gu, gdelta, ga, gd, gbd, lo, hi)

    run_chunks(work, _chunks(dim))
    gb = gbd.sum(axis=2)
    gc = np.einsum("bkd,bkdn->bkn", gyb, hs)
    grads = {
        "u": gu, "delta": gdelta, "b_seq": gb, "c_seq": gc,
        "a_log": ga * a, "d_skip": gd,
    }
    if single:
        for k in ("u", "delta", "b_seq", "c_seq"):
            grads[k] = grads[k][0]
    return grads


def lti_kernel(a_bar, b_bar, c, length):
    """Impulse response ``(<c, b_bar>, <c, a_bar*b_bar>, ..., <c, a_bar^(L-1)*b_bar>)``."""
    a_bar = np.atleast_1d(np.asarray(a_bar, dtype=float))
    p = np.atleast_1d(np.asarray(b_bar, dtype=float)).copy()
    c = np.atleast_1d(np.asarray(c, dtype=float))
    out = np.empty(length)
    for j in range(length):
        out[j] = np.dot(c, p)
        p = a_bar * p
    return out


def lti_apply(u, kernel, d_skip=0.0):
    """Causal convolution ``y_k = sum_{j<=k} K_j u_{k-j} + d_skip * u_k``."""
    u = np.asarray(u, dtype=float)
    kernel = np.asarray(kernel, dtype=float)
    return np.convolve(u, kernel)[: len(u)] + d_skip * u


def selective_params_from_input(x_seq, w_delta, b_delta, w_b, w_c, a_log, d_skip):
    """Project a (..., L, D) sequence to input-dependent step sizes and B/C sequences."""
    x_seq = np.asarray(x_seq)
    delta = softplus(linear(x_seq, w_delta, b_delta))
    return SelectiveParams(
        a_log=np.asarray(a_log), delta=delta,
        b_seq=linear(x_seq, w_b), c_seq=linear(x_seq, w_c),
        d_skip=np.asarray(d_skip),
    )


def _as_direction(d):
    return d if isinstance(d, Direction) else Direction(d)


def flatten_direction(x, direction):
    """Unfold ``(..., C, H, W)`` into a ``(..., H*W, C)`` sequence.

    H is row-major raster order, V column-major, RH and RV their reversals.
    """
    direction = _as_direction(direction)
    x = np.asarray(x)
    if direction in (Direction.V, Direction.RV):
        x = x.swapaxes(-1, -2)
    seq = x.reshape(*x.shape[:-2], -1).swapaxes(-1, -2)
    if direction in (Direction.RH, Direction.RV):
        seq = seq[..., ::-1, :]
    return np.ascontiguousarray(seq)


def unflatten_direction(seq, direction, height, width):
    """Inverse of :func:`flatten_direction`."""
    direction = _as_direction(direction)
    seq = np.asarray(seq)
    if seq.shape[-2] != height * width:
        raise DimensionError(f"sequence length {seq.shape[-2]} != {height}x{width}")
    if direction in (Direction.RH, Direction.RV):
        seq = seq[..., ::-1, :]
    x = seq.swapaxes(-1, -2)
    if direction in (Direction.V, Direction.RV):
        x = x.reshape(*x.shape[:-1], width, height).swapaxes(-1, -2)
    else:
        x = x.reshape(*x.shape[:-1], height, width)
    return np.ascontiguousarray(x)


def stability_bound(u_max, a_bar_max, b_bar_max):
    """Upper bound on ``|h|`` for a stable diagonal scan driven by ``|u| <= u_max``."""
    if not a_bar_max < 1.0:
        return math.inf
    return u_max * b_bar_max / (1.0 - a_bar_max)
