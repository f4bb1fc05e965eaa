"""Compiled inner loops of the selective scan.

Each kernel handles the channel range ``[d0, d1)`` for every batch entry, so
disjoint ranges can run concurrently on separate threads (``nogil``) and write
to disjoint slices of the outputs. Within one channel the recurrence runs
strictly in time order, and the state dimension is always reduced in index
order, so results do not depend on how channels are partitioned.

Layouts: ``u, delta, y``: (B, L, D); ``a``: (D, N), strictly negative;
``bseq, cseq``: (B, L, N); ``dskip``: (D,); states ``h``: (B, D, N);
saved states ``hs``: (B, L, D, N).
"""
import math

import numpy as np
from numba import njit

# |delta * a| below this uses the first-order series of expm1(z) / z
ZOH_SERIES_CUTOFF = 1e-6
# |delta * a| below this uses the series of d/dz (expm1(z) / z)
_DPHI_SERIES_CUTOFF = 1e-3


@njit(cache=True, nogil=True, inline="always")
def _phi(z, dt, a):
    # (exp(dt*a) - 1) / a
    if abs(z) < ZOH_SERIES_CUTOFF:
        return dt * (1.0 + z * (0.5 + z / 6.0))
    return math.expm1(z) / a


@njit(cache=True, nogil=True, inline="always")
def _dphi_da(z, dt, a):
    if abs(z) < _DPHI_SERIES_CUTOFF:
        return dt * dt * (0.5 + z * (1.0 / 3.0 + z * (0.125 + z / 30.0)))
    return (z * math.exp(z) - math.expm1(z)) / (a * a)


@njit(cache=True, nogil=True)
def scan_forward(u, delta, a, bseq, cseq, dskip, h, y, hs, save, d0, d1):
    nb, nl, _ = u.shape
    nn = a.shape[1]
    for b in range(nb):
        for d in range(d0, d1):
            dd = dskip[d]
            for k in range(nl):
                dt = delta[b, k, d]
                uk = u[b, k, d]
                acc = 0.0
                for n in range(nn):
                    an = a[d, n]
                    z = dt * an
                    hn = math.exp(z) * h[b, d, n] + _phi(z, dt, an) * bseq[b, k, n] * uk
                    h[b, d, n] = hn
                    if save:
                        hs[b, k, d, n] = hn
                    acc += cseq[b, k, n] * hn
                y[b, k, d] = acc + dd * uk


@njit(cache=True, nogil=True)
def scan_backward(gy, u, delta, a, bseq, cseq, dskip, hs,
                  gu, gdelta, ga, gd, gbd, d0, d1):
    """Reverse-time adjoint recurrence.

    Writes ``gu``/``gdelta`` (B, L, D), accumulates ``ga`` (D, N) with respect
    to ``a`` itself and ``gd`` (D,), and stores per-channel contributions to
    the B-sequence gradient in ``gbd`` (B, L, D, N); the caller reduces those
    over D. The C-sequence gradient does not need the adjoint state and is
    formed by the caller from ``hs``.
    """
    nb, nl, _ = u.shape
    nn = a.shape[1]
    gh = np.zeros(nn)
    for b in range(nb):
        for d in range(d0, d1):
            dd = dskip[d]
            for n in range(nn):
                gh[n] = 0.0
            for k in range(nl - 1, -1, -1):
                g = gy[b, k, d]
                dt = delta[b, k, d]
                uk = u[b, k, d]
                gd[d] += g * uk
                gu_acc = g * dd
                gdt = 0.0
                for n in range(nn):
                    an = a[d, n]
                    z = dt * an
                    ab = math.exp(z)
                    phi = _phi(z, dt, an)
                    bn = bseq[b, k, n]
                    ghn = gh[n] + g * cseq[b, k, n]
                    hprev = hs[b, k - 1, d, n] if k > 0 else 0.0
                    gab = ghn * hprev
                    gbb = ghn * uk
                    gu_acc += ghn * phi * bn
                    gbd[b, k, d, n] = gbb * phi
                    gdt += gab * an * ab + gbb * bn * ab
                    ga[d, n] += gab * dt * ab + gbb * bn * _dphi_da(z, dt, an)
                    gh[n] = ghn * ab
                gu[b, k, d] = gu_acc
                gdelta[b, k, d] = gdt
