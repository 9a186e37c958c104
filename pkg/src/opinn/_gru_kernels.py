"""Compiled elementwise parts of the GRU cell.

Matrix products and ``tanh`` stay in numpy (BLAS and SIMD ``tanh`` beat a
scalar loop); these kernels fuse the remaining elementwise passes so each
array is streamed once instead of a dozen times.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def gates(t_ru, hn, x, wx_n, b_n):
    """``t_ru`` holds ``tanh(pre / 2)`` for ``[r | u]`` and is turned into sigmoids in place.

    Returns the candidate pre-activation ``x Wx_n + b_n + r * hn``.
    """
    m, d = hn.shape
    k = x.shape[1]
    npre = np.empty((m, d))
    for i in range(m):
        for j in range(2 * d):
            t_ru[i, j] = 0.5 + 0.5 * t_ru[i, j]
        for j in range(d):
            acc = b_n[j]
            for q in range(k):
                acc += x[i, q] * wx_n[q, j]
            npre[i, j] = acc + t_ru[i, j] * hn[i, j]
    return npre


@njit(cache=True)
def blend(n, ru, h):
    """``(1 - u) * n + u * h``."""
    m, d = h.shape
    out = np.empty((m, d))
    for i in range(m):
        for j in range(d):
            out[i, j] = n[i, j] + ru[i, d + j] * (h[i, j] - n[i, j])
    return out


@njit(cache=True)
def backward(g, h, ru, n, hn):
    """Returns pre-activation gradients ``[r | u]``, ``n`` and ``h Wh_n``, and the direct ``dh`` path."""
    m, d = h.shape
    da_ru = np.empty((m, 2 * d))
    da_n = np.empty((m, d))
    da_hn = np.empty((m, d))
    dh = np.empty((m, d))
    for i in range(m):
        for j in range(d):
            r = ru[i, j]
            u = ru[i, d + j]
            nn = n[i, j]
            gg = g[i, j]
            an = gg * (1.0 - u) * (1.0 - nn * nn)
            da_ru[i, j] = an * hn[i, j] * r * (1.0 - r)
            da_ru[i, d + j] = gg * (h[i, j] - nn) * u * (1.0 - u)
            da_n[i, j] = an
            da_hn[i, j] = an * r
            dh[i, j] = gg * u
    return da_ru, da_n, da_hn, dh
