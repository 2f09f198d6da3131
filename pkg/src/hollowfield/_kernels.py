"""Optional numba-compiled kernels for the grid lookup hot path.

The numpy implementations in hashgrid.py are the reference; these
kernels reproduce them (same indices, same accumulation structure) with
per-sample loops that avoid large temporaries. Everything is
single-threaded and scatter order is fixed, so results are deterministic
run to run. Set HOLLOWFIELD_DISABLE_NUMBA=1 to force the numpy path.
"""

from __future__ import annotations

import os

import numpy as np

AVAILABLE = False

if not os.environ.get("HOLLOWFIELD_DISABLE_NUMBA"):
    try:
        from numba import njit

        AVAILABLE = True
    except ImportError:
        AVAILABLE = False

if AVAILABLE:

    @njit(fastmath=False)
    def encode_kernel(x, values, resolutions, offsets, dense, table_mask,
                      feats, idx_out, w_out):
        """Trilinear multi-level lookup; fills feats, idx_out, w_out."""
        n = x.shape[0]
        levels = resolutions.shape[0]
        F = values.shape[1]
        p1 = np.uint32(1)
        p2 = np.uint32(2654435761)
        p3 = np.uint32(805459861)
        for i in range(n):
            cx = min(max(x[i, 0], 0.0), 1.0)
            cy = min(max(x[i, 1], 0.0), 1.0)
            cz = min(max(x[i, 2], 0.0), 1.0)
            for l in range(levels):
                res = resolutions[l]
                px = cx * res
                py = cy * res
                pz = cz * res
                bx = min(int(px), res - 1)
                by = min(int(py), res - 1)
                bz = min(int(pz), res - 1)
                fx = px - bx
                fy = py - by
                fz = pz - bz
                s = res + 1
                for c in range(8):
                    sx = (c >> 2) & 1
                    sy = (c >> 1) & 1
                    sz = c & 1
                    gx = bx + sx
                    gy = by + sy
                    gz = bz + sz
                    if dense[l]:
                        li = (gx * s + gy) * s + gz
                    else:
                        h = (np.uint32(gx) * p1) ^ (np.uint32(gy) * p2) \
                            ^ (np.uint32(gz) * p3)
                        li = np.int64(h & table_mask)
                    gi = li + offsets[l]
                    w = (fx if sx else 1.0 - fx) \
                        * (fy if sy else 1.0 - fy) \
                        * (fz if sz else 1.0 - fz)
                    idx_out[i, l, c] = gi
                    w_out[i, l, c] = w
                    for f in range(F):
                        feats[i, l * F + f] += w * values[gi, f]

    @njit(fastmath=False)
    def scatter_kernel(indices, weights, d_feats, grads):
        """Sequential (fixed-order) scatter of weighted upstream grads."""
        n = indices.shape[0]
        levels = indices.shape[1]
        F = grads.shape[1]
        for i in range(n):
            for l in range(levels):
                for c in range(8):
                    gi = indices[i, l, c]
                    w = weights[i, l, c]
                    for f in range(F):
                        grads[gi, f] += w * d_feats[i, l * F + f]

    @njit(fastmath=False)
    def adam_kernel(values, grads, m, v, lr, beta1, beta2, eps, bc1, bc2):
        """Fused in-place Adam update; bc1/bc2 are the bias corrections."""
        for i in range(values.size):
            g = grads[i]
            m[i] += (1.0 - beta1) * (g - m[i])
            v[i] += (1.0 - beta2) * (g * g - v[i])
            m_hat = m[i] * bc1
            v_hat = v[i] * bc2
            values[i] -= lr * m_hat / (np.sqrt(v_hat) + eps)
