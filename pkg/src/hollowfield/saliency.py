"""Trainable 3D saliency grid.

A T x T x T tensor of raw values is trilinearly interpolated at a query
point and squashed through a sigmoid, yielding a weight p in (0, 1) that
scales the hash-grid feature vector. The mean of the squashed grid is
the sparsity measure that the pruner drives below its budget.

Grid nodes sit at the corners of a (T-1)^3-cell lattice spanning the
unit cube, so a query at node coordinates returns exactly the sigmoid of
that node's stored value.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .numerics import d_sigmoid_from_value, sigmoid
from .params import ParamTensor, seeded_init

_CORNERS = np.array([[(c >> 2) & 1, (c >> 1) & 1, c & 1] for c in range(8)],
                    dtype=np.int64)


@dataclass
class SaliencyGrid:
    """Raw (pre-sigmoid) grid values backed by a ParamTensor.

    Initialized to all ones, so every fresh query yields
    p = sigmoid(1) ~= 0.731.
    """

    resolution: int
    params: ParamTensor

    @classmethod
    def create(cls, resolution: int, dtype=np.float32) -> "SaliencyGrid":
        if resolution < 2:
            raise ConfigError(f"saliency resolution must be >= 2, got {resolution}")
        params = seeded_init((resolution,) * 3, "ones", seed=0,
                             role="saliency", name="saliency", dtype=dtype)
        return cls(resolution=resolution, params=params)

    @property
    def raw(self) -> np.ndarray:
        return self.params.view()


@dataclass
class SaliencyCache:
    """Forward bookkeeping for saliency_backward."""

    indices: np.ndarray   # (n, 8) flat node indices
    weights: np.ndarray   # (n, 8) trilinear weights
    p: np.ndarray         # (n,) squashed saliency weights
    features: np.ndarray  # (n, d) the feature vector that was scaled


def saliency_weight(x: np.ndarray, grid: SaliencyGrid
                    ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Interpolated, squashed saliency p at unit-cube positions.

    Returns (p, indices, weights) where indices/weights describe the 8
    surrounding nodes used, for reuse by the backward pass.
    """
    x = np.asarray(x)
    if x.ndim != 2 or x.shape[1] != 3:
        raise ConfigError(f"expected (n, 3) positions, got {x.shape}")
    T = grid.resolution
    dtype = grid.params.dtype
    n = x.shape[0]

    pos = (np.clip(x, 0.0, 1.0) * float(T - 1)).astype(dtype)
    base = np.minimum(np.floor(pos), T - 2).astype(np.int64)
    frac = pos - base.astype(dtype)

    corners = base[:, None, :] + _CORNERS[None, :, :]
    idx = (corners[..., 0] * T + corners[..., 1]) * T + corners[..., 2]

    w = np.ones((n, 8), dtype=dtype)
    for axis in range(3):
        step = _CORNERS[:, axis].astype(dtype)
        w *= step[None, :] * frac[:, axis:axis + 1] \
            + (1 - step)[None, :] * (1 - frac[:, axis:axis + 1])

    raw = grid.params.values[idx.reshape(-1)].reshape(n, 8)
    p = sigmoid(np.sum(w * raw, axis=1))
    return p, idx, w


def apply_saliency(p: np.ndarray, f: np.ndarray) -> np.ndarray:
    """Scale feature vectors by their saliency weights: v = p * f."""
    return p[:, None] * f


def sparsity_l1(grid: SaliencyGrid) -> float:
    """Mean of sigmoid over all grid nodes, in (0, 1).

    Normalizing by T^3 makes the sparsity budget independent of grid
    resolution (a budget of 0.04 reads as 4% non-zero voxel mass).
    """
    return float(np.mean(sigmoid(grid.params.values.astype(np.float64))))


def sparsity_l1_backward(grid: SaliencyGrid, coeff: float) -> None:
    """Accumulate coeff * d(mean sigmoid)/dg into the grid gradients.

    The per-node derivative is p (1 - p) / T^3, which is nonnegative, so
    a positive coeff uniformly pushes raw values down under descent.
    """
    s = sigmoid(grid.params.values)
    grid.params.grads += np.asarray(coeff / grid.params.size, dtype=grid.params.dtype) \
        * d_sigmoid_from_value(s)


def saliency_backward(cache: SaliencyCache, d_v: np.ndarray,
                      grid: SaliencyGrid) -> np.ndarray:
    """Adjoint of v = sigmoid(trilerp(g, x)) * f.

    Accumulates gradients into the grid's ParamTensor and returns d_f,
    the gradient w.r.t. the input features.

    dv/df = p; dv/dp = f; dp/dg_i = p (1 - p) w_i.
    """
    p = cache.p
    d_f = apply_saliency(p, d_v)
    d_p = np.sum(d_v * cache.features, axis=1)
    d_raw = (d_p * d_sigmoid_from_value(p))[:, None] * cache.weights  # (n, 8)

    grads = grid.params.grads
    counts = np.bincount(cache.indices.reshape(-1),
                         weights=d_raw.reshape(-1).astype(np.float64),
                         minlength=grid.params.size)
    grads += counts.astype(grid.params.dtype)
    return d_f


def slice_export(grid: SaliencyGrid, axis: int, index: int) -> np.ndarray:
    """A T x T grayscale image of p values on one axis-aligned slice.

    Pixel (row, col) holds p at the node whose remaining two coordinates
    are (row, col) in row-major order.
    """
    if axis not in (0, 1, 2):
        raise ConfigError(f"axis must be 0, 1, or 2, got {axis}")
    T = grid.resolution
    if not 0 <= index < T:
        raise ConfigError(f"slice index {index} out of range [0, {T})")
    raw = grid.raw
    plane = np.take(raw, index, axis=axis)
    return sigmoid(plane.astype(np.float64))
