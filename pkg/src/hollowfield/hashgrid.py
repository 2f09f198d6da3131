"""Multi-resolution hash-grid positional encoding.

Each level covers the unit cube with an N_l^3 voxel lattice. Coarse
levels whose corner count fits in the table are stored densely; finer
levels index a fixed-size table through a spatial hash, so distinct
voxels may collide onto one shared feature entry. A query returns the
trilinear interpolation of the 8 surrounding corner features at every
level, concatenated coarse to fine.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import ConfigError
from .params import ParamTensor, seeded_init

# Per-axis multipliers of the XOR spatial hash. The first prime is 1 so
# that purely-x-indexed corners map to themselves, which keeps dense and
# hashed layouts aligned on the x axis and gives cheap test vectors.
HASH_PRIMES = (1, 2654435761, 805459861)


@dataclass
class HashGridConfig:
    """Geometry of the multi-resolution grid.

    growth factor b satisfies N_max = N_min * b^(L-1); per-level
    resolutions are floor(N_min * b^l).
    """

    levels: int = 16
    feature_dim: int = 2
    log2_table_size: int = 14
    base_res: int = 16
    max_res: int = 1024

    def __post_init__(self) -> None:
        if self.levels < 1:
            raise ConfigError(f"levels must be >= 1, got {self.levels}")
        if self.base_res > self.max_res:
            raise ConfigError(
                f"base_res {self.base_res} exceeds max_res {self.max_res}")
        if self.feature_dim < 1:
            raise ConfigError("feature_dim must be >= 1")

    @property
    def table_size(self) -> int:
        return 1 << self.log2_table_size

    @property
    def growth(self) -> float:
        if self.levels == 1:
            return 1.0
        return math.exp((math.log(self.max_res) - math.log(self.base_res))
                        / (self.levels - 1))

    @property
    def out_dim(self) -> int:
        return self.levels * self.feature_dim


def level_resolutions(cfg: HashGridConfig) -> list[int]:
    """Per-level voxel resolutions, base_res at level 0 up to max_res.

    A small epsilon guards the floor against values like b^l = 4 - 1ulp so
    that mathematically integral resolutions (including the top level)
    land exactly.
    """
    if cfg.levels == 1:
        return [cfg.base_res]
    b = cfg.growth
    return [int(math.floor(cfg.base_res * b ** l + 1e-9))
            for l in range(cfg.levels)]


def hash_index(voxel: np.ndarray, table_size: int) -> np.ndarray:
    """Spatial hash of integer 3D corner coordinates into [0, table_size).

    index = (x*p1 XOR y*p2 XOR z*p3) mod table_size with the products
    wrapping in 32-bit unsigned arithmetic. table_size must be a power
    of two so the mod reduces to a mask.
    """
    if table_size & (table_size - 1) != 0 or table_size <= 0:
        raise ConfigError(f"table_size must be a power of two, got {table_size}")
    v = np.asarray(voxel, dtype=np.uint32)
    h = v[..., 0] * np.uint32(HASH_PRIMES[0])
    h ^= v[..., 1] * np.uint32(HASH_PRIMES[1])
    h ^= v[..., 2] * np.uint32(HASH_PRIMES[2])
    return (h & np.uint32(table_size - 1)).astype(np.int64)


def _dense_index(voxel: np.ndarray, res: int) -> np.ndarray:
    """Row-major corner index on a (res+1)^3 lattice."""
    v = voxel.astype(np.int64)
    s = res + 1
    return (v[..., 0] * s + v[..., 1]) * s + v[..., 2]


@dataclass
class HashGridTable:
    """Feature storage for every level plus the lookup metadata.

    Levels are laid out back to back (coarse to fine) inside a single
    ParamTensor of shape (total_entries, feature_dim); ``offsets[l]``
    is the first row of level l.
    """

    cfg: HashGridConfig
    resolutions: list[int]
    entry_counts: list[int]
    offsets: list[int]
    dense: list[bool]
    params: ParamTensor

    query_clamped: int = field(default=0, repr=False)

    def __post_init__(self) -> None:
        # Metadata arrays reused by every encode call.
        self.res_arr = np.asarray(self.resolutions, dtype=np.int64)
        self.off_arr = np.asarray(self.offsets, dtype=np.int64)
        self.dense_arr = np.asarray(self.dense, dtype=np.bool_)

    @classmethod
    def create(cls, cfg: HashGridConfig, seed: int = 0,
               dtype=np.float32, init_scale: float = 1e-4) -> "HashGridTable":
        res = level_resolutions(cfg)
        counts = [min((n + 1) ** 3, cfg.table_size) for n in res]
        dense = [(n + 1) ** 3 <= cfg.table_size for n in res]
        offsets = list(np.concatenate([[0], np.cumsum(counts)[:-1]]))
        total = int(sum(counts))
        params = seeded_init((total, cfg.feature_dim), "uniform", seed,
                             a=-init_scale, b=init_scale,
                             role="hashgrid", name="hashgrid",
                             dtype=dtype)
        return cls(cfg=cfg, resolutions=res, entry_counts=counts,
                   offsets=[int(o) for o in offsets], dense=dense, params=params)

    @property
    def total_entries(self) -> int:
        return sum(self.entry_counts)

    def level_slice(self, level: int) -> slice:
        o = self.offsets[level]
        return slice(o, o + self.entry_counts[level])

    def corner_indices(self, level: int, voxel: np.ndarray) -> np.ndarray:
        """Global row index for integer corner coordinates at one level."""
        if self.dense[level]:
            local = _dense_index(voxel, self.resolutions[level])
        else:
            local = hash_index(voxel, self.cfg.table_size)
        return local + self.offsets[level]


# Per-axis step (0 or 1) of the 8 cell corners: bit k of the corner id
# selects the +1 step along axis k, i.e. corner c steps by
# ((c >> 2) & 1, (c >> 1) & 1, c & 1).
_CORNERS = np.array([[(c >> 2) & 1, (c >> 1) & 1, c & 1] for c in range(8)],
                    dtype=np.int64)
_CX = _CORNERS[:, 0]
_CY = _CORNERS[:, 1]
_CZ = _CORNERS[:, 2]


@dataclass
class EncodeCache:
    """Forward-pass bookkeeping consumed by encode_backward."""

    indices: np.ndarray   # (n, levels, 8) global rows
    weights: np.ndarray   # (n, levels, 8) trilinear weights
    n_clamped: int


def _level_corner_indices(table: HashGridTable, level: int, base: np.ndarray
                          ) -> np.ndarray:
    """Global rows of the 8 corners around each base voxel, (n, 8).

    The hash (and the dense row index) factorize over axes, so each axis
    contributes a per-sample pair (value at base, value at base + 1) that
    is combined across the 8 corners by XOR or addition.
    """
    cfg = table.cfg
    n = base.shape[0]
    if table.dense[level]:
        s = table.resolutions[level] + 1
        tx = base[:, 0:1] * (s * s) + np.array([0, s * s])
        ty = base[:, 1:2] * s + np.array([0, s])
        tz = base[:, 2:3] + np.array([0, 1])
        idx = tx[:, _CX] + ty[:, _CY] + tz[:, _CZ]
    else:
        b = base.astype(np.uint32)
        hx = b[:, 0:1] * np.uint32(HASH_PRIMES[0]) \
            + np.array([0, HASH_PRIMES[0]], dtype=np.uint32)
        hy = b[:, 1:2] * np.uint32(HASH_PRIMES[1]) \
            + np.array([0, HASH_PRIMES[1]], dtype=np.uint32)
        hz = b[:, 2:3] * np.uint32(HASH_PRIMES[2]) \
            + np.array([0, HASH_PRIMES[2]], dtype=np.uint32)
        h = hx[:, _CX] ^ hy[:, _CY] ^ hz[:, _CZ]
        idx = (h & np.uint32(cfg.table_size - 1)).astype(np.int64)
    return idx + table.offsets[level]


def encode(x: np.ndarray, table: HashGridTable) -> tuple[np.ndarray, EncodeCache]:
    """Encode positions in the unit cube into concatenated level features.

    Args:
        x: (n, 3) positions; components outside [0, 1] are clamped and
           counted in the cache (the renderer pre-clamps in normal use).

    Returns:
        (features, cache) where features is (n, levels * feature_dim).

    Dispatches to the compiled kernel when available; the numpy path
    batches levels sharing a storage mode and factors the XOR hash per
    axis, so each sample needs only two wrapped products per axis and
    level instead of eight.
    """
    x = np.asarray(x)
    if x.ndim != 2 or x.shape[1] != 3:
        raise ConfigError(f"expected (n, 3) positions, got {x.shape}")
    n = x.shape[0]
    cfg = table.cfg
    F = cfg.feature_dim
    dtype = table.params.dtype
    n_clamped = int(np.count_nonzero((x < 0.0) | (x > 1.0)))

    if _kernels.AVAILABLE:
        xc = np.ascontiguousarray(x, dtype=dtype)
        feats = np.zeros((n, cfg.levels * F), dtype=dtype)
        all_idx = np.empty((n, cfg.levels, 8), dtype=np.int64)
        all_w = np.empty((n, cfg.levels, 8), dtype=dtype)
        _kernels.encode_kernel(xc, table.params.view(), table.res_arr,
                               table.off_arr, table.dense_arr,
                               np.uint32(cfg.table_size - 1),
                               feats, all_idx, all_w)
        return feats, EncodeCache(indices=all_idx, weights=all_w,
                                  n_clamped=n_clamped)

    clipped = np.clip(x, 0.0, 1.0).astype(dtype)

    all_idx = np.empty((n, cfg.levels, 8), dtype=np.int64)
    all_w = np.empty((n, cfg.levels, 8), dtype=dtype)
    values = table.params.view()
    res_arr = np.asarray(table.resolutions)

    for hashed in (False, True):
        lv = [l for l in range(cfg.levels) if table.dense[l] != hashed]
        if not lv:
            continue
        res = res_arr[lv]                                     # (L,)
        pos = clipped[:, None, :] * res[None, :, None].astype(dtype)
        base = np.minimum(np.floor(pos), (res - 1)[None, :, None]
                          ).astype(np.int64)
        frac = pos - base.astype(dtype)                       # (n, L, 3)

        if hashed:
            b = base.astype(np.uint32)
            mask = np.uint32(cfg.table_size - 1)
            hx = b[..., 0:1] * np.uint32(HASH_PRIMES[0]) \
                + np.array([0, HASH_PRIMES[0]], dtype=np.uint32)
            hy = b[..., 1:2] * np.uint32(HASH_PRIMES[1]) \
                + np.array([0, HASH_PRIMES[1]], dtype=np.uint32)
            hz = b[..., 2:3] * np.uint32(HASH_PRIMES[2]) \
                + np.array([0, HASH_PRIMES[2]], dtype=np.uint32)
            idx = ((hx[..., _CX] ^ hy[..., _CY] ^ hz[..., _CZ]) & mask
                   ).astype(np.int64)
        else:
            s = (res + 1)[None, :, None]                      # corners/axis
            tx = base[..., 0:1] * (s * s) + np.concatenate(
                [np.zeros_like(s), s * s], axis=2)
            ty = base[..., 1:2] * s + np.concatenate(
                [np.zeros_like(s), s], axis=2)
            tz = base[..., 2:3] + np.array([0, 1])
            idx = tx[..., _CX] + ty[..., _CY] + tz[..., _CZ]
        idx += np.asarray(table.offsets)[lv][None, :, None]

        wx = np.stack([1 - frac[..., 0], frac[..., 0]], axis=2)
        wy = np.stack([1 - frac[..., 1], frac[..., 1]], axis=2)
        wz = np.stack([1 - frac[..., 2], frac[..., 2]], axis=2)
        w = wx[..., _CX] * wy[..., _CY] * wz[..., _CZ]        # (n, L, 8)

        all_idx[:, lv, :] = idx
        all_w[:, lv, :] = w

    gathered = values[all_idx.reshape(-1)].reshape(n, cfg.levels, 8, F)
    feats = np.einsum("nlc,nlcf->nlf", all_w, gathered).reshape(n, -1)
    return feats, EncodeCache(indices=all_idx, weights=all_w, n_clamped=n_clamped)


def encode_backward(cache: EncodeCache, d_feats: np.ndarray,
                    table: HashGridTable) -> None:
    """Scatter upstream feature gradients back into table entries.

    Each of the <= 8 * levels touched entries accumulates
    (trilinear weight x upstream component); accumulation order is fixed
    (bincount), so results are deterministic.
    """
    cfg = table.cfg
    n = d_feats.shape[0]
    F = cfg.feature_dim
    grads = table.params.grad_view()
    dtype = table.params.dtype
    total = table.total_entries

    if _kernels.AVAILABLE:
        _kernels.scatter_kernel(cache.indices, cache.weights,
                                np.ascontiguousarray(d_feats, dtype=dtype),
                                grads)
        return

    # (n, L, 8, F) contributions, then one deterministic bincount per
    # feature channel across all levels (indices are already global).
    d_lv = d_feats.reshape(n, cfg.levels, F)
    contrib = cache.weights[..., None] * d_lv[:, :, None, :]
    flat_idx = cache.indices.reshape(-1)
    flat = contrib.reshape(-1, F)
    for f in range(F):
        grads[:, f] += np.bincount(flat_idx, weights=flat[:, f],
                                   minlength=total).astype(dtype)


@dataclass
class DecoderLayout:
    """Widths that determine the decoder parameter count."""

    hidden: int = 64
    geo_features: int = 15
    sh_coeffs: int = 16


def param_count(cfg: HashGridConfig, mlp: DecoderLayout | None,
                saliency_res: int | None) -> dict[str, int]:
    """Exact trainable parameter accounting per component.

    Hidden layers carry no biases; output layers do. Returns a dict with
    per-component counts and their total.
    """
    res = level_resolutions(cfg)
    grid = sum(min((n + 1) ** 3, cfg.table_size) for n in res) * cfg.feature_dim

    mlp_count = 0
    if mlp is not None:
        d_in = cfg.out_dim
        d_out = 1 + mlp.geo_features
        c_in = mlp.geo_features + mlp.sh_coeffs
        mlp_count = (d_in * mlp.hidden + mlp.hidden * mlp.hidden
                     + mlp.hidden * d_out + d_out)
        mlp_count += (c_in * mlp.hidden + mlp.hidden * mlp.hidden
                      + mlp.hidden * 3 + 3)

    sal = saliency_res ** 3 if saliency_res else 0
    return {
        "hashgrid": grid,
        "mlp": mlp_count,
        "saliency": sal,
        "total": grid + mlp_count + sal,
    }
