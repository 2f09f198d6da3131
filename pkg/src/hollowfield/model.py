"""The end-to-end radiance field: hash encoding, saliency weighting, and
gated decoding, with a hand-written adjoint for the whole chain.

World positions are mapped into the unit cube by a stored affine
transform (unit = world * scale + offset) before any grid lookup.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .decoder import DecoderWeights, GateConfig, decoder_backward, gated_density
from .errors import ConfigError
from .hashgrid import (DecoderLayout, HashGridConfig, HashGridTable, encode,
                       encode_backward, param_count)
from .params import ParamTensor
from .saliency import (SaliencyCache, SaliencyGrid, apply_saliency,
                       saliency_backward, saliency_weight, sparsity_l1)

DEFAULT_SKIP_THRESHOLD = 1e-2


@dataclass
class FieldConfig:
    """Everything needed to build the trainable field deterministically."""

    grid: HashGridConfig = field(default_factory=HashGridConfig)
    saliency_res: int | None = 64
    hidden: int = 64
    geo_features: int = 15
    scene_scale: float = 0.95 / 3.0
    scene_offset: tuple[float, float, float] = (0.5, 0.5, 0.5)
    seed: int = 0
    dtype: str = "float32"

    def to_dict(self) -> dict:
        d = asdict(self)
        d["grid"] = asdict(self.grid)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "FieldConfig":
        d = dict(d)
        d["grid"] = HashGridConfig(**d["grid"])
        d["scene_offset"] = tuple(d["scene_offset"])
        return cls(**d)


@dataclass
class QueryCache:
    """Per-batch forward state consumed by RadianceField.backward."""

    enc_cache: object
    sal_cache: SaliencyCache | None
    dec_cache: object


class RadianceField:
    """Trainable field mapping (world position, direction) to (sigma, rgb)."""

    def __init__(self, cfg: FieldConfig):
        self.cfg = cfg
        dtype = np.dtype(cfg.dtype)
        self.table = HashGridTable.create(cfg.grid, seed=cfg.seed, dtype=dtype)
        self.saliency = (SaliencyGrid.create(cfg.saliency_res, dtype=dtype)
                         if cfg.saliency_res else None)
        self.decoder = DecoderWeights.create(
            cfg.grid.out_dim, hidden=cfg.hidden, geo_features=cfg.geo_features,
            seed=cfg.seed + 1, dtype=dtype)
        self.scene_scale = float(cfg.scene_scale)
        self.scene_offset = np.asarray(cfg.scene_offset, dtype=np.float64)

    @property
    def dtype(self) -> np.dtype:
        return self.table.params.dtype

    def params(self) -> list[ParamTensor]:
        """All trainable tensors in checkpoint order."""
        out = [self.table.params] + self.decoder.params()
        if self.saliency is not None:
            out.append(self.saliency.params)
        return out

    def to_unit(self, world: np.ndarray) -> np.ndarray:
        return np.clip(world * self.scene_scale + self.scene_offset, 0.0, 1.0)

    def sparsity(self) -> float:
        if self.saliency is None:
            raise ConfigError("sparsity is undefined without a saliency grid")
        return sparsity_l1(self.saliency)

    def query(self, world: np.ndarray, dirs: np.ndarray, gate: GateConfig,
              want_cache: bool = True, skip_threshold: float | None = None
              ) -> tuple[np.ndarray, np.ndarray, QueryCache | None]:
        """Evaluate the field at world positions.

        skip_threshold enables inference-time sample skipping: positions
        whose saliency weight falls below the threshold bypass the
        decoder and contribute sigma = 0. Not valid with want_cache.
        """
        if skip_threshold is not None and want_cache:
            raise ConfigError("sample skipping is an inference-only path")
        unit = self.to_unit(np.asarray(world, dtype=np.float64))
        feats, enc_cache = encode(unit, self.table)

        sal_cache = None
        if self.saliency is not None:
            p, idx, w = saliency_weight(unit, self.saliency)
            v = apply_saliency(p.astype(self.dtype), feats)
            if want_cache:
                sal_cache = SaliencyCache(indices=idx, weights=w,
                                          p=p.astype(self.dtype), features=feats)
        else:
            p = None
            v = feats

        if skip_threshold is not None and p is not None:
            keep = p >= skip_threshold
            sigma = np.zeros(v.shape[0], dtype=self.dtype)
            rgb = np.zeros((v.shape[0], 3), dtype=self.dtype)
            if keep.any():
                s_k, rgb_k, _ = gated_density(v[keep], dirs[keep],
                                              self.decoder, gate)
                sigma[keep] = s_k
                rgb[keep] = rgb_k
            return sigma, rgb, None

        sigma, rgb, dec_cache = gated_density(v, dirs, self.decoder, gate)
        if not want_cache:
            return sigma, rgb, None
        return sigma, rgb, QueryCache(enc_cache=enc_cache, sal_cache=sal_cache,
                                      dec_cache=dec_cache)

    def backward(self, cache: QueryCache, d_sigma: np.ndarray,
                 d_rgb: np.ndarray) -> None:
        """Accumulate gradients for one query batch into all params."""
        d_v = decoder_backward(cache.dec_cache, d_sigma, d_rgb, self.decoder)
        if self.saliency is not None:
            d_f = saliency_backward(cache.sal_cache, d_v, self.saliency)
        else:
            d_f = d_v
        encode_backward(cache.enc_cache, d_f, self.table)

    def eval_query(self, gate: GateConfig, skip_threshold: float | None = None):
        """A (positions, dirs) -> (sigma, rgb) closure for the renderer."""

        def q(world, dirs):
            sigma, rgb, _ = self.query(world, dirs, gate, want_cache=False,
                                       skip_threshold=skip_threshold)
            return sigma, rgb

        return q

    def parameter_counts(self) -> dict[str, int]:
        layout = DecoderLayout(hidden=self.cfg.hidden,
                               geo_features=self.cfg.geo_features)
        return param_count(self.cfg.grid, layout, self.cfg.saliency_res)
