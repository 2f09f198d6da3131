"""Gated MLP decoder from weighted features to density and color.

Two small ReLU networks: a density net mapping the weighted feature
vector to (raw density, geometry features) and a color net mapping
(geometry features, spherical-harmonics direction encoding) to RGB.
Density is passed through softplus and multiplied by a zero-skipping
gate so that an all-zero input feature yields exactly zero density.

Hidden layers carry no biases; output layers do.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .numerics import assert_finite, d_softplus, relu, sigmoid, softplus
from .params import ParamTensor, seeded_init

GATE_MODES = ("none", "hard", "soft")


@dataclass
class GateConfig:
    """Zero-skipping gate selection and soft-gate steepness."""

    mode: str = "soft"
    alpha: float = 1e4

    def __post_init__(self) -> None:
        if self.mode not in GATE_MODES:
            raise ConfigError(f"gate mode must be one of {GATE_MODES}, got {self.mode!r}")
        if self.mode == "soft" and not self.alpha > 0:
            raise ConfigError(f"soft gate needs alpha > 0, got {self.alpha}")


def alpha_schedule(epoch: int) -> float:
    """Soft-gate steepness: 1e4 while epoch < 1000, hardened to 1e5 after."""
    if epoch < 0:
        raise ConfigError(f"epoch must be >= 0, got {epoch}")
    return 1e4 if epoch < 1000 else 1e5


def soft_gate(v: np.ndarray, alpha: float) -> np.ndarray:
    """tanh(alpha * ||v||_2) per row; 0 exactly at v = 0."""
    if not alpha > 0:
        raise ConfigError(f"soft gate needs alpha > 0, got {alpha}")
    return np.tanh(alpha * np.linalg.norm(v, axis=-1))


def hard_gate(v: np.ndarray) -> np.ndarray:
    """Indicator of a non-zero feature row. Gradient is defined as 0."""
    return (np.linalg.norm(v, axis=-1) != 0).astype(v.dtype)


# Real spherical harmonics through degree 3, canonical constants, in the
# band order (0,0), (1,-1), (1,0), (1,1), (2,-2) ... (3,3).
_C0 = 0.28209479177387814
_C1 = 0.4886025119029199
_C2 = (1.0925484305920792, -1.0925484305920792, 0.31539156525252005,
       -1.0925484305920792, 0.5462742152960396)
_C3 = (-0.5900435899266435, 2.890611442640554, -0.4570457994644658,
       0.3731763325901154, -0.4570457994644658, 1.445305721320277,
       -0.5900435899266435)


def sh_encode(d: np.ndarray) -> np.ndarray:
    """Real spherical-harmonics basis through degree 3 (16 coefficients).

    Rows are normalized first; directions further than ~1e-6 from unit
    length are expected to be rare and are simply rescaled.
    """
    d = np.asarray(d)
    if d.ndim != 2 or d.shape[1] != 3:
        raise ConfigError(f"expected (n, 3) directions, got {d.shape}")
    norm = np.linalg.norm(d, axis=1, keepdims=True)
    u = d / np.maximum(norm, np.finfo(d.dtype).tiny)
    x, y, z = u[:, 0], u[:, 1], u[:, 2]
    xx, yy, zz = x * x, y * y, z * z

    out = np.empty((d.shape[0], 16), dtype=d.dtype)
    out[:, 0] = _C0
    out[:, 1] = -_C1 * y
    out[:, 2] = _C1 * z
    out[:, 3] = -_C1 * x
    out[:, 4] = _C2[0] * x * y
    out[:, 5] = _C2[1] * y * z
    out[:, 6] = _C2[2] * (3 * zz - 1)
    out[:, 7] = _C2[3] * x * z
    out[:, 8] = _C2[4] * (xx - yy)
    out[:, 9] = _C3[0] * y * (3 * xx - yy)
    out[:, 10] = _C3[1] * x * y * z
    out[:, 11] = _C3[2] * y * (4 * zz - xx - yy)
    out[:, 12] = _C3[3] * z * (2 * zz - 3 * xx - 3 * yy)
    out[:, 13] = _C3[4] * x * (4 * zz - xx - yy)
    out[:, 14] = _C3[5] * z * (xx - yy)
    out[:, 15] = _C3[6] * x * (xx - 3 * yy)
    return out


@dataclass
class DecoderWeights:
    """Parameter tensors for the density and color nets."""

    in_dim: int
    hidden: int
    geo_features: int
    d_w1: ParamTensor
    d_w2: ParamTensor
    d_w3: ParamTensor
    d_b3: ParamTensor
    c_w1: ParamTensor
    c_w2: ParamTensor
    c_w3: ParamTensor
    c_b3: ParamTensor

    @classmethod
    def create(cls, in_dim: int, hidden: int = 64, geo_features: int = 15,
               seed: int = 0, dtype=np.float32) -> "DecoderWeights":
        d_out = 1 + geo_features
        c_in = geo_features + 16

        def mat(name, rows, cols, k):
            bound = float(np.sqrt(1.0 / rows))
            return seeded_init((rows, cols), "uniform", seed + k,
                               a=-bound, b=bound, role="mlp", name=name,
                               dtype=dtype)

        return cls(
            in_dim=in_dim, hidden=hidden, geo_features=geo_features,
            d_w1=mat("d_w1", in_dim, hidden, 1),
            d_w2=mat("d_w2", hidden, hidden, 2),
            d_w3=mat("d_w3", hidden, d_out, 3),
            d_b3=seeded_init((d_out,), "zeros", 0, role="mlp", name="d_b3",
                             dtype=dtype),
            c_w1=mat("c_w1", c_in, hidden, 4),
            c_w2=mat("c_w2", hidden, hidden, 5),
            c_w3=mat("c_w3", hidden, 3, 6),
            c_b3=seeded_init((3,), "zeros", 0, role="mlp", name="c_b3",
                             dtype=dtype),
        )

    def params(self) -> list[ParamTensor]:
        return [self.d_w1, self.d_w2, self.d_w3, self.d_b3,
                self.c_w1, self.c_w2, self.c_w3, self.c_b3]


@dataclass
class DecoderCache:
    """Intermediate activations saved for decoder_backward."""

    v: np.ndarray
    pre_d1: np.ndarray
    h1: np.ndarray
    pre_d2: np.ndarray
    h2: np.ndarray
    raw_sigma: np.ndarray
    sigma_ungated: np.ndarray
    gate: np.ndarray
    vnorm: np.ndarray
    sh: np.ndarray
    cin: np.ndarray
    pre_c1: np.ndarray
    c1: np.ndarray
    pre_c2: np.ndarray
    c2: np.ndarray
    rgb: np.ndarray
    gate_cfg: GateConfig


def gated_density(v: np.ndarray, dirs: np.ndarray, weights: DecoderWeights,
                  gate: GateConfig) -> tuple[np.ndarray, np.ndarray, DecoderCache]:
    """Decode weighted features and view directions to (sigma, rgb).

    sigma = gate(v) * softplus(density-net raw output); rgb comes from
    the color net on (geometry features, sh_encode(dirs)) with a sigmoid
    output. gate mode "none" leaves density ungated.
    """
    w = weights
    if v.shape[1] != w.in_dim:
        raise ConfigError(f"feature dim {v.shape[1]} != decoder in_dim {w.in_dim}")

    pre_d1 = v @ w.d_w1.view()
    h1 = relu(pre_d1)
    pre_d2 = h1 @ w.d_w2.view()
    h2 = relu(pre_d2)
    zd = h2 @ w.d_w3.view() + w.d_b3.view()
    raw_sigma = zd[:, 0]
    geo = zd[:, 1:]

    vnorm = np.linalg.norm(v, axis=1)
    if gate.mode == "soft":
        g = np.tanh(gate.alpha * vnorm)
    elif gate.mode == "hard":
        g = (vnorm != 0).astype(v.dtype)
    else:
        g = np.ones_like(vnorm)
    sigma_ungated = softplus(raw_sigma)
    sigma = g * sigma_ungated

    sh = sh_encode(np.asarray(dirs, dtype=np.float64)).astype(v.dtype)
    cin = np.concatenate([geo, sh], axis=1)
    pre_c1 = cin @ w.c_w1.view()
    c1 = relu(pre_c1)
    pre_c2 = c1 @ w.c_w2.view()
    c2 = relu(pre_c2)
    rgb = sigmoid(c2 @ w.c_w3.view() + w.c_b3.view())

    assert_finite("decoder forward", sigma, rgb)
    cache = DecoderCache(v=v, pre_d1=pre_d1, h1=h1, pre_d2=pre_d2, h2=h2,
                         raw_sigma=raw_sigma, sigma_ungated=sigma_ungated,
                         gate=g, vnorm=vnorm, sh=sh, cin=cin, pre_c1=pre_c1,
                         c1=c1, pre_c2=pre_c2, c2=c2, rgb=rgb, gate_cfg=gate)
    return sigma, rgb, cache


def decoder_backward(cache: DecoderCache, d_sigma: np.ndarray,
                     d_rgb: np.ndarray, weights: DecoderWeights) -> np.ndarray:
    """Adjoint of gated_density; accumulates weight grads, returns d_v.

    The hard gate contributes zero gradient to v; the soft gate uses the
    subgradient 0 at v = 0.
    """
    w = cache.gate_cfg
    wt = weights

    # Color net.
    d_z3 = d_rgb * cache.rgb * (1 - cache.rgb)
    wt.c_w3.grad_view()[...] += cache.c2.T @ d_z3
    wt.c_b3.grad_view()[...] += d_z3.sum(axis=0)
    d_c2 = d_z3 @ wt.c_w3.view().T
    d_pre_c2 = d_c2 * (cache.pre_c2 > 0)
    wt.c_w2.grad_view()[...] += cache.c1.T @ d_pre_c2
    d_c1 = d_pre_c2 @ wt.c_w2.view().T
    d_pre_c1 = d_c1 * (cache.pre_c1 > 0)
    wt.c_w1.grad_view()[...] += cache.cin.T @ d_pre_c1
    d_cin = d_pre_c1 @ wt.c_w1.view().T
    d_geo = d_cin[:, :weights.geo_features]

    # Density head: sigma = gate * softplus(raw).
    d_raw_sigma = d_sigma * cache.gate * d_softplus(cache.raw_sigma)
    d_zd = np.concatenate([d_raw_sigma[:, None], d_geo], axis=1)
    wt.d_w3.grad_view()[...] += cache.h2.T @ d_zd
    wt.d_b3.grad_view()[...] += d_zd.sum(axis=0)
    d_h2 = d_zd @ wt.d_w3.view().T
    d_pre_d2 = d_h2 * (cache.pre_d2 > 0)
    wt.d_w2.grad_view()[...] += cache.h1.T @ d_pre_d2
    d_h1 = d_pre_d2 @ wt.d_w2.view().T
    d_pre_d1 = d_h1 * (cache.pre_d1 > 0)
    wt.d_w1.grad_view()[...] += cache.v.T @ d_pre_d1
    d_v = d_pre_d1 @ wt.d_w1.view().T

    if w.mode == "soft":
        d_gate = d_sigma * cache.sigma_ungated
        coef = d_gate * w.alpha * (1 - cache.gate ** 2)
        safe = np.where(cache.vnorm > 0, cache.vnorm, 1.0)
        d_v += np.where(cache.vnorm[:, None] > 0,
                        (coef / safe)[:, None] * cache.v, 0.0).astype(d_v.dtype)
    return d_v
