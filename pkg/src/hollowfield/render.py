"""Ray generation, stratified sampling, and emission-absorption compositing.

Conventions follow the common synthetic-dataset camera model: camera
looks along -z in its own frame, +y is up, poses are 4x4 camera-to-world
matrices, and pixel (u, v) has u growing rightward and v downward.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError
from .numerics import assert_finite


@dataclass
class Camera:
    """Pinhole camera: image size, focal length in pixels, and pose."""

    width: int
    height: int
    focal: float
    pose: np.ndarray  # (4, 4) camera-to-world

    def __post_init__(self) -> None:
        self.pose = np.asarray(self.pose, dtype=np.float64)
        if self.pose.shape != (4, 4):
            raise DataError(f"camera pose must be 4x4, got {self.pose.shape}")
        r = self.pose[:3, :3]
        if not np.allclose(r @ r.T, np.eye(3), atol=1e-4):
            raise DataError("camera pose rotation block is not orthonormal")

    @classmethod
    def from_angle(cls, width: int, height: int, camera_angle_x: float,
                   pose: np.ndarray) -> "Camera":
        focal = 0.5 * width / np.tan(0.5 * camera_angle_x)
        return cls(width=width, height=height, focal=float(focal), pose=pose)


def all_pixels(width: int, height: int) -> np.ndarray:
    """(H*W, 2) array of (u, v) pixel indices in row-major image order."""
    u, v = np.meshgrid(np.arange(width), np.arange(height))
    return np.stack([u.reshape(-1), v.reshape(-1)], axis=1)


def rays_from_camera(cam: Camera, pixels: np.ndarray
                     ) -> tuple[np.ndarray, np.ndarray]:
    """World-space ray origins and unit directions for (u, v) pixels.

    Camera-frame direction is ((u - W/2)/f, -(v - H/2)/f, -1), rotated by
    the pose and normalized; the origin is the pose translation.
    """
    pixels = np.asarray(pixels, dtype=np.float64)
    u = pixels[:, 0]
    v = pixels[:, 1]
    d_cam = np.stack([
        (u - 0.5 * cam.width) / cam.focal,
        -(v - 0.5 * cam.height) / cam.focal,
        -np.ones_like(u),
    ], axis=1)
    rot = cam.pose[:3, :3]
    d_world = d_cam @ rot.T
    d_world /= np.linalg.norm(d_world, axis=1, keepdims=True)
    origins = np.broadcast_to(cam.pose[:3, 3], d_world.shape).copy()
    return origins, d_world


def stratified_samples(n_rays: int, near: float, far: float, n: int,
                       jitter: bool, rng: np.random.Generator | None = None,
                       dtype=np.float64) -> tuple[np.ndarray, np.ndarray]:
    """Per-ray sample distances t and forward differences deltas.

    Bin k spans [near + k*D, near + (k+1)*D] with D = (far - near) / n;
    the sample sits at the bin midpoint, or uniformly inside the bin when
    jitter is on. The last delta is far - t_n.
    """
    if n < 1:
        raise ConfigError(f"need at least one sample per ray, got {n}")
    if not near < far:
        raise ConfigError(f"near must be < far, got {near} >= {far}")
    width = (far - near) / n
    starts = near + width * np.arange(n, dtype=dtype)
    if jitter:
        if rng is None:
            raise ConfigError("jittered sampling requires an rng")
        offset = rng.uniform(0.0, width, size=(n_rays, n)).astype(dtype)
    else:
        offset = np.full((n_rays, n), 0.5 * width, dtype=dtype)
    t = starts[None, :] + offset
    deltas = np.empty_like(t)
    deltas[:, :-1] = t[:, 1:] - t[:, :-1]
    deltas[:, -1] = far - t[:, -1]
    return t, deltas


def sample_positions(origins: np.ndarray, dirs: np.ndarray,
                     t: np.ndarray) -> np.ndarray:
    """(R, S, 3) world positions o + t*d."""
    return origins[:, None, :] + t[..., None] * dirs[:, None, :]


@dataclass
class CompositeCache:
    """Forward quantities reused by composite_backward."""

    deltas: np.ndarray
    rgb: np.ndarray
    weights: np.ndarray      # (R, S) T_i * alpha_i
    trans_excl: np.ndarray   # (R, S+1) transmittance before each sample
    background: np.ndarray
    pixels: np.ndarray


def composite(sigma: np.ndarray, rgb: np.ndarray, deltas: np.ndarray,
              background: np.ndarray
              ) -> tuple[np.ndarray, np.ndarray, CompositeCache]:
    """Emission-absorption compositing along each ray.

    alpha_i = 1 - exp(-sigma_i * delta_i); T_i is the product of
    (1 - alpha_j) over j < i, computed as exp of the negated running
    optical depth. Returns (pixels, opacity, cache) with
    pixels = sum_i T_i alpha_i c_i + T_end * background and
    opacity = 1 - T_end.
    """
    assert_finite("composite: sigma", sigma)
    background = np.asarray(background, dtype=rgb.dtype)
    od = sigma * deltas
    cum = np.cumsum(od, axis=1)
    trans_excl = np.empty((sigma.shape[0], sigma.shape[1] + 1), dtype=rgb.dtype)
    trans_excl[:, 0] = 1.0
    trans_excl[:, 1:] = np.exp(-cum)
    alpha = -np.expm1(-od)
    weights = trans_excl[:, :-1] * alpha
    t_end = trans_excl[:, -1]
    pixels = np.einsum("rs,rsc->rc", weights, rgb) + t_end[:, None] * background
    opacity = 1.0 - t_end
    cache = CompositeCache(deltas=deltas, rgb=rgb, weights=weights,
                           trans_excl=trans_excl, background=background,
                           pixels=pixels)
    return pixels, opacity, cache


def composite_backward(cache: CompositeCache, d_pixels: np.ndarray
                       ) -> tuple[np.ndarray, np.ndarray]:
    """Exact adjoint of composite w.r.t. per-sample sigma and rgb.

    d sigma_k = delta_k * <d_pixels, T_{k+1} c_k - suffix_k> where
    suffix_k collects every contribution after sample k including the
    background term; d rgb_k = w_k * d_pixels.
    """
    w = cache.weights
    rgb = cache.rgb
    d_rgb = w[..., None] * d_pixels[:, None, :]

    contrib = w[..., None] * rgb                       # (R, S, 3)
    prefix = np.cumsum(contrib, axis=1)
    suffix = cache.pixels[:, None, :] - prefix         # after-k terms + bg
    inner = cache.trans_excl[:, 1:, None] * rgb - suffix
    d_sigma = cache.deltas * np.einsum("rsc,rc->rs", inner, d_pixels)
    return d_sigma.astype(rgb.dtype), d_rgb.astype(rgb.dtype)


def mse_loss(rendered: np.ndarray, target: np.ndarray) -> float:
    """Mean squared error over all pixels and channels."""
    if rendered.shape != target.shape:
        raise ConfigError(
            f"image shapes differ: {rendered.shape} vs {target.shape}")
    diff = rendered.astype(np.float64) - target.astype(np.float64)
    return float(np.mean(diff * diff))


def psnr(mse: float) -> float:
    """-10 log10(mse) in dB; mse of exactly 0 reports +inf."""
    if mse < 0:
        raise ConfigError(f"mse must be nonnegative, got {mse}")
    if mse == 0:
        return float("inf")
    return float(-10.0 * np.log10(mse))


def render_rays(query, origins: np.ndarray, dirs: np.ndarray,
                near: float, far: float, n_samples: int,
                background: np.ndarray, jitter: bool = False,
                rng: np.random.Generator | None = None,
                dtype=np.float32) -> np.ndarray:
    """Composite one batch of rays through a field query callable.

    query(positions, dirs) must return per-sample (sigma, rgb) with
    positions given in world coordinates.
    """
    n_rays = origins.shape[0]
    t, deltas = stratified_samples(n_rays, near, far, n_samples, jitter, rng)
    pos = sample_positions(origins, dirs, t)
    flat_dirs = np.repeat(dirs, n_samples, axis=0)
    sigma, rgb = query(pos.reshape(-1, 3), flat_dirs)
    sigma = sigma.reshape(n_rays, n_samples)
    rgb = rgb.reshape(n_rays, n_samples, 3)
    pixels, _, _ = composite(sigma, rgb, deltas.astype(sigma.dtype),
                             np.asarray(background, dtype=sigma.dtype))
    return pixels


def render_image(query, cam: Camera, near: float, far: float,
                 n_samples: int, background: np.ndarray,
                 chunk: int = 8192) -> np.ndarray:
    """Render a full view deterministically (no jitter), chunked over rays.

    Chunks are processed and merged in pixel order, so the result is
    identical regardless of chunk size.
    """
    pix = all_pixels(cam.width, cam.height)
    origins, dirs = rays_from_camera(cam, pix)
    rows = []
    for lo in range(0, origins.shape[0], chunk):
        rows.append(render_rays(query, origins[lo:lo + chunk],
                                dirs[lo:lo + chunk], near, far, n_samples,
                                background))
    img = np.concatenate(rows, axis=0)
    return img.reshape(cam.height, cam.width, 3)
