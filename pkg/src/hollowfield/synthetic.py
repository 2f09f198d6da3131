"""Procedural scenes with closed-form density and color fields.

These serve as ground-truth generators: the analytic fields can be
evaluated at any point with no sampling artifacts, so a dense-quadrature
render of them is an independent oracle for the learned field. Also
builds the forced-hash-collision fixture used to exercise collision
redistribution in isolation.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ConfigError
from .hashgrid import HashGridConfig, HashGridTable, hash_index
from .render import Camera, composite, rays_from_camera, all_pixels, \
    sample_positions, stratified_samples

# World-to-unit-cube mapping shared by all built-in scenes: content within
# radius 1.5 of the origin lands inside the cube with a 5% margin.
SCENE_SCALE = 0.95 / 3.0
SCENE_OFFSET = (0.5, 0.5, 0.5)


def smoothstep(edge0: float, edge1: float, x: np.ndarray) -> np.ndarray:
    t = np.clip((x - edge0) / (edge1 - edge0), 0.0, 1.0)
    return t * t * (3.0 - 2.0 * t)


@dataclass
class SyntheticScene:
    """Analytic density/color fields plus the camera ring that views them."""

    name: str
    density: Callable[[np.ndarray], np.ndarray]
    color: Callable[[np.ndarray], np.ndarray]
    ring_radius: float = 4.0
    camera_angle_x: float = 0.6
    near: float = 2.0
    far: float = 6.0
    background: tuple[float, float, float] = (1.0, 1.0, 1.0)


def _position_color(world: np.ndarray) -> np.ndarray:
    """Smooth spatially-varying color: direction from origin, remapped."""
    r = np.linalg.norm(world, axis=1, keepdims=True)
    unit = world / np.maximum(r, 1e-9)
    return 0.5 + 0.4 * unit


def _shell_density(r: np.ndarray, inner: float, outer: float,
                   ramp: float, peak: float) -> np.ndarray:
    rising = smoothstep(inner, inner + ramp, r)
    falling = 1.0 - smoothstep(outer - ramp, outer, r)
    return peak * rising * falling


def make_scene(name: str, *, outer: float = 1.0, inner: float = 0.6,
               ramp: float = 0.12, peak: float = 40.0) -> SyntheticScene:
    """Build one of the named analytic scenes.

    hollow_sphere and solid_sphere share the identical outer surface, so
    their renders agree wherever the shell is optically thick; only the
    invisible interior differs. Supported names: hollow_sphere,
    solid_sphere, box, two_blob, empty.
    """
    if name == "hollow_sphere":
        def density(w):
            return _shell_density(np.linalg.norm(w, axis=1), inner, outer,
                                  ramp, peak)
        return SyntheticScene(name, density, _position_color)

    if name == "solid_sphere":
        def density(w):
            r = np.linalg.norm(w, axis=1)
            return peak * (1.0 - smoothstep(outer - ramp, outer, r))
        return SyntheticScene(name, density, _position_color)

    if name == "box":
        half = 0.8 * outer
        def density(w):
            d = np.ones(w.shape[0])
            for a in range(3):
                d = d * (1.0 - smoothstep(half - ramp, half, np.abs(w[:, a])))
            return peak * d
        return SyntheticScene(name, density, _position_color)

    if name == "two_blob":
        # Blob 1 is deliberately invisible (zero density): only blob 2
        # contributes to any rendering, mirroring the collision fixture.
        c2 = np.array([0.5, 0.0, 0.0])
        def density(w):
            r2 = np.linalg.norm(w - c2, axis=1)
            return peak * (1.0 - smoothstep(0.35 - ramp, 0.35, r2))
        return SyntheticScene(name, density, _position_color)

    if name == "empty":
        return SyntheticScene(name, lambda w: np.zeros(w.shape[0]),
                              _position_color)

    raise ConfigError(f"unknown synthetic scene {name!r}")


def ring_cameras(scene: SyntheticScene, n_views: int, resolution: int,
                 seed: int, elevations=(15.0, 35.0)) -> list[Camera]:
    """Cameras on a ring around the origin, alternating elevation bands.

    The azimuth phase is drawn from the seed so distinct seeds give
    distinct but reproducible view sets.
    """
    rng = np.random.default_rng(seed)
    phase = rng.uniform(0.0, 2 * np.pi)
    cams = []
    for i in range(n_views):
        az = phase + 2 * np.pi * i / n_views
        el = np.deg2rad(elevations[i % len(elevations)])
        eye = scene.ring_radius * np.array([
            np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)])
        z = eye / np.linalg.norm(eye)              # camera backward
        up = np.array([0.0, 0.0, 1.0])
        x = np.cross(up, z)
        x /= np.linalg.norm(x)
        y = np.cross(z, x)
        pose = np.eye(4)
        pose[:3, 0], pose[:3, 1], pose[:3, 2], pose[:3, 3] = x, y, z, eye
        cams.append(Camera.from_angle(resolution, resolution,
                                      scene.camera_angle_x, pose))
    return cams


def oracle_render(scene: SyntheticScene, cam: Camera, n_dense: int = 1024,
                  chunk: int = 2048) -> np.ndarray:
    """Reference image by dense midpoint quadrature of the analytic fields.

    Uses the same compositing routine as the learned renderer, so any
    disagreement between oracle and model isolates the field itself.
    """
    if n_dense < 256:
        raise ConfigError(f"oracle quadrature needs n_dense >= 256, got {n_dense}")
    pix = all_pixels(cam.width, cam.height)
    origins, dirs = rays_from_camera(cam, pix)
    bg = np.asarray(scene.background, dtype=np.float64)
    out = np.empty((origins.shape[0], 3), dtype=np.float64)
    for lo in range(0, origins.shape[0], chunk):
        o = origins[lo:lo + chunk]
        d = dirs[lo:lo + chunk]
        t, deltas = stratified_samples(o.shape[0], scene.near, scene.far,
                                       n_dense, jitter=False)
        pos = sample_positions(o, d, t).reshape(-1, 3)
        sigma = scene.density(pos).reshape(o.shape[0], n_dense)
        rgb = scene.color(pos).reshape(o.shape[0], n_dense, 3)
        pixels, _, _ = composite(sigma, rgb, deltas, bg)
        out[lo:lo + chunk] = pixels
    return out.reshape(cam.height, cam.width, 3)


@dataclass
class CollisionFixture:
    """A single hashed level plus saliency grid with one engineered collision.

    x1 and x2 are distinct lattice corners (and saliency nodes) that map to
    the same hash bucket. The ground-truth feature at x1 is the zero
    vector (an invisible region); x2 carries target_feature.
    """

    grid_cfg: HashGridConfig
    saliency_res: int
    x1: np.ndarray
    x2: np.ndarray
    corner1: tuple[int, int, int]
    corner2: tuple[int, int, int]
    bucket: int
    target_feature: np.ndarray
    colliding_pairs: int = 0


def build_collision_fixture(log2_table_size: int = 6, level_res: int = 4,
                            feature_dim: int = 2) -> CollisionFixture:
    """Engineer a certain, enumerable hash collision.

    With a resolution-4 lattice there are 125 corners feeding a 64-entry
    table, so collisions are guaranteed; the fixture scans corners in a
    fixed order and picks the first colliding pair. The saliency grid
    resolution is level_res + 1 so every lattice corner coincides with a
    saliency node and queries degenerate to single-entry lookups.
    """
    cfg = HashGridConfig(levels=1, feature_dim=feature_dim,
                         log2_table_size=log2_table_size,
                         base_res=level_res, max_res=level_res)
    if (level_res + 1) ** 3 <= cfg.table_size:
        raise ConfigError("fixture requires a hashed level: grow level_res "
                          "or shrink the table")
    s = level_res + 1
    corners = np.stack(np.meshgrid(np.arange(s), np.arange(s), np.arange(s),
                                   indexing="ij"), axis=-1).reshape(-1, 3)
    buckets = hash_index(corners, cfg.table_size)
    seen: dict[int, int] = {}
    pair = None
    n_collisions = 0
    for i, b in enumerate(buckets):
        b = int(b)
        if b in seen:
            n_collisions += 1
            if pair is None:
                pair = (seen[b], i, b)
        else:
            seen[b] = i
    if pair is None:
        raise ConfigError("no collision found; fixture construction invalid")
    i1, i2, bucket = pair
    c1 = tuple(int(v) for v in corners[i1])
    c2 = tuple(int(v) for v in corners[i2])
    target = np.array([0.8, -0.6] + [0.3] * (feature_dim - 2))[:feature_dim]
    return CollisionFixture(
        grid_cfg=cfg, saliency_res=level_res + 1,
        x1=corners[i1].astype(np.float64) / level_res,
        x2=corners[i2].astype(np.float64) / level_res,
        corner1=c1, corner2=c2, bucket=bucket,
        target_feature=target, colliding_pairs=n_collisions)
