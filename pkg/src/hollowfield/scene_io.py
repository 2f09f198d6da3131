"""Dataset loading, image IO, dataset generation, and checkpointing.

Datasets follow the common synthetic layout: a transforms.json holding
camera_angle_x and per-frame file_path + transform_matrix. Images are
kept in linear RGB in [0, 1]; RGBA inputs are alpha-composited over the
dataset background at load time.

Checkpoints are a small binary container: magic "HNRF", a version, a
JSON header (config, step, epoch, dual variable), then raw little-endian
float arrays in a fixed order (hash grid coarse to fine, decoder layers,
saliency grid row-major, optional optimizer moments). Round-trips are
bit-exact.
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass, field

import numpy as np
from PIL import Image

from .errors import ConfigError, DataError, IntegrityError
from .model import FieldConfig, RadianceField
from .params import AdamState
from .render import Camera
from .synthetic import (SCENE_OFFSET, SCENE_SCALE, SyntheticScene,
                        oracle_render, ring_cameras)

CHECKPOINT_MAGIC = b"HNRF"
CHECKPOINT_VERSION = 1


@dataclass
class Frame:
    image: np.ndarray  # (H, W, 3) float32 linear RGB in [0, 1]
    camera: Camera
    name: str = ""


@dataclass
class Dataset:
    frames: list[Frame]
    split: str = "train"
    scene_scale: float = SCENE_SCALE
    scene_offset: tuple[float, float, float] = SCENE_OFFSET
    background: tuple[float, float, float] = (1.0, 1.0, 1.0)
    near: float = 2.0
    far: float = 6.0
    camera_angle_x: float = 0.6

    def __post_init__(self) -> None:
        if self.frames:
            shapes = {f.image.shape for f in self.frames}
            if len(shapes) != 1:
                raise DataError(f"frames disagree on resolution: {shapes}")

    @property
    def resolution(self) -> tuple[int, int]:
        img = self.frames[0].image
        return img.shape[1], img.shape[0]

    def ray_count(self) -> int:
        return sum(f.image.shape[0] * f.image.shape[1] for f in self.frames)


def write_png(image: np.ndarray, path: str) -> None:
    """Quantize a [0, 1] float image to 8-bit and write a PNG."""
    arr = np.asarray(image)
    if arr.min() < 0 or arr.max() > 1:
        raise ConfigError("write_png expects values in [0, 1]")
    data = np.round(arr * 255.0).astype(np.uint8)
    if data.ndim == 2:
        Image.fromarray(data, mode="L").save(path)
    else:
        Image.fromarray(data, mode="RGB").save(path)
    # PIL buffers internally; rely on save() completing before return.


def read_png(path: str) -> np.ndarray:
    """Read a PNG back to float values in [0, 1] (values / 255)."""
    try:
        with Image.open(path) as im:
            arr = np.asarray(im)
    except OSError as e:
        raise DataError(f"cannot read image {path}: {e}") from e
    return arr.astype(np.float32) / 255.0


def _composite_alpha(rgba: np.ndarray, background) -> np.ndarray:
    a = rgba[..., 3:4]
    bg = np.asarray(background, dtype=np.float32)
    return rgba[..., :3] * a + bg * (1.0 - a)


def load_transforms_json(path: str, split: str = "train",
                         background=(1.0, 1.0, 1.0)) -> Dataset:
    """Load a transforms.json dataset description and its images."""
    if not os.path.isfile(path):
        raise DataError(f"transforms file not found: {path}")
    with open(path) as f:
        try:
            meta = json.load(f)
        except json.JSONDecodeError as e:
            raise DataError(f"malformed transforms json {path}: {e}") from e
    for key in ("camera_angle_x", "frames"):
        if key not in meta:
            raise DataError(f"{path} missing required key {key!r}")

    root = os.path.dirname(os.path.abspath(path))
    near = float(meta.get("near", 2.0))
    far = float(meta.get("far", 6.0))
    background = tuple(meta.get("background", background))
    angle = float(meta["camera_angle_x"])

    frames = []
    for i, fr in enumerate(meta["frames"]):
        for key in ("file_path", "transform_matrix"):
            if key not in fr:
                raise DataError(f"frame {i} missing key {key!r}")
        img_path = os.path.join(root, fr["file_path"])
        if not os.path.isfile(img_path):
            if os.path.isfile(img_path + ".png"):
                img_path += ".png"
            else:
                raise DataError(f"frame {i}: image not found at {img_path}")
        img = read_png(img_path)
        if img.ndim == 2:
            img = np.repeat(img[..., None], 3, axis=2)
        if img.shape[-1] == 4:
            img = _composite_alpha(img, background)
        pose = np.asarray(fr["transform_matrix"], dtype=np.float64)
        if pose.shape != (4, 4):
            raise DataError(f"frame {i}: transform_matrix must be 4x4")
        cam = Camera.from_angle(img.shape[1], img.shape[0], angle, pose)
        frames.append(Frame(image=img.astype(np.float32), camera=cam,
                            name=fr["file_path"]))
    if not frames:
        raise DataError(f"{path} contains no frames")
    return Dataset(frames=frames, split=split, background=background,
                   near=near, far=far, camera_angle_x=angle)


def gen_synthetic(scene: SyntheticScene, n_views: int, resolution: int,
                  seed: int, n_dense: int = 1024, split: str = "train"
                  ) -> Dataset:
    """Render an in-memory dataset of oracle views of an analytic scene."""
    cams = ring_cameras(scene, n_views, resolution, seed)
    frames = [Frame(image=oracle_render(scene, cam, n_dense).astype(np.float32),
                    camera=cam, name=f"{split}_{i:03d}")
              for i, cam in enumerate(cams)]
    return Dataset(frames=frames, split=split, background=scene.background,
                   near=scene.near, far=scene.far,
                   camera_angle_x=scene.camera_angle_x)


def save_dataset(ds: Dataset, out_dir: str) -> str:
    """Write PNGs plus transforms.json; returns the transforms path."""
    os.makedirs(out_dir, exist_ok=True)
    img_dir = os.path.join(out_dir, "images")
    os.makedirs(img_dir, exist_ok=True)
    frames_meta = []
    for i, fr in enumerate(ds.frames):
        rel = f"images/r_{i:03d}.png"
        write_png(fr.image, os.path.join(out_dir, rel))
        frames_meta.append({
            "file_path": rel,
            "transform_matrix": fr.camera.pose.tolist(),
        })
    meta = {
        "camera_angle_x": ds.camera_angle_x,
        "near": ds.near,
        "far": ds.far,
        "background": list(ds.background),
        "frames": frames_meta,
    }
    path = os.path.join(out_dir, "transforms.json")
    with open(path, "w") as f:
        json.dump(meta, f, indent=1)
    return path


# ----------------------------------------------------------------------
# Checkpoints
# ----------------------------------------------------------------------

def save_checkpoint(model: RadianceField, pruner_state: dict, path: str,
                    step: int = 0, epoch: int = 0,
                    train_config: dict | None = None,
                    adam_states: list[AdamState] | None = None) -> None:
    """Serialize the model (and optionally optimizer moments) atomically."""
    params = model.params()
    arrays = [p.values for p in params]
    names = [p.name for p in params]
    moments_meta = []
    if adam_states is not None:
        for p, st in zip(params, adam_states):
            arrays.extend([st.m, st.v])
            moments_meta.append({"param": p.name, "t": st.t, "lr": st.lr,
                                 "beta1": st.beta1, "beta2": st.beta2,
                                 "eps": st.eps})
    header = {
        "version": CHECKPOINT_VERSION,
        "field_config": model.cfg.to_dict(),
        "train_config": train_config or {},
        "pruner": pruner_state,
        "step": int(step),
        "epoch": int(epoch),
        "params": [{"name": p.name, "shape": list(p.shape),
                    "dtype": str(p.dtype)} for p in params],
        "param_order": names,
        "optimizer": moments_meta,
    }
    blob = json.dumps(header).encode("utf-8")
    tmp_fd, tmp_path = tempfile.mkstemp(dir=os.path.dirname(os.path.abspath(path))
                                        or ".", suffix=".tmp")
    try:
        with os.fdopen(tmp_fd, "wb") as f:
            f.write(CHECKPOINT_MAGIC)
            f.write(np.uint32(CHECKPOINT_VERSION).tobytes())
            f.write(np.uint32(len(blob)).tobytes())
            f.write(blob)
            for a in arrays:
                f.write(np.ascontiguousarray(a, dtype=a.dtype).astype(
                    a.dtype.newbyteorder("<")).tobytes())
        os.replace(tmp_path, path)
    finally:
        if os.path.exists(tmp_path):
            os.unlink(tmp_path)


def load_checkpoint(path: str) -> tuple[RadianceField, dict, dict]:
    """Rebuild a model from a checkpoint.

    Returns (model, pruner_state, header). Raises IntegrityError on a bad
    magic, version mismatch, or truncated payload.
    """
    if not os.path.isfile(path):
        raise DataError(f"checkpoint not found: {path}")
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise IntegrityError(f"bad checkpoint magic {magic!r}")
        head = f.read(8)
        if len(head) != 8:
            raise IntegrityError("truncated checkpoint header")
        version = int(np.frombuffer(head[:4], dtype="<u4")[0])
        if version != CHECKPOINT_VERSION:
            raise IntegrityError(
                f"unsupported checkpoint version {version}")
        header_len = int(np.frombuffer(head[4:], dtype="<u4")[0])
        blob = f.read(header_len)
        if len(blob) != header_len:
            raise IntegrityError("truncated checkpoint header block")
        try:
            header = json.loads(blob.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise IntegrityError(f"corrupt checkpoint header: {e}") from e

        cfg = FieldConfig.from_dict(header["field_config"])
        model = RadianceField(cfg)
        params = model.params()
        declared = header.get("param_order", [])
        if declared != [p.name for p in params]:
            raise IntegrityError(
                f"checkpoint parameter order {declared} does not match model")
        for p, meta in zip(params, header["params"]):
            dtype = np.dtype(meta["dtype"]).newbyteorder("<")
            nbytes = p.size * dtype.itemsize
            raw = f.read(nbytes)
            if len(raw) != nbytes:
                raise IntegrityError(
                    f"truncated checkpoint payload at param {p.name!r}")
            p.values[...] = np.frombuffer(raw, dtype=dtype).astype(p.dtype)
        adam_states = None
        if header.get("optimizer"):
            adam_states = []
            for p, meta in zip(params, header["optimizer"]):
                st = AdamState.for_param(p, lr=meta["lr"], beta1=meta["beta1"],
                                         beta2=meta["beta2"], eps=meta["eps"])
                st.t = int(meta["t"])
                for buf in (st.m, st.v):
                    raw = f.read(p.size * p.dtype.itemsize)
                    if len(raw) != p.size * p.dtype.itemsize:
                        raise IntegrityError("truncated optimizer moments")
                    buf[...] = np.frombuffer(
                        raw, dtype=p.dtype.newbyteorder("<")).astype(p.dtype)
                adam_states.append(st)
        trailing = f.read(1)
        if trailing:
            raise IntegrityError("checkpoint has trailing bytes")
    header["adam_states"] = adam_states
    return model, dict(header.get("pruner", {})), header
