"""Loss assembly, dual-variable ascent, and the training loop.

Three pruning modes share one loop:

  none  - plain MSE.
  l1    - MSE plus a fixed-weight L1 term on the squashed saliency grid.
  admm  - the augmented-Lagrangian objective with a clamped dual variable
          updated by gradient ascent once per optimizer step; within a
          step the dual variable is a constant.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from .decoder import GateConfig, alpha_schedule
from .errors import ConfigError, NumericalError
from .model import FieldConfig, QueryCache, RadianceField
from .params import AdamState, ParamTensor, adam_step, seeded_init, zero_grads
from .render import (composite, composite_backward, mse_loss, psnr,
                     rays_from_camera, render_image, sample_positions,
                     all_pixels, stratified_samples)
from .saliency import (SaliencyGrid, apply_saliency, saliency_backward,
                       saliency_weight, sparsity_l1, sparsity_l1_backward,
                       SaliencyCache)
from .scene_io import Dataset, save_checkpoint

PRUNER_MODES = ("none", "l1", "admm")


@dataclass
class PrunerState:
    """Sparsity-enforcement state shared across training steps."""

    mode: str = "none"
    gamma: float = 0.0
    rho: float = 1e-3
    budget: float = 0.04
    lam: float = 0.0

    def __post_init__(self) -> None:
        if self.mode not in PRUNER_MODES:
            raise ConfigError(f"pruner mode must be one of {PRUNER_MODES}, "
                              f"got {self.mode!r}")
        if self.gamma < 0:
            raise ConfigError("dual variable must stay nonnegative")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainConfig:
    """Loop hyperparameters; field geometry lives in FieldConfig."""

    steps: int = 300_000
    lr: float = 1e-2
    rays_per_step: int = 4096
    samples_per_ray: int = 128
    seed: int = 0
    gate_mode: str = "soft"
    eval_interval: int = 2000
    lr_decay: float = 1.0          # final/initial lr ratio; 1.0 = constant
    adam_beta1: float = 0.9
    adam_beta2: float = 0.99
    adam_eps: float = 1e-15
    jitter: bool = True

    def __post_init__(self) -> None:
        if self.steps < 0 or self.rays_per_step < 1 or self.samples_per_ray < 1:
            raise ConfigError("step/ray/sample counts must be positive")
        if self.eval_interval < 1:
            raise ConfigError("eval_interval must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)


def l1_loss(mse: float, grid: SaliencyGrid, lam: float) -> float:
    """MSE plus lam * mean-sigmoid sparsity of the grid."""
    if lam < 0:
        raise ConfigError(f"l1 weight must be nonnegative, got {lam}")
    return mse + lam * sparsity_l1(grid)


def augmented_loss(mse: float, grid: SaliencyGrid, pruner: PrunerState) -> float:
    """Augmented Lagrangian: L + (rho/2)[s - C]+^2 + gamma (s - C)."""
    if pruner.mode != "admm":
        raise ConfigError("augmented_loss requires pruner mode 'admm'")
    s = sparsity_l1(grid)
    excess = max(s - pruner.budget, 0.0)
    return mse + 0.5 * pruner.rho * excess * excess \
        + pruner.gamma * (s - pruner.budget)


def dual_update(pruner: PrunerState, s: float) -> float:
    """Clamped gradient ascent: gamma <- max(0, gamma + rho (s - C))."""
    if pruner.mode != "admm":
        raise ConfigError("dual_update requires pruner mode 'admm'")
    pruner.gamma = max(0.0, pruner.gamma + pruner.rho * (s - pruner.budget))
    return pruner.gamma


def _pruner_coeff(pruner: PrunerState, s: float) -> float:
    """d(loss)/d(sparsity) of the pruning terms at the current s."""
    if pruner.mode == "l1":
        return pruner.lam
    if pruner.mode == "admm":
        return pruner.rho * max(s - pruner.budget, 0.0) + pruner.gamma
    return 0.0


class RayBank:
    """All training rays of a dataset, flattened for random batching."""

    def __init__(self, ds: Dataset):
        origins, dirs, targets = [], [], []
        for fr in ds.frames:
            pix = all_pixels(fr.camera.width, fr.camera.height)
            o, d = rays_from_camera(fr.camera, pix)
            origins.append(o)
            dirs.append(d)
            targets.append(fr.image.reshape(-1, 3))
        self.origins = np.concatenate(origins, axis=0)
        self.dirs = np.concatenate(dirs, axis=0)
        self.targets = np.concatenate(targets, axis=0).astype(np.float32)
        self.near = ds.near
        self.far = ds.far
        self.background = np.asarray(ds.background, dtype=np.float32)

    def __len__(self) -> int:
        return self.origins.shape[0]

    def batch(self, rng: np.random.Generator, n: int):
        idx = rng.integers(0, len(self), size=n)
        return self.origins[idx], self.dirs[idx], self.targets[idx]


@dataclass
class StepReport:
    loss: float
    mse: float
    sparsity: float
    gamma: float
    alpha: float


def make_adam_states(params: list[ParamTensor], cfg: TrainConfig
                     ) -> list[AdamState]:
    return [AdamState.for_param(p, lr=cfg.lr, beta1=cfg.adam_beta1,
                                beta2=cfg.adam_beta2, eps=cfg.adam_eps)
            for p in params]


def train_step(model: RadianceField, bank: RayBank, cfg: TrainConfig,
               pruner: PrunerState, adam_states: list[AdamState],
               rng: np.random.Generator, epoch: int,
               step: int = 0) -> StepReport:
    """One optimizer step: render a ray batch, backprop, update, ascend."""
    origins, dirs, targets = bank.batch(rng, cfg.rays_per_step)
    n_rays, n_samp = origins.shape[0], cfg.samples_per_ray
    t, deltas = stratified_samples(n_rays, bank.near, bank.far, n_samp,
                                   cfg.jitter, rng)
    pos = sample_positions(origins, dirs, t).reshape(-1, 3)
    flat_dirs = np.repeat(dirs, n_samp, axis=0)

    alpha = alpha_schedule(epoch)
    gate = GateConfig(mode=cfg.gate_mode, alpha=alpha)
    sigma, rgb, cache = model.query(pos, flat_dirs, gate, want_cache=True)

    deltas32 = deltas.astype(sigma.dtype)
    pixels, _, ccache = composite(sigma.reshape(n_rays, n_samp),
                                  rgb.reshape(n_rays, n_samp, 3),
                                  deltas32, bank.background)
    mse = mse_loss(pixels, targets)

    s = model.sparsity() if model.saliency is not None else 0.0
    if pruner.mode == "l1" and model.saliency is not None:
        loss = l1_loss(mse, model.saliency, pruner.lam)
    elif pruner.mode == "admm" and model.saliency is not None:
        loss = augmented_loss(mse, model.saliency, pruner)
    else:
        loss = mse
    if not math.isfinite(loss):
        raise NumericalError(
            f"non-finite loss at step {step}: mse={mse} sparsity={s} "
            f"gamma={pruner.gamma}")

    d_pixels = (2.0 / (n_rays * 3)) * (pixels - targets)
    d_sigma, d_rgb = composite_backward(ccache, d_pixels.astype(pixels.dtype))

    zero_grads(model.params())
    model.backward(cache, d_sigma.reshape(-1), d_rgb.reshape(-1, 3))
    if model.saliency is not None:
        coeff = _pruner_coeff(pruner, s)
        if coeff != 0.0:
            sparsity_l1_backward(model.saliency, coeff)

    if cfg.lr_decay != 1.0 and cfg.steps > 1:
        decay = cfg.lr_decay ** (step / (cfg.steps - 1))
    else:
        decay = 1.0
    for p, st in zip(model.params(), adam_states):
        st.lr = cfg.lr * decay
        adam_step(p, st)

    if pruner.mode == "admm" and model.saliency is not None:
        s = model.sparsity()
        dual_update(pruner, s)

    return StepReport(loss=float(loss), mse=float(mse), sparsity=float(s),
                      gamma=float(pruner.gamma), alpha=float(alpha))


def evaluate(model: RadianceField, ds: Dataset, cfg: TrainConfig,
             epoch: int = 0, skip_threshold: float | None = None) -> dict:
    """Render every view of a split without jitter and aggregate metrics."""
    gate = GateConfig(mode=cfg.gate_mode, alpha=alpha_schedule(epoch))
    q = model.eval_query(gate, skip_threshold=skip_threshold)
    per_view = []
    for fr in ds.frames:
        img = render_image(q, fr.camera, ds.near, ds.far,
                           cfg.samples_per_ray,
                           np.asarray(ds.background, dtype=np.float32))
        m = mse_loss(img, fr.image)
        per_view.append({"name": fr.name, "mse": m, "psnr": psnr(m)})
    mean_mse = float(np.mean([v["mse"] for v in per_view]))
    return {
        "mean_psnr": float(np.mean([v["psnr"] for v in per_view])),
        "mean_mse": mean_mse,
        "per_view": per_view,
    }


def steps_per_epoch(ds: Dataset, cfg: TrainConfig) -> int:
    return max(1, math.ceil(ds.ray_count() / cfg.rays_per_step))


def train_loop(train_ds: Dataset, cfg: TrainConfig, pruner: PrunerState,
               field_cfg: FieldConfig, eval_ds: Dataset | None = None,
               out_dir: str | None = None, log_every: int = 0,
               model: RadianceField | None = None
               ) -> tuple[RadianceField, list[dict]]:
    """Run cfg.steps optimizer steps and return (model, metrics records).

    Metrics records are also appended to metrics.jsonl under out_dir, one
    JSON object per evaluation: {step, psnr, mse, sparsity, gamma, alpha}.
    A checkpoint is written to out_dir/checkpoint.hnrf at the end.
    """
    if not train_ds.frames:
        raise ConfigError("training dataset is empty")
    if model is None:
        model = RadianceField(field_cfg)
    bank = RayBank(train_ds)
    rng = np.random.default_rng(cfg.seed)
    adam_states = make_adam_states(model.params(), cfg)
    spe = steps_per_epoch(train_ds, cfg)

    metrics: list[dict] = []
    log_path = None
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        log_path = os.path.join(out_dir, "metrics.jsonl")
        with open(log_path, "w"):
            pass

    def record(step: int, rep: StepReport | None) -> None:
        epoch = step // spe
        entry = {"step": step, "epoch": epoch, "steps_per_epoch": spe,
                 "sparsity": (model.sparsity()
                              if model.saliency is not None else None),
                 "gamma": pruner.gamma,
                 "alpha": alpha_schedule(epoch)}
        if rep is not None:
            entry["train_loss"] = rep.loss
            entry["train_mse"] = rep.mse
        if eval_ds is not None and eval_ds.frames:
            ev = evaluate(model, eval_ds, cfg, epoch=epoch)
            entry["psnr"] = ev["mean_psnr"]
            entry["mse"] = ev["mean_mse"]
        metrics.append(entry)
        if log_path:
            with open(log_path, "a") as f:
                f.write(json.dumps(entry) + "\n")

    rep = None
    for step in range(cfg.steps):
        rep = train_step(model, bank, cfg, pruner, adam_states, rng,
                         epoch=step // spe, step=step)
        if log_every and (step + 1) % log_every == 0:
            print(f"step {step + 1}/{cfg.steps} loss {rep.loss:.5f} "
                  f"mse {rep.mse:.5f} s {rep.sparsity:.4f} "
                  f"gamma {rep.gamma:.4f}")
        if (step + 1) % cfg.eval_interval == 0 or step + 1 == cfg.steps:
            record(step + 1, rep)
    if cfg.steps == 0:
        record(0, None)

    if out_dir:
        save_checkpoint(model, pruner.to_dict(),
                        os.path.join(out_dir, "checkpoint.hnrf"),
                        step=cfg.steps, epoch=cfg.steps // spe,
                        train_config=cfg.to_dict(), adam_states=adam_states)
    return model, metrics


# ----------------------------------------------------------------------
# Feature-space collision fixture training
# ----------------------------------------------------------------------

@dataclass
class FixtureResult:
    p1: float
    p2: float
    reconstruction_rel_error: float
    bucket_feature: np.ndarray
    sparsity: float
    gamma: float


def train_collision_fixture(fixture, pruner: PrunerState, steps: int = 4000,
                            lr: float = 1e-2, use_saliency: bool = True,
                            seed: int = 0, dtype=np.float32) -> FixtureResult:
    """Train the forced-collision micro-problem in feature space.

    The model output at a query is the saliency-weighted table readout
    v(x) = p(x) f(x); targets are the fixture's ground-truth features
    (zero for the invisible point). With a shared bucket the baseline
    (no saliency) can only learn the average of both targets, while a
    pruner-driven saliency grid can zero out the invisible point and let
    the bucket carry the visible target exactly.
    """
    from .hashgrid import HashGridTable, encode, encode_backward

    table = HashGridTable.create(fixture.grid_cfg, seed=seed, dtype=dtype)
    grid = SaliencyGrid.create(fixture.saliency_res, dtype=dtype) \
        if use_saliency else None

    x = np.stack([fixture.x1, fixture.x2], axis=0)
    targets = np.stack([np.zeros_like(fixture.target_feature),
                        fixture.target_feature]).astype(dtype)

    params = [table.params] + ([grid.params] if grid is not None else [])
    states = [AdamState.for_param(p, lr=lr) for p in params]

    for step in range(steps):
        feats, cache = encode(x, table)
        if grid is not None:
            p, idx, w = saliency_weight(x, grid)
            p = p.astype(dtype)
            v = apply_saliency(p, feats)
        else:
            v = feats
        diff = v - targets
        d_v = (2.0 / diff.size) * diff
        s = sparsity_l1(grid) if grid is not None else 0.0

        zero_grads(params)
        if grid is not None:
            scache = SaliencyCache(indices=idx, weights=w, p=p, features=feats)
            d_f = saliency_backward(scache, d_v.astype(dtype), grid)
            coeff = _pruner_coeff(pruner, s)
            if coeff != 0.0:
                sparsity_l1_backward(grid, coeff)
        else:
            d_f = d_v.astype(dtype)
        encode_backward(cache, d_f, table)
        for prm, st in zip(params, states):
            adam_step(prm, st)
        if pruner.mode == "admm" and grid is not None:
            dual_update(pruner, sparsity_l1(grid))

    feats, _ = encode(x, table)
    if grid is not None:
        p, _, _ = saliency_weight(x, grid)
        v = apply_saliency(p.astype(dtype), feats)
        p1, p2 = float(p[0]), float(p[1])
        s = sparsity_l1(grid)
    else:
        v = feats
        p1 = p2 = 1.0
        s = 1.0
    target = fixture.target_feature
    rel = float(np.linalg.norm(v[1] - target) / np.linalg.norm(target))
    bucket_feature = table.params.view()[
        fixture.bucket + table.offsets[0]].copy()
    return FixtureResult(p1=p1, p2=p2, reconstruction_rel_error=rel,
                         bucket_feature=bucket_feature, sparsity=float(s),
                         gamma=float(pruner.gamma))
