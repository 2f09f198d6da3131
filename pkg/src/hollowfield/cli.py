"""Command-line surface: train, render, eval, slice, info, gen.

Every command echoes its effective configuration as JSON (and writes it
beside its outputs), so two runs with identical echoed configs and seeds
produce identical primary outputs. Exit codes: 0 success, 1 usage or
config error, 2 data or integrity error, 3 numerical failure.

Heavy imports happen inside main() so --threads can pin the BLAS pool
via environment variables before numpy loads.
"""

from __future__ import annotations

import argparse
import copy
import json
import os
import sys


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # route usage errors to exit code 1
        raise _UsageError(message)


DESK_DEFAULTS = {
    "field": {
        "grid": {"levels": 6, "feature_dim": 2, "log2_table_size": 12,
                 "base_res": 16, "max_res": 128},
        "saliency_res": 16,
        "hidden": 64,
        "geo_features": 15,
        "scene_scale": 0.95 / 3.0,
        "scene_offset": [0.5, 0.5, 0.5],
        "seed": 0,
        "dtype": "float32",
    },
    "train": {
        "steps": 20_000, "lr": 1e-2, "rays_per_step": 256,
        "samples_per_ray": 48, "seed": 0, "gate_mode": "soft",
        "eval_interval": 2000, "lr_decay": 1.0,
        "adam_beta1": 0.9, "adam_beta2": 0.99, "adam_eps": 1e-15,
        "jitter": True,
    },
    "pruner": {"mode": "admm", "gamma": 0.0, "rho": 3e-2, "budget": 0.04,
               "lam": 0.0},
    "data": {"kind": "scene", "scene": "hollow_sphere", "path": None,
             "n_views": 16, "eval_views": 3, "resolution": 64,
             "n_dense": 512, "seed": 7},
}

PAPER_DEFAULTS = {
    "field": {
        "grid": {"levels": 16, "feature_dim": 2, "log2_table_size": 19,
                 "base_res": 16, "max_res": 1024},
        "saliency_res": 64,
        "hidden": 64,
        "geo_features": 15,
        "scene_scale": 0.95 / 3.0,
        "scene_offset": [0.5, 0.5, 0.5],
        "seed": 0,
        "dtype": "float32",
    },
    "train": {
        "steps": 300_000, "lr": 1e-2, "rays_per_step": 4096,
        "samples_per_ray": 128, "seed": 0, "gate_mode": "soft",
        "eval_interval": 10_000, "lr_decay": 1.0,
        "adam_beta1": 0.9, "adam_beta2": 0.99, "adam_eps": 1e-15,
        "jitter": True,
    },
    "pruner": {"mode": "admm", "gamma": 0.0, "rho": 1e-3, "budget": 0.04,
               "lam": 0.0},
    "data": {"kind": "files", "scene": None, "path": None,
             "n_views": 100, "eval_views": 8, "resolution": 800,
             "n_dense": 1024, "seed": 7},
}


def _deep_update(base: dict, extra: dict) -> dict:
    for k, v in extra.items():
        if isinstance(v, dict) and isinstance(base.get(k), dict):
            _deep_update(base[k], v)
        else:
            base[k] = v
    return base


def _set_dotted(cfg: dict, key: str, raw: str) -> None:
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    parts = key.split(".")
    node = cfg
    for p in parts[:-1]:
        if p not in node or not isinstance(node[p], dict):
            node[p] = {}
        node = node[p]
    node[parts[-1]] = value


def build_config(args) -> dict:
    cfg = copy.deepcopy(PAPER_DEFAULTS if getattr(args, "preset", "desk")
                        == "paper" else DESK_DEFAULTS)
    if getattr(args, "config", None):
        from .errors import DataError
        if not os.path.isfile(args.config):
            raise DataError(f"config file not found: {args.config}")
        with open(args.config) as f:
            try:
                _deep_update(cfg, json.load(f))
            except json.JSONDecodeError as e:
                raise DataError(f"malformed config {args.config}: {e}") from e
    for kv in getattr(args, "set", None) or []:
        if "=" not in kv:
            raise _UsageError(f"--set expects key=value, got {kv!r}")
        k, v = kv.split("=", 1)
        _set_dotted(cfg, k, v)
    # Direct ablation and convenience flags win over everything.
    if getattr(args, "pruner", None):
        cfg["pruner"]["mode"] = args.pruner
    if getattr(args, "gate", None):
        cfg["train"]["gate_mode"] = args.gate
    if getattr(args, "saliency", None):
        if args.saliency == "off":
            cfg["field"]["saliency_res"] = None
        elif cfg["field"]["saliency_res"] is None:
            cfg["field"]["saliency_res"] = 16
    for flag, path in (("steps", ("train", "steps")),
                       ("seed", ("train", "seed")),
                       ("lr", ("train", "lr")),
                       ("lam", ("pruner", "lam")),
                       ("budget", ("pruner", "budget")),
                       ("rho", ("pruner", "rho")),
                       ("data", ("data", "path")),
                       ("scene", ("data", "scene"))):
        val = getattr(args, flag, None)
        if val is not None:
            cfg[path[0]][path[1]] = val
    if getattr(args, "data", None):
        cfg["data"]["kind"] = "files"
    elif getattr(args, "scene", None):
        cfg["data"]["kind"] = "scene"
    return cfg


def _echo_config(cfg: dict, out_dir: str | None) -> None:
    text = json.dumps(cfg, indent=1, sort_keys=True)
    print(text)
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "effective_config.json"), "w") as f:
            f.write(text + "\n")


def _field_config(cfg: dict):
    from .hashgrid import HashGridConfig
    from .model import FieldConfig
    fc = dict(cfg["field"])
    fc["grid"] = HashGridConfig(**fc["grid"])
    fc["scene_offset"] = tuple(fc["scene_offset"])
    return FieldConfig(**fc)


def _load_datasets(cfg: dict):
    from .errors import ConfigError, DataError
    from .scene_io import gen_synthetic, load_transforms_json
    from .synthetic import make_scene
    data = cfg["data"]
    if data["kind"] == "scene":
        scene = make_scene(data["scene"])
        train = gen_synthetic(scene, data["n_views"], data["resolution"],
                              data["seed"], data["n_dense"], split="train")
        test = gen_synthetic(scene, data["eval_views"], data["resolution"],
                             data["seed"] + 1, data["n_dense"], split="test")
        return train, test
    path = data.get("path")
    if not path:
        raise ConfigError("no dataset: pass --data PATH or --scene NAME")
    if os.path.isdir(path):
        train_path = os.path.join(path, "transforms_train.json")
        if not os.path.isfile(train_path):
            train_path = os.path.join(path, "transforms.json")
        test_path = os.path.join(path, "transforms_test.json")
    else:
        train_path, test_path = path, None
    if not os.path.isfile(train_path):
        raise DataError(f"no transforms json found under {path}")
    train = load_transforms_json(train_path, split="train")
    test = (load_transforms_json(test_path, split="test")
            if test_path and os.path.isfile(test_path) else None)
    return train, test


def cmd_train(args) -> int:
    from .training import PrunerState, TrainConfig, evaluate, train_loop
    cfg = build_config(args)
    _echo_config(cfg, args.out)
    field_cfg = _field_config(cfg)
    train_cfg = TrainConfig(**cfg["train"])
    pruner = PrunerState(**cfg["pruner"])
    train_ds, test_ds = _load_datasets(cfg)
    model, metrics = train_loop(train_ds, train_cfg, pruner, field_cfg,
                                eval_ds=test_ds, out_dir=args.out,
                                log_every=args.log_every)
    final = {"checkpoint": os.path.join(args.out, "checkpoint.hnrf"),
             "final_sparsity": (model.sparsity()
                                if model.saliency is not None else None),
             "gamma": pruner.gamma,
             "metrics": metrics[-1] if metrics else None}
    if test_ds is not None:
        final["test"] = {k: v for k, v in
                         evaluate(model, test_ds, train_cfg,
                                  epoch=cfg["train"]["steps"]).items()
                         if k != "per_view"}
    report_path = os.path.join(args.out, "final_report.json")
    with open(report_path, "w") as f:
        json.dump(final, f, indent=1)
    print(json.dumps(final, indent=1))
    return 0


def _parse_slice_plane(spec: str):
    from .errors import ConfigError
    try:
        axis_s, value_s, keep = spec.split(":")
        axis, value = int(axis_s), float(value_s)
    except ValueError as e:
        raise ConfigError(
            f"--slice-plane expects AXIS:VALUE:below|above, got {spec!r}") from e
    if axis not in (0, 1, 2) or keep not in ("below", "above"):
        raise ConfigError(f"bad slice plane {spec!r}")
    return axis, value, keep


def cmd_render(args) -> int:
    import numpy as np
    from .decoder import GateConfig
    from .errors import ConfigError, DataError
    from .render import Camera, render_image
    from .scene_io import load_checkpoint, load_transforms_json, write_png

    model, pruner_state, header = load_checkpoint(args.checkpoint)
    os.makedirs(args.out, exist_ok=True)
    tc = header.get("train_config") or {}
    gate = GateConfig(mode=args.gate or tc.get("gate_mode", "soft"),
                      alpha=1e5)
    samples = args.samples or tc.get("samples_per_ray", 64)
    background = np.asarray(args.background, dtype=np.float32)

    cams = []
    names = []
    near, far = args.near, args.far
    if args.pose:
        if not os.path.isfile(args.pose):
            raise DataError(f"pose file not found: {args.pose}")
        with open(args.pose) as f:
            try:
                spec = json.load(f)
            except json.JSONDecodeError as e:
                raise DataError(f"malformed pose file: {e}") from e
        entries = spec if isinstance(spec, list) else [spec]
        for i, e in enumerate(entries):
            try:
                cams.append(Camera.from_angle(
                    int(e["width"]), int(e["height"]),
                    float(e["camera_angle_x"]),
                    np.asarray(e["transform_matrix"], dtype=np.float64)))
            except (KeyError, TypeError, ValueError) as err:
                raise DataError(f"pose entry {i} invalid: {err}") from err
            names.append(f"pose_{i:03d}")
    elif args.data:
        ds = load_transforms_json(args.data)
        near, far = ds.near, ds.far
        idx = args.view if args.view is not None else 0
        if not 0 <= idx < len(ds.frames):
            raise ConfigError(f"view index {idx} out of range")
        cams.append(ds.frames[idx].camera)
        names.append(f"view_{idx:03d}")
    else:
        raise ConfigError("cmd_render needs --pose FILE or --data PATH")

    q = model.eval_query(gate, skip_threshold=args.skip_threshold)
    if args.slice_plane:
        axis, value, keep = _parse_slice_plane(args.slice_plane)
        inner = q

        def q(pos, dirs, _inner=inner):
            sigma, rgb = _inner(pos, dirs)
            outside = pos[:, axis] > value if keep == "below" \
                else pos[:, axis] < value
            return np.where(outside, 0.0, sigma).astype(sigma.dtype), rgb

    outputs = []
    for cam, name in zip(cams, names):
        img = render_image(q, cam, near, far, samples, background)
        out_path = os.path.join(args.out, f"{name}.png")
        write_png(np.clip(img, 0.0, 1.0), out_path)
        outputs.append(out_path)
        print(f"wrote {out_path}")
    with open(os.path.join(args.out, "render_report.json"), "w") as f:
        json.dump({"checkpoint": args.checkpoint, "outputs": outputs,
                   "samples": samples, "near": near, "far": far}, f, indent=1)
    return 0


def cmd_eval(args) -> int:
    from .scene_io import load_checkpoint, load_transforms_json
    from .training import TrainConfig, evaluate

    model, _, header = load_checkpoint(args.checkpoint)
    ds = load_transforms_json(args.data, split=args.split)
    if not ds.frames:
        from .errors import DataError
        raise DataError("evaluation split is empty")
    tc_dict = dict(header.get("train_config") or {})
    tc_dict.setdefault("gate_mode", "soft")
    tc = TrainConfig(**{k: v for k, v in tc_dict.items()
                        if k in TrainConfig.__dataclass_fields__})
    if args.samples:
        tc.samples_per_ray = args.samples
    result = evaluate(model, ds, tc, epoch=header.get("epoch", 0),
                      skip_threshold=args.skip_threshold)
    text = json.dumps(result, indent=1)
    print(text)
    if args.out:
        os.makedirs(os.path.dirname(os.path.abspath(args.out)), exist_ok=True)
        with open(args.out, "w") as f:
            f.write(text + "\n")
    return 0


def cmd_slice(args) -> int:
    from .errors import ConfigError
    from .saliency import slice_export
    from .scene_io import load_checkpoint, write_png

    model, _, _ = load_checkpoint(args.checkpoint)
    if model.saliency is None:
        raise ConfigError(
            "checkpoint was trained without a saliency grid; nothing to slice")
    img = slice_export(model.saliency, args.axis, args.index)
    write_png(img, args.out)
    print(f"wrote {args.out} (grid {model.saliency.resolution}^3, "
          f"axis {args.axis}, index {args.index})")
    return 0


def cmd_info(args) -> int:
    from .hashgrid import DecoderLayout, HashGridConfig, param_count
    cfg = build_config(args)
    gc = dict(cfg["field"]["grid"])
    layout = DecoderLayout(hidden=cfg["field"]["hidden"],
                           geo_features=cfg["field"]["geo_features"])
    records = []
    if args.sweep:
        for log2 in range(14, 20):
            for label, T in (("baseline", None), ("T=64", 64),
                             ("T=96", 96), ("T=128", 128)):
                c = HashGridConfig(**{**gc, "log2_table_size": log2,
                                      "levels": 16, "max_res": 1024})
                counts = param_count(c, layout, T)
                records.append({"log2_table_size": log2, "variant": label,
                                "saliency_res": T, **counts})
    else:
        c = HashGridConfig(**gc)
        counts = param_count(c, layout, cfg["field"]["saliency_res"])
        records.append({"log2_table_size": gc["log2_table_size"],
                        "variant": "configured",
                        "saliency_res": cfg["field"]["saliency_res"], **counts})
    print(f"{'table':>7} {'variant':>10} {'hashgrid':>12} {'mlp':>8} "
          f"{'saliency':>10} {'total':>12} {'total(M)':>9}")
    for r in records:
        print(f"{'2^' + str(r['log2_table_size']):>7} {r['variant']:>10} "
              f"{r['hashgrid']:>12,} {r['mlp']:>8,} {r['saliency']:>10,} "
              f"{r['total']:>12,} {r['total'] / 1e6:>9.2f}")
    if args.out:
        with open(args.out, "w") as f:
            json.dump(records, f, indent=1)
    return 0


def cmd_gen(args) -> int:
    from .scene_io import gen_synthetic, save_dataset
    from .synthetic import make_scene

    scene = make_scene(args.scene)
    os.makedirs(args.out, exist_ok=True)
    written = {}
    for split, n, seed in (("train", args.views, args.seed),
                           ("test", args.eval_views, args.seed + 1)):
        if n <= 0:
            continue
        ds = gen_synthetic(scene, n, args.resolution, seed,
                           n_dense=args.n_dense, split=split)
        out_dir = os.path.join(args.out, split)
        path = save_dataset(ds, out_dir)
        written[split] = path
        print(f"wrote {n} {split} views to {path}")
    with open(os.path.join(args.out, "gen_report.json"), "w") as f:
        json.dump({"scene": args.scene, "resolution": args.resolution,
                   "seed": args.seed, "splits": written}, f, indent=1)
    return 0


def _add_config_flags(p):
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--preset", choices=("desk", "paper"), default="desk")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="dotted-key config override, repeatable")
    p.add_argument("--pruner", choices=("none", "l1", "admm"))
    p.add_argument("--gate", choices=("none", "hard", "soft"))
    p.add_argument("--saliency", choices=("on", "off"))
    p.add_argument("--steps", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--lam", type=float)
    p.add_argument("--budget", type=float)
    p.add_argument("--rho", type=float)


def make_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="hollowfield",
                     description="Saliency-pruned hash-grid radiance fields")
    parser.add_argument("--threads", type=int,
                        default=int(os.environ.get("HOLLOWFIELD_THREADS", "1")),
                        help="BLAS thread cap; 1 forces deterministic mode")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model")
    _add_config_flags(p)
    p.add_argument("--data", help="transforms.json path or dataset dir")
    p.add_argument("--scene", help="procedural scene name")
    p.add_argument("--out", required=True)
    p.add_argument("--log-every", type=int, default=0)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("render", help="render views from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--pose", help="JSON camera spec file")
    p.add_argument("--data", help="render a dataset view instead")
    p.add_argument("--view", type=int, help="dataset view index")
    p.add_argument("--samples", type=int)
    p.add_argument("--near", type=float, default=2.0)
    p.add_argument("--far", type=float, default=6.0)
    p.add_argument("--gate", choices=("none", "hard", "soft"))
    p.add_argument("--background", type=float, nargs=3,
                   default=(1.0, 1.0, 1.0))
    p.add_argument("--skip-threshold", type=float,
                   help="skip decoder where saliency falls below this")
    p.add_argument("--slice-plane", metavar="AXIS:VALUE:below|above",
                   help="clip samples beyond a world-space plane")
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="transforms.json path")
    p.add_argument("--split", default="test")
    p.add_argument("--samples", type=int)
    p.add_argument("--skip-threshold", type=float)
    p.add_argument("--out", help="write metrics JSON here too")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("slice", help="export a saliency-grid slice image")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--axis", type=int, required=True)
    p.add_argument("--index", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_slice)

    p = sub.add_parser("info", help="parameter accounting")
    _add_config_flags(p)
    p.add_argument("--sweep", action="store_true",
                   help="tabulate table sizes 2^14..2^19 x saliency variants")
    p.add_argument("--out", help="write the table as JSON here")
    p.set_defaults(func=cmd_info)

    p = sub.add_parser("gen", help="generate a synthetic dataset")
    p.add_argument("--scene", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--views", type=int, default=16)
    p.add_argument("--eval-views", type=int, default=3)
    p.add_argument("--resolution", type=int, default=64)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--n-dense", type=int, default=512)
    p.set_defaults(func=cmd_gen)
    return parser


def main(argv=None) -> int:
    parser = make_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 1
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(var, str(args.threads))
    try:
        return args.func(args)
    except _UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 1
    except Exception as e:  # map package errors to exit codes
        from .errors import ConfigError, DataError, NumericalError
        if isinstance(e, ConfigError):
            print(f"config error: {e}", file=sys.stderr)
            return 1
        if isinstance(e, DataError):
            print(f"data error: {e}", file=sys.stderr)
            return 2
        if isinstance(e, NumericalError):
            print(f"numerical error: {e}", file=sys.stderr)
            return 3
        raise


if __name__ == "__main__":
    sys.exit(main())
