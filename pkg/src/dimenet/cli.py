"""Command line entry point: ``dimenet {simulate,train,infer,eval,ablate}``.

Exit codes: 0 success, 2 invalid input (bad flags, unreadable or malformed
files, dimension mismatches), 3 numerical failure (non-convergence, singular
systems, non-finite losses).

Every flag can also come from a JSON file given with ``--config``; keys are
flag names with dashes replaced by underscores. Explicit flags win.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict

import numpy as np

from .errors import DimeError
from .evaluation import AblationSpec, ablation_table, ablation_to_csv, evaluate, run_ablation
from .features import FEATURE_MASKS, GridConfig
from .io import dataset_from_frames, read_dataset, write_dataset
from .mlp import load_model, save_model
from .simulator import (
    IMAGE_SIZE,
    ManifoldConfig,
    RigSpec,
    ViewConfig,
    drop_cells,
    drop_points,
    inject_noise,
    simulate_dataset,
)
from .training import TrainConfig, TrainSample, default_model, infer_k, train, write_curve_csv

log = logging.getLogger("dimenet")

EXIT_OK, EXIT_INVALID, EXIT_NUMERIC = 0, 2, 3


class UsageError(ValueError):
    pass


def _grid(text: str) -> GridConfig:
    try:
        g = GridConfig.parse(text, IMAGE_SIZE)
    except ValueError:
        raise argparse.ArgumentTypeError(f"grid must look like UxV, got {text!r}") from None
    return g


def _common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="JSON file with default values for any flag")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--grid", type=_grid, default=GridConfig(), help="UxV: columns x rows (default 8x6)")
    p.add_argument("-v", "--verbose", action="store_true")


def _dataset_flags(p):
    p.add_argument("--drop-eta", type=float, default=0.0, help="fraction of occupied cells to empty")
    p.add_argument("--noise-2d", type=float, default=0.0, help="pixel noise std, px")
    p.add_argument("--noise-3d", type=float, default=0.0, help="3D point noise std, mm")
    p.add_argument("--points", type=int, default=None, help="keep this many correspondences per frame")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dimenet", description=__doc__.split("\n")[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a synthetic rig dataset")
    _common(p)
    _dataset_flags(p)
    p.add_argument("--frames", type=int, default=250)
    p.add_argument("--out", required=True, help="dataset JSON path")

    p = sub.add_parser("train", help="train the ΔK regressor through the PnP layer")
    _common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--epochs", type=int, default=TrainConfig.epochs)
    p.add_argument("--learning-rate", type=float, default=TrainConfig.learning_rate)
    p.add_argument("--batch-size", type=int, default=TrainConfig.batch_size)
    p.add_argument("--feature-mask", choices=sorted(FEATURE_MASKS), default="A")
    p.add_argument("--val-data", help="separate validation dataset (default: split off 20%%)")
    p.add_argument("--curve", help="write the training curve CSV here")
    p.add_argument("--out", required=True, help="model checkpoint path")

    p = sub.add_parser("infer", help="predict rectified intrinsics per frame")
    _common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", help="write predictions as JSON")

    p = sub.add_parser("eval", help="reprojection-error report for a model (or K_c without one)")
    _common(p)
    _dataset_flags(p)
    p.add_argument("--model")
    p.add_argument("--data", required=True)
    p.add_argument("--out", help="report path stem; writes <stem>.json and <stem>.csv")

    p = sub.add_parser("ablate", help="grid-resolution / occupancy and feature-mask ablations")
    _common(p)
    p.add_argument("--data", required=True, help="training dataset")
    p.add_argument("--test-data", required=True)
    p.add_argument("--epochs", type=int, default=TrainConfig.epochs)
    p.add_argument("--grids", default="16x12,12x9,8x6")
    p.add_argument("--etas", default="0,0.2,0.4,0.6,0.8")
    p.add_argument("--masks", default="A,B,C,D,E")
    p.add_argument("--out", help="table path stem; writes <stem>.csv and <stem>.json")
    return ap


def parse_args(argv=None) -> argparse.Namespace:
    ap = build_parser()
    args = ap.parse_args(argv)
    if getattr(args, "config", None):
        with open(args.config) as fh:
            cfg = json.load(fh)
        if not isinstance(cfg, dict):
            raise UsageError("config file must hold a JSON object")
        sub = ap._subparsers._group_actions[0].choices[args.command]
        known = {a.dest for a in sub._actions}
        unknown = set(cfg) - known
        if unknown:
            raise UsageError(f"unknown config keys: {', '.join(sorted(unknown))}")
        if "grid" in cfg:
            cfg["grid"] = _grid(cfg["grid"])
        sub.set_defaults(**cfg)
        args = ap.parse_args(argv)
    return args


def _perturb(frames, args, rng):
    out = []
    for f in frames:
        if args.noise_2d or args.noise_3d:
            f = inject_noise(f, args.noise_2d, args.noise_3d, rng)
        if args.points is not None:
            f = drop_points(f, args.points, rng)
        if args.drop_eta:
            f = drop_cells(f, args.grid, args.drop_eta, rng)
        out.append(f)
    return out


def _echo(args) -> dict:
    d = {}
    for k, v in sorted(vars(args).items()):
        if k in ("config", "verbose", "out", "curve"):
            continue
        d[k] = v.label() if isinstance(v, GridConfig) else v
    return d


def cmd_simulate(args):
    rig, mcfg, vcfg = RigSpec(), ManifoldConfig(), ViewConfig()
    kc, frames = simulate_dataset(args.frames, args.seed, rig=rig, mcfg=mcfg, vcfg=vcfg)
    rng = np.random.default_rng(np.random.SeedSequence([args.seed, 0x5EED]))
    frames = _perturb(frames, args, rng)
    header = {
        "rig": json.loads(json.dumps(asdict(rig), default=float)),
        "rig_hash": rig.digest(),
        "simulator": {"manifold": asdict(mcfg), "view": asdict(vcfg), **_echo(args)},
    }
    write_dataset(dataset_from_frames(kc, frames, IMAGE_SIZE, header), args.out)
    print(f"wrote {len(frames)} frames to {args.out}  K_c = {kc.as_array().tolist()}")


def _samples(ds):
    return [TrainSample(f.corrs, f.kc, f.k_true) for f in ds.frames]


def cmd_train(args):
    ds = read_dataset(args.data)
    val = _samples(read_dataset(args.val_data)) if args.val_data else None
    tcfg = TrainConfig(epochs=args.epochs, learning_rate=args.learning_rate, batch_size=args.batch_size,
                       seed=args.seed, feature_mask=args.feature_mask)
    res = train(default_model(args.grid, args.seed), _samples(ds), args.grid, tcfg, val_dataset=val)
    save_model(res.model, args.out)
    if args.curve:
        write_curve_csv(res.curve, args.curve)
    print("epoch  train_loss  val_avg_e")
    for e, tl, ve in res.curve:
        print(f"{e:5d}  {tl:10.4f}  {ve:9.4f}")
    print(f"best epoch {res.best_epoch}; model written to {args.out}")


def _check_model_grid(model, grid):
    if model.layer_dims[0] != grid.feature_dim:
        raise UsageError(f"model expects {model.layer_dims[0]} inputs but grid {grid.label()} gives {grid.feature_dim}")


def cmd_infer(args):
    model, ds = load_model(args.model), read_dataset(args.data)
    _check_model_grid(model, args.grid)
    rows = []
    print("frame        fx          fy          cx          cy")
    for i, f in enumerate(ds.frames):
        k = infer_k(model, f.kc, f.corrs, args.grid)
        rows.append({"frame": i, "fx": k.fx, "fy": k.fy, "cx": k.cx, "cy": k.cy})
        print(f"{i:5d} {k.fx:11.4f} {k.fy:11.4f} {k.cx:11.4f} {k.cy:11.4f}")
    if args.out:
        with open(args.out, "w") as fh:
            json.dump({"kc": ds.kc.as_array().tolist(), "predictions": rows}, fh, indent=1)
            fh.write("\n")


def cmd_eval(args):
    ds = read_dataset(args.data)
    model = load_model(args.model) if args.model else None
    if model is not None:
        _check_model_grid(model, args.grid)
    rng = np.random.default_rng(np.random.SeedSequence([args.seed, 0xE7A1]))
    frames = _perturb(ds.frames, args, rng)
    report = evaluate(model, frames, args.grid, config={**_echo(args), "model": args.model})
    print(report.summary())
    if args.out:
        paths = report.write(args.out)
        print("wrote " + ", ".join(paths))


def cmd_ablate(args):
    train_s = _samples(read_dataset(args.data))
    test = read_dataset(args.test_data).frames
    spec = AblationSpec(
        grids=tuple(s.strip() for s in args.grids.split(",") if s.strip()),
        etas=tuple(float(s) for s in args.etas.split(",") if s.strip()),
        masks=tuple(s.strip() for s in args.masks.split(",") if s.strip()),
        mask_grid=args.grid.label(),
        seed=args.seed,
    )
    models = {}
    for label in spec.grids:
        g = GridConfig.parse(label)
        tcfg = TrainConfig(epochs=args.epochs, seed=args.seed)
        log.info("training grid %s", label)
        models[("grid", label)] = train(default_model(g, args.seed), train_s, g, tcfg).model
    for name in spec.masks:
        if name == "A" and ("grid", spec.mask_grid) in models:
            models[("mask", name)] = models[("grid", spec.mask_grid)]
            continue
        tcfg = TrainConfig(epochs=args.epochs, seed=args.seed, feature_mask=name)
        log.info("training mask %s", name)
        models[("mask", name)] = train(default_model(args.grid, args.seed), train_s, args.grid, tcfg).model
    rows = run_ablation(spec, test, models)
    print(ablation_table(rows))
    if args.out:
        stem = args.out[:-4] if args.out.endswith((".csv", ".json")) else args.out
        with open(stem + ".csv", "w") as fh:
            fh.write(ablation_to_csv(rows))
        with open(stem + ".json", "w") as fh:
            json.dump({"config": _echo(args), "rows": rows}, fh, indent=1, sort_keys=True)
            fh.write("\n")


COMMANDS = {"simulate": cmd_simulate, "train": cmd_train, "infer": cmd_infer, "eval": cmd_eval, "ablate": cmd_ablate}


def main(argv=None) -> int:
    try:
        args = parse_args(argv)
    except SystemExit as exc:  # argparse usage errors
        return EXIT_INVALID if exc.code else EXIT_OK
    except (UsageError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        COMMANDS[args.command](args)
    except (ArithmeticError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DimeError, ValueError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
