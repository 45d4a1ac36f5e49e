"""Command-line entry point.

Subcommands: gen-data, mask, recon, train, eval, sweep, plot. Every run
prints its resolved configuration (config key=value lines). Config precedence
for train: built-in defaults < --config file < flags/--set; the DAWGAN_SEED
environment variable overrides the seed everywhere. Exit codes: 0 success,
1 domain/configuration errors, 2 I/O and file-format errors.
"""

import argparse
import math
import os
import sys

import numpy as np

from . import evaluation, plots
from .errors import (ConfigurationError, DegenerateInputError, DomainError, FormatError,
                     InsufficientTextureError, NumericalError, ShapeError)
from .kspace import make_mask, resolve_mask_kind, save_mask
from .phantom import DatasetSplit, generate_phantom_volume, load_volume, save_volume
from .training import (TrainConfig, config_from_flat, config_to_flat, enable_determinism,
                       load_checkpoint, read_config_file, train)

SEED_ENV_VAR = "DAWGAN_SEED"


def _print_config(pairs):
    for key in sorted(pairs):
        print(f"config {key}={pairs[key]}")


def _seed_override(seed):
    env = os.environ.get(SEED_ENV_VAR)
    if env is None:
        return seed
    try:
        return int(env)
    except ValueError as exc:
        raise ConfigurationError(f"{SEED_ENV_VAR} must be an integer, got {env!r}") from exc


def _derive_seed(*parts):
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


def _parse_shape(text):
    try:
        h, w = (int(p) for p in text.lower().split("x"))
    except ValueError as exc:
        raise ConfigurationError(f"shape must look like 256x256, got {text!r}") from exc
    return h, w


def _parse_floats(text):
    try:
        return tuple(float(p) for p in text.split(",") if p != "")
    except ValueError as exc:
        raise ConfigurationError(f"expected comma-separated numbers, got {text!r}") from exc


# -- data directory layout -------------------------------------------------------


def _volume_path(data_dir, index):
    return os.path.join(data_dir, f"volume_{index:03d}.bin")


def _load_data_dir(data_dir):
    """Returns (volumes dict, DatasetSplit or None) from a gen-data directory."""
    volumes = {}
    index = 0
    while os.path.exists(_volume_path(data_dir, index)):
        volumes[index] = load_volume(_volume_path(data_dir, index))
        index += 1
    if not volumes:
        raise FormatError(f"no volume_NNN.bin files found in {data_dir}")
    split = None
    split_path = os.path.join(data_dir, "splits.txt")
    if os.path.exists(split_path):
        fields = {}
        with open(split_path, "r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if line and "=" in line:
                    key, value = line.split("=", 1)
                    fields[key] = value
        def ids(key):
            return [int(x) for x in fields.get(key, "").split(",") if x != ""]
        split = DatasetSplit(
            train=ids("train"), val=ids("val"), test=ids("test"),
            fractions=tuple(float(x) for x in fields.get("fractions", "0,0,0").split(",")),
            seed=int(fields.get("seed", "0")),
        )
    return volumes, split


# -- subcommands ------------------------------------------------------------------


def _cmd_gen_data(args):
    from .phantom import split_dataset
    seed = _seed_override(args.seed)
    _print_config({
        "n_volumes": args.n_volumes, "slices": args.slices, "size": args.size,
        "fractions": args.fractions, "seed": seed, "out": args.out,
    })
    fractions = _parse_floats(args.fractions)
    if len(fractions) != 3:
        raise ConfigurationError(f"fractions needs three values, got {args.fractions!r}")
    os.makedirs(args.out, exist_ok=True)
    for i in range(args.n_volumes):
        vol_seed = _derive_seed(seed, i)
        volume = generate_phantom_volume(args.slices, args.size, seed=vol_seed)
        save_volume(volume, _volume_path(args.out, i), seed=vol_seed)
    split = split_dataset(list(range(args.n_volumes)), fractions, seed=seed)
    lines = [
        "train=" + ",".join(str(i) for i in split.train),
        "val=" + ",".join(str(i) for i in split.val),
        "test=" + ",".join(str(i) for i in split.test),
        "fractions=" + ",".join(repr(f) for f in fractions),
        f"seed={seed}",
    ]
    from .fileio import write_bytes_atomic
    write_bytes_atomic(os.path.join(args.out, "splits.txt"), ("\n".join(lines) + "\n").encode())
    print(f"wrote {args.n_volumes} volumes to {args.out}")


def _cmd_mask(args):
    seed = _seed_override(args.seed)
    _print_config({"shape": args.shape, "ratio": args.ratio, "kind": args.kind,
                   "center_fraction": args.center_fraction, "seed": seed, "out": args.out})
    shape = _parse_shape(args.shape)
    mask = make_mask(shape, args.ratio, args.kind, args.center_fraction, seed=seed)
    save_mask(mask, args.out)
    realized = float(mask.data.mean())
    print(f"mask written to {args.out} (realized ratio {realized:.4f})")


def _cmd_recon(args):
    seed = _seed_override(args.seed)
    _print_config({"method": args.method, "volume": args.volume, "ratio": args.ratio,
                   "kind": args.kind, "noise_sigma": args.noise_sigma, "seed": seed,
                   "checkpoint": args.checkpoint, "out": args.out})
    resolve_mask_kind(args.kind)
    volume = load_volume(args.volume)
    checkpoints = None
    window_T = 3
    if args.method not in evaluation.BASELINE_METHODS:
        if args.checkpoint is None:
            raise ConfigurationError(f"method {args.method!r} needs --checkpoint")
        ckpt = load_checkpoint(args.checkpoint)
        checkpoints = {args.method: ckpt}
        window_T = ckpt.cfg.generator.window_T
    report = evaluation.run_comparison(
        [args.method], {0: volume}, split=None, ratios=(args.ratio,), seed=seed,
        noise_sigma=args.noise_sigma, checkpoints=checkpoints, window_T=window_T,
        mask_kind=args.kind, center_fraction=args.center_fraction,
        dataset_id=os.path.basename(args.volume))
    mean, std, n = report.rows[(args.method, args.ratio, "psnr")]
    print(f"psnr_mean={'inf' if math.isinf(mean) else repr(mean)} psnr_std={repr(std)} n={n}")
    if args.out:
        report.to_csv(args.out)


def _train_config_from_args(args):
    cfg = TrainConfig()
    if args.config:
        cfg = config_from_flat(read_config_file(args.config), base=cfg)
    overrides = {}
    if args.steps is not None:
        overrides["max_generator_steps"] = str(args.steps)
    if args.ratio is not None:
        overrides["mask_ratio"] = repr(args.ratio)
    if args.noise_sigma is not None:
        overrides["noise_sigma"] = repr(args.noise_sigma)
    if args.seed is not None:
        overrides["seed"] = str(args.seed)
    for item in args.set or []:
        if "=" not in item:
            raise ConfigurationError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        overrides[key.strip()] = value.strip()
    cfg = config_from_flat(overrides, base=cfg)
    cfg.seed = _seed_override(cfg.seed)
    return cfg.validate()


def _cmd_train(args):
    cfg = _train_config_from_args(args)
    _print_config(config_to_flat(cfg))
    volumes, split = _load_data_dir(args.data)
    resume = load_checkpoint(args.resume) if args.resume else None
    ckpt, rows = train(cfg, volumes, split=split, out_dir=args.out, resume=resume)
    final = rows[-1] if rows else None
    if final is not None:
        print(f"finished at step {ckpt.step}: imse={final['imse']!r} total_rows={len(rows)}")
    else:
        print(f"finished at step {ckpt.step}: no generator steps taken")


def _parse_checkpoint_specs(specs, methods):
    checkpoints = {}
    for item in specs or []:
        if "=" in item:
            name, path = item.split("=", 1)
        else:
            name, path = "dawgan", item
        checkpoints[name] = load_checkpoint(path)
    for m in methods:
        if m not in evaluation.BASELINE_METHODS and m not in checkpoints:
            raise ConfigurationError(f"method {m!r} needs a checkpoint (--checkpoint {m}=PATH)")
    return checkpoints or None


def _eval_common(args):
    seed = _seed_override(args.seed)
    methods = [m for m in args.methods.split(",") if m]
    if not methods:
        raise ConfigurationError("--methods must name at least one method")
    ratios = _parse_floats(args.ratios)
    volumes, split = _load_data_dir(args.data)
    checkpoints = _parse_checkpoint_specs(args.checkpoint, methods)
    window_T = 3
    if checkpoints:
        window_T = next(iter(checkpoints.values())).cfg.generator.window_T
    return seed, methods, ratios, volumes, split, checkpoints, window_T


def _cmd_eval(args):
    seed, methods, ratios, volumes, split, checkpoints, window_T = _eval_common(args)
    _print_config({"methods": args.methods, "ratios": args.ratios, "data": args.data,
                   "noise_sigma": args.noise_sigma, "kind": args.kind, "seed": seed,
                   "out": args.out})
    os.makedirs(args.out, exist_ok=True)
    csv_path = os.path.join(args.out, "comparison.csv")
    report = evaluation.run_comparison(
        methods, volumes, split=split, ratios=ratios, seed=seed,
        noise_sigma=args.noise_sigma, checkpoints=checkpoints, window_T=window_T,
        mask_kind=args.kind, center_fraction=args.center_fraction, csv_path=csv_path)
    for (method, ratio, metric) in sorted(report.rows):
        mean, std, n = report.rows[(method, ratio, metric)]
        print(f"{method} ratio={ratio:g} {metric}: mean={mean:.4f} std={std:.4f} n={n}")
    print(f"comparison CSV written to {csv_path}")


def _cmd_sweep(args):
    seed, methods, ratios, volumes, split, checkpoints, window_T = _eval_common(args)
    sigmas = _parse_floats(args.sigmas)
    _print_config({"methods": args.methods, "ratios": args.ratios, "sigmas": args.sigmas,
                   "data": args.data, "kind": args.kind, "seed": seed, "out": args.out})
    sweep = evaluation.run_noise_sweep(
        methods, volumes, split=split, ratios=ratios, sigma_grid=sigmas, seed=seed,
        checkpoints=checkpoints, window_T=window_T, mask_kind=args.kind,
        center_fraction=args.center_fraction, out_dir=args.out)
    print(f"sweep CSV and charts written to {args.out} "
          f"({len(sweep.rows)} method/ratio/sigma cells)")


def _cmd_plot(args):
    _print_config({"csv": args.csv, "kind": args.kind, "out": args.out})
    if args.kind == "noise-sweep":
        written = plots.plot_noise_sweep(args.csv, args.out)
    else:
        written = plots.plot_comparison(args.csv, args.out)
    for path in written:
        print(f"wrote {path}")


# -- parser / dispatch -------------------------------------------------------------


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--deterministic", action="store_true",
                        help="single-threaded deterministic math")

    parser = argparse.ArgumentParser(prog="dawgan",
                                     description="compressed-sensing MRI reconstruction workbench")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", parents=[common], help="generate a phantom volume set")
    p.add_argument("--out", required=True)
    p.add_argument("--n-volumes", type=int, default=10)
    p.add_argument("--slices", type=int, default=6)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--fractions", default="0.8,0.1,0.1")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_gen_data)

    p = sub.add_parser("mask", parents=[common], help="draw a sampling mask")
    p.add_argument("--shape", required=True)
    p.add_argument("--ratio", type=float, required=True)
    p.add_argument("--kind", default="cartesian-1d-gaussian")
    p.add_argument("--center-fraction", type=float, default=0.04)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_mask)

    p = sub.add_parser("recon", parents=[common], help="reconstruct one volume, report PSNR")
    p.add_argument("--method", required=True)
    p.add_argument("--volume", required=True)
    p.add_argument("--ratio", type=float, required=True)
    p.add_argument("--kind", default="cartesian-1d-gaussian")
    p.add_argument("--center-fraction", type=float, default=0.04)
    p.add_argument("--noise-sigma", type=float, default=0.0)
    p.add_argument("--checkpoint")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="optional metrics CSV path")
    p.set_defaults(func=_cmd_recon)

    p = sub.add_parser("train", parents=[common], help="train the adversarial model")
    p.add_argument("--config", help="flat key=value config file")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--steps", type=int)
    p.add_argument("--ratio", type=float)
    p.add_argument("--noise-sigma", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override any config key (repeatable)")
    p.set_defaults(func=_cmd_train)

    for name, fn in (("eval", _cmd_eval), ("sweep", _cmd_sweep)):
        p = sub.add_parser(name, parents=[common],
                           help="comparison metrics" if name == "eval" else "noise sweep")
        p.add_argument("--data", required=True)
        p.add_argument("--out", required=True)
        p.add_argument("--methods", default="zero-fill,admm-tv")
        p.add_argument("--ratios", default="0.1,0.3,0.5")
        p.add_argument("--kind", default="cartesian-1d-gaussian")
        p.add_argument("--center-fraction", type=float, default=0.04)
        p.add_argument("--checkpoint", action="append", metavar="NAME=PATH")
        p.add_argument("--seed", type=int, default=0)
        if name == "eval":
            p.add_argument("--noise-sigma", type=float, default=0.0)
        else:
            p.add_argument("--sigmas", default="0.0,0.01,0.05,0.1")
        p.set_defaults(func=fn)

    p = sub.add_parser("plot", parents=[common], help="render charts from a harness CSV")
    p.add_argument("--csv", required=True)
    p.add_argument("--kind", choices=("comparison-table", "noise-sweep"), required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_plot)
    return parser


def dispatch(argv):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 1
    try:
        if args.deterministic:
            enable_determinism()
        args.func(args)
        return 0
    except FormatError as exc:
        print(f"error: FormatError: {_one_line(exc)}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {type(exc).__name__}: {_one_line(exc)}", file=sys.stderr)
        return 2
    except (DomainError, ShapeError, ConfigurationError, DegenerateInputError,
            NumericalError, InsufficientTextureError, ValueError, RuntimeError) as exc:
        print(f"error: {type(exc).__name__}: {_one_line(exc)}", file=sys.stderr)
        return 1


def _one_line(exc):
    return " ".join(str(exc).split())


def main():
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
