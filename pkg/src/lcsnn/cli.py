"""Command-line surface: train, eval, robustness, sweep, export-filters.

Every command writes its fully resolved configuration next to its
outputs, so any artifact can be reproduced from the directory alone.
Exit codes: 0 success, 2 configuration errors (flags, geometry, missing
classifier state), 3 data/format errors (IDX files, checkpoints).
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import itertools
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import config as config_mod
from . import engine, robustness
from .data import (
    Dataset,
    DatasetConsistencyError,
    IdxFormatError,
    crop_dataset,
    load_split,
)
from .engine import CheckpointFormatError, Checkpoint, ConfigurationError
from .topology import GeometryError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3

_METHOD_CHOICES = ("ngram", "multi-ngram", "multi-sum", "activity", "all")

# (flag, dest, type, help); every train flag overrides the config-file field
_TRAIN_FLAGS = [
    ("--dataset", "dataset", str, "dataset name: mnist or emnist-letters"),
    ("--data-dir", "data_dir", str, "directory holding the IDX files"),
    ("--crop", "crop", int, "center-crop size in pixels"),
    ("--arch", "arch", str, "topology: lc or baseline"),
    ("--k", "k", int, "receptive-field size"),
    ("--s", "s", int, "receptive-field stride"),
    ("--filters", "n_filters", int, "filters per receptive field"),
    ("--neurons", "n_neurons", int, "output neurons (baseline only)"),
    ("--inhib-weight", "inhib_weight", float, "lateral inhibition strength (mV)"),
    ("--w-init-max", "w_init_max", float, "uniform init upper bound"),
    ("--theta-plus", "theta_plus", float, "per-spike threshold increment (mV)"),
    ("--tau-theta", "tau_theta", float, "threshold decay constant (ms)"),
    ("--eta-post", "eta_post", float, "potentiation rate"),
    ("--eta-pre", "eta_pre", float, "depression rate"),
    ("--tau-trace", "tau_trace", float, "STDP trace decay constant (ms)"),
    ("--w-max", "w_max", float, "weight clip bound"),
    ("--c-norm", "c_norm", float, "per-neuron incoming weight sum target"),
    ("--lr-decay", "lr_decay", float, "per-example learning-rate decay"),
    ("--present-ms", "present_ms", float, "presentation duration (ms)"),
    ("--dt", "dt", float, "simulation timestep (ms)"),
    ("--epochs", "epochs", int, "passes over the training set"),
    ("--seed", "seed", int, "master seed"),
    ("--estimate-every", "estimate_every", int, "model-selection cadence"),
    ("--estimate-size", "estimate_size", int, "model-selection batch size"),
    ("--refit-size", "refit_size", int, "final classifier refit examples"),
    ("--intensity-scale", "intensity_scale", float, "pixel-to-Hz factor"),
    ("--ngram-n", "ngram_n", int, "n-gram length"),
    ("--limit", "limit", int, "truncate the training stream to N examples"),
]


def _write_json(path: Path, payload: dict):
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")


def _args_dict(args) -> dict:
    return {k: v for k, v in vars(args).items() if k != "func"}


def _write_csv(path: Path, header: list[str], rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def write_pgm(path: Path, image: np.ndarray):
    """Binary (P5) PGM, 8-bit grayscale."""
    image = np.ascontiguousarray(image, dtype=np.uint8)
    if image.ndim != 2:
        raise ValueError("PGM image must be 2-D")
    with open(path, "wb") as fh:
        fh.write(f"P5\n{image.shape[1]} {image.shape[0]}\n255\n".encode())
        fh.write(image.tobytes())


def tile_filters(block: np.ndarray, tile_h: int, tile_w: int) -> np.ndarray:
    """Arrange a (tile_h*tile_w, n_filters) weight block as a tiled image.

    Filters are laid out row-major on a near-square grid; the block is
    min-max scaled to 0-255 as a whole so filters stay comparable.
    """
    n_filters = block.shape[1]
    lo, hi = float(block.min()), float(block.max())
    scaled = (
        np.zeros_like(block, dtype=np.float64)
        if hi <= lo
        else (block - lo) * (255.0 / (hi - lo))
    )
    cols = math.ceil(math.sqrt(n_filters))
    rows = math.ceil(n_filters / cols)
    canvas = np.zeros((rows * tile_h, cols * tile_w), dtype=np.uint8)
    for j in range(n_filters):
        r, c = divmod(j, cols)
        tile = scaled[:, j].reshape(tile_h, tile_w)
        canvas[r * tile_h : (r + 1) * tile_h, c * tile_w : (c + 1) * tile_w] = (
            np.round(tile).astype(np.uint8)
        )
    return canvas


def _load_eval_dataset(args, cp: Checkpoint) -> Dataset:
    dataset = load_split(args.data_dir, args.dataset, args.split)
    dataset = crop_dataset(dataset, cp.input_h, cp.input_w)
    if args.limit is not None:
        if args.limit < 1:
            raise ConfigurationError("--limit must be >= 1")
        dataset = dataset.subset(args.limit)
    if dataset.n_classes != cp.n_classes:
        raise ConfigurationError(
            f"dataset has {dataset.n_classes} classes, checkpoint expects "
            f"{cp.n_classes}"
        )
    return dataset


def _parse_p_grid(text: str) -> list[float]:
    """'0:0.9:0.1' (inclusive range), '0,0.5,0.9', or a single float."""
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise ConfigurationError(f"bad p range {text!r}, want start:stop:step")
        start, stop, step = (float(p) for p in parts)
        if step <= 0:
            raise ConfigurationError("p range step must be positive")
        values = []
        i = 0
        while True:
            value = round(start + i * step, 10)
            if value > stop + 1e-9:
                break
            values.append(value)
            i += 1
        return values
    return [float(p) for p in text.split(",")]


def _resolve_train_config(args) -> config_mod.RunConfig:
    cfg = (
        config_mod.load_config(args.config)
        if args.config
        else config_mod.RunConfig()
    )
    overrides = {dest: getattr(args, dest) for _, dest, _, _ in _TRAIN_FLAGS}
    if args.method is not None:
        overrides["method"] = args.method
    if args.topn is not None:
        overrides["top_n"] = args.topn
    if args.workers is not None:
        overrides["workers"] = args.workers
    if getattr(args, "baseline", False):
        overrides["arch"] = "baseline"
    return config_mod.apply_overrides(cfg, overrides)


def cmd_train(args) -> int:
    cfg = _resolve_train_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dataset = crop_dataset(
        load_split(cfg.data_dir, cfg.dataset, "train"), cfg.crop, cfg.crop
    )
    network = config_mod.build_network(cfg)

    def progress(done, total):
        if not args.quiet and (done % 250 == 0 or done == total):
            print(f"\rtrained {done}/{total} examples", end="", file=sys.stderr)

    result = engine.train(
        dataset, network, limit=cfg.limit, ngram_n=cfg.ngram_n, progress=progress
    )
    if not args.quiet:
        print(file=sys.stderr)
    save_path = out / "checkpoint.lcsnn"
    engine.save_checkpoint(result.checkpoint, save_path)
    _write_csv(
        out / "metrics.csv",
        ["example_index", "estimated_accuracy", "cumulative_spikes"],
        result.metrics,
    )
    config_mod.save_config(cfg, out / "config.json")
    print(
        f"best estimated accuracy {result.best_accuracy:.4f} at "
        f"{result.best_example_index} examples; checkpoint: {save_path}"
    )
    return EXIT_OK


def cmd_eval(args) -> int:
    cp = engine.load_checkpoint(args.checkpoint)
    dataset = _load_eval_dataset(args, cp)
    out = Path(args.out) if args.out else Path(args.checkpoint).parent
    out.mkdir(parents=True, exist_ok=True)
    workers = config_mod.resolve_workers(args.workers or 0)
    methods = (
        ["ngram", "multi-ngram", "multi-sum"] if args.method == "all" else [args.method]
    )
    rows = []
    for method in methods:
        result = engine.evaluate(
            dataset, cp, method, top_n=args.topn, workers=workers, seed=args.seed
        )
        rows.append([method, args.topn, f"{result.accuracy:.6f}"])
        suffix = f"_{method}" if len(methods) > 1 else ""
        _write_csv(
            out / f"confusion{suffix}.csv",
            ["true_class"] + [f"pred_{c}" for c in range(cp.n_classes)],
            [[i, *row] for i, row in enumerate(result.confusion.tolist())],
        )
        print(f"{method}: accuracy {result.accuracy:.4f} on {len(dataset)} examples")
    _write_csv(out / "methods.csv", ["method", "top_n", "accuracy"], rows)
    _write_json(out / "eval_config.json", {**_args_dict(args), "workers": workers})
    return EXIT_OK


def cmd_robustness(args) -> int:
    cp = engine.load_checkpoint(args.checkpoint)
    dataset = _load_eval_dataset(args, cp)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    modes = ("synapse", "neuron") if args.mode == "both" else (args.mode,)
    ps = _parse_p_grid(args.p)
    specs = robustness.sweep_grid(modes, ps, args.repeats, args.ablation_seed)
    workers = config_mod.resolve_workers(args.workers or 0)

    def progress(done, total):
        if not args.quiet:
            print(f"\rrobustness cells {done}/{total}", end="", file=sys.stderr)

    rows = robustness.robustness_sweep(
        cp, dataset, specs,
        method=args.method, top_n=args.topn, workers=workers,
        eval_seed=args.seed, progress=progress,
    )
    if not args.quiet:
        print(file=sys.stderr)
    _write_csv(
        out / "robustness.csv",
        ["mode", "p", "repeat", "accuracy"],
        [[r.mode, r.p, r.repeat, f"{r.accuracy:.6f}"] for r in rows],
    )
    summary = robustness.summarize(rows)
    _write_csv(
        out / "summary.csv",
        ["mode", "p", "mean_accuracy", "std_accuracy"],
        [[m, p, f"{mean:.6f}", f"{std:.6f}"] for m, p, mean, std in summary],
    )
    _write_json(out / "robustness_config.json", {**_args_dict(args), "workers": workers})
    for mode, p, mean, std in summary:
        print(f"{mode} p={p:.1f}: {mean:.4f} +/- {std:.4f}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    base = (
        config_mod.load_config(args.config)
        if args.config
        else config_mod.RunConfig()
    )
    with open(args.grid) as fh:
        try:
            grid = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"{args.grid}: not valid JSON ({exc})") from exc
    if not isinstance(grid, dict) or not grid:
        raise ConfigurationError(f"{args.grid}: grid must be a non-empty JSON object")
    known = {f.name for f in dataclasses.fields(config_mod.RunConfig)}
    unknown = sorted(set(grid) - known)
    if unknown:
        raise ConfigurationError(f"{args.grid}: unknown grid keys {unknown}")
    for key, values in grid.items():
        if not isinstance(values, list) or not values:
            raise ConfigurationError(f"{args.grid}: {key} must map to a non-empty list")

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    keys = sorted(grid)
    workers = config_mod.resolve_workers(args.workers or 0)
    rows = []
    for combo in itertools.product(*(grid[k] for k in keys)):
        overrides = dict(zip(keys, combo))
        cfg = config_mod.apply_overrides(base, overrides)
        if not args.quiet:
            print(f"sweep point {overrides}", file=sys.stderr)
        dataset = crop_dataset(
            load_split(cfg.data_dir, cfg.dataset, "train"), cfg.crop, cfg.crop
        )
        network = config_mod.build_network(cfg)
        result = engine.train(
            dataset, network, limit=cfg.limit, ngram_n=cfg.ngram_n
        )
        test = crop_dataset(
            load_split(cfg.data_dir, cfg.dataset, "test"), cfg.crop, cfg.crop
        )
        if args.eval_limit is not None:
            test = test.subset(args.eval_limit)
        evaluation = engine.evaluate(
            test, result.checkpoint, cfg.method, top_n=cfg.top_n, workers=workers
        )
        rows.append(
            [*combo, f"{result.best_accuracy:.6f}", f"{evaluation.accuracy:.6f}"]
        )
    _write_csv(
        out / "sweep.csv", keys + ["estimated_accuracy", "test_accuracy"], rows
    )
    _write_json(
        out / "sweep_config.json",
        {**_args_dict(args), "base": dataclasses.asdict(base), "grid": grid},
    )
    print(f"swept {len(rows)} configurations; results: {out / 'sweep.csv'}")
    return EXIT_OK


def cmd_export_filters(args) -> int:
    cp = engine.load_checkpoint(args.checkpoint)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    network = engine.network_from_checkpoint(cp)
    topology = network.topology
    paths = []
    if cp.kind == "lc":
        for f in range(topology.n_fields):
            image = tile_filters(topology.field_weights(f), cp.k, cp.k)
            path = out / f"filters_field_{f:03d}.pgm"
            write_pgm(path, image)
            paths.append(path)
    else:
        image = tile_filters(topology.weights, cp.input_h, cp.input_w)
        path = out / "filters_field_000.pgm"
        write_pgm(path, image)
        paths.append(path)
    _write_json(out / "export_config.json", _args_dict(args))
    print(f"wrote {len(paths)} filter images to {out}")
    return EXIT_OK


def _add_common_eval_flags(parser: argparse.ArgumentParser):
    parser.add_argument("--checkpoint", required=True, help="checkpoint file")
    parser.add_argument("--dataset", default="mnist", help="dataset name")
    parser.add_argument("--data-dir", default="data/mnist", help="IDX directory")
    parser.add_argument("--split", default="test", choices=("train", "test"))
    parser.add_argument("--limit", type=int, default=None,
                        help="evaluate only the first N examples")
    parser.add_argument("--workers", type=int, default=None,
                        help="parallel workers (default: all cores)")
    parser.add_argument("--seed", type=int, default=None,
                        help="encoding seed (default: checkpoint seed)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lcsnn",
        description="Locally-connected spiking neural network training, "
        "evaluation, and robustness experiments.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train a network with STDP")
    p_train.add_argument("--config", help="JSON config file (flags override)")
    p_train.add_argument("--out", required=True, help="output directory")
    p_train.add_argument("--baseline", action="store_true",
                         help="shorthand for --arch baseline")
    p_train.add_argument("--method", choices=_METHOD_CHOICES[:-1], default=None)
    p_train.add_argument("--topn", type=int, default=None)
    p_train.add_argument("--workers", type=int, default=None)
    p_train.add_argument("--quiet", action="store_true")
    for flag, dest, ftype, help_text in _TRAIN_FLAGS:
        p_train.add_argument(flag, dest=dest, type=ftype, default=None,
                             help=help_text)
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    _add_common_eval_flags(p_eval)
    p_eval.add_argument("--method", choices=_METHOD_CHOICES, default="ngram")
    p_eval.add_argument("--topn", type=int, default=3)
    p_eval.add_argument("--out", default=None,
                        help="output directory (default: checkpoint's)")
    p_eval.set_defaults(func=cmd_eval)

    p_rob = sub.add_parser("robustness", help="synapse/neuron ablation sweep")
    _add_common_eval_flags(p_rob)
    p_rob.add_argument("--mode", choices=("both", "synapse", "neuron"),
                       default="both")
    p_rob.add_argument("--p", default="0:0.9:0.1",
                       help="p grid: start:stop:step or comma list")
    p_rob.add_argument("--repeats", type=int, default=5)
    p_rob.add_argument("--method", choices=_METHOD_CHOICES[:-1], default="ngram")
    p_rob.add_argument("--topn", type=int, default=3)
    p_rob.add_argument("--ablation-seed", type=int, default=0,
                       help="seed for the ablation draws")
    p_rob.add_argument("--out", required=True)
    p_rob.add_argument("--quiet", action="store_true")
    p_rob.set_defaults(func=cmd_robustness)

    p_sweep = sub.add_parser("sweep", help="train/eval a cartesian config grid")
    p_sweep.add_argument("--config", help="base JSON config")
    p_sweep.add_argument("--grid", required=True,
                         help="JSON object: config field -> list of values")
    p_sweep.add_argument("--out", required=True)
    p_sweep.add_argument("--eval-limit", type=int, default=None)
    p_sweep.add_argument("--workers", type=int, default=None)
    p_sweep.add_argument("--quiet", action="store_true")
    p_sweep.set_defaults(func=cmd_sweep)

    p_export = sub.add_parser("export-filters",
                              help="write learned filters as PGM images")
    p_export.add_argument("--checkpoint", required=True)
    p_export.add_argument("--out", required=True)
    p_export.set_defaults(func=cmd_export_filters)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigurationError, GeometryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (IdxFormatError, DatasetConsistencyError, CheckpointFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
