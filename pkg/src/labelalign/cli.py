"""Command-line entry points: train, eval, linear-lab, plot.

Exit codes: 0 success, 1 validation error (bad config, bad flags, bad
inputs), 2 runtime failure (aborted training, corrupt checkpoint, ...).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .checkpoint import CheckpointError, load_checkpoint, restore_params, save_checkpoint
from .config import DATA_DIR_ENV, RunConfig, config_from_flat, load_run_config
from .data import (
    DataFormatError,
    ImageDataset,
    load_mnist,
    load_usps,
    make_synthetic,
    split_target,
    standardize,
)
from .linearlab import LinearLabError, identity_suite
from .model import DEFAULT_SPEC
from .plotting import METRICS_HEADER, PlotError, plot_metrics
from .training import ConfigError, TrainData, TrainingAborted, evaluate, train

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_RUNTIME = 2


def _fmt_float(v: float) -> str:
    return repr(float(v))


def _metrics_row(record, cfg) -> str:
    parts = record.parts
    cells = [
        str(record.step),
        _fmt_float(parts.total),
        _fmt_float(parts.cls),
        _fmt_float(cfg.train.lam * parts.align),
        _fmt_float(cfg.train.gamma * parts.k_reg),
        _fmt_float(parts.k),
        _fmt_float(record.src_acc),
        "" if record.val_acc is None else _fmt_float(record.val_acc),
        "" if record.wall_ms is None else f"{record.wall_ms:.3f}",
    ]
    return ",".join(cells)


# ---------------------------------------------------------------------------
# dataset assembly
# ---------------------------------------------------------------------------


def build_datasets(cfg: RunConfig) -> TrainData:
    data = cfg.data
    if data["dataset"] == "synthetic":
        seeds = np.random.SeedSequence(data["split_seed"]).generate_state(4)
        source = make_synthetic(data["synthetic_source_size"], int(seeds[0]), split="train")
        target = make_synthetic(
            data["synthetic_target_size"], int(seeds[1]), domain_shift=0.35, split="train"
        ).drop_labels()
        val = make_synthetic(
            data["synthetic_val_size"], int(seeds[2]), domain_shift=0.35, split="val"
        )
        test = make_synthetic(
            data["synthetic_test_size"], int(seeds[3]), domain_shift=0.35, split="test"
        )
    else:
        paths = {
            key: cfg.data_path(key)
            for key in (
                "mnist_train_images",
                "mnist_train_labels",
                "usps_train",
                "usps_test",
            )
        }
        missing = [str(p) for p in paths.values() if not p.exists()]
        if missing:
            raise ConfigError(
                "dataset files not found: "
                + ", ".join(missing)
                + f" (set [data] dir or ${DATA_DIR_ENV}; see README for fetching)"
            )
        source = load_mnist(paths["mnist_train_images"], paths["mnist_train_labels"], split="train")
        usps_train = load_usps(paths["usps_train"], split="train")
        usps_test = load_usps(paths["usps_test"], split="test")
        target, val, test = split_target(usps_train, usps_test, seed=data["split_seed"])
    if data["standardize"]:
        source = standardize(source)
        target = standardize(target) if target is not None else None
        val = standardize(val)
        test = standardize(test)
    return TrainData(source=source, target=target, val=val, test=test)


def _eval_dataset(cfg: RunConfig, name: str) -> ImageDataset:
    aliases = {
        "usps-test": "target-test",
        "usps-val": "target-val",
        "mnist-test": "source-test",
        "mnist-train": "source-train",
    }
    name = aliases.get(name, name)
    bundle = build_datasets(cfg)
    if name == "target-test":
        ds = bundle.test
    elif name == "target-val":
        ds = bundle.val
    elif name == "source-train":
        ds = bundle.source
    elif name == "source-test":
        if cfg.data["dataset"] == "synthetic":
            raise ConfigError("synthetic runs have no separate source test set")
        ds = load_mnist(
            cfg.data_path("mnist_test_images"),
            cfg.data_path("mnist_test_labels"),
            split="test",
        )
        if cfg.data["standardize"]:
            ds = standardize(ds)
    else:
        raise ConfigError(f"unknown evaluation dataset '{name}'")
    if ds is None:
        raise ConfigError(f"run configuration provides no '{name}' dataset")
    return ds


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_train(args) -> int:
    overrides = {}
    if args.seed is not None:
        overrides[("train", "seed")] = str(args.seed)
    if args.out is not None:
        overrides[("output", "dir")] = args.out
    cfg = load_run_config(args.config, overrides)
    data = build_datasets(cfg)

    out_dir = Path(cfg.output["dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    echo = cfg.echo_text()
    (out_dir / "config_echo.ini").write_text(echo)
    manifest = {
        "config_sha256": cfg.content_hash(),
        "seed": cfg.train.seed,
        "mode": cfg.train.mode,
        "gradient_mode": cfg.train.gradient_mode,
        "optimizer": cfg.train.optimizer,
        "package_version": __version__,
        "metrics": "metrics.csv",
        "checkpoint": "checkpoint.ckpt",
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")

    print(
        f"run: mode={cfg.train.mode} optimizer={cfg.train.optimizer} "
        f"gradient_mode={cfg.train.gradient_mode} gate={cfg.train.gate} "
        f"dtype={cfg.train.dtype} seed={cfg.train.seed}"
    )
    print(
        f"     lam={cfg.train.lam} gamma={cfg.train.gamma} beta={cfg.train.beta} "
        f"alpha={cfg.train.alpha} batch={cfg.train.batch_size} steps={cfg.train.steps}"
    )
    print(f"     config sha256 {cfg.content_hash()}")

    metrics_path = out_dir / "metrics.csv"
    every = max(1, cfg.output["metrics_every"])
    ckpt_every = cfg.output["checkpoint_every"]
    flat = cfg.to_flat()

    with open(metrics_path, "w", newline="\n") as fh:
        fh.write(METRICS_HEADER + "\n")

        def on_step(record, params):
            if record.step % every == 0:
                fh.write(_metrics_row(record, cfg) + "\n")
            if ckpt_every and record.step % ckpt_every == 0:
                save_checkpoint(
                    out_dir / f"checkpoint_step{record.step}.ckpt", params, flat
                )

        result = train(cfg.train, data, DEFAULT_SPEC, on_step=on_step)

    save_checkpoint(out_dir / "checkpoint.ckpt", result.params, flat)
    final_val = [r.val_acc for r in result.records if r.val_acc is not None]
    if final_val:
        print(f"final validation accuracy {100 * final_val[-1]:.2f}")
    print(f"wrote {metrics_path}")
    return EXIT_OK


def cmd_eval(args) -> int:
    try:
        arrays, flat = load_checkpoint(args.checkpoint)
    except FileNotFoundError:
        raise ConfigError(f"checkpoint not found: {args.checkpoint}")
    cfg = config_from_flat(flat)
    if args.data_dir is not None:
        cfg.data["dir"] = args.data_dir
    params = restore_params(arrays, DEFAULT_SPEC.param_shapes())
    ds = _eval_dataset(cfg, args.dataset)
    acc = evaluate(params, DEFAULT_SPEC, ds)
    print(f"{100 * acc:.2f}")
    return EXIT_OK


def cmd_linear_lab(args) -> int:
    sizes = []
    for chunk in args.sizes.split(","):
        try:
            n, d = chunk.lower().split("x")
            sizes.append((int(n), int(d)))
        except ValueError:
            raise ConfigError(f"bad size '{chunk}', expected NxD like 64x16")
    for n, d in sizes:
        if d > n:
            raise ConfigError(f"the lab requires d <= n, got {n}x{d}")
    rows = identity_suite(
        sizes=tuple(sizes),
        k_star=args.k_star,
        seeds=args.seeds,
        noise=args.noise,
    )
    header = f"{'pair':<26} {'n':>4} {'d':>3} {'seed':>4} {'residual':>12} {'bound':>12} status"
    print(header)
    print("-" * len(header))
    failures = 0
    for row in rows:
        status = "ok" if row.ok else "FAIL"
        if not row.ok:
            failures += 1
        print(
            f"{row.pair:<26} {row.n:>4} {row.d:>3} {row.seed:>4} "
            f"{row.residual:>12.3e} {row.bound:>12.3e} {status}"
        )
    if args.out:
        with open(args.out, "w", newline="\n") as fh:
            fh.write("n,d,k_star,seed,pair,residual,bound,ok\n")
            for row in rows:
                fh.write(
                    f"{row.n},{row.d},{row.k_star},{row.seed},{row.pair},"
                    f"{row.residual!r},{row.bound!r},{int(row.ok)}\n"
                )
        print(f"wrote {args.out}")
    if failures:
        print(f"{failures} identity check(s) out of tolerance")
        return EXIT_RUNTIME
    print("all identities within tolerance")
    return EXIT_OK


def cmd_plot(args) -> int:
    plot_metrics(args.metrics, args.out, title=args.title)
    print(f"wrote {args.out}")
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="labelalign",
        description="spectral label-alignment training, evaluation and diagnostics",
    )
    parser.add_argument("--version", action="version", version=f"labelalign {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="run a training job from a config file")
    p_train.add_argument("--config", required=True)
    p_train.add_argument("--out", help="override [output] dir")
    p_train.add_argument("--seed", type=int, help="override [train] seed")
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument(
        "--dataset",
        default="target-test",
        help="target-test (default), target-val, source-test, source-train, "
        "or the usps-*/mnist-* aliases",
    )
    p_eval.add_argument("--data-dir", help="override the checkpoint's data directory")
    p_eval.set_defaults(func=cmd_eval)

    p_lab = sub.add_parser("linear-lab", help="run the linear identity suite")
    p_lab.add_argument("--sizes", default="64x16", help="comma list of NxD problem sizes")
    p_lab.add_argument("--k-star", type=int, default=4, dest="k_star")
    p_lab.add_argument("--seeds", type=int, default=20)
    p_lab.add_argument("--noise", type=float, default=0.0)
    p_lab.add_argument("--out", help="write residuals CSV here")
    p_lab.set_defaults(func=cmd_linear_lab)

    p_plot = sub.add_parser("plot", help="render a metrics CSV as an SVG chart")
    p_plot.add_argument("--metrics", required=True)
    p_plot.add_argument("--out", required=True)
    p_plot.add_argument("--title", default="training curves")
    p_plot.set_defaults(func=cmd_plot)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, DataFormatError, LinearLabError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (CheckpointError, TrainingAborted, PlotError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
