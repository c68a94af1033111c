"""Command-line entry point: ``ddmorozov <subcommand> [options]``.

Exit codes: 0 success, 2 configuration or missing-artifact error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .. import neural
from ..container import ContainerError
from ..forward_nsw import KernelAccuracyError, assemble_operator, save_operator
from ..signals import (STREAM_TEST, STREAM_TRAIN, InfeasibleConfigError, SignalSet, export_csv, generate_block_signals,
                       save_signals)
from . import experiments as ex
from .report import emit_report, format_text

log = logging.getLogger("ddmorozov")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


def _floats(text: str) -> tuple:
    return tuple(float(v) for v in text.split(","))


def load_config(args) -> ex.ExperimentConfig:
    """Defaults, then ``--full-scale``, then the JSON file, then explicit flags."""
    cfg = ex.ExperimentConfig.full_scale() if args.full_scale else ex.ExperimentConfig()
    if args.config:
        try:
            data = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ex.ConfigError(f"cannot read config {args.config}: {exc}") from exc
        cfg = ex.ExperimentConfig.from_dict({**cfg.to_dict(), **data})
    flags = {
        "n_test": args.n_test, "n_train": args.n_train, "epochs": args.epochs, "output_dir": args.output_dir,
        "cache_dir": args.cache_dir, "operator_cache": args.operator_cache, "test_sigma": args.sigma,
        "max_iters": args.max_iters, "metric": args.metric,
    }
    if getattr(args, "levels", None):
        flags["noise_levels" if args.command == "convergence" else "mismatch_levels"] = _floats(args.levels)
    cfg = replace(cfg, **{k: v for k, v in flags.items() if v is not None})
    return cfg.validate()


def _emit(report, cfg, stem):
    files = emit_report(report, cfg.output_dir, stem=stem)
    sys.stdout.write(format_text(report))
    for kind, path in files.items():
        log.info("wrote %s: %s", kind, path)
    return EXIT_OK


def cmd_gen_data(args, cfg):
    art = ex.Artifacts(cfg)
    stream = STREAM_TEST if args.split == "test" else STREAM_TRAIN
    block = art.block if args.split == "train" else replace(art.block, seed=cfg.test_seed)
    if args.seed is not None:
        block = replace(block, seed=args.seed)
    count = args.count if args.count is not None else (cfg.n_test if args.split == "test" else cfg.n_train)
    values = generate_block_signals(block, range(count), stream)
    out = Path(args.out or Path(cfg.output_dir) / f"signals_{args.split}.bin")
    out.parent.mkdir(parents=True, exist_ok=True)
    sset = SignalSet(values, block.dt, 0.0, {"split": args.split, "seed": block.seed, "stream": stream})
    save_signals(out, sset)
    if args.csv:
        export_csv(out.with_suffix(".csv"), sset)
    print(f"{count} signals of length {values.shape[1]} -> {out}")
    return EXIT_OK


def cmd_build_operator(args, cfg):
    art = ex.Artifacts(cfg)
    if args.out:
        op = assemble_operator(art.nsw, n_omega=args.n_omega).with_svd()
        save_operator(args.out, op)
        where = args.out
    else:
        op = art.operator
        where = cfg.operator_cache or "cache"
    s = op.svd.S
    print(f"operator {op.matrix.shape} hash {op.hash} -> {where}")
    print(f"singular values: max {s[0]:.4e} min {s[-1]:.4e} span {np.log10(s[0] / s[-1]):.1f} decades; "
          f"max imaginary residue {op.imag_residue:.2e}")
    return EXIT_OK


def cmd_train(args, cfg):
    art = ex.Artifacts(cfg)
    levels = _floats(args.levels) if args.levels else (cfg.test_sigma,)
    for sigma in levels:
        path = art.network_path(sigma)
        if path.exists() and args.force:
            path.unlink()
        net = art.network(sigma)
        print(f"sigma={sigma:g}: network {net.content_hash[:12]} -> {path}")
    return EXIT_OK


def cmd_reconstruct(args, cfg):
    bundle = ex.reconstruct_single(cfg, sample=args.sample, out_dir=cfg.output_dir)
    for name, err in bundle.errors.items():
        print(f"{name:<16} l2 error {err:.4f}")
    for kind, path in bundle.files.items():
        print(f"wrote {kind}: {path}")
    return EXIT_OK


def cmd_benchmark(args, cfg):
    return _emit(ex.run_comparison(replace(cfg, experiment="comparison")), cfg, "comparison")


def cmd_convergence(args, cfg):
    report = ex.run_convergence(replace(cfg, experiment="convergence"))
    levels, means, _ = ex.convergence_curve(report)
    print(f"non-decreasing fraction over increasing noise: {ex.monotone_fraction(means):.2f}")
    return _emit(report, cfg, "convergence")


def cmd_mismatch(args, cfg):
    return _emit(ex.run_noise_mismatch(replace(cfg, experiment="noise_mismatch")), cfg, "noise_mismatch")


COMMANDS = {
    "gen-data": (cmd_gen_data, "generate block signals and save them"),
    "build-operator": (cmd_build_operator, "assemble and cache the attenuation operator with its SVD"),
    "train": (cmd_train, "train (or load cached) regularizer networks"),
    "reconstruct": (cmd_reconstruct, "single-signal demo: data, backprojection, truncated SVD, DD-Morozov"),
    "benchmark": (cmd_benchmark, "Tikhonov/Morozov method comparison at one noise level"),
    "convergence": (cmd_convergence, "error against noise level, one network per level"),
    "mismatch": (cmd_mismatch, "networks trained at wrong noise levels on one test set"),
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file with ExperimentConfig keys")
    common.add_argument("--full-scale", action="store_true", help="full-size sample counts (long-running)")
    common.add_argument("--operator-cache", help="operator file to load or create")
    common.add_argument("--cache-dir", help=f"artifact cache (default ${ex.CACHE_ENV} or ~/.cache/ddmorozov)")
    common.add_argument("--output-dir", "-o")
    common.add_argument("--n-test", type=int)
    common.add_argument("--n-train", type=int)
    common.add_argument("--epochs", type=int)
    common.add_argument("--sigma", type=float, help="test noise level")
    common.add_argument("--max-iters", type=int)
    common.add_argument("--metric", choices=sorted(ex.ERROR_DEFINITION))
    common.add_argument("-v", "--verbose", action="count", default=0)

    parser = argparse.ArgumentParser(prog="ddmorozov", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, parents=[common], help=help_text)
        if name == "gen-data":
            p.add_argument("--split", choices=("train", "test"), default="train")
            p.add_argument("--count", type=int)
            p.add_argument("--seed", type=int)
            p.add_argument("--out")
            p.add_argument("--csv", action="store_true", help="also write a CSV copy")
        elif name == "build-operator":
            p.add_argument("--out", help="write here instead of the cache")
            p.add_argument("--n-omega", type=int, default=2**14)
        elif name == "train":
            p.add_argument("--levels", help="comma-separated noise levels (default: --sigma)")
            p.add_argument("--force", action="store_true", help="retrain even if cached")
        elif name == "reconstruct":
            p.add_argument("--sample", type=int, default=0)
        elif name in ("convergence", "mismatch"):
            p.add_argument("--levels", help="comma-separated noise levels")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        cfg = load_config(args)
        return COMMANDS[args.command][0](args, cfg)
    except (ex.ConfigError, InfeasibleConfigError, ex.MissingArtifactError, ContainerError,
            neural.ShapeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FloatingPointError, np.linalg.LinAlgError, KernelAccuracyError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
