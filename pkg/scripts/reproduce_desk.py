"""Run the comparison, convergence and noise-mismatch experiments at desk scale and write reports."""

import argparse
import logging
import time
from dataclasses import replace
from pathlib import Path

from ddmorozov.harness.experiments import (Artifacts, ExperimentConfig, convergence_curve, monotone_fraction,
                                           reconstruct_single, run_comparison, run_convergence, run_noise_mismatch)
from ddmorozov.harness.report import emit_report, format_text

RUNS = {"comparison": run_comparison, "convergence": run_convergence, "noise_mismatch": run_noise_mismatch}


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("-o", "--output-dir", default="results")
    ap.add_argument("--n-test", type=int, default=50)
    ap.add_argument("--only", choices=sorted(RUNS) + ["single"], action="append")
    ap.add_argument("--full-scale", action="store_true")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    base = ExperimentConfig.full_scale() if args.full_scale else ExperimentConfig(n_test=args.n_test)
    cfg = replace(base, output_dir=args.output_dir).validate()
    art = Artifacts(cfg)
    out = Path(args.output_dir)
    for name in args.only or [*RUNS, "single"]:
        t0 = time.time()
        if name == "single":
            bundle = reconstruct_single(cfg, art, out_dir=out)
            print({k: round(v, 4) for k, v in bundle.errors.items()})
            continue
        report = RUNS[name](replace(cfg, experiment=name), art)
        emit_report(report, out, stem=name)
        print(format_text(report))
        if name == "convergence":
            _, means, _ = convergence_curve(report)
            print(f"non-decreasing fraction: {monotone_fraction(means):.2f}")
        print(f"{name}: {time.time() - t0:.0f}s")


if __name__ == "__main__":
    main()
