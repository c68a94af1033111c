"""Train (or load cached) regularizer networks for every noise level used by the experiments."""

import argparse
import logging

from ddmorozov.harness.experiments import Artifacts, ExperimentConfig


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", help="JSON file with ExperimentConfig keys")
    ap.add_argument("--full-scale", action="store_true")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    base = ExperimentConfig.full_scale() if args.full_scale else ExperimentConfig()
    cfg = ExperimentConfig.from_dict({**base.to_dict(), **ExperimentConfig.from_file(args.config).to_dict()}) \
        if args.config else base
    art = Artifacts(cfg.validate())
    for sigma in sorted(set(cfg.noise_levels) | set(cfg.mismatch_levels) | {cfg.test_sigma}):
        net = art.network(sigma)
        print(f"sigma={sigma:g} {net.content_hash[:12]} {art.network_path(sigma)}")


if __name__ == "__main__":
    main()
