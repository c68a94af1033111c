"""Assemble the attenuation operator and write its singular values and a few kernel rows to CSV."""

import argparse
from pathlib import Path

import numpy as np

from ddmorozov.forward_nsw import NswParams, assemble_operator, kernel_row


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("-o", "--output-dir", default="results")
    ap.add_argument("--d", type=int, default=601)
    ap.add_argument("--n-omega", type=int, default=2**14)
    args = ap.parse_args()
    p = NswParams(d=args.d)
    op = assemble_operator(p, n_omega=args.n_omega).with_svd()
    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    np.savetxt(out / "singular_values.csv", op.svd.S, header="sigma_n", comments="")
    rs = p.grid[:: max(1, p.d // 6)]
    rows = np.stack([p.grid] + [kernel_row(r, p, args.n_omega) for r in rs], axis=1)
    np.savetxt(out / "kernel_rows.csv", rows, delimiter=",", comments="",
               header=",".join(["t"] + [f"r={r:.4f}" for r in rs]))
    s = op.svd.S
    print(f"sigma_1 {s[0]:.4f}, sigma_min {s[-1]:.2e}, {np.sum(s > op.svd.null_threshold)} modes above threshold")


if __name__ == "__main__":
    main()
