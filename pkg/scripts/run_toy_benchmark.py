"""Compare the fusion variants on the default Gaussian stream over several seeds.

Writes one run directory per (variant, seed) under --out and prints a table of
mean ACC / BWT / I_K.
"""
import argparse
import dataclasses
import json
from pathlib import Path

import numpy as np

from linconn.runner import VARIANTS, ExperimentConfig, load_config, run_seeds


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--config", help="JSON config; defaults when omitted")
    parser.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    parser.add_argument("--variants", nargs="+", default=["connector", "naive-finetune", "stability-only", "plasticity-only"],
                        choices=VARIANTS)
    parser.add_argument("--out", default="results/toy_benchmark")
    args = parser.parse_args()

    base = load_config(args.config) if args.config else ExperimentConfig()
    rows = {}
    for variant in args.variants:
        cfg = dataclasses.replace(base, variant=variant, beta=0.5 if variant == "fixed-beta" else None,
                                  output_dir=str(Path(args.out) / variant), run_id=variant)
        _, summary = run_seeds(cfg, args.seeds)
        rows[variant] = summary

    print(f"{'variant':<18}{'ACC':>9}{'BWT':>9}{'I_K':>9}")
    for variant, s in rows.items():
        bwt = s["bwt"]["mean"] if s["bwt"] else np.nan
        im = s["im_last"]["mean"] if s["im_last"] else np.nan
        print(f"{variant:<18}{s['acc']['mean']:>9.4f}{bwt:>+9.4f}{im:>9.4f}")
    Path(args.out).mkdir(parents=True, exist_ok=True)
    (Path(args.out) / "table.json").write_text(json.dumps(rows, indent=2))


if __name__ == "__main__":
    main()
