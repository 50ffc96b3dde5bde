"""Scan accuracy along the line between the two tracks after each later task.

For every seed this writes sweep_task<t>.csv files (beta, task_id, accuracy)
and prints the newest task's accuracy at a few betas, averaged over seeds.
"""
import argparse
import dataclasses
from pathlib import Path

import numpy as np

from linconn.runner import ExperimentConfig, load_config, run_sweep


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--config")
    parser.add_argument("--grid", type=int, default=21)
    parser.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    parser.add_argument("--out", default="results/beta_sweep")
    args = parser.parse_args()

    base = load_config(args.config) if args.config else ExperimentConfig()
    base = dataclasses.replace(base, variant="connector", beta=None, joint_oracle=False)
    curves = {}
    for seed in args.seeds:
        cfg = dataclasses.replace(base.with_seed(seed), output_dir=str(Path(args.out) / f"seed{seed}"))
        for scan in run_sweep(cfg, args.grid):
            t = scan.task_ids[-1]
            curves.setdefault(t, []).append(scan.curve(t))
            betas = scan.betas

    picks = np.linspace(0, len(betas) - 1, 6).astype(int)
    print("task  " + "".join(f"b={betas[i]:<6.2f}" for i in picks))
    for t, cs in sorted(curves.items()):
        mean = np.mean(cs, axis=0)
        print(f"{t:<6}" + "".join(f"{mean[i]:<8.3f}" for i in picks))


if __name__ == "__main__":
    main()
