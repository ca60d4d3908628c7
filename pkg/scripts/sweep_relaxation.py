"""Sweep the marginal-relaxation strength and tabulate final accuracy.

Usage: python3 scripts/sweep_relaxation.py [out_dir] [key=value ...]

Runs the training pipeline once per relaxation value and prints a
small table. Per-run reports are written into out_dir (default
sweep_out/). Overrides apply to the shared base configuration.
"""

import sys

from driftlab.pipeline import TrainConfig, apply_overrides, run_sweep

BETAS = (0.0001, 0.2, 0.4, 0.6, 0.8)


def main(argv):
    out_dir = "sweep_out"
    overrides = []
    for arg in argv:
        if "=" in arg:
            overrides.append(arg)
        else:
            out_dir = arg
    base = apply_overrides(TrainConfig(), overrides)
    results = run_sweep(base, BETAS, field_name="beta", out_dir=out_dir)
    print(f"{'run':<14} {'hash':<16} final_target_acc")
    for row in results:
        print(f"{row['run_id']:<14} {row['config_hash'][:16]} "
              f"{row['final_target_acc']:.2f}")
    print(f"reports in {out_dir}/")


if __name__ == "__main__":
    main(sys.argv[1:])
