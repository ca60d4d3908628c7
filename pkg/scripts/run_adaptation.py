"""Train one adaptation run on the synthetic shift benchmark.

Usage: python3 scripts/run_adaptation.py [report.json] [key=value ...]

Extra key=value pairs override TrainConfig fields, e.g. epochs=40
beta=0.5 seed=3. The report lands next to this script unless a path
is given.
"""

import sys

from driftlab.pipeline import TrainConfig, apply_overrides, run_experiment


def main(argv):
    report_path = "adaptation_report.json"
    overrides = []
    for arg in argv:
        if "=" in arg:
            overrides.append(arg)
        else:
            report_path = arg
    config = apply_overrides(TrainConfig(), overrides)
    report = run_experiment(config, report_path=report_path)
    first = report["per_epoch"][0]
    last = report["per_epoch"][-1]
    print(f"config hash    {report['config_hash']}")
    print(f"epoch {first['epoch']:>4d}  target_acc {first['target_acc']:.2f}")
    print(f"epoch {last['epoch']:>4d}  target_acc {last['target_acc']:.2f}")
    print(f"report written to {report_path}")


if __name__ == "__main__":
    main(sys.argv[1:])
