#!/usr/bin/env python3
"""Run every canned experiment with stock settings and plot the histories."""

import argparse
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from metriclens.experiments import EXPERIMENT_IDS, ExperimentConfig, run_experiment
from metriclens.plotting import plot_history


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="runs")
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    for experiment in EXPERIMENT_IDS:
        out = Path(args.out) / experiment
        print(f"running {experiment} -> {out}")
        run_experiment(ExperimentConfig(experiment=experiment, seed=args.seed), out)
        for history in sorted(out.glob("history-*.csv")):
            plot_history(history, history.with_suffix(".svg"))
    print("done")


if __name__ == "__main__":
    main()
