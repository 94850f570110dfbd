#!/usr/bin/env python3
"""Run the seeded experiments and print the four layer-generalization
comparisons: last vs penultimate layer, loss position, classification vs
metric loss, and the embedding-width ablation."""

import argparse
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from metriclens.evaluation import MetricReport
from metriclens.experiments import ExperimentConfig, run_experiment
from metriclens.network import NetConfig

PEN, LAST = "backbone3_bn", "embed1"


def report(out, tag):
    return MetricReport.from_json(Path(out) / f"report-{tag}.json")


def best(rep, split):
    return max(v for (_, sp, m), v in rep.scores.items() if sp == split and m == "r@1")


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="runs/findings")
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()
    root = Path(args.out)

    run_experiment(ExperimentConfig(experiment="fig2-sweep", seed=args.seed), root / "fig2")
    a = report(root / "fig2", "netA")
    print("layer sweep (train/test R@1):")
    for layer in ("backbone1_bn", "backbone2_bn", "backbone3_bn", "embed1"):
        print(f"  {layer:14s} {a.get(layer, 'train', 'r@1'):.3f} / {a.get(layer, 'test', 'r@1'):.3f}")
    print(f"  -> last layer fits train best; penultimate wins on test by "
          f"{a.get(PEN, 'test', 'r@1') - a.get(LAST, 'test', 'r@1'):+.3f}\n")

    run_experiment(ExperimentConfig(experiment="fig5-losspos", seed=args.seed), root / "fig5")
    pen_a = report(root / "fig5", "netA").get(PEN, "test", "r@1")
    pen_d = report(root / "fig5", "netD").get(PEN, "test", "r@1")
    print(f"loss position: backbone output scores {pen_a:.3f} as penultimate (netA) "
          f"vs {pen_d:.3f} as the last layer (netD)\n")

    run_experiment(ExperimentConfig(experiment="fig3-losscmp", seed=args.seed), root / "fig3")
    dml = report(root / "fig3", "triplet")
    cls = report(root / "fig3", "classification")
    print(f"classification vs metric loss: train {best(cls, 'train'):.3f} vs {best(dml, 'train'):.3f}, "
          f"test {best(cls, 'test'):.3f} vs {best(dml, 'test'):.3f}\n")

    cfg = ExperimentConfig(experiment="fig7-dims", seed=args.seed, net=NetConfig(embed_dim=32))
    run_experiment(cfg, root / "fig7")
    full = report(root / "fig7", "embed32")
    half = report(root / "fig7", "embed16")
    print("embedding width 32 -> 16 (test R@1):")
    print(f"  last layer    {full.get(LAST, 'test', 'r@1'):.3f} -> {half.get(LAST, 'test', 'r@1'):.3f}")
    print(f"  penultimate   {full.get(PEN, 'test', 'r@1'):.3f} -> {half.get(PEN, 'test', 'r@1'):.3f}")


if __name__ == "__main__":
    main()
