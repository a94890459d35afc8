"""Compare per-timestep and per-bar refine training after equal epochs."""
import argparse

from trackfusion.experiments import refine_granularity_trend

ap = argparse.ArgumentParser(description=__doc__)
ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
args = ap.parse_args()

for seed in args.seeds:
    r = refine_granularity_trend(seed)
    print(f"seed {seed}: raw {r.raw_accuracy:.4f}  note {r.accuracy['note']:.4f}  bar {r.accuracy['bar']:.4f}")
