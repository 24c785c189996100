"""A laptop-sized experiment: success ratio per strategy on a synthetic network.

    python3 demos/small_sweep.py [payments]
"""
from __future__ import annotations

import sys

from starfish.sim import ExperimentConfig, run_experiment
from starfish.sim.experiment import summarize

STRATEGIES = ["LN", "Revive", "ShadufHL", "ShadufAO", "ShadufAB", "Starfish", "Loop", "CloseOpen"]


def main() -> None:
    payments = int(sys.argv[1]) if len(sys.argv) > 1 else 10_000
    cfg = ExperimentConfig(payments=payments, seeds=[0, 1, 2], strategies=STRATEGIES)
    means = summarize(run_experiment(cfg))
    cols = [(m, s) for m in cfg.capacity_multipliers for s in cfg.skewness]
    print("strategy   " + " ".join(f"{m:>3d}x/s{s:<3g}" for m, s in cols))
    for name in STRATEGIES:
        row = " ".join(f"{100 * means[(name, m, float(s))]:9.1f}" for m, s in cols)
        print(f"{name:10s} {row}")


if __name__ == "__main__":
    main()
