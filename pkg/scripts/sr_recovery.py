"""Symbolic-regression recovery runs: train each seed until the best
expression scores above a test-set threshold or the budget runs out.

    python3 scripts/sr_recovery.py configs/symreg_constant5.yaml
"""

import argparse

from jointopt.designs import serialize_design
from jointopt.evaluation import seeded, train_until_recovered
from jointopt.harness import ExperimentConfig


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("config")
    p.add_argument("--threshold", type=float, default=0.999)
    p.add_argument("--seeds", type=int, nargs="+", default=None)
    args = p.parse_args()

    cfg = ExperimentConfig.load(args.config)
    hits = 0
    seeds = args.seeds or cfg.seeds
    for seed in seeds:
        task = cfg.task_for_seed(seed)
        rec = train_until_recovered(task, seeded(cfg.train, seed), args.threshold)
        hits += rec.recovered
        print(f"seed {seed}: recovered={rec.recovered}  test {rec.test_reward:.6f}  "
              f"evals {rec.n_evals}  {rec.result.wall_seconds:.0f}s", flush=True)
        print(f"  {serialize_design(rec.result.best, task)}")
    print(f"recovered {hits}/{len(seeds)}")


if __name__ == "__main__":
    main()
