"""Joint vs. decoupled training on the parameterized bitstring task.

Prints, per seed, each method's best reward and the evaluation count at
which it first reached the reward threshold.

    python3 scripts/compare_bitstring.py --seeds 0 1 2 3 4 --methods joint anneal
"""

import argparse

from jointopt.baselines import INNER, run_decoupled
from jointopt.tasks.bitstring import BitstringTask, make_instance
from jointopt.trainer import TrainConfig, run


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--T", type=int, default=10)
    p.add_argument("--alpha", type=float, default=0.9)
    p.add_argument("--objective", default="f2")
    p.add_argument("--budget", type=int, default=200_000)
    p.add_argument("--batch-size", type=int, default=500)
    p.add_argument("--inner-budget", type=int, default=100)
    p.add_argument("--threshold", type=float, default=0.9)
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    p.add_argument("--methods", nargs="+", default=["joint", "anneal"],
                   choices=("joint",) + INNER)
    args = p.parse_args()

    print("seed  method  best_reward  evals_to_threshold  wall_s")
    for seed in args.seeds:
        task = BitstringTask(make_instance(args.T, args.alpha, args.objective, seed))
        cfg = TrainConfig(batch_size=args.batch_size, budget=args.budget, seed=seed)
        for method in args.methods:
            if method == "joint":
                res = run(task, cfg)
            else:
                res = run_decoupled(task, cfg, method, args.inner_budget)
            hit = res.ledger.evals_to_reach(args.threshold)
            print(f"{seed:4d}  {method:6s}  {res.best_reward:11.4f}  {str(hit):>18s}  "
                  f"{res.wall_seconds:6.1f}", flush=True)


if __name__ == "__main__":
    main()
