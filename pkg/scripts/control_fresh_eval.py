"""Train decision-tree policies from a config and score each seed's best
tree on unseen episodes.

    python3 scripts/control_fresh_eval.py configs/cartpole.yaml --episodes 100
"""

import argparse
import time

from jointopt.designs import serialize_design
from jointopt.evaluation import fresh_return, seeded
from jointopt.harness import ExperimentConfig
from jointopt.trainer import run


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("config")
    p.add_argument("--episodes", type=int, default=100, help="fresh episodes per tree")
    p.add_argument("--seeds", type=int, nargs="+", default=None, help="override the config seeds")
    args = p.parse_args()

    cfg = ExperimentConfig.load(args.config)
    for seed in args.seeds or cfg.seeds:
        task = cfg.task_for_seed(seed)
        t0 = time.perf_counter()
        res = run(task, seeded(cfg.train, seed))
        ret = fresh_return(task, res.best, seed, args.episodes)
        print(f"seed {seed}: train {res.best_reward:.2f}  fresh {ret:.2f}  "
              f"episodes {res.ledger.n_episodes}  {time.perf_counter() - t0:.0f}s", flush=True)
        print(f"  {serialize_design(res.best, task)}")


if __name__ == "__main__":
    main()
