"""Post-hoc checks of trained designs: fresh-episode returns and recovery runs."""

from dataclasses import dataclass, replace

import numpy as np

from .trainer import run

FRESH_OFFSET = 10**6


def fresh_seeds(seed, n):
    # disjoint from the counter-derived training streams of the same seed
    return np.random.default_rng(FRESH_OFFSET + seed).integers(0, 2**31, size=n)


def fresh_return(task, seq, seed, n_episodes=100):
    """Mean return of a tree design over ``n_episodes`` unseen episodes."""
    return float(task.episode_returns(seq.tokens, seq.betas, fresh_seeds(seed, n_episodes)).mean())


@dataclass
class Recovery:
    recovered: bool
    test_reward: float
    n_evals: int  # evaluations consumed when recovery was detected, or in total
    result: object


def train_until_recovered(task, config, threshold=0.999):
    """Train a symbolic-regression task, stopping once the running best
    design scores above ``threshold`` on the held-out split."""
    seen = {"seq": None, "test": -np.inf, "at": None}

    def callback(stats, best):
        seq = best[0]
        if seq is not seen["seq"]:
            seen["seq"] = seq
            seen["test"] = task.test_reward(seq.tokens, seq.betas)
            if seen["test"] > threshold:
                seen["at"] = config.batch_size * stats.iteration
        return seen["at"] is not None

    res = run(task, config, callback=callback)
    if seen["seq"] is not res.best:
        seen["test"] = task.test_reward(res.best.tokens, res.best.betas)
    at = seen["at"]
    return Recovery(at is not None, float(seen["test"]),
                    at if at is not None else res.ledger.n_evals, res)


def seeded(config, seed):
    return replace(config, seed=seed)
