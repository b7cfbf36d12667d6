"""Risk-seeking policy-gradient training loop with an audited evaluation budget."""

import csv
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .policy import adam_update, init_policy, loss_gradient
from .sampler import sample_batch


@dataclass
class TrainConfig:
    batch_size: int = 500
    epsilon: float = 0.2
    entropy_coeff: float = 0.01
    learning_rate: float = 1e-3
    # in the task's budget unit (evaluations, or episodes for control tasks)
    budget: int = 100_000
    seed: int = 0
    hidden_units: int = 32
    sigma: float = 0.5
    # stop once the best reward reaches this value
    target_reward: float | None = None
    # listed with the published hyperparameters; the risk-seeking estimator
    # uses the batch quantile directly, so it has no effect
    ma_coeff: float = 0.5
    record_wall_time: bool = False

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if not 0.0 < self.epsilon < 1.0:
            raise ValueError("epsilon must lie in (0, 1)")
        if self.entropy_coeff < 0:
            raise ValueError("entropy_coeff must be non-negative")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.budget < 1:
            raise ValueError("budget must be positive")


class BudgetExhausted(RuntimeError):
    pass


class EmptyBestError(RuntimeError):
    pass


LEDGER_COLUMNS = ("n_evals", "iteration", "best_reward", "mean_reward", "quantile_reward", "wall_ms")


@dataclass
class EvalBudgetLedger:
    budget: int
    episodes_per_eval: int = 0
    unit: str = "evals"
    n_evals: int = 0
    n_episodes: int = 0
    rows: list = field(default_factory=list)
    # (n_evals, reward) each time the running best strictly improves
    improvements: list = field(default_factory=list)

    @classmethod
    def for_task(cls, task, budget):
        return cls(budget, task.episodes_per_eval, task.budget_unit)

    @property
    def cost_per_eval(self):
        return self.episodes_per_eval if self.unit == "episodes" else 1

    @property
    def used(self):
        return self.n_episodes if self.unit == "episodes" else self.n_evals

    @property
    def remaining(self):
        return self.budget - self.used

    def affordable(self, n):
        """How many of ``n`` further evaluations fit in the budget."""
        return max(0, min(n, self.remaining // self.cost_per_eval))

    def charge(self, n=1):
        if n > self.affordable(n):
            raise BudgetExhausted(f"charging {n} evaluations exceeds the budget")
        self.n_evals += n
        self.n_episodes += n * self.episodes_per_eval

    def record_rewards(self, rewards, best_before):
        """Log improvement events for rewards evaluated in order after the
        last ``len(rewards)`` charged evaluations."""
        start = self.n_evals - len(rewards)
        best = best_before
        for i, r in enumerate(rewards):
            if r > best:
                best = r
                self.improvements.append((start + i + 1, float(r)))
        return best

    def log(self, iteration, best, mean, quantile, wall_ms=0):
        self.rows.append((self.n_evals, iteration, best, mean, quantile, wall_ms))

    def evals_to_reach(self, threshold):
        for n, r in self.improvements:
            if r >= threshold:
                return n
        return None

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(LEDGER_COLUMNS)
            for n, it, best, mean, q, wall in self.rows:
                w.writerow([n, it, repr(float(best)), repr(float(mean)), repr(float(q)), int(wall)])


def empirical_quantile(rewards, epsilon):
    """Order statistic at rank ceil((1 - epsilon) * N), 1-indexed ascending."""
    r = np.sort(np.asarray(rewards, dtype=float))
    if r.size == 0:
        raise ValueError("empty reward list")
    # guard against 0.8 * 10 = 8.000000000000002
    rank = math.ceil(round((1.0 - epsilon) * r.size, 9))
    return float(r[max(rank, 1) - 1])


def risk_filter(rewards, r_eps):
    """Indices with reward >= r_eps and their advantages reward - r_eps."""
    rewards = np.asarray(rewards, dtype=float)
    keep = np.nonzero(rewards >= r_eps)[0]
    return keep, rewards[keep] - r_eps


@dataclass
class StepStats:
    iteration: int
    n_evaluated: int
    mean_reward: float
    quantile_reward: float
    best_reward: float
    n_retained: int
    updated: bool


@dataclass
class TrainState:
    """Mutable bookkeeping of a run: best design, iteration counter, RNG."""

    rng: np.random.Generator
    seed: int = 0
    iteration: int = 0
    best_reward: float = -np.inf
    best: object = None


def eval_rng(seed, counter):
    # one independent stream per evaluation, keyed on its global index
    return np.random.default_rng([seed, counter])


def evaluate_batch(task, batch, ledger, seed, n=None):
    """Evaluate the first ``n`` sequences of a batch, charging each to the ledger."""
    n = len(batch) if n is None else n
    rewards = np.empty(n)
    for i in range(n):
        seq_t = batch.tokens[i, :batch.lengths[i]]
        seq_b = batch.betas[i, :batch.lengths[i]]
        rng = eval_rng(seed, ledger.n_evals) if task.stochastic else None
        ledger.charge(1)
        rewards[i] = task.evaluate(seq_t, seq_b, rng)
    return rewards


def policy_update(params, batch, rewards, config):
    r_eps = empirical_quantile(rewards, config.epsilon)
    keep, adv = risk_filter(rewards, r_eps)
    grad = loss_gradient(params, batch.subset(keep), adv, config.entropy_coeff)
    return adam_update(params, grad, lr=config.learning_rate), r_eps, len(keep)


def _update_best(state, batch, rewards, ledger):
    i = int(np.argmax(rewards))
    state.best_reward = ledger.record_rewards(rewards, state.best_reward)
    if state.best is None or rewards[i] > state.best[1]:
        state.best = (batch.sequence(i), float(rewards[i]))


def train_step(params, task, config, ledger, state):
    n = config.batch_size
    if ledger.affordable(n) == 0:
        raise BudgetExhausted("no budget left for a single evaluation")
    t0 = time.perf_counter()
    batch = sample_batch(params, task, n, state.rng)
    k = ledger.affordable(n)
    rewards = evaluate_batch(task, batch, ledger, state.seed, k)
    _update_best(state, batch, rewards, ledger)
    state.iteration += 1
    mean = float(rewards.mean())
    if k < n:
        # partial batch: keep its rewards for the best design, skip the update
        q, n_keep, updated = empirical_quantile(rewards, config.epsilon), 0, False
    else:
        params, q, n_keep = policy_update(params, batch, rewards, config)
        updated = True
    wall = (time.perf_counter() - t0) * 1e3 if config.record_wall_time else 0
    ledger.log(state.iteration, state.best_reward, mean, q, wall)
    return params, StepStats(state.iteration, k, mean, q, state.best_reward, n_keep, updated)


@dataclass
class RunResult:
    best: object  # HybridSequence
    best_reward: float
    ledger: EvalBudgetLedger
    params: object
    iterations: int
    wall_seconds: float


def _finish(state, ledger, params, t0):
    if state.best is None:
        raise EmptyBestError("budget too small for one batch; no design was evaluated")
    return RunResult(state.best[0], state.best[1], ledger, params, state.iteration, ledger_time(t0))


def ledger_time(t0):
    return time.perf_counter() - t0


def run(task, config, params=None, callback=None):
    """Train until the budget cannot cover another full batch (or the target
    reward is reached) and return the best design found.

    ``callback(stats, best)`` runs after every step with the current
    ``(sequence, reward)`` best; a truthy return stops training.
    """
    t0 = time.perf_counter()
    if params is None:
        params = init_policy(len(task.library), config.hidden_units, config.seed, sigma=config.sigma)
    ledger = EvalBudgetLedger.for_task(task, config.budget)
    state = TrainState(np.random.default_rng(config.seed), config.seed)
    while ledger.affordable(config.batch_size) == config.batch_size:
        params, stats = train_step(params, task, config, ledger, state)
        if callback is not None and callback(stats, state.best):
            break
        if config.target_reward is not None and state.best_reward >= config.target_reward:
            break
    return _finish(state, ledger, params, t0)
