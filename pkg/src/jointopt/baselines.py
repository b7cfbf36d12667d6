"""Decoupled comparison arm: sample a discrete skeleton, fit its continuous
slots with a black-box inner optimizer, train the skeleton policy on the
optimized rewards.

Every inner objective call is charged to the shared budget ledger.
"""

import time
from dataclasses import dataclass, field

import numpy as np

from .designs import serialize_tokens
from .policy import init_policy
from .sampler import placeholder_beta, sample_batch
from .sequence import HybridSequence
from .trainer import (
    BudgetExhausted,
    EvalBudgetLedger,
    StepStats,
    TrainState,
    _finish,
    empirical_quantile,
    eval_rng,
    policy_update,
)


@dataclass
class Skeleton:
    tokens: np.ndarray
    placeholders: np.ndarray  # betas used while sampling
    slots: np.ndarray  # positions of parameterized tokens
    # slots with finite sampling bounds are optimized in unit coordinates
    bounded: np.ndarray

    @property
    def p(self):
        return len(self.slots)

    def search_box(self):
        lo = np.where(self.bounded, 0.0, -np.inf)
        hi = np.where(self.bounded, 1.0, np.inf)
        return lo, hi

    def x0(self):
        # unit midpoint reproduces the placeholder descent; zeros when unbounded
        return np.where(self.bounded, 0.5, 0.0)


@dataclass
class InnerResult:
    x: np.ndarray
    reward: float
    n_evals: int


def make_skeleton(task, tokens, placeholders):
    tokens = np.asarray(tokens, dtype=int)
    param = task.library.parameterized
    slots = np.nonzero(param[tokens])[0]
    _, lo, hi = task.replay(tokens, placeholders)
    bounded = np.array([np.isfinite(lo[t, tokens[t]]) and np.isfinite(hi[t, tokens[t]])
                        for t in slots], dtype=bool)
    return Skeleton(tokens, np.asarray(placeholders, float), slots, bounded)


def sample_skeleton(params, task, rng):
    batch = sample_batch(params, task, 1, rng, skeleton=True)
    n = int(batch.lengths[0])
    return make_skeleton(task, batch.tokens[0, :n], batch.betas[0, :n])


def decode(task, skel, x):
    """Betas for the skeleton given inner coordinates ``x``.

    Bounded slots map (0, 1) onto the bounds in force at their position,
    which are recomputed as earlier slots change, inset so the remaining
    skeleton stays feasible. The map is piecewise linear through the
    placeholder, which ``u = 0.5`` reproduces exactly.
    """
    betas = skel.placeholders.copy()
    if skel.p == 0:
        return betas
    if not skel.bounded.any():
        betas[skel.slots] = x
        return betas
    lo_in, hi_in = task.decode_margins(skel.tokens)
    st = task.new_state()
    slot_of = {int(t): i for i, t in enumerate(skel.slots)}
    for t, tok in enumerate(skel.tokens):
        i = slot_of.get(t)
        if i is not None:
            if skel.bounded[i]:
                lo, hi = task.bounds(st)
                a, b = lo[tok], hi[tok]
                a_in, b_in = a + lo_in[t], b - hi_in[t]
                c = min(max(placeholder_beta(a, b), a_in), b_in)
                u = min(max(float(x[i]), 0.0), 1.0)
                s = 2.0 * u
                beta = (1.0 - s) * a_in + s * c if u <= 0.5 else (2.0 - s) * c + (s - 1.0) * b_in
                betas[t] = min(max(beta, np.nextafter(a, np.inf)), np.nextafter(b, -np.inf))
            else:
                betas[t] = x[i]
        task.advance(st, int(tok), float(betas[t]))
    return betas


# -- inner optimizers -----------------------------------------------------------

class _InnerBudgetSpent(Exception):
    pass


class _Counted:
    """Budget-capped objective that remembers the best point it has seen."""

    def __init__(self, objective, max_evals):
        self.objective = objective
        self.max_evals = max_evals
        self.calls = 0
        self.best_x = None
        self.best_f = -np.inf

    def __call__(self, x):
        if self.calls >= self.max_evals:
            raise _InnerBudgetSpent
        self.calls += 1
        f = float(self.objective(x))
        if self.best_x is None or f > self.best_f:
            self.best_x, self.best_f = np.array(x, dtype=float), f
        return f

    def result(self):
        return InnerResult(self.best_x, self.best_f, self.calls)


def _project(x, lo, hi):
    x = np.clip(x, lo, hi)
    # keep finite bounds open
    x = np.where(np.isfinite(lo) & (x <= lo), np.nextafter(lo, np.inf), x)
    x = np.where(np.isfinite(hi) & (x >= hi), np.nextafter(hi, -np.inf), x)
    return x


def _check_budget(max_evals):
    if max_evals < 1:
        raise ValueError("max_evals must be at least 1")


def optimize_anneal(objective, x0, bounds, max_evals, rng, t0=1.0, decay=0.95,
                    decay_every=10, step_frac=0.1):
    """Maximize by simulated annealing with Gaussian proposals.

    The proposal scale is ``step_frac`` of the box width per coordinate (1.0
    on unbounded ones); the temperature decays geometrically every
    ``decay_every`` proposals.
    """
    _check_budget(max_evals)
    lo, hi = (np.asarray(b, float) for b in bounds)
    width = hi - lo
    scale = np.where(np.isfinite(width), step_frac * width, 1.0)
    f = _Counted(objective, max_evals)
    x = _project(np.asarray(x0, float), lo, hi)
    try:
        fx = f(x)
        temp = t0
        k = 0
        while True:
            prop = _project(x + scale * rng.normal(size=x.shape), lo, hi)
            fp = f(prop)
            k += 1
            if fp >= fx or rng.random() < np.exp((fp - fx) / temp):
                x, fx = prop, fp
            if k % decay_every == 0:
                temp *= decay
    except _InnerBudgetSpent:
        pass
    return f.result()


def optimize_devo(objective, bounds, pop_size, max_evals, rng, x0=None, F=0.8, CR=0.9,
                  init_radius=5.0):
    """Maximize with DE/rand/1/bin.

    Unbounded coordinates are initialized uniformly within ``init_radius`` of
    ``x0`` (zeros by default).
    """
    if pop_size < 4:
        raise ValueError("differential evolution needs pop_size >= 4")
    _check_budget(max_evals)
    lo, hi = (np.asarray(b, float) for b in bounds)
    p = len(lo)
    centre = np.zeros(p) if x0 is None else np.asarray(x0, float)
    init_lo = np.where(np.isfinite(lo), lo, centre - init_radius)
    init_hi = np.where(np.isfinite(hi), hi, centre + init_radius)
    f = _Counted(objective, max_evals)
    pop = _project(rng.uniform(init_lo, init_hi, size=(pop_size, p)), lo, hi)
    fit = np.full(pop_size, -np.inf)
    try:
        for i in range(pop_size):
            fit[i] = f(pop[i])
        while True:
            for i in range(pop_size):
                others = [j for j in range(pop_size) if j != i]
                a, b, c = rng.choice(others, size=3, replace=False)
                mutant = pop[a] + F * (pop[b] - pop[c])
                cross = rng.random(p) < CR
                cross[rng.integers(p)] = True
                trial = _project(np.where(cross, mutant, pop[i]), lo, hi)
                ft = f(trial)
                if ft >= fit[i]:
                    pop[i], fit[i] = trial, ft
    except _InnerBudgetSpent:
        pass
    return f.result()


def _two_loop(g, mem):
    q = g.copy()
    alphas = []
    for s, y, rho in reversed(mem):
        a = rho * s @ q
        alphas.append(a)
        q -= a * y
    if mem:
        s, y, _ = mem[-1]
        q *= (s @ y) / (y @ y)
    for (s, y, rho), a in zip(mem, reversed(alphas)):
        b = rho * y @ q
        q += (a - b) * s
    return q


def optimize_fd_quasi_newton(objective, x0, bounds, max_evals, rel_step=1e-6, memory=10,
                             c1=1e-4, max_backtracks=30, gtol=1e-10):
    """Maximize with limited-memory BFGS on forward-difference gradients.

    Each gradient estimate evaluates the base point and one probe per
    coordinate (p + 1 calls). Steps are projected onto the box and accepted
    by an Armijo backtracking search.
    """
    _check_budget(max_evals)
    lo, hi = (np.asarray(b, float) for b in bounds)
    f = _Counted(objective, max_evals)
    # minimize the negated reward
    x = _project(np.asarray(x0, float), lo, hi)
    p = len(x)

    def grad(x):
        fx = -f(x)
        if not np.isfinite(fx):
            raise ValueError("objective is not finite at the current point")
        g = np.empty(p)
        for i in range(p):
            h = rel_step * max(abs(x[i]), 1.0)
            if x[i] + h >= hi[i]:
                h = -h
            xp = x.copy()
            xp[i] += h
            g[i] = (-f(xp) - fx) / h
        return fx, g

    mem = []
    try:
        fx, g = grad(x)
        if p == 0:
            return f.result()
        while True:
            d = -_two_loop(g, mem)
            if not d @ g < 0:
                d = -g
                mem.clear()
            if not mem:
                d = d / max(np.linalg.norm(d), 1e-300) * min(1.0, np.linalg.norm(x) + 1.0)
            t = 1.0
            for _ in range(max_backtracks):
                x_new = _project(x + t * d, lo, hi)
                f_new = -f(x_new)
                if np.isfinite(f_new) and f_new <= fx + c1 * g @ (x_new - x):
                    break
                t *= 0.5
            else:
                break
            if np.all(x_new == x):
                break
            fx_new, g_new = grad(x_new)
            s, y = x_new - x, g_new - g
            if s @ y > 1e-12:
                mem.append((s, y, 1.0 / (s @ y)))
                if len(mem) > memory:
                    mem.pop(0)
            x, fx, g = x_new, fx_new, g_new
            if np.linalg.norm(g) < gtol:
                break
    except _InnerBudgetSpent:
        pass
    return f.result()


INNER = ("anneal", "evo", "bfgs")


def run_inner(name, objective, skel, max_evals, rng, settings=None):
    settings = settings or {}
    box = skel.search_box()
    x0 = skel.x0()
    if name == "anneal":
        return optimize_anneal(objective, x0, box, max_evals, rng, **settings)
    if name == "evo":
        return optimize_devo(objective, box, settings.pop("pop_size", 15), max_evals, rng,
                             x0=x0, **settings)
    if name == "bfgs":
        return optimize_fd_quasi_newton(objective, x0, box, max_evals, **settings)
    raise ValueError(f"unknown inner optimizer {name!r}; choose from {INNER}")


# -- training -----------------------------------------------------------------------

@dataclass
class AuditRow:
    skeleton: str
    inner_evals: int
    best_reward: float


@dataclass
class DecoupledState(TrainState):
    audit: list = field(default_factory=list)


def _skeleton_objective(task, skel, ledger, state):
    """Reward of the skeleton completed by ``x``; charges the ledger and
    tracks the run-level best design."""

    def objective(x):
        betas = decode(task, skel, x)
        rng = eval_rng(state.seed, ledger.n_evals) if task.stochastic else None
        ledger.charge(1)
        r = float(task.evaluate(skel.tokens, betas, rng))
        if r > state.best_reward:
            state.best_reward = r
            state.best = _best_sequence(task, skel.tokens, betas, r)
            ledger.improvements.append((ledger.n_evals, r))
        return r

    return objective


def decoupled_train_step(params, task, inner, inner_budget, config, ledger, state,
                         inner_settings=None):
    if ledger.affordable(1) == 0:
        raise BudgetExhausted("no budget left for a single evaluation")
    t0 = time.perf_counter()
    n = config.batch_size
    batch = sample_batch(params, task, n, state.rng, skeleton=True)
    rewards = []
    for i in range(n):
        avail = ledger.affordable(inner_budget)
        if avail == 0:
            break
        k = int(batch.lengths[i])
        skel = make_skeleton(task, batch.tokens[i, :k], batch.betas[i, :k])
        objective = _skeleton_objective(task, skel, ledger, state)
        if skel.p == 0:
            res = InnerResult(np.zeros(0), objective(np.zeros(0)), 1)
        else:
            res = run_inner(inner, objective, skel, avail, state.rng, dict(inner_settings or {}))
        rewards.append(res.reward)
        state.audit.append(AuditRow(serialize_tokens(task.library, skel.tokens, skel.placeholders),
                                    res.n_evals, res.reward))
    rewards = np.array(rewards)
    state.iteration += 1
    mean = float(rewards.mean())
    if len(rewards) < n:
        q, n_keep, updated = empirical_quantile(rewards, config.epsilon), 0, False
    else:
        params, q, n_keep = policy_update(params, batch, rewards, config)
        updated = True
    wall = (time.perf_counter() - t0) * 1e3 if config.record_wall_time else 0
    ledger.log(state.iteration, state.best_reward, mean, q, wall)
    return params, StepStats(state.iteration, len(rewards), mean, q, state.best_reward,
                             n_keep, updated)


def _best_sequence(task, tokens, betas, r):
    priors, lo, hi = task.replay(tokens, betas)
    seq = HybridSequence(np.asarray(tokens), np.asarray(betas), priors, lo, hi,
                         task.library.parameterized.copy(), task.name)
    return seq, r


def run_decoupled(task, config, inner="anneal", inner_budget=100, params=None,
                  inner_settings=None, callback=None):
    """Decoupled training until the budget is spent (or the target is hit)."""
    t0 = time.perf_counter()
    if inner not in INNER:
        raise ValueError(f"unknown inner optimizer {inner!r}; choose from {INNER}")
    if inner_budget < 1:
        raise ValueError("inner_budget must be at least 1")
    if params is None:
        params = init_policy(len(task.library), config.hidden_units, config.seed, sigma=config.sigma)
    ledger = EvalBudgetLedger.for_task(task, config.budget)
    state = DecoupledState(np.random.default_rng(config.seed), config.seed)
    while ledger.affordable(config.batch_size) == config.batch_size:
        params, stats = decoupled_train_step(params, task, inner, inner_budget, config, ledger,
                                             state, inner_settings)
        if callback is not None and callback(stats, state.best):
            break
        if not stats.updated:
            break
        if config.target_reward is not None and state.best_reward >= config.target_reward:
            break
    result = _finish(state, ledger, params, t0)
    result.audit = state.audit
    return result
