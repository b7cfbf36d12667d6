"""End-to-end acceptance checks, one test per criterion.

Each test records a single PASS/FAIL line that the terminal summary prints.
The control and symbolic-regression runs read their training settings from
the shipped configs in ``configs/``.
"""

import math
import time
from pathlib import Path

import numpy as np

from conftest import ACCEPTANCE_LINES
from jointopt import truncnorm
from jointopt.baselines import run_decoupled
from jointopt.designs import parse_tokens
from jointopt.evaluation import fresh_return, seeded, train_until_recovered
from jointopt.harness import ExperimentConfig, run_experiment
from jointopt.policy import (
    finite_diff_gradient,
    init_policy,
    loss_gradient,
    objective,
    sequence_entropy,
    sequence_log_prob,
)
from jointopt.sampler import masked_probs, sample_batch
from jointopt.sequence import HybridSequence
from jointopt.tasks.bitstring import BitstringTask, make_instance
from jointopt.tasks.dtree import DecisionTreeTask, build_tree, eval_tree
from jointopt.tasks.symreg import TRIG, SymbolicRegressionTask, eval_expression, sr_library
from jointopt.trainer import TrainConfig, run
from cases import gradcheck_case, max_relative_error
from oracles import ks_statistic, truncnorm_cdf

CONFIGS = Path(__file__).resolve().parent.parent / "configs"
SEEDS = range(5)
FRESH_EPISODES = 100


def record(n, ok, detail):
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'} - {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def from_config(name, seed):
    cfg = ExperimentConfig.load(CONFIGS / name)
    return cfg.task_for_seed(seed), seeded(cfg.train, seed)


# 1 ---------------------------------------------------------------------------------

def test_criterion_1_gradient_exactness():
    t0 = time.perf_counter()
    worst = 0.0
    for seed in range(24):
        params, batch, w, lam = gradcheck_case(seed)
        g = loss_gradient(params, batch, w, lam)
        fd = finite_diff_gradient(params.theta, lambda th: objective(params, batch, w, lam, theta=th))
        worst = max(worst, max_relative_error(g, fd))
    elapsed = time.perf_counter() - t0
    ok = worst < 1e-4 and elapsed < 60
    assert record(1, ok, f"24 policy/batch pairs, max rel error {worst:.2e}, {elapsed:.1f}s")


# 2 ---------------------------------------------------------------------------------

def test_criterion_2_hybrid_density():
    exact = True
    tasks = [DecisionTreeTask("cartpole"), SymbolicRegressionTask("Jin-1"),
             BitstringTask(make_instance(10, seed=0))]
    masked_zero = True
    for i, task in enumerate(tasks):
        params = init_policy(len(task.library), 32, i)
        batch = sample_batch(params, task, 100, np.random.default_rng(i))
        rng = np.random.default_rng(i)
        for j in range(len(batch)):
            seq = batch.sequence(j)
            total, steps = sequence_log_prob(params, seq)
            exact &= total == sum(steps)
            logits = rng.normal(scale=5.0, size=seq.priors.shape)
            probs = masked_probs(logits, seq.priors)
            masked_zero &= bool(np.all(probs[np.isinf(seq.priors)] == 0.0))
    worst = 0.0
    for k in (2, 3, 5, 10, 37):
        p = init_policy(k, 8, 0)
        p.theta[:] = 0.0
        seq = HybridSequence(np.array([0]), np.array([0.0]), np.zeros((1, k)),
                             np.full((1, k), -np.inf), np.full((1, k), np.inf), np.zeros(k, bool))
        worst = max(worst, abs(sequence_entropy(p, seq) - math.log(k)))
    ok = exact and masked_zero and worst < 1e-10
    assert record(2, ok, f"sum of steps exact: {exact}; masked prob 0: {masked_zero}; "
                         f"uniform entropy error {worst:.1e}")


# 3 ---------------------------------------------------------------------------------

def nested_trig(lib, tokens):
    slots = [False]
    for k in tokens:
        under = slots.pop()
        is_trig = lib[k].name in TRIG
        if is_trig and under:
            return True
        slots.extend([under or is_trig] * int(lib.arity[k]))
    return False


def test_criterion_3_constraint_soundness():
    t0 = time.perf_counter()
    sr = SymbolicRegressionTask("Jin-1")
    sr_bad = 0
    for chunk in range(10):
        b = sample_batch(init_policy(len(sr.library), 32, chunk), sr, 1000,
                         np.random.default_rng(chunk))
        for i in range(len(b)):
            n = int(b.lengths[i])
            sr_bad += (not 4 <= n <= 32) or nested_trig(sr.library, b.tokens[i, :n])
    dt = DecisionTreeTask("cartpole")
    dt_bad = 0
    for chunk in range(10):
        b = sample_batch(init_policy(len(dt.library), 32, chunk), dt, 1000,
                         np.random.default_rng(100 + chunk))
        for i in range(len(b)):
            seq = b.sequence(i)
            dt_bad += bool(dt.validate(seq.tokens, seq.betas))
    elapsed = time.perf_counter() - t0
    ok = sr_bad == 0 and dt_bad == 0 and elapsed < 300
    assert record(3, ok, f"10^4 SR violations {sr_bad}, 10^4 DT violations {dt_bad}, {elapsed:.0f}s")


# 4 ---------------------------------------------------------------------------------

def test_criterion_4_evaluator_oracles():
    lib = sr_library(2)
    g = np.linspace(-2 * np.pi, 2 * np.pi, 10)
    X = np.array([(x, y) for x in g for y in g])
    t, b = parse_tokens("add,cos,x2,mul,const(3.14),sin,x1", lib)
    assert len(X) == 100
    err = float(np.max(np.abs(eval_expression(lib, t, b, X) - (np.cos(X[:, 1]) + 3.14 * np.sin(X[:, 0])))))
    tree = build_tree([0, 3, 1, 0, 2, 4, 3], [2.0, 0, 6.0, 3.0, 0, 0, 0], 2)
    walk = (eval_tree(tree, np.array([1.0, 7.0])), eval_tree(tree, np.array([2.5, 3.0])))
    ok = err <= 1e-12 and walk == (1, 0)
    assert record(4, ok, f"expression max error {err:.1e} on 100 points; "
                         f"tree walk (1,7)->a{walk[0] + 1}, (2.5,3)->a{walk[1] + 1}")


# 5 ---------------------------------------------------------------------------------

def test_criterion_5_truncated_normal():
    settings = [(0.0, 0.5, -0.3, 0.8), (2.0, 0.5, 0.0, 1.0), (-1.0, 2.0, -np.inf, 0.5)]
    worst, inside = 0.0, True
    for i, (mu, sd, lo, hi) in enumerate(settings):
        u = np.random.default_rng(i).random(100_000)
        x = truncnorm.sample(np.full(u.size, mu), sd, np.full(u.size, lo), np.full(u.size, hi), u)
        inside &= bool(np.all((x > lo) & (x < hi)))
        worst = max(worst, ks_statistic(x, lambda v: truncnorm_cdf(v, mu, sd, lo, hi)))
    ok = inside and worst < 0.01
    assert record(5, ok, f"3 settings x 10^5 draws, all inside: {inside}, max KS {worst:.4f}")


# 6 ---------------------------------------------------------------------------------

def test_criterion_6_bitstring_end_to_end():
    rows = []
    for seed in SEEDS:
        task = BitstringTask(make_instance(10, 0.9, "f2", seed))
        cfg = TrainConfig(batch_size=500, budget=200_000, seed=seed)
        t0 = time.perf_counter()
        joint = run(task, cfg)
        t1 = time.perf_counter()
        dec = run_decoupled(task, cfg, "anneal", 100)
        t2 = time.perf_counter()
        rows.append((joint.best_reward, joint.ledger.evals_to_reach(0.9),
                     dec.ledger.evals_to_reach(0.9), t1 - t0, t2 - t1))
    n_best = sum(r[0] >= 0.95 for r in rows)
    inf = math.inf
    n_faster = sum((r[1] if r[1] is not None else inf) < (r[2] if r[2] is not None else inf)
                   for r in rows)
    slowest = max(max(r[3], r[4]) for r in rows)
    ok = n_best >= 4 and n_faster >= 4 and slowest <= 1800
    detail = "; ".join(f"s{s}: best {r[0]:.3f}, 0.9 at {r[1]} vs {r[2]}" for s, r in zip(SEEDS, rows))
    assert record(6, ok, f"best>=0.95 in {n_best}/5, joint first in {n_faster}/5, "
                         f"max {slowest:.0f}s per run [{detail}]")


# 7 / 8 -------------------------------------------------------------------------------

def control_criterion(config, passes):
    rows = []
    for seed in SEEDS:
        task, tc = from_config(config, seed)
        t0 = time.perf_counter()
        res = run(task, tc)
        secs = time.perf_counter() - t0
        rows.append((fresh_return(task, res.best, seed, FRESH_EPISODES), res.ledger.n_episodes, secs))
    good = sum(passes(r[0]) for r in rows)
    slowest = max(r[2] for r in rows)
    detail = "; ".join(f"s{s}: {r[0]:.2f} after {r[1]} episodes" for s, r in zip(SEEDS, rows))
    return good, slowest, detail


def test_criterion_7_cartpole():
    good, slowest, detail = control_criterion("cartpole.yaml", lambda r: r >= 500.0)
    ok = good >= 3 and slowest <= 7200
    assert record(7, ok, f"fresh mean return 500 in {good}/5 seeds, max {slowest:.0f}s [{detail}]")


def test_criterion_8_mountaincar():
    good, slowest, detail = control_criterion("mountaincar.yaml", lambda r: r >= -115.0)
    ok = good >= 3
    assert record(8, ok, f"fresh mean return >= -115 in {good}/5 seeds, max {slowest:.0f}s [{detail}]")


# 9 ---------------------------------------------------------------------------------

def recovery_runs(config):
    out = []
    for seed in SEEDS:
        task, tc = from_config(config, seed)
        out.append(train_until_recovered(task, tc, 0.999))
    return out


def test_criterion_9_symbolic_regression():
    c5 = recovery_runs("symreg_constant5.yaml")
    c2 = recovery_runs("symreg_constant2.yaml")
    n5 = sum(r.recovered for r in c5)
    n2 = sum(r.recovered for r in c2)
    ok = n5 >= 3 and n2 >= 2 and all(r.n_evals <= 10**6 for r in c5 + c2)

    def fmt(rows):
        return ", ".join(f"{r.test_reward:.4f} at {r.n_evals}" for r in rows)

    assert record(9, ok, f"Constant-5 recovered {n5}/5 [{fmt(c5)}]; "
                         f"Constant-2 recovered {n2}/5 [{fmt(c2)}]")


# 10 --------------------------------------------------------------------------------

class Audited:
    """Wraps a task so every objective call is counted independently of the ledger."""

    def __init__(self, task):
        self.task = task
        self.calls = 0
        self.episodes = 0
        original = task.evaluate

        def evaluate(tokens, betas, rng=None):
            self.calls += 1
            self.episodes += task.episodes_per_eval
            return original(tokens, betas, rng)

        task.evaluate = evaluate


def test_criterion_10_budget_audit():
    cases = []
    for method in ("joint", "anneal", "evo", "bfgs"):
        for make, budget in ((lambda: BitstringTask(make_instance(8, seed=1)), 3000),
                             (lambda: SymbolicRegressionTask("Constant-1"), 3000),
                             (lambda: DecisionTreeTask("cartpole", n_episodes=5), 2000)):
            audit = Audited(make())
            cfg = TrainConfig(batch_size=10, budget=budget, seed=3)
            if method == "joint":
                res = run(audit.task, cfg)
            else:
                res = run_decoupled(audit.task, cfg, method, 23)
            ledger_total = res.ledger.n_evals
            ok = audit.calls == ledger_total and audit.episodes == res.ledger.n_episodes
            if method != "joint":
                ok &= sum(r.inner_evals for r in res.audit) == ledger_total
            cases.append((method, audit.task.name, audit.calls, ledger_total, ok))
    ok = all(c[4] for c in cases)
    bad = [c for c in cases if not c[4]]
    assert record(10, ok, f"{len(cases)} method/task runs, wrapper count == ledger in "
                          f"{len(cases) - len(bad)}/{len(cases)}" + (f" mismatches {bad}" if bad else ""))


# 11 --------------------------------------------------------------------------------

def test_criterion_11_determinism(tmp_path):
    configs = []
    for method in ("joint", "decoupled-anneal", "decoupled-evo", "decoupled-bfgs"):
        configs.append({"task": {"name": "bitstring", "T": 6}, "method": {"name": method, "inner_budget": 10},
                        "train": {"batch_size": 20, "budget": 600}, "seeds": [0, 1]})
    configs.append({"task": {"name": "dtree", "env": "mountaincar", "n_episodes": 3},
                    "train": {"batch_size": 10, "budget": 300}, "seeds": [2]})
    configs.append({"task": {"name": "symreg", "benchmark": "Jin-1"},
                    "train": {"batch_size": 20, "budget": 200}, "seeds": [4]})
    same = 0
    for i, cfg in enumerate(configs):
        outs = []
        for rep in ("a", "b"):
            out = tmp_path / f"{i}{rep}"
            assert run_experiment({**cfg, "output_dir": str(out)}, log=lambda *_: None) == 0
            outs.append(sorted((p.relative_to(out), p.read_bytes()) for p in out.rglob("ledger.csv")))
        same += outs[0] == outs[1]
    ok = same == len(configs)
    assert record(11, ok, f"{same}/{len(configs)} configs rerun with byte-identical ledgers")
