import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from jointopt.designs import parse_tokens
from jointopt.policy import init_policy
from jointopt.sampler import sample_batch
from jointopt.tasks.symreg import (
    TRIG,
    Dataset,
    DegenerateDataset,
    MalformedExpression,
    SymbolicRegressionTask,
    benchmark_info,
    benchmark_names,
    eval_expression,
    load_benchmark,
    nmse,
    sr_library,
    sr_reward,
)
from oracles import count_feasible_completions, stack_eval

LIB2 = sr_library(2)


def tok(text, lib=LIB2):
    return parse_tokens(text, lib)


def test_eval_example():
    g = np.linspace(-3, 3, 10)
    X = np.array([(x, y) for x in g for y in g])
    t, b = tok("add,cos,x2,mul,const(3.14),sin,x1")
    out = eval_expression(LIB2, t, b, X)
    assert np.allclose(out, np.cos(X[:, 1]) + 3.14 * np.sin(X[:, 0]), atol=1e-12, rtol=0)


def test_identity_and_division_by_zero():
    X = np.array([[0.0, 1.0], [2.0, 3.0]])
    t, b = tok("x1")
    assert np.array_equal(eval_expression(LIB2, t, b, X), X[:, 0])
    t, b = tok("div,const(1.0),x1")
    out = eval_expression(LIB2, t, b, X)
    assert not np.isfinite(out[0]) and out[1] == 0.5


def test_malformed_expression():
    with pytest.raises(MalformedExpression):
        eval_expression(LIB2, *tok("add,x1"), np.zeros((1, 2)))
    with pytest.raises(MalformedExpression):
        eval_expression(LIB2, *tok("x1,x2"), np.zeros((1, 2)))


def random_traversal(rng, lib, max_len=15):
    while True:
        tokens, betas, open_ = [], [], 1
        while open_ and len(tokens) < max_len:
            k = int(rng.integers(len(lib)))
            tokens.append(k)
            betas.append(float(rng.normal(0, 2)) if lib.parameterized[k] else 0.0)
            open_ += lib.arity[k] - 1
        if not open_:
            return tokens, betas


def test_evaluator_matches_stack_machine():
    rng = np.random.default_rng(0)
    X = rng.uniform(-2, 2, size=(30, 2))
    for _ in range(100):
        t, b = random_traversal(rng, LIB2)
        ours = eval_expression(LIB2, t, b, X)
        ref = stack_eval([LIB2[k].name for k in t], b, X)
        both = np.isfinite(ours) & np.isfinite(ref)
        assert np.array_equal(np.isfinite(ours), np.isfinite(ref))
        assert np.allclose(ours[both], ref[both], rtol=1e-12, atol=1e-12)


def dataset(y, X=None):
    y = np.asarray(y, float)
    X = np.zeros((len(y), 1)) if X is None else X
    return Dataset(X, y, "t", (0, 1, len(y)), "train")


def test_rewards():
    lib = sr_library(1)
    X = np.linspace(0.5, 2, 8)[:, None]
    y = 1.5 * np.sqrt(X[:, 0])
    d = dataset(y, X)
    assert sr_reward(lib, *parse_tokens("mul,const(1.5),sqrt,x1", lib), d) == 1.0
    mean = float(np.mean(y))
    assert sr_reward(lib, *parse_tokens(f"const({mean!r})", lib), d) == pytest.approx(0.5)
    assert sr_reward(lib, *parse_tokens("log,sub,x1,const(1.0)", lib), d) == 0.0
    with pytest.raises(DegenerateDataset):
        nmse(np.zeros(3), np.ones(3))
    with pytest.raises(ValueError):
        dataset([1.0, np.nan])


@settings(max_examples=200, deadline=None)
@given(seed=st.integers(0, 2**31))
def test_reward_in_unit_interval(seed):
    rng = np.random.default_rng(seed)
    lib = sr_library(1)
    X = rng.uniform(-3, 3, size=(12, 1))
    d = dataset(np.sin(X[:, 0]) + X[:, 0], X)
    r = sr_reward(lib, *random_traversal(rng, lib), d)
    assert 0.0 <= r <= 1.0


def state_after(task, text):
    s = task.new_state()
    for t, b in zip(*parse_tokens(text, task.library)):
        task.advance(s, t, b)
    return s


def masked_names(task, s):
    pr = task.prior(s)
    return {task.library[k].name for k in np.nonzero(pr == -np.inf)[0]}


@pytest.fixture(scope="module")
def jin1():
    return SymbolicRegressionTask("Jin-1")


def test_min_length_rule(jin1):
    assert masked_names(jin1, state_after(jin1, "sin")) == {"x1", "x2", "const"} | set(TRIG)
    assert masked_names(jin1, state_after(jin1, "exp")) == {"x1", "x2", "const"}
    assert masked_names(jin1, jin1.new_state()) == {"x1", "x2", "const"}
    assert masked_names(jin1, state_after(jin1, "add,x1")) == {"x1", "x2", "const"}
    assert masked_names(jin1, state_after(jin1, "add,sin,x1")) == set()


def test_trig_rule(jin1):
    s = state_after(jin1, "add,x1,cos,div,const(1.0)")
    assert masked_names(jin1, s) == set(TRIG)


def test_length_31_one_slot_only_terminals(jin1):
    s = jin1.new_state()
    s.length, s.slots = 31, [False]
    allowed = {jin1.library[k].name for k in np.nonzero(jin1.prior(s) == 0)[0]}
    assert allowed == {"x1", "x2", "const"}


@pytest.mark.parametrize("max_len", [5, 6, 8])
def test_length_mask_matches_brute_force(max_len):
    task = SymbolicRegressionTask("Jin-1", min_length=1, max_length=max_len)
    arities = sorted(set(int(a) for a in task.library.arity))
    for length in range(max_len):
        for s in range(1, max_len - length + 1):
            st_ = task.new_state()
            st_.length, st_.slots = length, [False] * s
            pr = task.prior(st_)
            for k, a in enumerate(task.library.arity):
                feasible = count_feasible_completions(arities, length + 1, s - 1 + int(a), max_len)
                assert (pr[k] == 0.0) == feasible


def has_nested_trig(lib, tokens):
    # walk with an explicit ancestor stack
    slots = [False]
    for k in tokens:
        under = slots.pop()
        name = lib[k].name
        if name in TRIG and under:
            return True
        slots.extend([under or name in TRIG] * int(lib.arity[k]))
    return False


def test_sampled_expressions_respect_constraints(jin1):
    params = init_policy(len(jin1.library), 32, 0)
    batch = sample_batch(params, jin1, 2000, np.random.default_rng(0))
    assert np.all((batch.lengths >= 4) & (batch.lengths <= 32))
    for i in range(len(batch)):
        assert not has_nested_trig(jin1.library, batch.tokens[i, :batch.lengths[i]])


def test_benchmark_domains():
    train, test, d, _ = load_benchmark("Constant-5", seed=0)
    assert d == 1 and train.X.shape == (20, 1) and test.X.shape == (40, 1)
    assert np.all((train.X > 0) & (train.X < 4)) and np.all((test.X > 0) & (test.X < 8))
    train, _, d, _ = load_benchmark("Jin-1", seed=0)
    assert d == 2 and train.X.shape == (100, 2)
    assert train.X.min() >= -3 and train.X.max() <= 3
    a, b = load_benchmark("Jin-1", 5)[0], load_benchmark("Jin-1", 5)[0]
    assert np.array_equal(a.X, b.X) and np.array_equal(a.y, b.y)
    with pytest.raises(KeyError):
        benchmark_info("Nguyen-99")


@pytest.mark.parametrize("name", benchmark_names())
def test_ground_truth_scores_one_and_is_feasible(name):
    task = SymbolicRegressionTask(name, max_length=64)
    t, b = task.ground_truth
    assert task.evaluate(t, b) == 1.0
    assert task.test_reward(t, b) == 1.0
    task.replay(t, b)


def test_constant_benchmarks_closed_forms():
    train, _, _, _ = load_benchmark("Constant-5", seed=2)
    assert np.allclose(train.y, 1.5 * np.sqrt(train.X[:, 0]), rtol=1e-14)
    train, _, _, _ = load_benchmark("Constant-2", seed=2)
    x = train.X[:, 0]
    info = benchmark_info("Constant-2")
    assert info["d"] == 1 and tuple(info["domain"]) == (-1, 1)
    assert np.all(np.isfinite(train.y)) and x.shape == (20,)
