import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from jointopt.envs import EnvironmentSpec
from jointopt.policy import init_policy
from jointopt.sampler import sample_batch
from jointopt.tasks.dtree import (
    DecisionTreeTask,
    MalformedTree,
    build_tree,
    eval_tree,
    eval_tree_batch,
    param_bounds,
    validate_traversal,
)

# two features on [0, 5] x [1, 8], three actions
TOY = EnvironmentSpec("toy", 2, 3, (0.0, 1.0), (5.0, 8.0), 10, 1.0)

# x1<2, a2, x2<6, x1<3, a1, a3, a2 with x1 -> 0, x2 -> 1, a_k -> 2 + k - 1
FIG_TOKENS = [0, 3, 1, 0, 2, 4, 3]
FIG_BETAS = [2.0, 0, 6.0, 3.0, 0, 0, 0]


def test_figure_tree_walks():
    tree = build_tree(FIG_TOKENS, FIG_BETAS, 2)
    assert eval_tree(tree, np.array([1.0, 7.0])) == 1  # a2
    assert eval_tree(tree, np.array([2.5, 3.0])) == 0  # a1
    assert eval_tree(tree, np.array([4.0, 3.0])) == 2  # a3
    assert eval_tree(tree, np.array([4.0, 7.0])) == 1


def test_single_leaf():
    tree = build_tree([2], [0.0], 2)
    assert eval_tree(tree, np.array([100.0, -3.0])) == 0


def test_malformed():
    with pytest.raises(MalformedTree):
        build_tree([0, 2], [1.0, 0.0], 2)
    with pytest.raises(MalformedTree):
        build_tree([2, 3], [0.0, 0.0], 2)


def test_batch_eval_matches_scalar():
    tree = build_tree(FIG_TOKENS, FIG_BETAS, 2)
    obs = np.random.default_rng(0).uniform([0, 1], [5, 8], size=(500, 2))
    assert np.array_equal(eval_tree_batch(tree, obs), [eval_tree(tree, o) for o in obs])


def test_param_bounds_figure_examples():
    h = 0.05
    lo, hi = param_bounds(0, 2.0, [0.0, 1.0], [5.0, 8.0], "left", h)
    assert lo.tolist() == [0.0, 1.0] and hi.tolist() == [2.0 - h, 8.0]
    lo, hi = param_bounds(0, 2.0, [0.0, 1.0], [5.0, 8.0], "right", h)
    assert lo.tolist() == [2.0 + h, 1.0] and hi.tolist() == [5.0, 8.0]


def test_param_bounds_clamp():
    h = 0.1
    lo, hi = param_bounds(0, 0.05, [0.0], [h], "right", h)
    assert lo[0] == pytest.approx(h - h / 2) and hi[0] == h
    lo, hi = param_bounds(0, 0.05, [0.0], [h], "left", h)
    assert lo[0] == 0.0 and hi[0] == pytest.approx(h / 2)
    with pytest.raises(ValueError):
        param_bounds(0, 0.0, [0.0], [1.0], "up", h)


@settings(max_examples=300, deadline=None)
@given(lo=st.floats(-10, 10), width=st.floats(1e-3, 10), u=st.floats(0.001, 0.999),
       hf=st.floats(1e-3, 0.5), side=st.sampled_from(["left", "right"]))
def test_param_bounds_nested_and_valid(lo, width, u, hf, side):
    hi = lo + width
    beta = lo + u * width
    h = hf * width
    clo, chi = param_bounds(0, beta, [lo], [hi], side, h)
    assert clo[0] < chi[0]
    assert chi[0] - clo[0] >= min(h / 2, width) * (1 - 1e-9)


def state_after(task, tokens, betas):
    s = task.new_state()
    for t, b in zip(tokens, betas):
        task.advance(s, t, b)
    return s


def test_sibling_rule():
    task = DecisionTreeTask(TOY, h_frac=0.01, normalize=False)
    s = state_after(task, [0, 3], [2.0, 0.0])  # x1<2, left leaf a2
    pr = task.prior(s)
    assert pr[3] == -np.inf and pr[2] == 0.0 and pr[4] == 0.0


def test_width_rule_masks_narrow_feature():
    task = DecisionTreeTask(TOY, h_frac=0.1, normalize=False)  # h = (0.5, 0.7)
    # go right of x1 < 4.9: interval (5.0 - 0.25, 5.0), width h/2
    s = state_after(task, [0, 2], [4.9, 0.0])
    lo, hi = task.bounds(s)
    assert hi[0] - lo[0] == pytest.approx(0.25)
    pr = task.prior(s)
    assert pr[0] == -np.inf and pr[1] == 0.0


def test_fresh_prefix_only_width_masks():
    task = DecisionTreeTask("cartpole")
    assert not np.any(task.prior(task.new_state()))


def test_completion_forcing():
    task = DecisionTreeTask(TOY, max_length=5, normalize=False)
    s = state_after(task, [0], [2.0])
    # length 1, two open slots: another decision needs 1 + 2 + 2 = 5 <= 5
    assert task.prior(s)[0] == 0.0
    s = state_after(task, [0, 1], [2.0, 4.0])
    assert np.all(task.prior(s)[:2] == -np.inf)


def test_sampled_trees_valid():
    task = DecisionTreeTask("cartpole")
    params = init_policy(len(task.library), 32, 1)
    batch = sample_batch(params, task, 1000, np.random.default_rng(1))
    for i in range(len(batch)):
        seq = batch.sequence(i)
        assert len(seq) <= 32
        assert task.validate(seq.tokens, seq.betas) == []
        n_dec = sum(1 for t in seq.tokens if t < task.n_features)
        assert len(seq) - n_dec == n_dec + 1


def test_validator_catches_violations():
    task = DecisionTreeTask(TOY, normalize=False)
    assert validate_traversal([0, 2, 2], [2.0, 0, 0], 2, task.root_lo, task.root_hi, task.h)
    assert validate_traversal([0, 0, 2, 3, 4], [2.0, 3.0, 0, 0, 0], 2, task.root_lo, task.root_hi,
                              task.h)
    assert not task.validate(FIG_TOKENS, FIG_BETAS)


def test_sampled_trees_total_on_grid():
    task = DecisionTreeTask(TOY, normalize=False)
    params = init_policy(len(task.library), 8, 0)
    batch = sample_batch(params, task, 50, np.random.default_rng(0))
    g = np.stack(np.meshgrid(np.linspace(-1, 6, 30), np.linspace(0, 9, 30)), -1).reshape(-1, 2)
    for i in range(len(batch)):
        seq = batch.sequence(i)
        acts = eval_tree_batch(task.tree(seq.tokens, seq.betas), g)
        assert np.all((acts >= 0) & (acts < 3))


def test_energy_pumping_mountaincar_tree():
    task = DecisionTreeTask("mountaincar")
    # v < 0 -> push left (a1), otherwise push right (a3)
    tokens = [1, task.n_features + 0, task.n_features + 2]
    r = task.evaluate(tokens, [0.0, 0.0, 0.0], np.random.default_rng(0))
    assert r > -130


def test_evaluate_deterministic_in_rng():
    task = DecisionTreeTask("cartpole", n_episodes=1)
    t = [task.n_features]  # constant "left"
    a = task.evaluate(t, [0.0], np.random.default_rng(3))
    b = task.evaluate(t, [0.0], np.random.default_rng(3))
    assert a == b and a < 30


def test_library_layout():
    task = DecisionTreeTask("acrobot")
    lib = task.library
    assert len(lib) == 6 + 3
    for j in range(6):
        assert lib.parameterized[j] and lib[j].arity == 2
        assert tuple(lib[j].range) == (task.root_lo[j], task.root_hi[j])
    assert not any(lib.parameterized[6:])
