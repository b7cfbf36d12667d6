"""Univariate decision-tree policies for discrete-action control.

A traversal is the pre-order listing of a binary tree whose internal nodes
are tests ``x_j < beta`` (left branch when true) and whose leaves are
actions. Thresholds are sampled inside nested per-feature bounds that
shrink as the sampler descends the tree.
"""

from dataclasses import dataclass

import numpy as np

from .. import envs
from ..library import build_library
from .base import Task


def param_bounds(parent_feature, parent_beta, parent_lo, parent_hi, side, h):
    """Bounds for a child of the decision node ``x_j < parent_beta``.

    The child inherits every feature interval from its parent; only the
    parent's own feature moves, by the resolution ``h``, with a clamp that
    keeps at least ``h / 2`` between the two ends.
    """
    lo = np.array(parent_lo, dtype=float)
    hi = np.array(parent_hi, dtype=float)
    j = parent_feature
    if side == "right":
        lo[j] = parent_beta + h
        if hi[j] - lo[j] < h:
            lo[j] = hi[j] - h / 2
    elif side == "left":
        hi[j] = parent_beta - h
        if hi[j] - lo[j] < h:
            hi[j] = lo[j] + h / 2
    else:
        raise ValueError(f"side must be 'left' or 'right', not {side!r}")
    return lo, hi


@dataclass
class Node:
    feature: int = -1  # -1 for a leaf
    threshold: float = 0.0
    action: int = -1
    left: "Node" = None
    right: "Node" = None

    @property
    def is_leaf(self):
        return self.feature < 0


class MalformedTree(ValueError):
    pass


def build_tree(tokens, betas, n_features):
    """Parse a pre-order traversal into nested nodes."""
    pos = 0

    def rec():
        nonlocal pos
        if pos >= len(tokens):
            raise MalformedTree("traversal ends before the tree is complete")
        tok, beta = int(tokens[pos]), float(betas[pos])
        pos += 1
        if tok < n_features:
            left = rec()
            right = rec()
            return Node(feature=tok, threshold=beta, left=left, right=right)
        return Node(action=tok - n_features)

    root = rec()
    if pos != len(tokens):
        raise MalformedTree(f"{len(tokens) - pos} trailing tokens after a complete tree")
    return root


def eval_tree(tree, obs):
    node = tree
    while not node.is_leaf:
        node = node.left if obs[node.feature] < node.threshold else node.right
    return node.action


def eval_tree_batch(tree, obs):
    out = np.empty(len(obs), dtype=int)

    def rec(node, idx):
        if node.is_leaf:
            out[idx] = node.action
            return
        cond = obs[idx, node.feature] < node.threshold
        if cond.any():
            rec(node.left, idx[cond])
        if not cond.all():
            rec(node.right, idx[~cond])

    rec(tree, np.arange(len(obs)))
    return out


def count_nodes(tree):
    if tree.is_leaf:
        return 1
    return 1 + count_nodes(tree.left) + count_nodes(tree.right)


def validate_traversal(tokens, betas, n_features, root_lo, root_hi, h):
    """Independent recursive check of a sampled traversal.

    Verifies arity completeness, that every threshold lies strictly inside
    the bounds implied by its ancestors, and that no decision node has two
    identical action leaves as children. Returns a list of problems.
    """
    problems = []
    h = np.broadcast_to(np.asarray(h, float), (n_features,))
    try:
        tree = build_tree(tokens, betas, n_features)
    except MalformedTree as exc:
        return [str(exc)]

    def rec(node, lo, hi):
        if node.is_leaf:
            return
        j = node.feature
        if not lo[j] < node.threshold < hi[j]:
            problems.append(f"threshold {node.threshold} of x{j + 1} outside ({lo[j]}, {hi[j]})")
        if node.left.is_leaf and node.right.is_leaf and node.left.action == node.right.action:
            problems.append(f"identical sibling leaves a{node.left.action + 1}")
        llo, lhi = param_bounds(j, node.threshold, lo, hi, "left", h[j])
        rlo, rhi = param_bounds(j, node.threshold, lo, hi, "right", h[j])
        rec(node.left, llo, lhi)
        rec(node.right, rlo, rhi)

    rec(tree, np.asarray(root_lo, float), np.asarray(root_hi, float))
    return problems


class _Slot:
    __slots__ = ("lo", "hi", "forbidden", "is_left")

    def __init__(self, lo, hi, forbidden=-1, is_left=False):
        self.lo = lo
        self.hi = hi
        self.forbidden = forbidden
        self.is_left = is_left


class _State:
    __slots__ = ("stack", "length")

    def __init__(self, slot):
        self.stack = [slot]
        self.length = 0


class DecisionTreeTask(Task):
    budget_unit = "episodes"
    stochastic = True

    def __init__(self, env, n_episodes=100, h_frac=0.01, max_length=32, normalize=True):
        self.env = envs.get_spec(env) if isinstance(env, str) else env
        self.name = f"dtree:{self.env.name}"
        self.n_features = self.env.obs_dim
        self.n_actions = self.env.n_actions
        lo, hi = self.env.bounds
        # with normalize, thresholds live in (-1, 1) per feature so the fixed
        # sampling scale means the same thing for every observation
        self.normalize = normalize
        self._mid = 0.5 * (lo + hi) if normalize else np.zeros_like(lo)
        self._half = 0.5 * (hi - lo) if normalize else np.ones_like(lo)
        self.root_lo, self.root_hi = self.to_threshold_coords(lo), self.to_threshold_coords(hi)
        self.h = h_frac * (self.root_hi - self.root_lo)
        self.episodes_per_eval = n_episodes
        self.max_length = max_length
        specs = [(f"x{j + 1}<", 2, True, (self.root_lo[j], self.root_hi[j]))
                 for j in range(self.n_features)]
        specs += [(f"a{k + 1}", 0, False) for k in range(self.n_actions)]
        self.library = build_library(specs)
        k = len(self.library)
        self._lo = np.full(k, -np.inf)
        self._hi = np.full(k, np.inf)

    def new_state(self):
        return _State(_Slot(self.root_lo.copy(), self.root_hi.copy()))

    def prior(self, state):
        n = self.n_features
        pr = np.zeros(len(self.library))
        slot = state.stack[-1]
        pr[:n][slot.hi - slot.lo < self.h] = -np.inf
        # a decision adds two open slots; the minimal completion must fit
        if state.length + len(state.stack) + 2 > self.max_length:
            pr[:n] = -np.inf
        if slot.forbidden >= 0:
            pr[n + slot.forbidden] = -np.inf
        return pr

    def bounds(self, state):
        slot = state.stack[-1]
        lo = self._lo.copy()
        hi = self._hi.copy()
        lo[:self.n_features] = slot.lo
        hi[:self.n_features] = slot.hi
        return lo, hi

    def advance(self, state, token, beta):
        slot = state.stack.pop()
        state.length += 1
        if token < self.n_features:
            h = self.h[token]
            rlo, rhi = param_bounds(token, beta, slot.lo, slot.hi, "right", h)
            llo, lhi = param_bounds(token, beta, slot.lo, slot.hi, "left", h)
            state.stack.append(_Slot(rlo, rhi))
            state.stack.append(_Slot(llo, lhi, is_left=True))
        elif slot.is_left:
            # the right sibling is now on top of the stack
            state.stack[-1].forbidden = token - self.n_features

    def is_complete(self, state):
        return not state.stack

    def subtree_widths(self, tokens):
        """For each position, the narrowest per-feature interval under which
        the subtree rooted there stays feasible (width rule included)."""
        n = self.n_features
        need = [None] * len(tokens)

        def rec(pos):
            if pos >= len(tokens):
                raise MalformedTree("traversal ends before the tree is complete")
            tok = tokens[pos]
            if tok >= n:
                need[pos] = np.zeros(n)
                return pos + 1
            right = rec(pos + 1)
            end = rec(right)
            left_need, right_need = need[pos + 1], need[right]
            w = np.maximum(left_need, right_need)
            h = self.h[tok]
            # a child that splits on the same feature needs its own width plus h;
            # the relative slack absorbs rounding in the nested bounds
            w[tok] = max(h, sum(v + h for v in (left_need[tok], right_need[tok]) if v > 0))
            w[tok] += 1e-9 * h
            need[pos] = w
            return end

        rec(0)
        return need

    def decode_margins(self, tokens):
        n = self.n_features
        need = self.subtree_widths(tokens)
        lo_in, hi_in = np.zeros(len(tokens)), np.zeros(len(tokens))
        pos = 0

        def rec():
            nonlocal pos
            t = pos
            tok = tokens[t]
            pos += 1
            if tok >= n:
                return
            left = pos
            rec()
            right = pos
            rec()
            h = self.h[tok]
            if need[left][tok] > 0:
                lo_in[t] = need[left][tok] + h
            if need[right][tok] > 0:
                hi_in[t] = need[right][tok] + h

        rec()
        return lo_in, hi_in

    def to_threshold_coords(self, x):
        return (np.asarray(x, float) - self._mid) / self._half

    def physical_betas(self, tokens, betas):
        """Thresholds in observation units."""
        out = np.array(betas, dtype=float)
        for t, tok in enumerate(tokens):
            if tok < self.n_features:
                out[t] = self._mid[tok] + self._half[tok] * out[t]
        return out

    def tree(self, tokens, betas):
        return build_tree(tokens, self.physical_betas(tokens, betas), self.n_features)

    def episode_returns(self, tokens, betas, seeds):
        tree = self.tree(tokens, betas)
        return envs.run_episodes(self.env, lambda obs: eval_tree_batch(tree, obs), seeds)

    def evaluate(self, tokens, betas, rng=None):
        rng = np.random.default_rng(0) if rng is None else rng
        seeds = rng.integers(0, 2**31, size=self.episodes_per_eval)
        return float(self.episode_returns(tokens, betas, seeds).mean())

    def validate(self, tokens, betas):
        return validate_traversal(tokens, betas, self.n_features, self.root_lo, self.root_hi, self.h)
