"""The contract every optimization task implements.

A task binds a token library to prefix-dependent constraints (``prior``),
per-token truncation bounds (``bounds``), a completion rule and a reward.
Sampling drives it one token at a time through a mutable per-sequence state.
"""

import numpy as np


class Task:
    name = "task"
    library = None
    max_length = 64
    # environment episodes consumed by one reward evaluation (0: not an RL task)
    episodes_per_eval = 0
    # budget is counted in "evals" or "episodes"
    budget_unit = "evals"
    # rewards depend on the rng passed to evaluate
    stochastic = False

    def new_state(self):
        raise NotImplementedError

    def prior(self, state):
        raise NotImplementedError

    def bounds(self, state):
        k = len(self.library)
        return np.full(k, -np.inf), np.full(k, np.inf)

    def advance(self, state, token, beta):
        raise NotImplementedError

    def is_complete(self, state):
        raise NotImplementedError

    def evaluate(self, tokens, betas, rng=None):
        """Reward of a complete traversal given as parallel token/beta lists."""
        raise NotImplementedError

    def reward(self, seq, rng=None):
        return self.evaluate(seq.tokens, seq.betas, rng)

    @property
    def cost_per_eval(self):
        """Budget units charged for one reward evaluation."""
        return self.episodes_per_eval if self.budget_unit == "episodes" else 1

    def decode_margins(self, tokens):
        """Per-position insets of the parameter bounds that keep the rest of a
        fixed skeleton feasible whatever parameter is chosen there."""
        n = len(tokens)
        return np.zeros(n), np.zeros(n)

    def replay(self, tokens, betas):
        """Re-run the state machine over a traversal, checking feasibility.

        Returns the per-step priors and bounds; raises ValueError when a token
        is masked or the traversal is incomplete or too long.
        """
        k = len(self.library)
        st = self.new_state()
        n = len(tokens)
        priors = np.zeros((n, k))
        lo = np.full((n, k), -np.inf)
        hi = np.full((n, k), np.inf)
        for t, (tok, beta) in enumerate(zip(tokens, betas)):
            if self.is_complete(st):
                raise ValueError(f"traversal continues past completion at position {t}")
            priors[t] = self.prior(st)
            lo[t], hi[t] = self.bounds(st)
            if priors[t, tok] != 0.0:
                raise ValueError(f"token {self.library[tok].name!r} infeasible at position {t}")
            self.advance(st, int(tok), float(beta))
        if not self.is_complete(st):
            raise ValueError("traversal is incomplete")
        return priors, lo, hi
