"""Autoregressive generation of complete hybrid sequences under constraint
masking, with truncated-normal draws for parameterized tokens."""

import numpy as np

from . import truncnorm
from .policy import initial_state, policy_step
from .sequence import SequenceBatch

HARD_MAX_LENGTH = 64


class AllMaskedError(RuntimeError):
    """Every token is infeasible under the prior: a bug in the task's constraints."""


class SequenceOverflowError(RuntimeError):
    pass


def _check_prior(prior):
    if not np.any(prior == 0.0):
        raise AllMaskedError("prior masks every token")


def masked_probs(logits, prior):
    z = np.asarray(logits, float) + prior
    z = z - np.max(z, axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _draw_categorical(probs, u):
    cum = np.cumsum(probs, axis=-1)
    thresh = u * cum[..., -1]
    # first index whose cumulative mass exceeds the threshold; zero-probability
    # entries never advance the cumulative sum, so they cannot be selected
    return np.argmax(cum > thresh[..., None], axis=-1)


def sample_masked_categorical(logits, prior, rng):
    prior = np.asarray(prior, dtype=float)
    _check_prior(prior)
    probs = masked_probs(logits, prior)
    return int(_draw_categorical(probs, np.asarray(rng.random())))


def sample_truncated_normal(mean, sigma, bounds, rng):
    lo, hi = bounds
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    if not lo < hi:
        raise ValueError("bounds must satisfy lo < hi")
    return float(truncnorm.sample(mean, sigma, lo, hi, rng.random()))


def sample_truncated_normal_n(mean, sigma, bounds, rng, size):
    lo, hi = bounds
    return truncnorm.sample(np.full(size, float(mean)), sigma, lo, hi, rng.random(size))


def placeholder_beta(lo, hi):
    """Fixed beta used by skeleton sampling: interval midpoint, or 0 when unbounded."""
    if np.isfinite(lo) and np.isfinite(hi):
        return 0.5 * (lo + hi)
    if np.isfinite(lo):
        return lo + 1.0
    if np.isfinite(hi):
        return hi - 1.0
    return 0.0


def sample_batch(params, task, n, rng, skeleton=False):
    """Sample ``n`` complete sequences.

    With ``skeleton=True`` the continuous draw is suppressed: each
    parameterized token gets a placeholder beta and the batch is flagged so
    that only discrete log-probabilities enter the gradient.
    """
    lib = task.library
    k = len(lib)
    if params.library_size != k:
        raise ValueError("policy and task library sizes differ")
    # independent streams for discrete and continuous draws
    rng_d = np.random.default_rng(rng.integers(2**63))
    rng_c = np.random.default_rng(rng.integers(2**63))
    max_len = min(task.max_length, HARD_MAX_LENGTH)
    param_tok = lib.parameterized
    sigma = params.sigma

    states = [task.new_state() for _ in range(n)]
    tokens = np.zeros((n, max_len), dtype=int)
    betas = np.zeros((n, max_len))
    priors = np.zeros((n, max_len, k))
    lo = np.full((n, max_len, k), -np.inf)
    hi = np.full((n, max_len, k), np.inf)
    lengths = np.zeros(n, dtype=int)

    active = np.arange(n)
    h, c = initial_state(params, n)
    prev_tok = np.full(n, k, dtype=int)
    prev_beta = np.zeros(n)
    for t in range(max_len):
        out = policy_step(params, (h, c), prev_tok, prev_beta)
        for j, i in enumerate(active):
            st = states[i]
            pr = task.prior(st)
            _check_prior(pr)
            priors[i, t] = pr
            blo, bhi = task.bounds(st)
            lo[i, t] = blo
            hi[i, t] = bhi
        pr_act = priors[active, t]
        probs = masked_probs(out.logits, pr_act)
        tok = _draw_categorical(probs, rng_d.random(len(active)))
        beta = np.zeros(len(active))
        is_param = param_tok[tok]
        if is_param.any():
            rows = np.nonzero(is_param)[0]
            ptok = tok[rows]
            blo = lo[active[rows], t, ptok]
            bhi = hi[active[rows], t, ptok]
            if skeleton:
                beta[rows] = [placeholder_beta(a, b) for a, b in zip(blo, bhi)]
            else:
                mu = out.locations[rows, ptok]
                beta[rows] = truncnorm.sample(mu, sigma, blo, bhi, rng_c.random(len(rows)))
        tokens[active, t] = tok
        betas[active, t] = beta
        keep = np.ones(len(active), dtype=bool)
        for j, i in enumerate(active):
            st = states[i]
            task.advance(st, int(tok[j]), float(beta[j]))
            if task.is_complete(st):
                keep[j] = False
                lengths[i] = t + 1
        active = active[keep]
        if len(active) == 0:
            break
        h, c = out.state[0][keep], out.state[1][keep]
        prev_tok = tok[keep]
        prev_beta = beta[keep]
    else:
        raise SequenceOverflowError(
            f"{len(active)} sequences incomplete after {max_len} steps; the task "
            "constraints must force completion")
    t_used = int(lengths.max())
    return SequenceBatch(tokens[:, :t_used], betas[:, :t_used], priors[:, :t_used],
                         lo[:, :t_used], hi[:, :t_used], lengths, param_tok.copy(),
                         task.name, not skeleton)


def sample_sequence(params, task, rng, skeleton=False):
    return sample_batch(params, task, 1, rng, skeleton=skeleton).sequence(0)
