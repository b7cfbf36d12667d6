from dataclasses import dataclass

import numpy as np


@dataclass
class HybridSequence:
    """A complete design: per-step (token, beta) plus the masks and bounds
    that were in force when each step was sampled."""

    tokens: np.ndarray
    betas: np.ndarray
    priors: np.ndarray  # (T, K), entries 0 or -inf
    lo: np.ndarray  # (T, K) truncation bounds per candidate token
    hi: np.ndarray
    parameterized: np.ndarray  # (K,) which library tokens carry a beta
    task: str = ""
    log_prob: float | None = None
    # False for decoupled skeletons whose betas are placeholders
    continuous: bool = True

    def __len__(self):
        return len(self.tokens)

    def steps(self):
        return list(zip(self.tokens.tolist(), self.betas.tolist()))


@dataclass
class SequenceBatch:
    tokens: np.ndarray  # (B, T) int, padded with 0
    betas: np.ndarray  # (B, T)
    priors: np.ndarray  # (B, T, K)
    lo: np.ndarray
    hi: np.ndarray
    lengths: np.ndarray  # (B,)
    parameterized: np.ndarray  # (K,)
    task: str = ""
    continuous: bool = True

    def __len__(self):
        return len(self.lengths)

    @property
    def max_len(self):
        return self.tokens.shape[1]

    def sequence(self, i):
        n = int(self.lengths[i])
        return HybridSequence(
            tokens=self.tokens[i, :n].copy(),
            betas=self.betas[i, :n].copy(),
            priors=self.priors[i, :n].copy(),
            lo=self.lo[i, :n].copy(),
            hi=self.hi[i, :n].copy(),
            parameterized=self.parameterized,
            task=self.task,
            continuous=self.continuous,
        )

    def subset(self, idx):
        idx = np.asarray(idx, dtype=int)
        lengths = self.lengths[idx]
        t = int(lengths.max()) if len(idx) else 0
        return SequenceBatch(
            tokens=self.tokens[idx, :t],
            betas=self.betas[idx, :t],
            priors=self.priors[idx, :t],
            lo=self.lo[idx, :t],
            hi=self.hi[idx, :t],
            lengths=lengths,
            parameterized=self.parameterized,
            task=self.task,
            continuous=self.continuous,
        )


def collate(seqs):
    """Pad a list of HybridSequence into a SequenceBatch."""
    if not seqs:
        raise ValueError("cannot collate an empty list")
    k = seqs[0].priors.shape[1]
    b = len(seqs)
    t = max(len(s) for s in seqs)
    tokens = np.zeros((b, t), dtype=int)
    betas = np.zeros((b, t))
    priors = np.zeros((b, t, k))
    lo = np.full((b, t, k), -np.inf)
    hi = np.full((b, t, k), np.inf)
    for i, s in enumerate(seqs):
        n = len(s)
        tokens[i, :n] = s.tokens
        betas[i, :n] = s.betas
        priors[i, :n] = s.priors
        lo[i, :n] = s.lo
        hi[i, :n] = s.hi
    continuous = all(s.continuous for s in seqs)
    if any(s.continuous for s in seqs) and not continuous:
        raise ValueError("cannot mix joint designs and skeletons in one batch")
    return SequenceBatch(tokens, betas, priors, lo, hi, np.array([len(s) for s in seqs]),
                         seqs[0].parameterized, seqs[0].task, continuous)
