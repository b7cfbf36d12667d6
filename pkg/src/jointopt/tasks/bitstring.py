"""Parameterized bitstring benchmark: recover hidden bits and a hidden real
parameter attached to each bit."""

import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from ..library import build_library
from .base import Task


def f1(x, x_star):
    d = 50.0 * (x - x_star)
    if abs(x - x_star) < 1e-12:
        return 1.0
    return abs(math.sin(d) / d)


def f2(x, x_star):
    d = abs(x - x_star)
    if d <= 0.05:
        return 1.0
    if d <= 0.1:
        return 0.5
    return 0.0


OBJECTIVES = {"f1": f1, "f2": f2}


@dataclass(frozen=True)
class BitstringInstance:
    T: int
    bits: tuple
    betas: tuple
    alpha: float
    objective: str
    seed: int = 0

    def to_json(self):
        d = asdict(self)
        d["bits"] = list(d["bits"])
        d["betas"] = list(d["betas"])
        return json.dumps(d)

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        return cls(d["T"], tuple(int(b) for b in d["bits"]), tuple(float(b) for b in d["betas"]),
                   float(d["alpha"]), d["objective"], int(d.get("seed", 0)))


def make_instance(T, alpha=0.9, objective="f2", seed=0):
    if T < 1:
        raise ValueError("T must be positive")
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    if objective not in OBJECTIVES:
        raise ValueError(f"unknown objective {objective!r}")
    rng = np.random.default_rng(seed)
    bits = tuple(int(b) for b in rng.integers(0, 2, size=T))
    betas = tuple(float(b) for b in rng.uniform(0.0, 1.0, size=T))
    return BitstringInstance(T, bits, betas, float(alpha), objective, seed)


def bitstring_reward(instance, bits, betas):
    if len(bits) != instance.T or len(betas) != instance.T:
        raise ValueError(f"expected length {instance.T}, got {len(bits)}")
    f = OBJECTIVES[instance.objective]
    a = instance.alpha
    total = 0.0
    for b, x, b_star, x_star in zip(bits, betas, instance.bits, instance.betas):
        if b == b_star:
            total += a + (1.0 - a) * f(x, x_star)
    return total / instance.T


class BitstringTask(Task):
    """Fixed-length task; both tokens carry a parameter and nothing is masked."""

    def __init__(self, instance):
        self.instance = instance
        self.name = "bitstring"
        self.library = build_library([("bit0", 0, True, (0.0, 1.0)),
                                      ("bit1", 0, True, (0.0, 1.0))])
        self.max_length = instance.T
        self._prior = np.zeros(2)
        self._lo = np.full(2, -np.inf)
        self._hi = np.full(2, np.inf)

    def new_state(self):
        return [0]

    def prior(self, state):
        return self._prior

    def bounds(self, state):
        return self._lo, self._hi

    def advance(self, state, token, beta):
        state[0] += 1

    def is_complete(self, state):
        return state[0] >= self.instance.T

    def evaluate(self, tokens, betas, rng=None):
        return bitstring_reward(self.instance, list(tokens), list(betas))
