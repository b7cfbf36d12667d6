from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class Token:
    index: int
    name: str
    arity: int = 0
    parameterized: bool = False
    # nominal parameter range; the dummy [0, 1] for strictly discrete tokens
    range: tuple = (0.0, 1.0)


@dataclass
class Library:
    tokens: list
    arity: np.ndarray = field(init=False)
    parameterized: np.ndarray = field(init=False)
    range_lo: np.ndarray = field(init=False)
    range_hi: np.ndarray = field(init=False)

    def __post_init__(self):
        if len(self.tokens) < 2:
            raise ValueError("a library needs at least two tokens")
        for i, tok in enumerate(self.tokens):
            if tok.index != i:
                raise ValueError(f"token {tok.name!r} has index {tok.index}, expected {i}")
        self.arity = np.array([t.arity for t in self.tokens], dtype=int)
        self.parameterized = np.array([t.parameterized for t in self.tokens], dtype=bool)
        self.range_lo = np.array([t.range[0] for t in self.tokens], dtype=float)
        self.range_hi = np.array([t.range[1] for t in self.tokens], dtype=float)
        self._by_name = {t.name: t for t in self.tokens}

    def __len__(self):
        return len(self.tokens)

    def __getitem__(self, i):
        return self.tokens[i]

    def by_name(self, name):
        return self._by_name[name]

    def names(self):
        return [t.name for t in self.tokens]


def build_library(specs):
    """Build a Library from ``(name, arity, parameterized, range)`` tuples."""
    tokens = []
    for i, spec in enumerate(specs):
        name, arity, param = spec[:3]
        rng = spec[3] if len(spec) > 3 else (0.0, 1.0)
        tokens.append(Token(i, name, arity, param, tuple(float(v) for v in rng)))
    return Library(tokens)
