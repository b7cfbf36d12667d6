"""Symbolic regression over pre-order expression traversals with a
jointly sampled real constant token."""

import json
from dataclasses import dataclass
from importlib import resources

import numpy as np

from ..designs import parse_tokens
from ..library import build_library
from .base import Task

BINARY = ("add", "sub", "mul", "div")
UNARY = ("sin", "cos", "exp", "log", "sqrt")
TRIG = ("sin", "cos")

_OPS = {
    "add": np.add,
    "sub": np.subtract,
    "mul": np.multiply,
    "div": np.divide,
    "sin": np.sin,
    "cos": np.cos,
    "exp": np.exp,
    "log": np.log,
    "sqrt": np.sqrt,
}


def sr_library(d):
    specs = [(name, 2, False) for name in BINARY]
    specs += [(name, 1, False) for name in UNARY]
    specs += [(f"x{j + 1}", 0, False) for j in range(d)]
    specs.append(("const", 0, True, (-np.inf, np.inf)))
    return build_library(specs)


class MalformedExpression(ValueError):
    pass


def eval_expression(library, tokens, betas, X):
    """Evaluate a traversal on the rows of ``X``; non-finite values propagate."""
    X = np.asarray(X, dtype=float)
    n = len(X)
    pos = 0

    def rec():
        nonlocal pos
        if pos >= len(tokens):
            raise MalformedExpression("traversal ends before the expression is complete")
        tok = library[int(tokens[pos])]
        beta = float(betas[pos])
        pos += 1
        if tok.name == "const":
            return np.full(n, beta)
        if tok.arity == 0:
            return X[:, int(tok.name[1:]) - 1].copy()
        args = [rec() for _ in range(tok.arity)]
        return _OPS[tok.name](*args)

    with np.errstate(all="ignore"):
        out = rec()
    if pos != len(tokens):
        raise MalformedExpression(f"{len(tokens) - pos} trailing tokens")
    return out


@dataclass(frozen=True)
class Dataset:
    X: np.ndarray
    y: np.ndarray
    name: str
    domain: tuple  # (low, high, n_points)
    split: str

    def __post_init__(self):
        if len(self.y) < 1:
            raise ValueError("dataset needs at least one point")
        if not np.all(np.isfinite(self.y)):
            raise ValueError(f"{self.name}/{self.split}: non-finite targets")


class DegenerateDataset(ValueError):
    pass


def nmse(y_hat, y):
    var = np.var(y)
    if var == 0:
        raise DegenerateDataset("target variance is zero")
    return float(np.mean((y_hat - y) ** 2) / var)


def sr_reward(library, tokens, betas, dataset):
    y_hat = eval_expression(library, tokens, betas, dataset.X)
    if not np.all(np.isfinite(y_hat)):
        return 0.0
    with np.errstate(over="ignore"):
        err = nmse(y_hat, dataset.y)
    if not np.isfinite(err):
        return 0.0
    return 1.0 / (1.0 + err)


# -- benchmarks -----------------------------------------------------------------

def _manifest():
    text = resources.files("jointopt").joinpath("data/benchmarks.json").read_text()
    return {b["name"]: b for b in json.loads(text)}


def benchmark_names():
    return list(_manifest())


def benchmark_info(name):
    try:
        return _manifest()[name]
    except KeyError:
        raise KeyError(f"unknown benchmark {name!r}") from None


def load_benchmark(name, seed=0):
    """Train/test datasets, input dimension and ground-truth traversal.

    The test split doubles the domain endpoints and the point count.
    """
    info = benchmark_info(name)
    d = info["d"]
    lo, hi = info["domain"]
    n = info["n"]
    lib = sr_library(d)
    gt = parse_tokens(info["expression"], lib)
    rng = np.random.default_rng(seed)
    X_train = rng.uniform(lo, hi, size=(n, d))
    X_test = rng.uniform(2 * lo, 2 * hi, size=(2 * n, d))
    y_train = eval_expression(lib, *gt, X_train)
    y_test = eval_expression(lib, *gt, X_test)
    train = Dataset(X_train, y_train, name, (lo, hi, n), "train")
    test = Dataset(X_test, y_test, name, (2 * lo, 2 * hi, 2 * n), "test")
    return train, test, d, gt


# -- sampling constraints ---------------------------------------------------------

class _State:
    __slots__ = ("slots", "length")

    def __init__(self):
        # one entry per open slot: whether a trig ancestor sits above it
        self.slots = [False]
        self.length = 0


class SymbolicRegressionTask(Task):
    def __init__(self, benchmark, seed=0, min_length=4, max_length=32):
        self.benchmark = benchmark
        self.seed = seed
        self.train, self.test, self.d, self.ground_truth = load_benchmark(benchmark, seed)
        self.name = f"symreg:{benchmark}"
        self.library = sr_library(self.d)
        self.min_length = min_length
        self.max_length = max_length
        lib = self.library
        self._arity = lib.arity
        self._trig = np.array([t.name in TRIG for t in lib.tokens])
        self._terminal = self._arity == 0
        self._cache = {}

    def new_state(self):
        return _State()

    def prior(self, state):
        s = len(state.slots)
        key = (state.length, s, state.slots[-1])
        pr = self._cache.get(key)
        if pr is None:
            pr = np.zeros(len(self.library))
            if state.slots[-1]:
                pr[self._trig] = -np.inf
            if s == 1 and state.length + 1 < self.min_length:
                pr[self._terminal] = -np.inf
            # minimal completion after this token: length + 1 + (s - 1 + arity)
            pr[state.length + s + self._arity > self.max_length] = -np.inf
            self._cache[key] = pr
        return pr

    def advance(self, state, token, beta):
        under_trig = state.slots.pop()
        state.length += 1
        a = int(self._arity[token])
        if a:
            flag = under_trig or bool(self._trig[token])
            state.slots.extend([flag] * a)

    def is_complete(self, state):
        return not state.slots

    def predict(self, tokens, betas, X):
        return eval_expression(self.library, tokens, betas, X)

    def evaluate(self, tokens, betas, rng=None):
        return sr_reward(self.library, tokens, betas, self.train)

    def test_reward(self, tokens, betas):
        return sr_reward(self.library, tokens, betas, self.test)
