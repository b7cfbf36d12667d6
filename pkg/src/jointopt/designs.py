"""Text form of a hybrid design: comma-separated pre-order tokens, with
parameterized tokens written ``name(beta)``.

Betas are printed with 17 significant digits, which round-trips every
float64 exactly.
"""

import re

import numpy as np

from .sequence import HybridSequence

_ITEM = re.compile(r"^\s*([^,()\s]+)\s*(?:\(\s*([^()]*?)\s*\))?\s*$")


class DesignParseError(ValueError):
    def __init__(self, message, position=None, token=None):
        where = "" if position is None else f" at position {position}"
        what = "" if token is None else f" ({token!r})"
        super().__init__(f"{message}{where}{what}")
        self.position = position
        self.token = token


def format_beta(x):
    return np.format_float_positional(float(x), precision=17, unique=False, fractional=False)


def serialize_tokens(library, tokens, betas):
    parts = []
    for tok, beta in zip(tokens, betas):
        t = library[int(tok)]
        parts.append(f"{t.name}({format_beta(beta)})" if t.parameterized else t.name)
    return ",".join(parts)


def serialize_design(seq, task):
    return serialize_tokens(task.library, seq.tokens, seq.betas)


def parse_tokens(text, library):
    """Parse a design string into token indices and betas (0 for discrete tokens)."""
    if not text or not text.strip():
        raise DesignParseError("empty design string")
    tokens, betas = [], []
    for pos, item in enumerate(text.split(",")):
        m = _ITEM.match(item)
        if m is None:
            raise DesignParseError("malformed token", pos, item.strip())
        name, arg = m.group(1), m.group(2)
        try:
            tok = library.by_name(name)
        except KeyError:
            raise DesignParseError("unknown token", pos, name) from None
        if tok.parameterized:
            if arg is None:
                raise DesignParseError("parameterized token needs a value", pos, name)
            try:
                beta = float(arg)
            except ValueError:
                raise DesignParseError("bad parameter value", pos, item.strip()) from None
            if not np.isfinite(beta):
                raise DesignParseError("parameter must be finite", pos, item.strip())
        else:
            if arg is not None:
                raise DesignParseError("token takes no parameter", pos, item.strip())
            beta = 0.0
        tokens.append(tok.index)
        betas.append(beta)
    return tokens, betas


def parse_design(text, task):
    """Parse and validate a design against ``task``'s constraints."""
    tokens, betas = parse_tokens(text, task.library)
    try:
        priors, lo, hi = task.replay(tokens, betas)
    except ValueError as exc:
        raise DesignParseError(f"infeasible design: {exc}") from None
    tokens = np.array(tokens, dtype=int)
    betas = np.array(betas, dtype=float)
    param = task.library.parameterized
    for t, (tok, beta) in enumerate(zip(tokens, betas)):
        if param[tok] and not lo[t, tok] < beta < hi[t, tok]:
            raise DesignParseError(
                f"value {beta} outside ({lo[t, tok]}, {hi[t, tok]})", t, task.library[tok].name)
    return HybridSequence(tokens, betas, priors, lo, hi, param.copy(), task.name)
