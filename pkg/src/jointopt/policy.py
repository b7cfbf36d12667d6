"""Autoregressive LSTM policy over hybrid (token, beta) sequences.

The network reads the previous token (one-hot, with an extra start marker)
concatenated with the previous beta, and emits two heads per step: logits
over the K library tokens and one location per token for the continuous
parameter distribution. Gradients are derived by hand through the unrolled
recurrence; everything is plain numpy on a single flat parameter vector.
"""

import json
from dataclasses import dataclass, field, replace

import numpy as np

from . import truncnorm
from .sequence import HybridSequence, SequenceBatch, collate

DEFAULT_SIGMA = 0.5


class NonFiniteError(FloatingPointError):
    def __init__(self, message, index=None):
        super().__init__(message if index is None else f"{message} (parameter index {index})")
        self.index = index


def _layout(k, h):
    d = k + 2
    shapes = [
        ("Wx", (d, 4 * h)),
        ("Wh", (h, 4 * h)),
        ("b", (4 * h,)),
        ("Wl", (h, k)),
        ("bl", (k,)),
        ("Wm", (h, k)),
        ("bm", (k,)),
    ]
    out, start = {}, 0
    for name, shape in shapes:
        n = int(np.prod(shape))
        out[name] = (slice(start, start + n), shape)
        start += n
    return out, start


@dataclass
class PolicyParams:
    library_size: int
    hidden_units: int
    theta: np.ndarray
    m: np.ndarray = None
    v: np.ndarray = None
    step: int = 0
    sigma: float = DEFAULT_SIGMA
    _layout: dict = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        layout, n = _layout(self.library_size, self.hidden_units)
        if self.theta.shape != (n,):
            raise ValueError(f"expected {n} weights, got {self.theta.shape}")
        if self.m is None:
            self.m = np.zeros(n)
        if self.v is None:
            self.v = np.zeros(n)
        self._layout = layout

    def view(self, theta=None):
        theta = self.theta if theta is None else theta
        return {k: theta[s].reshape(shape) for k, (s, shape) in self._layout.items()}

    def copy(self):
        return replace(self, theta=self.theta.copy(), m=self.m.copy(), v=self.v.copy())

    @property
    def size(self):
        return self.theta.size


def init_policy(library_size, hidden_units=32, seed=0, sigma=DEFAULT_SIGMA):
    if library_size < 2:
        raise ValueError("library_size must be at least 2")
    if hidden_units < 1:
        raise ValueError("hidden_units must be positive")
    k, h = library_size, hidden_units
    layout, n = _layout(k, h)
    rng = np.random.default_rng(seed)
    theta = np.empty(n)
    fan_in = {"Wx": k + 2 + h, "Wh": k + 2 + h, "b": k + 2 + h,
              "Wl": h, "bl": h, "Wm": h, "bm": h}
    for name, (s, _) in layout.items():
        bound = 1.0 / np.sqrt(fan_in[name])
        theta[s] = rng.uniform(-bound, bound, size=s.stop - s.start)
    return PolicyParams(k, h, theta, sigma=sigma)


@dataclass
class StepOutput:
    logits: np.ndarray
    locations: np.ndarray
    state: tuple


def initial_state(params, batch=None):
    shape = (params.hidden_units,) if batch is None else (batch, params.hidden_units)
    return np.zeros(shape), np.zeros(shape)


def encode_inputs(prev_tokens, prev_betas, k):
    prev_tokens = np.asarray(prev_tokens)
    x = np.zeros(prev_tokens.shape + (k + 2,))
    np.put_along_axis(x, prev_tokens[..., None], 1.0, axis=-1)
    x[..., -1] = prev_betas
    return x


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _cell(w, x, h, c):
    hu = h.shape[-1]
    z = x @ w["Wx"] + h @ w["Wh"] + w["b"]
    i = _sigmoid(z[..., :hu])
    f = _sigmoid(z[..., hu:2 * hu])
    g = np.tanh(z[..., 2 * hu:3 * hu])
    o = _sigmoid(z[..., 3 * hu:])
    c_new = f * c + i * g
    tc = np.tanh(c_new)
    return o * tc, c_new, (i, f, g, o, tc)


def policy_step(params, state, prev_token, prev_param):
    """One recurrent step. ``prev_token == library_size`` is the start marker.

    Accepts scalars or equally-shaped arrays (a batch of sequences).
    """
    prev_param = np.asarray(prev_param, dtype=float)
    if not np.all(np.isfinite(prev_param)):
        raise ValueError("prev_param must be finite")
    w = params.view()
    x = encode_inputs(prev_token, prev_param, params.library_size)
    h, c = state
    h, c, _ = _cell(w, x, h, c)
    return StepOutput(h @ w["Wl"] + w["bl"], h @ w["Wm"] + w["bm"], (h, c))


def _log_softmax(z):
    zmax = np.max(z, axis=-1, keepdims=True)
    s = z - zmax
    return s - np.log(np.sum(np.exp(s), axis=-1, keepdims=True))


def _forward(params, theta, batch):
    """Unrolled forward pass; returns time-major caches."""
    k = params.library_size
    w = params.view(theta)
    b, t = batch.tokens.shape
    prev_tok = np.full((b, t), k, dtype=int)
    prev_beta = np.zeros((b, t))
    prev_tok[:, 1:] = batch.tokens[:, :-1]
    prev_beta[:, 1:] = batch.betas[:, :-1]
    xs = encode_inputs(prev_tok.T, prev_beta.T, k)  # (T, B, D)
    h = np.zeros((b, params.hidden_units))
    c = np.zeros_like(h)
    hs, cs, gates = [], [], []
    for step in range(t):
        hs.append(h)
        cs.append(c)
        h, c, gate = _cell(w, xs[step], h, c)
        gates.append(gate)
    hs.append(h)
    cs.append(c)
    hout = np.stack(hs[1:])  # (T, B, H)
    logits = hout @ w["Wl"] + w["bl"]
    locs = hout @ w["Wm"] + w["bm"]
    return dict(w=w, xs=xs, hs=hs, cs=cs, gates=gates, hout=hout, logits=logits, locs=locs)


def _step_terms(params, batch, fwd, need_grad):
    """Per-step log-prob and entropy terms plus their derivatives.

    Returns arrays in (T, B) / (T, B, K) time-major layout.
    """
    sigma = params.sigma
    toks = batch.tokens.T
    betas = batch.betas.T
    priors = np.transpose(batch.priors, (1, 0, 2))
    lo = np.transpose(batch.lo, (1, 0, 2))
    hi = np.transpose(batch.hi, (1, 0, 2))
    t, b = toks.shape
    valid = (np.arange(t)[:, None] < batch.lengths[None, :])
    param_tok = batch.parameterized.astype(bool)

    logp = _log_softmax(fwd["logits"] + priors)
    p = np.exp(logp)
    lp_disc = np.take_along_axis(logp, toks[..., None], axis=-1)[..., 0]
    if np.any(~np.isfinite(lp_disc[valid])):
        raise ValueError("sequence contains a token masked by its own prior")
    onehot = np.zeros_like(p)
    np.put_along_axis(onehot, toks[..., None], 1.0, axis=-1)
    live = p > 0
    plogp = np.where(live, p * np.where(live, logp, 0.0), 0.0)
    h_cat = -plogp.sum(-1)

    out = dict(valid=valid, p=p, onehot=onehot, lp_disc=lp_disc, h_cat=h_cat)
    if need_grad:
        out["dlp_dpsi"] = onehot - p
        out["dh_dpsi"] = -(plogp + p * h_cat[..., None])

    continuous = batch.continuous and param_tok.any()
    lp_cont = np.zeros((t, b))
    h_par = np.zeros((t, b))
    if continuous:
        locs = fwd["locs"]
        real_param = param_tok[toks] & valid
        if real_param.any():
            sel = np.nonzero(real_param)
            l_sel = toks[sel]
            mu = locs[sel + (l_sel,)]
            lo_s = lo[sel + (l_sel,)]
            hi_s = hi[sel + (l_sel,)]
            x = betas[sel]
            lp_cont[sel] = truncnorm.logpdf(x, mu, sigma, lo_s, hi_s)
            if need_grad:
                dl = np.zeros((t, b))
                dl[sel] = truncnorm.dlogpdf_dmean(x, mu, sigma, lo_s, hi_s)
                out["dlp_dmu"] = onehot * dl[..., None]
        elif need_grad:
            out["dlp_dmu"] = np.zeros_like(p)
        # entropy of each candidate's beta distribution, weighted by p(token)
        cand = live & param_tok[None, None, :] & valid[..., None]
        hk = np.zeros_like(p)
        dhk = np.zeros_like(p)
        if cand.any():
            sel = np.nonzero(cand)
            hk[sel] = truncnorm.entropy(locs[sel], sigma, lo[sel], hi[sel])
            if need_grad:
                dhk[sel] = truncnorm.dentropy_dmean(locs[sel], sigma, lo[sel], hi[sel])
        h_par = (p * hk).sum(-1)
        if need_grad:
            out["dh_dpsi"] = out["dh_dpsi"] + p * (hk - h_par[..., None])
            out["dh_dmu"] = p * dhk
    out["lp_cont"] = lp_cont
    out["h_par"] = h_par
    out["continuous"] = continuous
    return out


def _objective(params, theta, batch, weights, entropy_coeff, need_grad):
    fwd = _forward(params, theta, batch)
    terms = _step_terms(params, batch, fwd, need_grad)
    valid = terms["valid"]
    weights = np.asarray(weights, dtype=float)
    nb = len(batch)
    lp = (terms["lp_disc"] + terms["lp_cont"]) * valid
    ent = (terms["h_cat"] + terms["h_par"]) * valid
    value = (weights * lp.sum(0)).sum() / nb + entropy_coeff * ent.sum() / nb
    if not need_grad:
        return value, None
    scale = valid[..., None] / nb
    wb = weights[None, :, None]
    dpsi = scale * (wb * terms["dlp_dpsi"] + entropy_coeff * terms["dh_dpsi"])
    if terms["continuous"]:
        dmu = scale * (wb * terms["dlp_dmu"] + entropy_coeff * terms["dh_dmu"])
    else:
        dmu = np.zeros_like(dpsi)
    grad = _backward(params, fwd, dpsi, dmu)
    return value, grad


def _backward(params, fwd, dpsi, dmu):
    w = fwd["w"]
    hu = params.hidden_units
    g = {name: np.zeros(arr.shape) for name, arr in w.items()}
    hout = fwd["hout"]
    g["Wl"] = np.einsum("tbh,tbk->hk", hout, dpsi)
    g["bl"] = dpsi.sum((0, 1))
    g["Wm"] = np.einsum("tbh,tbk->hk", hout, dmu)
    g["bm"] = dmu.sum((0, 1))
    dh_out = dpsi @ w["Wl"].T + dmu @ w["Wm"].T  # (T, B, H)
    t = dh_out.shape[0]
    dh_next = np.zeros_like(fwd["hs"][0])
    dc_next = np.zeros_like(dh_next)
    dz_all = np.empty(dh_out.shape[:2] + (4 * hu,))
    for step in reversed(range(t)):
        i, f, gg, o, tc = fwd["gates"][step]
        c_prev = fwd["cs"][step]
        dh = dh_out[step] + dh_next
        do = dh * tc
        dc = dc_next + dh * o * (1.0 - tc * tc)
        dz = dz_all[step]
        dz[:, :hu] = dc * gg * i * (1.0 - i)
        dz[:, hu:2 * hu] = dc * c_prev * f * (1.0 - f)
        dz[:, 2 * hu:3 * hu] = dc * i * (1.0 - gg * gg)
        dz[:, 3 * hu:] = do * o * (1.0 - o)
        dc_next = dc * f
        dh_next = dz @ w["Wh"].T
    hs_prev = np.stack(fwd["hs"][:-1])
    g["Wx"] = np.einsum("tbd,tbz->dz", fwd["xs"], dz_all)
    g["Wh"] = np.einsum("tbh,tbz->hz", hs_prev, dz_all)
    g["b"] = dz_all.sum((0, 1))
    flat = np.empty(params.size)
    for name, (s, _) in params._layout.items():
        flat[s] = g[name].ravel()
    return flat


def _as_batch(seqs_or_batch):
    if isinstance(seqs_or_batch, SequenceBatch):
        return seqs_or_batch
    if isinstance(seqs_or_batch, HybridSequence):
        return collate([seqs_or_batch])
    return collate(list(seqs_or_batch))


def _with_priors(seq, priors):
    if priors is None:
        return seq
    return replace(seq, priors=np.asarray(priors, dtype=float))


def sequence_log_prob(params, seq, priors=None):
    """Total and per-step log-probability of one hybrid sequence."""
    batch = collate([_with_priors(seq, priors)])
    fwd = _forward(params, params.theta, batch)
    terms = _step_terms(params, batch, fwd, need_grad=False)
    per_step = (terms["lp_disc"] + terms["lp_cont"])[:, 0]
    steps = per_step.tolist()
    return float(sum(steps)), steps


def sequence_entropy(params, seq, priors=None):
    batch = collate([_with_priors(seq, priors)])
    fwd = _forward(params, params.theta, batch)
    terms = _step_terms(params, batch, fwd, need_grad=False)
    return float((terms["h_cat"] + terms["h_par"])[:, 0].sum())


def batch_log_probs(params, batch):
    fwd = _forward(params, params.theta, batch)
    terms = _step_terms(params, batch, fwd, need_grad=False)
    return ((terms["lp_disc"] + terms["lp_cont"]) * terms["valid"]).sum(0)


def objective(params, batch, weights, entropy_coeff, theta=None):
    """Scalar objective whose gradient ``loss_gradient`` returns."""
    theta = params.theta if theta is None else theta
    return _objective(params, theta, _as_batch(batch), weights, entropy_coeff, False)[0]


def loss_gradient(params, batch, weights=None, entropy_coeff=0.0):
    """Gradient of mean(weight * log p) + entropy_coeff * mean(entropy).

    ``batch`` is a SequenceBatch (with ``weights`` given separately) or a list
    of ``(sequence, priors, weight)`` triples.
    """
    if weights is None:
        triples = list(batch)
        if not triples:
            raise ValueError("empty batch")
        batch = collate([_with_priors(s, pr) for s, pr, _ in triples])
        weights = [wt for _, _, wt in triples]
    batch = _as_batch(batch)
    if len(batch) == 0:
        raise ValueError("empty batch")
    if not np.all(np.isfinite(params.theta)):
        raise NonFiniteError("non-finite weights", int(np.argmin(np.isfinite(params.theta))))
    _, grad = _objective(params, params.theta, batch, weights, entropy_coeff, True)
    bad = ~np.isfinite(grad)
    if bad.any():
        raise NonFiniteError("non-finite gradient", int(np.argmax(bad)))
    return grad


def adam_update(params, grad, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
    """One Adam ascent step; returns a new PolicyParams."""
    grad = np.asarray(grad, dtype=float)
    if not np.all(np.isfinite(grad)):
        raise NonFiniteError("non-finite gradient", int(np.argmin(np.isfinite(grad))))
    step = params.step + 1
    m = beta1 * params.m + (1.0 - beta1) * grad
    v = beta2 * params.v + (1.0 - beta2) * grad * grad
    m_hat = m / (1.0 - beta1**step)
    v_hat = v / (1.0 - beta2**step)
    theta = params.theta + lr * m_hat / (np.sqrt(v_hat) + eps)
    bad = ~np.isfinite(theta)
    if bad.any():
        raise NonFiniteError("update produced non-finite weights", int(np.argmax(bad)))
    return replace(params, theta=theta, m=m, v=v, step=step)


def finite_diff_gradient(theta, loss_closure, epsilon=1e-5):
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    theta = np.array(theta, dtype=float)
    grad = np.empty_like(theta)
    for j in range(theta.size):
        orig = theta[j]
        theta[j] = orig + epsilon
        up = loss_closure(theta)
        theta[j] = orig - epsilon
        down = loss_closure(theta)
        theta[j] = orig
        grad[j] = (up - down) / (2.0 * epsilon)
    return grad


# -- checkpoints --------------------------------------------------------------
# Text format: a one-line JSON header followed by 3*n lines holding theta, the
# first Adam moment and the second Adam moment, each value printed with 17
# significant digits so that the round trip is bit-exact.

def save_checkpoint(params, path):
    header = {
        "format": "jointopt-policy",
        "version": 1,
        "library_size": params.library_size,
        "hidden_units": params.hidden_units,
        "step": params.step,
        "sigma": params.sigma,
        "n": params.size,
    }
    with open(path, "w") as fh:
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for arr in (params.theta, params.m, params.v):
            fh.write("\n".join(f"{x:.17g}" for x in arr) + "\n")


def load_checkpoint(path):
    with open(path) as fh:
        header = json.loads(fh.readline())
        values = np.array([float(line) for line in fh if line.strip()])
    if header.get("format") != "jointopt-policy":
        raise ValueError("not a policy checkpoint")
    n = header["n"]
    if values.size != 3 * n:
        raise ValueError(f"expected {3 * n} values, found {values.size}")
    return PolicyParams(
        header["library_size"], header["hidden_units"],
        values[:n].copy(), values[n:2 * n].copy(), values[2 * n:].copy(),
        step=header["step"], sigma=header["sigma"],
    )
