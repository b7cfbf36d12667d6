"""Truncated normal distribution: inverse-CDF sampling, log-density, entropy.

All functions broadcast over numpy arrays. Infinite bounds are allowed and
reduce to the plain normal distribution.
"""

import numpy as np
from scipy.special import log_ndtr, ndtr, ndtri

LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)
MIN_MASS = 1e-300


class DegenerateTruncation(ValueError):
    pass


def _standardize(mean, sigma, lo, hi):
    mean = np.asarray(mean, dtype=float)
    a = (np.asarray(lo, dtype=float) - mean) / sigma
    b = (np.asarray(hi, dtype=float) - mean) / sigma
    return a, b


def log_mass(a, b):
    """log(Phi(b) - Phi(a)) for standardized a < b, accurate in both tails."""
    a, b = np.broadcast_arrays(np.asarray(a, float), np.asarray(b, float))
    # work in the lower tail where log_ndtr is accurate
    flip = a > 0
    lo = np.where(flip, -b, a)
    hi = np.where(flip, -a, b)
    log_hi = log_ndtr(hi)
    log_lo = log_ndtr(lo)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = log_hi + np.log1p(-np.exp(log_lo - log_hi))
    return out


def _ratios(a, b, logz):
    """phi(a)/Z and phi(b)/Z, with zeros at infinite endpoints."""
    with np.errstate(over="ignore", invalid="ignore"):
        ra = np.where(np.isfinite(a), np.exp(-0.5 * a * a - LOG_SQRT_2PI - logz), 0.0)
        rb = np.where(np.isfinite(b), np.exp(-0.5 * b * b - LOG_SQRT_2PI - logz), 0.0)
    return ra, rb


def sample(mean, sigma, lo, hi, u):
    """Map uniforms ``u`` in (0, 1) to truncated-normal draws on (lo, hi).

    Raises DegenerateTruncation when the interval carries (numerically) no
    probability mass.
    """
    a, b = _standardize(mean, sigma, lo, hi)
    a, b, u = np.broadcast_arrays(a, b, np.asarray(u, float))
    flip = a > 0
    sa = np.where(flip, -b, a)
    sb = np.where(flip, -a, b)
    cdf_a = ndtr(sa)
    mass = ndtr(sb) - cdf_a
    if np.any(mass < MIN_MASS):
        raise DegenerateTruncation("truncation interval carries no probability mass")
    z = ndtri(cdf_a + u * mass)
    z = np.where(flip, -z, z)
    x = np.asarray(mean, float) + sigma * z
    lo_arr = np.broadcast_to(np.asarray(lo, float), x.shape)
    hi_arr = np.broadcast_to(np.asarray(hi, float), x.shape)
    # keep draws strictly inside the open interval
    x = np.where(x <= lo_arr, np.nextafter(lo_arr, np.inf), x)
    x = np.where(x >= hi_arr, np.nextafter(hi_arr, -np.inf), x)
    return x


def logpdf(x, mean, sigma, lo, hi):
    x = np.asarray(x, float)
    if np.any(x < lo) or np.any(x > hi):
        raise ValueError("value outside truncation support")
    a, b = _standardize(mean, sigma, lo, hi)
    z = (x - mean) / sigma
    return -0.5 * z * z - np.log(sigma) - LOG_SQRT_2PI - log_mass(a, b)


def entropy(mean, sigma, lo, hi):
    a, b = _standardize(mean, sigma, lo, hi)
    logz = log_mass(a, b)
    ra, rb = _ratios(a, b, logz)
    ta = np.where(np.isfinite(a), a, 0.0) * ra
    tb = np.where(np.isfinite(b), b, 0.0) * rb
    return 0.5 * np.log(2.0 * np.pi * np.e) + np.log(sigma) + logz + 0.5 * (ta - tb)


def dlogpdf_dmean(x, mean, sigma, lo, hi):
    a, b = _standardize(mean, sigma, lo, hi)
    ra, rb = _ratios(a, b, log_mass(a, b))
    return (np.asarray(x, float) - mean) / sigma**2 - (ra - rb) / sigma


def dentropy_dmean(mean, sigma, lo, hi):
    a, b = _standardize(mean, sigma, lo, hi)
    ra, rb = _ratios(a, b, log_mass(a, b))
    d = ra - rb
    fa = np.isfinite(a)
    fb = np.isfinite(b)
    sa = np.where(fa, a, 0.0)
    sb = np.where(fb, b, 0.0)
    term_a = np.where(fa, ra * (sa * sa - 1.0 - sa * d), 0.0)
    term_b = np.where(fb, rb * (sb * sb - 1.0 - sb * d), 0.0)
    return d / sigma + 0.5 * (term_a - term_b) / sigma


def cdf(x, mean, sigma, lo, hi):
    a, b = _standardize(mean, sigma, lo, hi)
    z = (np.asarray(x, float) - mean) / sigma
    return (ndtr(z) - ndtr(a)) / (ndtr(b) - ndtr(a))
