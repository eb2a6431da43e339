"""Vectorised truncated-normal density, interval mass and sampling.

Everything is computed in standardised coordinates with log-space normal
CDFs and mirroring into the lower tail, so masses of far-tail intervals do
not underflow to zero before the logarithm is taken.
"""

from __future__ import annotations

import numpy as np
from scipy.special import log_ndtr, ndtri_exp

_LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)


def log_std_mass(a, b):
    """log(Phi(b) - Phi(a)) for standardised bounds ``a <= b``; -inf when empty."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    flip = a > 0
    lo = np.where(flip, -b, a)
    hi = np.where(flip, -a, b)
    la = log_ndtr(lo)
    lb = log_ndtr(hi)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        out = lb + np.log1p(-np.exp(la - lb))
    return np.where(hi > lo, out, -np.inf)


def log_mass(lo, hi, mu, sd):
    """log P(lo < X <= hi) for X ~ N(mu, sd)."""
    return log_std_mass((np.asarray(lo) - mu) / sd, (np.asarray(hi) - mu) / sd)


def log_pdf(x, mu, sd, lo, hi, log_z=None):
    """Log density of N(mu, sd) truncated to ``(lo, hi]``; -inf outside.

    ``log_z`` is the precomputed log normaliser ``log_mass(lo, hi, mu, sd)``.
    Zero-width supports are point masses and score 0 (density factor 1) at
    the point.
    """
    x = np.asarray(x, dtype=float)
    if log_z is None:
        log_z = log_mass(lo, hi, mu, sd)
    z = (x - mu) / sd
    with np.errstate(invalid="ignore"):
        out = -0.5 * z * z - _LOG_SQRT_2PI - np.log(sd) - log_z
    point = hi <= lo
    inside = (x > lo) & (x <= hi)
    out = np.where(inside, out, -np.inf)
    return np.where(point, np.where(x == lo, 0.0, -np.inf), out)


def pdf(x, mu, sd, lo, hi, log_z=None):
    return np.exp(log_pdf(x, mu, sd, lo, hi, log_z))


def sample(rng: np.random.Generator, mu, sd, lo, hi):
    """One draw per entry of the broadcast parameter arrays.

    Point supports return the point; supports whose mass underflows even in
    log space fall back to a uniform draw over the (finite) interval.
    """
    mu, sd, lo, hi = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (mu, sd, lo, hi)))
    a = (lo - mu) / sd
    b = (hi - mu) / sd
    flip = a > 0
    A = np.where(flip, -b, a)
    B = np.where(flip, -a, b)
    la = log_ndtr(A)
    lb = log_ndtr(B)
    u = rng.random(mu.shape)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        r = np.exp(la - lb)
        log_u = lb + np.log(r + u * (1.0 - r))
        z = ndtri_exp(log_u)
    z = np.clip(z, A, B)
    z = np.where(flip, -z, z)
    out = mu + sd * z
    bad = ~np.isfinite(out)
    if bad.any():
        flo = np.where(np.isfinite(lo), lo, mu - 10 * sd)
        fhi = np.where(np.isfinite(hi), hi, mu + 10 * sd)
        out = np.where(bad, flo + rng.random(mu.shape) * (fhi - flo), out)
    out = np.clip(out, lo, hi)
    return np.where(hi <= lo, lo, out)
