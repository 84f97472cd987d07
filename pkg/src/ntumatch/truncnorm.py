"""Truncated normal sampling.

Inverse-CDF sampling on the side of zero where the CDF keeps full relative
precision, and Robert's (1995) exponential / uniform rejection once the
standardised interval starts more than ``TAIL`` sd out.
"""
from __future__ import annotations

import math

import numpy as np
from scipy.special import ndtr, ndtri

from .errors import InvalidBounds, InvalidInput

TAIL = 5.0


def _tail_draws(a, b, rng):
    """Draws from N(0,1) on (a, b) with a >= TAIL, by rejection."""
    out = np.empty_like(a)
    pending = np.arange(a.size)
    root = np.sqrt(a * a + 4.0)
    alpha = 0.5 * (a + root)
    # Robert's switch point: narrow windows use a uniform proposal
    narrow = (b - a) <= (2.0 * math.sqrt(math.e) / (a + root)) * np.exp(0.25 * (a * a - a * root))
    while pending.size:
        aa, bb, al, nw = a[pending], b[pending], alpha[pending], narrow[pending]
        m = pending.size
        expo = aa + rng.standard_exponential(m) / al
        unif = aa + (np.where(np.isfinite(bb), bb, aa + 1.0) - aa) * rng.random(m)
        x = np.where(nw, unif, expo)
        logu = np.log(rng.random(m))
        logacc = np.where(nw, 0.5 * (aa * aa - x * x), -0.5 * (x - al) ** 2)
        ok = (logu <= logacc) & (x < bb) & (x > aa)
        out[pending[ok]] = x[ok]
        pending = pending[~ok]
    return out


def rtruncnorm(mean, sd, lower, upper, rng: np.random.Generator) -> np.ndarray:
    """Vectorised draws from N(mean, sd^2) restricted to the open interval
    (lower, upper). Bounds may be infinite; all arguments broadcast."""
    mean, sd, lower, upper = np.broadcast_arrays(
        np.asarray(mean, float), np.asarray(sd, float),
        np.asarray(lower, float), np.asarray(upper, float))
    shape = mean.shape
    mean, sd, lower, upper = (x.ravel() for x in (mean, sd, lower, upper))
    if np.any(~(sd > 0)):
        raise InvalidInput("sd must be positive")
    if np.any(~(lower < upper)):
        raise InvalidBounds("truncation requires lower < upper")
    a = (lower - mean) / sd
    b = (upper - mean) / sd
    # mirror intervals in the lower half so every interval has b > 0
    flip = b <= 0
    a2 = np.where(flip, -b, a)
    b2 = np.where(flip, -a, b)
    z = np.empty_like(a2)

    tail = a2 >= TAIL
    upper_side = (a2 >= 0) & ~tail
    middle = a2 < 0
    if np.any(upper_side):
        lo, hi = ndtr(-b2[upper_side]), ndtr(-a2[upper_side])
        q = lo + (hi - lo) * rng.random(lo.size)
        z[upper_side] = -ndtri(q)
    if np.any(middle):
        lo, hi = ndtr(a2[middle]), ndtr(b2[middle])
        p = lo + (hi - lo) * rng.random(lo.size)
        z[middle] = ndtri(p)
    if np.any(tail):
        z[tail] = _tail_draws(a2[tail], b2[tail], rng)
    z = np.where(flip, -z, z)
    x = mean + sd * z
    # rounding must not land on (or past) a bound
    x = np.minimum(np.maximum(x, np.nextafter(lower, np.inf)), np.nextafter(upper, -np.inf))
    return x.reshape(shape)


def sample_truncated_normal(mean: float, sd: float, lower: float, upper: float,
                            rng: np.random.Generator) -> float:
    """Single draw strictly inside (lower, upper)."""
    return float(rtruncnorm(mean, sd, lower, upper, rng))


def truncnorm_moments(mean, sd, lower, upper):
    """Mean and variance of the truncated normal in closed form."""
    from scipy.stats import truncnorm

    a, b = (lower - mean) / sd, (upper - mean) / sd
    m, v = truncnorm.stats(a, b, moments="mv")
    return mean + sd * float(m), sd * sd * float(v)
