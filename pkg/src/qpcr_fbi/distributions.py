"""Random variate generators used by the sampler and the simulator.

All generators take an explicit ``numpy.random.Generator`` and accept array
arguments (broadcast elementwise).
"""

from __future__ import annotations

import numpy as np
from scipy.special import gammaincc, gammainccinv, log_ndtr, ndtri_exp

# smallest interval mass we are willing to sample from
LOG_MIN_MASS = np.log(1e-300)
# below this acceptance probability the truncated inverse-gamma switches
# from plain rejection to inverse-CDF / tail sampling
MIN_ACCEPTANCE = 1e-3


def _log1mexp(x):
    """log(1 - exp(x)) for x <= 0."""
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore"):
        return np.where(x > -np.log(2.0), np.log(-np.expm1(x)), np.log1p(-np.exp(x)))


def log_normal_mass(a, b):
    """log(Phi(b) - Phi(a)) for standardized bounds a < b, stable in both tails."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    flip = a > 0
    lo = np.where(flip, -b, a)
    hi = np.where(flip, -a, b)
    log_hi = log_ndtr(hi)
    with np.errstate(invalid="ignore"):
        return log_hi + _log1mexp(log_ndtr(lo) - log_hi)


def draw_truncated_normal(mu, sigma, lower, upper, rng, size=None):
    """Draw from N(mu, sigma^2) restricted to (lower, upper).

    Inverse-CDF sampling carried out in log space on whichever tail holds the
    interval, so intervals many standard deviations from the mean are exact.
    Raises ``ValueError`` if an interval carries less than 1e-300 mass.
    """
    mu, sigma, lower, upper = np.broadcast_arrays(
        *(np.asarray(v, dtype=float) for v in (mu, sigma, lower, upper))
    )
    if size is not None:
        mu, sigma, lower, upper = (np.broadcast_to(v, size) for v in (mu, sigma, lower, upper))
    if np.any(sigma <= 0):
        raise ValueError("sigma must be > 0")
    if np.any(lower >= upper):
        raise ValueError("lower bound must be below upper bound")
    a = (lower - mu) / sigma
    b = (upper - mu) / sigma
    flip = a > 0
    lo = np.where(flip, -b, a)
    hi = np.where(flip, -a, b)
    log_hi = log_ndtr(hi)
    d = log_ndtr(lo) - log_hi
    with np.errstate(invalid="ignore"):
        log_mass = log_hi + _log1mexp(d)
    if np.any(~(log_mass >= LOG_MIN_MASS)):
        raise ValueError("truncation interval has negligible probability mass")
    u = rng.random(mu.shape)
    ed = np.exp(d)
    x = ndtri_exp(log_hi + np.log(ed + u * (1.0 - ed)))
    x = np.clip(x, lo, hi)
    out = mu + sigma * np.where(flip, -x, x)
    out = np.clip(out, np.nextafter(lower, np.inf), np.nextafter(upper, -np.inf))
    return out if out.ndim else float(out)


def _gamma_tail(a, x0, rng):
    """Gamma(a, 1) draws conditioned on x >= x0 (x0 > 0 required when a <= 0)."""
    a, x0 = np.broadcast_arrays(np.asarray(a, dtype=float), np.asarray(x0, dtype=float))
    a = a.ravel().copy()
    x0 = x0.ravel().copy()
    out = np.empty(a.shape)
    if np.any((a <= 0) & (x0 <= 0)):
        raise ValueError("non-positive shape requires a finite upper bound")
    with np.errstate(invalid="ignore"):
        q = np.where(a > 0, gammaincc(np.maximum(a, 1e-300), x0), 0.0)

    plain = (a > 0) & (q >= MIN_ACCEPTANCE)
    pending = np.flatnonzero(plain)
    while pending.size:
        # candidates per element sized from the known acceptance probability
        batch = int(min(4096, np.ceil(3.0 / q[pending].min())))
        x = rng.standard_gamma(a[pending][:, None], size=(pending.size, batch))
        ok = x >= x0[pending][:, None]
        hit = ok.any(axis=1)
        first = ok.argmax(axis=1)
        out[pending[hit]] = x[hit, first[hit]]
        pending = pending[~hit]

    inv = (a > 0) & (q < MIN_ACCEPTANCE) & (q > 1e-300)
    idx = np.flatnonzero(inv)
    if idx.size:
        u = rng.random(idx.size)
        x = gammainccinv(a[idx], u * q[idx])
        out[idx] = np.where(np.isfinite(x), np.maximum(x, x0[idx]), x0[idx])

    rest = ~(plain | inv)
    # log-concave tail beyond the mode: exponential envelope tangent at x0
    pending = np.flatnonzero(rest & (a > 1))
    while pending.size:
        aa, xx = a[pending], x0[pending]
        lam = 1.0 - (aa - 1.0) / xx
        x = xx + rng.standard_exponential(pending.size) / lam
        log_acc = (aa - 1.0) * (np.log(x / xx) - (x - xx) / xx)
        ok = np.log(rng.random(pending.size)) <= log_acc
        out[pending[ok]] = x[ok]
        pending = pending[~ok]

    # a <= 1: power-law envelope on [x0, 1), shifted exponential beyond
    pending = np.flatnonzero(rest & (a <= 1))
    while pending.size:
        aa, xx = a[pending], x0[pending]
        m = np.maximum(xx, 1.0)
        with np.errstate(divide="ignore", invalid="ignore"):
            w1 = np.where(
                xx >= 1.0, 0.0,
                np.where(aa == 0, -np.log(xx), (1.0 - xx**aa) / np.where(aa == 0, 1.0, aa)),
            )
        w2 = m ** (aa - 1.0) * np.exp(-m)
        first = rng.random(pending.size) * (w1 + w2) < w1
        u = rng.random(pending.size)
        with np.errstate(divide="ignore", invalid="ignore"):
            x_pow = np.where(
                aa == 0, xx ** (1.0 - u),
                (xx**aa + u * (1.0 - xx**aa)) ** (1.0 / np.where(aa == 0, 1.0, aa)),
            )
        x_exp = m + rng.standard_exponential(pending.size)
        x = np.where(first, x_pow, x_exp)
        log_acc = np.where(first, -x, (aa - 1.0) * np.log(x / m))
        ok = np.log(rng.random(pending.size)) <= log_acc
        out[pending[ok]] = x[ok]
        pending = pending[~ok]
    return out


def draw_inverse_gamma(shape, rate, rng, upper=np.inf):
    """Draw from InverseGamma(shape, rate), optionally restricted to v <= upper.

    With a finite ``upper`` the shape may be zero or negative (the truncated
    density is still proper). Returns a float for scalar input.
    """
    shape, rate, upper = np.broadcast_arrays(
        *(np.asarray(v, dtype=float) for v in (shape, rate, upper))
    )
    if np.any(rate <= 0):
        raise ValueError("rate must be > 0")
    if np.any((shape <= 0) & ~np.isfinite(upper)):
        raise ValueError("shape must be > 0 without truncation")
    x = _gamma_tail(shape, rate / upper, rng).reshape(shape.shape)
    v = np.minimum(rate / x, upper)
    return v if v.ndim else float(v)


def draw_scaled_inv_chi2(nu, S, rng, size=None, upper=np.inf):
    """Scaled inverse chi-square with ``nu`` degrees of freedom and sum of squares ``S``.

    Density proportional to ``v**-(nu/2 + 1) * exp(-S / (2 v))``, which is
    InverseGamma(nu / 2, S / 2).
    """
    nu = np.asarray(nu, dtype=float)
    S = np.asarray(S, dtype=float)
    if np.any(nu <= 0):
        raise ValueError("degrees of freedom must be > 0")
    if np.any(S <= 0):
        raise ValueError("sum of squares must be > 0")
    if np.isfinite(upper):
        if size is not None:
            nu, S = np.broadcast_to(nu, size), np.broadcast_to(S, size)
        return draw_inverse_gamma(nu / 2.0, S / 2.0, rng, upper=upper)
    out = S / rng.chisquare(nu, size=size)
    return out if np.ndim(out) else float(out)


def draw_bivariate_normal(mean, cov, rng, size=None):
    """Draw from a 2-d normal; ``cov`` must be symmetric positive semi-definite."""
    mean = np.asarray(mean, dtype=float)
    cov = np.asarray(cov, dtype=float)
    if mean.shape != (2,) or cov.shape != (2, 2):
        raise ValueError("expected a 2-vector mean and a 2x2 covariance")
    if not np.allclose(cov, cov.T):
        raise ValueError("covariance must be symmetric")
    try:
        factor = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        w, V = np.linalg.eigh(cov)
        if w.min() < -1e-12 * max(1.0, abs(w).max()):
            raise ValueError("covariance is not positive semi-definite") from None
        factor = V * np.sqrt(np.clip(w, 0.0, None))
    shape = (2,) if size is None else (*np.atleast_1d(size), 2)
    eps = rng.standard_normal(shape)
    return mean + eps @ factor.T


def draw_bernoulli(p, rng, size=None):
    p = np.asarray(p, dtype=float)
    if np.any((p < 0) | (p > 1)):
        raise ValueError("p must lie in [0, 1]")
    out = (rng.random(p.shape if size is None else size) < p).astype(np.int8)
    return out if out.ndim else int(out)


def draw_uniform(a, b, rng, size=None):
    if np.any(np.asarray(a) >= np.asarray(b)):
        raise ValueError("need a < b")
    return rng.uniform(a, b, size=size)
