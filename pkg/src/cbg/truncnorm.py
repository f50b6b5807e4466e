"""Numerically stable truncated normal primitives.

Everything operates on standardized bounds ``alpha = (low - loc) / scale`` and
``beta = (high - loc) / scale`` and broadcasts over arrays.  Intervals that sit
in the upper tail are reflected into the lower tail first, where the normal
CDF has full relative precision; deep tails fall back to log-space.
"""

from __future__ import annotations

import numpy as np
from scipy.special import log_ndtr, ndtr, ndtri, ndtri_exp

from ._validation import ContractError

_LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)
# below this Phi(b) underflows relative precision for ndtri
_TINY_CDF = 1e-290


def _log_phi(x):
    return -0.5 * np.square(x) - _LOG_SQRT_2PI


def _reflect(alpha, beta):
    """Map [alpha, beta] so that the interval leans into the lower tail."""
    flip = (alpha + beta) > 0
    a = np.where(flip, -beta, alpha)
    b = np.where(flip, -alpha, beta)
    return a, b, flip


def standardize(loc, scale, low, high):
    loc = np.asarray(loc, dtype=float)
    scale = np.asarray(scale, dtype=float)
    if np.any(scale <= 0):
        raise ContractError("truncated normal scale must be positive")
    if np.any(np.asarray(low) >= np.asarray(high)):
        raise ContractError("truncated normal needs low < high")
    return (np.asarray(low) - loc) / scale, (np.asarray(high) - loc) / scale


def log_mass(alpha, beta):
    """log(Phi(beta) - Phi(alpha)) without cancellation."""
    a, b, _ = _reflect(np.asarray(alpha, float), np.asarray(beta, float))
    la = log_ndtr(a)
    lb = log_ndtr(b)
    return lb + np.log(-np.expm1(la - lb))


def std_mean(alpha, beta):
    """Mean of the standard normal truncated to [alpha, beta]."""
    a, b, flip = _reflect(np.asarray(alpha, float), np.asarray(beta, float))
    la = log_ndtr(a)
    lb = log_ndtr(b)
    denom = -np.expm1(la - lb)
    with np.errstate(over="ignore", invalid="ignore"):
        num = np.exp(_log_phi(a) - lb) - np.exp(_log_phi(b) - lb)
        m = num / denom
    # tiny intervals: the midpoint is exact to second order
    narrow = (b - a) < 1e-7
    m = np.where(narrow, 0.5 * (a + b), m)
    return np.where(flip, -m, m)


def std_variance(alpha, beta):
    """Variance of the standard normal truncated to [alpha, beta]."""
    a, b, _ = _reflect(np.asarray(alpha, float), np.asarray(beta, float))
    la = log_ndtr(a)
    lb = log_ndtr(b)
    denom = -np.expm1(la - lb)
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        pa = np.exp(_log_phi(a) - lb) / denom
        pb = np.exp(_log_phi(b) - lb) / denom
        # infinite bounds carry zero density; avoid inf * 0
        ta = np.where(np.isfinite(a), a * pa, 0.0)
        tb = np.where(np.isfinite(b), b * pb, 0.0)
        m = pa - pb
        v = 1.0 + ta - tb - m * m
    narrow = (b - a) < 1e-5
    v = np.where(narrow, np.square(b - a) / 12.0, v)
    return np.maximum(v, 0.0)


def std_ppf(u, alpha, beta):
    """Inverse CDF of the standard normal truncated to [alpha, beta]."""
    u = np.asarray(u, dtype=float)
    a, b, flip = _reflect(np.asarray(alpha, float), np.asarray(beta, float))
    # u is flipped together with the interval so the map stays increasing
    uu = np.where(flip, 1.0 - u, u)
    pa = ndtr(a)
    pb = ndtr(b)
    z = np.array(ndtri(pa + uu * (pb - pa)), dtype=float, ndmin=1)
    deep = pb < _TINY_CDF
    if np.any(deep):
        mask = np.broadcast_to(deep, z.shape)
        la = log_ndtr(np.broadcast_to(a, z.shape)[mask])
        lb = log_ndtr(np.broadcast_to(b, z.shape)[mask])
        d = la - lb
        lp = lb + np.log(np.exp(d) - np.broadcast_to(uu, z.shape)[mask] * np.expm1(d))
        z[mask] = ndtri_exp(lp)
    # guard against rounding pushing the draw a hair outside the bounds
    z = np.clip(z.reshape(np.shape(uu + a + b)), a, b)
    return np.where(flip, -z, z)


def std_cdf(z, alpha, beta):
    z = np.asarray(z, dtype=float)
    a, b, flip = _reflect(np.asarray(alpha, float), np.asarray(beta, float))
    zz = np.where(flip, -z, z)
    la = log_ndtr(a)
    lb = log_ndtr(b)
    lz = log_ndtr(np.clip(zz, a, b))
    # (Phi(z) - Phi(a)) / (Phi(b) - Phi(a)), all ratios relative to Phi(b)
    c = -np.expm1(np.minimum(la - lz, 0.0)) * np.exp(lz - lb) / -np.expm1(la - lb)
    return np.where(flip, 1.0 - c, c)


def std_dppf_dloc(u, z, alpha, beta):
    """Derivative of ``loc + scale * std_ppf(u, alpha, beta)`` w.r.t. ``loc``.

    Implicit differentiation of ``CDF(x; loc) = u`` with ``scale`` and the
    bounds held fixed gives ``1 - ((1-u) phi(alpha) + u phi(beta)) / phi(z)``.
    ``z`` is the standardized draw.
    """
    u = np.asarray(u, dtype=float)
    z = np.asarray(z, dtype=float)
    alpha = np.asarray(alpha, dtype=float)
    beta = np.asarray(beta, dtype=float)
    half_z2 = 0.5 * np.square(z)
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        ta = np.exp(np.log1p(-u) + half_z2 - 0.5 * np.square(alpha))
        tb = np.exp(np.log(u) + half_z2 - 0.5 * np.square(beta))
    ta = np.where(np.isfinite(alpha), ta, 0.0)
    tb = np.where(np.isfinite(beta), tb, 0.0)
    return 1.0 - ta - tb


def truncnorm_invcdf(u, loc, scale, low, high):
    """Quantile function of N(loc, scale^2) truncated to [low, high].

    Stable even when the untruncated mass inside the bounds is far below
    1e-12.  ``u`` must lie strictly inside (0, 1).
    """
    u = np.asarray(u, dtype=float)
    if np.any((u <= 0.0) | (u >= 1.0)):
        raise ContractError("u must lie strictly inside (0, 1)")
    alpha, beta = standardize(loc, scale, low, high)
    return np.asarray(loc) + np.asarray(scale) * std_ppf(u, alpha, beta)


def truncnorm_cdf(x, loc, scale, low, high):
    alpha, beta = standardize(loc, scale, low, high)
    return std_cdf((np.asarray(x, float) - loc) / scale, alpha, beta)


def truncnorm_mean(loc, scale, low, high):
    alpha, beta = standardize(loc, scale, low, high)
    return np.asarray(loc) + np.asarray(scale) * std_mean(alpha, beta)


def truncnorm_var(loc, scale, low, high):
    alpha, beta = standardize(loc, scale, low, high)
    return np.square(scale) * std_variance(alpha, beta)


def truncnorm_logpdf(x, loc, scale, low, high):
    x = np.asarray(x, dtype=float)
    alpha, beta = standardize(loc, scale, low, high)
    z = (x - loc) / scale
    out = _log_phi(z) - np.log(scale) - log_mass(alpha, beta)
    return np.where((x >= low) & (x <= high), out, -np.inf)
