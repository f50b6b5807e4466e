"""Numerical ground truth: quadrature of diffused likelihoods and bias demonstrations.

Everything here is deterministic.  Quadrature works in one or two
dimensions on a composite Simpson tensor grid that is doubled until two
successive resolutions agree (Richardson estimate ``|I_2n - I_n| / 15``).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.special import logsumexp

from . import posteriors as P
from ._validation import ContractError, as_generator, check_positive_int, check_time
from .guidance import GuidanceConfig, cbg_gradient_based, cbg_gradient_free
from .tasks import gaussian_toy_task


class QuadratureError(ArithmeticError):
    """The integral did not reach the requested tolerance."""

    def __init__(self, message, estimate=None, error=None):
        super().__init__(message)
        self.estimate = estimate
        self.error = error


@dataclass(frozen=True)
class QuadratureSpec:
    resolution: int = 256
    width_sd: float = 10.0
    rtol: float = 1e-11
    max_resolution: int = 1 << 14

    def __post_init__(self):
        if self.resolution < 256 or self.resolution % 2:
            raise ContractError("resolution must be an even integer >= 256")
        if self.max_resolution < self.resolution:
            raise ContractError("max_resolution must be >= resolution")


class QuadResult(NamedTuple):
    log_value: float
    error: float
    resolution: int


def _simpson_log_weights(lo, hi, n):
    w = np.ones(n + 1)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return np.log(w * (hi - lo) / (3.0 * n))


def _log_ratio_on_grid(log_base, log_f, lows, highs, n):
    """log of  sum(base * f) / sum(base)  on an (n+1)^d Simpson grid."""
    axes = [np.linspace(lo, hi, n + 1) for lo, hi in zip(lows, highs)]
    lw = [_simpson_log_weights(lo, hi, n) for lo, hi in zip(lows, highs)]
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=-1)
    log_w = sum(np.meshgrid(*lw, indexing="ij")).ravel()
    lb = log_w + log_base(pts)
    lf = log_f(pts)
    num = logsumexp(np.where(np.isfinite(lb) & ~np.isnan(lf), lb + lf, -np.inf))
    return float(num - logsumexp(lb))


def log_expectation_quad(log_base, log_f, lows, highs, spec=None):
    """``log E_base[f]`` for an unnormalized base density on a box, by quadrature.

    ``log_base`` and ``log_f`` map points of shape ``(m, d)`` to ``(m,)``.
    Raises :class:`QuadratureError` if the relative error estimate on the
    expectation stays above ``spec.rtol``.
    """
    spec = spec or QuadratureSpec()
    lows = np.atleast_1d(np.asarray(lows, float))
    highs = np.atleast_1d(np.asarray(highs, float))
    if lows.shape != highs.shape or lows.size not in (1, 2):
        raise ContractError("quadrature supports one or two dimensions")
    if np.any(highs <= lows):
        raise ContractError("quadrature bounds need low < high")
    cap = spec.max_resolution if lows.size == 1 else min(spec.max_resolution, 1 << 11)
    n = spec.resolution
    prev = _log_ratio_on_grid(log_base, log_f, lows, highs, n)
    while True:
        n *= 2
        cur = _log_ratio_on_grid(log_base, log_f, lows, highs, n)
        # relative error of the expectation itself
        err = abs(np.expm1(prev - cur)) / 15.0 if np.isfinite(cur) else np.inf
        if err <= spec.rtol:
            return QuadResult(cur, err, n)
        if 2 * n > cap:
            raise QuadratureError(
                f"quadrature unresolved at resolution {n}: relative error estimate {err:.3g} > {spec.rtol:.3g}",
                estimate=float(np.exp(cur)),
                error=err,
            )
        prev = cur


def _posterior_bounds(prior, x_t, t, width):
    post = P.denoising_posterior(prior, np.atleast_1d(np.asarray(x_t, float)), t)
    m = P.posterior_mean(post)
    sd = np.sqrt(P.posterior_variance(post)) * np.ones_like(m)
    lo, hi = m - width * sd, m + width * sd
    if isinstance(prior, P.Box):
        lo, hi = np.maximum(lo, prior.low), np.minimum(hi, prior.high)
    return lo, hi


def _log_denoising_base(prior, x_t, t):
    """Unnormalized ``log p(x | x_t) = log p(x) + log N(x_t; a x, b^2)``."""
    a, b = 1.0 - t, t
    x_t = np.atleast_1d(np.asarray(x_t, float))

    def f(x):
        r = x_t - a * x
        return prior.logpdf(x) - 0.5 * np.sum(r * r, axis=-1) / (b * b)

    return f


def log_diffused_likelihood_quad(prior, likelihood, t, x_t, gamma=1.0, spec=None):
    """``log of the integral of p(x | x_t) p(y | x)^gamma dx`` with its error estimate."""
    t = check_time(t, closed_low=False, closed_high=False)
    if not (np.isfinite(gamma) and gamma >= 0):
        raise ContractError(f"gamma must be finite and >= 0, got {gamma!r}")
    if prior.dim > 2:
        raise ContractError("quadrature oracle is limited to one or two dimensions")
    if gamma == 0.0:
        return QuadResult(0.0, 0.0, 0)
    spec = spec or QuadratureSpec()
    lo, hi = _posterior_bounds(prior, x_t, t, spec.width_sd)
    return log_expectation_quad(
        _log_denoising_base(prior, x_t, t), lambda x: gamma * likelihood.log_prob(x), lo, hi, spec
    )


def diffused_likelihood_quad(prior, likelihood, t, x_t, gamma=1.0, spec=None):
    """``integral of p(x | x_t) p(y | x)^gamma dx`` (Richardson-checked quadrature)."""
    return float(np.exp(log_diffused_likelihood_quad(prior, likelihood, t, x_t, gamma, spec).log_value))


class BiasResult(NamedTuple):
    approx: float
    truth: float
    gap: float

    @property
    def relative_gap(self):
        return self.gap / abs(self.truth) if self.truth else np.inf


def _one_d(prior):
    if prior.dim != 1:
        raise ContractError("bias demonstrations are one-dimensional")


def theorem1_bias(prior, likelihood, t, x_t):
    """Posterior-mean plug-in ``p(y | E[x | x_t])`` against the true diffused likelihood."""
    _one_d(prior)
    x_t = np.atleast_1d(np.asarray(x_t, float))
    x_hat = P.posterior_mean(P.denoising_posterior(prior, x_t, t))
    approx = float(np.exp(likelihood.log_prob(x_hat)))
    truth = diffused_likelihood_quad(prior, likelihood, t, x_t)
    return BiasResult(approx, truth, abs(approx - truth))


def theorem2_bias(prior, likelihood, t, x_t, spec=None):
    """Gaussian surrogate ``N(E[x | x_t], b^2 / (a^2 + b^2))`` against the true diffused likelihood."""
    _one_d(prior)
    t = check_time(t, closed_low=False, closed_high=False)
    x_t = np.atleast_1d(np.asarray(x_t, float))
    spec = spec or QuadratureSpec()
    a, b = 1.0 - t, t
    x_hat = P.posterior_mean(P.denoising_posterior(prior, x_t, t))
    var = b * b / (a * a + b * b)
    sd = np.sqrt(var)
    res = log_expectation_quad(
        lambda x: -0.5 * np.sum((x - x_hat) ** 2, axis=-1) / var,
        likelihood.log_prob,
        x_hat - spec.width_sd * sd,
        x_hat + spec.width_sd * sd,
        spec,
    )
    approx = float(np.exp(res.log_value))
    truth = diffused_likelihood_quad(prior, likelihood, t, x_t, spec=spec)
    return BiasResult(approx, truth, abs(approx - truth))


class TemperingResult(NamedTuple):
    score_true: float
    score_naive: float


def _fd_log_quad(prior, likelihood, t, x_t, gamma, h):
    up = log_diffused_likelihood_quad(prior, likelihood, t, x_t + h, gamma).log_value
    down = log_diffused_likelihood_quad(prior, likelihood, t, x_t - h, gamma).log_value
    return (up - down) / (2.0 * h)


def theorem3_bias(prior, likelihood, t, x_t, gamma, h=1e-4):
    """Tempered guidance score against ``gamma`` times the untempered one.

    ``score_true = d/dx_t log of the integral of p(x | x_t) p(y | x)^gamma dx``;
    ``score_naive = gamma * d/dx_t log p(y | x_t)``.  Both by central
    differences of the quadrature.  The two agree at ``gamma`` in {0, 1},
    which is where the rescaling shortcut happens to be exact.
    """
    _one_d(prior)
    if not (np.isfinite(gamma) and gamma >= 0):
        raise ContractError(f"gamma must be finite and >= 0, got {gamma!r}")
    x_t = np.atleast_1d(np.asarray(x_t, float))
    true = _fd_log_quad(prior, likelihood, t, x_t, gamma, h)
    naive = gamma * _fd_log_quad(prior, likelihood, t, x_t, 1.0, h)
    return TemperingResult(float(true), float(naive))


# -- tempered posteriors in one dimension ---------------------------------


def _tempered_grid(prior, likelihood, gamma, n):
    if isinstance(prior, P.Box):
        lo, hi = float(prior.low[0]), float(prior.high[0])
    else:
        m = np.atleast_1d(getattr(prior, "mean", getattr(prior, "means", np.zeros(1))))
        sd = np.sqrt(np.max(np.atleast_1d(getattr(prior, "variance", getattr(prior, "variances", 1.0)))))
        lo, hi = float(np.min(m) - 12 * sd), float(np.max(m) + 12 * sd)
    x = np.linspace(lo, hi, n + 1)
    logp = prior.logpdf(x[:, None]) + gamma * likelihood.log_prob(x[:, None])
    return x, logp


def _tempered_support(prior, likelihood, gamma, n, drop):
    x, logp = _tempered_grid(prior, likelihood, gamma, n)
    keep = logp > np.max(logp) - drop
    lo, hi = x[keep][0], x[keep][-1]
    pad = 0.05 * (hi - lo) + 1e-9
    if isinstance(prior, P.Box):
        return max(lo - pad, prior.low[0]), min(hi + pad, prior.high[0])
    return lo - pad, hi + pad


def _simpson_moments(prior, likelihood, gamma, lo, hi, n):
    x = np.linspace(lo, hi, n + 1)
    lp = prior.logpdf(x[:, None]) + gamma * likelihood.log_prob(x[:, None])
    w = np.exp(lp - np.max(lp) + _simpson_log_weights(lo, hi, n))
    z = w.sum()
    mean = np.dot(w, x) / z
    return mean, np.dot(w, (x - mean) ** 2) / z


def tempered_posterior_moments(prior, likelihood, gamma, rtol=1e-12):
    """Mean and variance of ``p(x) p(y | x)^gamma`` in 1-D by Simpson quadrature."""
    _one_d(prior)
    lo, hi = _tempered_support(prior, likelihood, gamma, 4096, 200.0)
    n = 1 << 12
    prev = _simpson_moments(prior, likelihood, gamma, lo, hi, n)
    while n < 1 << 22:
        n *= 2
        cur = _simpson_moments(prior, likelihood, gamma, lo, hi, n)
        if abs(cur[0] - prev[0]) <= rtol * (1 + abs(cur[0])) and abs(cur[1] - prev[1]) <= rtol * cur[1]:
            return float(cur[0]), float(cur[1])
        prev = cur
    raise QuadratureError("tempered moments did not converge", estimate=cur)


def tempered_posterior_samples(prior, likelihood, gamma, n, rng=None, resolution=1 << 16):
    """Exact-to-grid-resolution draws from ``p(x) p(y | x)^gamma`` in 1-D by inverse CDF."""
    _one_d(prior)
    n = check_positive_int(n, "n")
    rng = as_generator(rng)
    lo, hi = _tempered_support(prior, likelihood, gamma, 4096, 80.0)
    grid = np.linspace(lo, hi, resolution + 1)
    lp = prior.logpdf(grid[:, None]) + gamma * likelihood.log_prob(grid[:, None])
    dens = np.exp(lp - np.max(lp))
    cdf = np.concatenate([[0.0], np.cumsum(0.5 * (dens[1:] + dens[:-1]))])
    cdf /= cdf[-1]
    return np.interp(rng.uniform(size=n), cdf, grid)[:, None]


# -- variance experiment ----------------------------------------------------

VARIANCE_PRIOR = (2.0, 1.0)
VARIANCE_Y = 0.0
VARIANCE_NOISE = 0.16


def conjugate_guided_mean(x_t, t, prior_mean=2.0, prior_var=1.0, y=0.0, noise_var=0.16):
    """``E[x | x_t, y]`` for a 1-D Gaussian prior and Gaussian likelihood."""
    prec = 1.0 / prior_var + 1.0 / noise_var
    v = 1.0 / prec
    m = v * (prior_mean / prior_var + y / noise_var)
    a, b = 1.0 - t, t
    return m + a * v / (a * a * v + b * b) * (np.asarray(x_t, float) - a * m)


def default_variance_grids():
    return np.round(np.linspace(0.05, 0.95, 19), 10), np.linspace(-1.0, 3.0, 9)


def variance_experiment(t_grid=None, xt_grid=None, K=1000, reps=100, rng=None):
    """Squared error of the gradient-free and gradient-based ``E[x | x_t, y]`` estimates.

    Setting: prior ``N(2, 1)``, likelihood ``N(y=0; x, 0.4^2)``.  Returns a
    list of row dicts ``{t, x_t, var_gf, var_gb}`` in grid order.
    """
    defaults = default_variance_grids()
    t_grid = defaults[0] if t_grid is None else np.asarray(t_grid, float)
    xt_grid = defaults[1] if xt_grid is None else np.asarray(xt_grid, float)
    K = check_positive_int(K, "K")
    reps = check_positive_int(reps, "reps")
    rng = as_generator(rng)
    task = gaussian_toy_task(*VARIANCE_PRIOR, VARIANCE_Y, VARIANCE_NOISE)
    cfg = GuidanceConfig(method="cbg_gf", K=K)
    rows = []
    for t in t_grid:
        for x_t in xt_grid:
            states = np.full((reps, 1), x_t)
            truth = conjugate_guided_mean(x_t, t, *VARIANCE_PRIOR, VARIANCE_Y, VARIANCE_NOISE)
            gf = cbg_gradient_free(task, states, t, cfg, rng).x_hat[:, 0]
            gb = cbg_gradient_based(task, states, t, cfg, rng).x_hat[:, 0]
            rows.append(
                {
                    "t": float(t),
                    "x_t": float(x_t),
                    "var_gf": float(np.mean((gf - truth) ** 2)),
                    "var_gb": float(np.mean((gb - truth) ** 2)),
                }
            )
    return rows
