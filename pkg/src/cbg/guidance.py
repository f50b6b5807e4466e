"""Posterior-score estimators for guided diffusion sampling.

Calibrated Bayesian guidance (CBG) comes in two consistent flavours:

* gradient-free: self-normalized likelihood weights on exact draws from
  ``p(x | x_t)``, returning the full posterior score directly;
* gradient-based: reparameterized draws differentiated through the
  likelihood, returning the guidance term to add to the prior score.

The baselines (DPS, LGD, DPG, SCG) are included for comparison; each uses
a point or Gaussian surrogate for ``p(x | x_t)`` and stays biased no matter how
many samples it uses.

All estimators accept a single state ``(d,)`` or a batch ``(n, d)``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import posteriors as P
from ._validation import ContractError, as_generator, check_positive_int, check_state, check_time
from .schedule import T_EVAL_MAX, euler_step, inner_posterior_sample
from .tasks import GradientUnavailableError

METHODS = ("cbg_gf", "cbg_gb", "dps", "lgd", "dpg", "scg")
TEMPER_MODES = ("inside_integral", "naive_rescale")


class ZeroLikelihoodError(FloatingPointError):
    """Every inner sample has zero likelihood, so the weights are undefined."""

    def __init__(self, message, t=None, x_t=None, rows=None):
        super().__init__(message)
        self.t = t
        self.x_t = x_t
        self.rows = rows


@dataclass(frozen=True)
class GuidanceConfig:
    method: str = "cbg_gf"
    K: int = 1000
    gamma: float = 1.0
    C: float = 1.0
    temper_mode: str = "inside_integral"
    # None draws p(x | x_t) exactly; an integer uses the nested M-step sampler
    inner_steps: int | None = None
    inner_churn: float = 1.0

    def __post_init__(self):
        problems = []
        if self.method not in METHODS:
            problems.append(f"method must be one of {METHODS}, got {self.method!r}")
        if not (isinstance(self.K, (int, np.integer)) and self.K >= 1):
            problems.append(f"K must be an integer >= 1, got {self.K!r}")
        if not (np.isfinite(self.gamma) and self.gamma >= 0):
            problems.append(f"gamma must be finite and >= 0, got {self.gamma!r}")
        if not (np.isfinite(self.C) and self.C >= 0):
            problems.append(f"C must be finite and >= 0, got {self.C!r}")
        if self.temper_mode not in TEMPER_MODES:
            problems.append(f"temper_mode must be one of {TEMPER_MODES}, got {self.temper_mode!r}")
        if self.inner_steps is not None and not (isinstance(self.inner_steps, (int, np.integer)) and self.inner_steps >= 1):
            problems.append(f"inner_steps must be None or an integer >= 1, got {self.inner_steps!r}")
        if self.method == "dpg" and self.K < 2:
            problems.append("dpg needs K >= 2 for its leave-one-out baseline")
        if problems:
            raise ContractError("; ".join(problems))

    def to_dict(self):
        return asdict(self)


@dataclass
class ScoreEstimate:
    """An estimate plus diagnostics.

    ``value`` is the full posterior score for ``cbg_gf`` and
    :func:`posterior_score`, and the guidance term for the gradient-based
    estimators.  ``x_hat`` is the matching estimate of ``E[x | x_t, y]`` when
    it is available.
    """

    value: np.ndarray
    x_hat: np.ndarray | None = None
    ess: np.ndarray | None = None
    max_log_weight: np.ndarray | None = None
    flags: dict = field(default_factory=dict)


def _setup(task, x_t, t):
    check_time(t, closed_low=False, closed_high=False)
    x_t = check_state(x_t)
    if x_t.shape[-1] != task.dim_x:
        raise ContractError(f"x_t has dimension {x_t.shape[-1]}, task expects {task.dim_x}")
    return x_t, 1.0 - t, t


def self_normalize(log_w):
    """Softmax over the last axis, shifted by the maximum for stability.

    Returns ``(weights, log_normalizer, max_log_weight)``; rows whose
    log-weights are all ``-inf`` come back as NaN weights.
    """
    log_w = np.asarray(log_w, float)
    m = np.max(log_w, axis=-1, keepdims=True)
    dead = ~np.isfinite(m)
    shifted = log_w - np.where(dead, 0.0, m)
    e = np.exp(shifted)
    s = np.sum(e, axis=-1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        w = e / s
        lse = m + np.log(s)
    w = np.where(dead, np.nan, w)
    return w, lse[..., 0], m[..., 0]


def _log_weights(task, draws, gamma):
    lp = task.likelihood.log_prob(draws)
    if gamma == 0.0:
        # constant likelihood; also avoids 0 * -inf
        return np.zeros_like(lp), lp
    return gamma * lp, lp


def _raise_dead(dead, x_t, t, strict):
    if strict and np.any(dead):
        rows = np.nonzero(np.atleast_1d(dead))[0]
        raise ZeroLikelihoodError(
            f"zero-likelihood region at t={t:.6g}: all inner samples have zero likelihood for {rows.size} state(s)",
            t=t,
            x_t=np.atleast_2d(x_t)[rows],
            rows=rows,
        )


def _inner_draws(task, x_t, t, config, rng):
    if config.inner_steps is None:
        return P.posterior_draw(P.denoising_posterior(task.prior, x_t, t), rng, config.K)
    # nested sampler driven by the unconditional analytic score
    reps = np.repeat(np.atleast_2d(x_t)[:, None, :], config.K, axis=1)
    flat = reps.reshape(-1, task.dim_x)

    def score(x, s):
        return P.marginal_score(task.prior, x, s)

    out = inner_posterior_sample(score, flat, t, config.inner_steps, config.inner_churn, rng)
    out = out.reshape(reps.shape)
    return out if x_t.ndim == 2 else out[0]


def cbg_gradient_free(task, x_t, t, config, rng=None, strict=True):
    """Self-normalized estimate of ``grad log p(x_t | y)`` (likelihood enters as weights).

    With ``gamma != 1`` the likelihood is tempered inside the integral,
    targeting ``p(x) p(y | x)^gamma``.
    """
    x_t, a, b = _setup(task, x_t, t)
    rng = as_generator(rng)
    draws = _inner_draws(task, x_t, t, config, rng)
    log_w, _ = _log_weights(task, draws, config.gamma)
    w, _, m = self_normalize(log_w)
    dead = ~np.isfinite(m)
    _raise_dead(dead, x_t, t, strict)
    x_hat = np.einsum("...k,...kd->...d", w, draws)
    score = (a * x_hat - x_t) / (b * b)
    ess = 1.0 / np.sum(np.square(w), axis=-1)
    return ScoreEstimate(value=score, x_hat=x_hat, ess=ess, max_log_weight=m)


def _require_gradient(task, method):
    if not task.has_gradient:
        raise GradientUnavailableError(f"{method} needs a differentiable likelihood; task {task.id} has none")


def cbg_gradient_based(task, x_t, t, config, rng=None, noise=None, strict=True):
    """Reparameterized estimate of ``grad log p(y | x_t)`` (the guidance term only).

    ``noise`` freezes the sampler randomness: standard normals for Gaussian
    posteriors, uniforms for truncated ones, shaped ``(..., K, d)``.
    """
    _require_gradient(task, "cbg_gb")
    x_t, a, b = _setup(task, x_t, t)
    post = P.denoising_posterior(task.prior, x_t, t)
    if noise is None:
        noise = P.reparam_noise(post, as_generator(rng), config.K)
    draws, jac = P.reparam_draw(post, noise)
    lp, grad = task.likelihood.log_prob_and_grad(draws)
    gamma = config.gamma
    log_w = np.zeros_like(lp) if gamma == 0.0 else gamma * lp
    w, _, m = self_normalize(log_w)
    dead = ~np.isfinite(m)
    _raise_dead(dead, x_t, t, strict)
    # zero-weight samples may carry non-finite gradients
    contrib = np.where((w > 0)[..., None], jac * grad, 0.0)
    g = gamma * np.einsum("...k,...kd->...d", w, contrib)
    x_hat = P.posterior_mean(post) + (b * b / a) * g
    ess = 1.0 / np.sum(np.square(w), axis=-1)
    return ScoreEstimate(value=g, x_hat=x_hat, ess=ess, max_log_weight=m)


def dps_gradient(task, x_t, t, gamma, **_):
    """Likelihood gradient at the posterior mean, chained through ``d x_hat / d x_t``."""
    _require_gradient(task, "dps")
    x_t, a, b = _setup(task, x_t, t)
    post = P.denoising_posterior(task.prior, x_t, t)
    x_hat = P.posterior_mean(post)
    _, grad = task.likelihood.log_prob_and_grad(x_hat)
    g = gamma * P.mean_jacobian_vjp(post, grad)
    return ScoreEstimate(value=g, x_hat=x_hat + (b * b / a) * g)


def gaussian_surrogate_variance(t):
    """Variance ``b^2 / (a^2 + b^2)`` of the Gaussian stand-in for ``p(x | x_t)``."""
    a, b = 1.0 - t, t
    return b * b / (a * a + b * b)


def lgd_gradient(task, x_t, t, K, gamma, rng=None, noise=None):
    """Gradient of the log Monte Carlo average of ``p(y | x)`` under the Gaussian surrogate."""
    _require_gradient(task, "lgd")
    x_t, a, b = _setup(task, x_t, t)
    post = P.denoising_posterior(task.prior, x_t, t)
    x_hat = P.posterior_mean(post)
    if noise is None:
        noise = as_generator(rng).standard_normal((*x_hat.shape[:-1], K, x_hat.shape[-1]))
    draws = x_hat[..., None, :] + np.sqrt(gaussian_surrogate_variance(t)) * noise
    lp, grad = task.likelihood.log_prob_and_grad(draws)
    w, _, m = self_normalize(lp)
    avg = np.einsum("...k,...kd->...d", np.nan_to_num(w), np.where((w > 0)[..., None], grad, 0.0))
    g = gamma * P.mean_jacobian_vjp(post, avg)
    return ScoreEstimate(value=g, x_hat=x_hat + (b * b / a) * g, ess=1.0 / np.sum(np.square(w), axis=-1), max_log_weight=m)


def dpg_gradient(task, x_t, t, K, gamma, C, rng=None, noise=None):
    """Policy-gradient direction with a leave-one-out baseline, scaled to ``C / |s|``."""
    K = check_positive_int(K, "K", minimum=2)
    x_t, a, b = _setup(task, x_t, t)
    post = P.denoising_posterior(task.prior, x_t, t)
    x_hat = P.posterior_mean(post)
    if noise is None:
        noise = as_generator(rng).standard_normal((*x_hat.shape[:-1], K, x_hat.shape[-1]))
    draws = x_hat[..., None, :] + np.sqrt(gaussian_surrogate_variance(t)) * noise
    lik = np.exp(task.likelihood.log_prob(draws))  # raw likelihoods, as in the estimator
    # lik_i - mean of the others == K / (K - 1) * (lik_i - mean of all)
    dev = lik - np.mean(lik, axis=-1, keepdims=True)
    # differences at rounding level are not signal; left in, the normalization below would amplify them
    resolution = 8 * np.finfo(float).eps * np.max(lik, axis=-1, keepdims=True)
    adv = np.where(np.abs(dev) <= resolution, 0.0, K / (K - 1) * dev)
    with np.errstate(invalid="ignore"):  # diverged chains are dropped by the sampler
        resid = draws - x_hat[..., None, :]
    s = 2.0 * P.mean_jacobian_vjp(post, np.einsum("...k,...kd->...d", adv, resid) / K)
    norm2 = np.sum(s * s, axis=-1, keepdims=True)
    zero = norm2 == 0.0
    with np.errstate(invalid="ignore", divide="ignore"):
        g = np.where(zero, 0.0, gamma * C * s / norm2)
    return ScoreEstimate(value=g, x_hat=x_hat + (b * b / a) * g, flags={"zero_direction": zero[..., 0]})


def scg_step(task, x_t, t, t_next, K, rng=None, noise=None):
    """Pick the best of ``K`` stochastic transitions by likelihood of their posterior mean."""
    K = check_positive_int(K, "K")
    t = check_time(t, closed_low=False)
    t_next = float(t_next)
    if not 0.0 <= t_next < t:
        raise ContractError(f"scg_step needs 0 <= t_next < t, got t={t}, t_next={t_next}")
    x_t = check_state(x_t)
    t_eval = min(t, T_EVAL_MAX)
    x_hat = P.posterior_mean(P.denoising_posterior(task.prior, x_t, t_eval))
    mean = euler_step(x_t, t, t_next, x_hat)
    # variance uses the outer t in the denominator, as in the method's definition
    sd = (t - t_next) / np.sqrt((1 - t) ** 2 + t**2)
    if noise is None:
        noise = as_generator(rng).standard_normal((*mean.shape[:-1], K, mean.shape[-1]))
    cand = mean[..., None, :] + sd * noise
    if t_next > 0.0:
        flat = cand.reshape(-1, cand.shape[-1])
        cand_hat = P.posterior_mean(P.denoising_posterior(task.prior, flat, t_next)).reshape(cand.shape)
    else:
        cand_hat = cand
    score = task.likelihood.log_prob(cand_hat)
    best = np.argmax(score, axis=-1)
    return np.take_along_axis(cand, best[..., None, None], axis=-2)[..., 0, :]


def posterior_score(task, x_t, t, config, rng=None, strict=True):
    """Assemble ``grad log p(x_t | y)`` for ``config.method``.

    Gradient methods add their guidance term to the analytic prior score.
    ``temper_mode='naive_rescale'`` scales the untempered CBG guidance term
    by ``gamma`` instead of tempering inside the integral; the baselines use
    ``gamma`` as a plain guidance scale in both modes.
    """
    if config.method == "scg":
        raise ContractError("scg replaces the sampler step; use scg_step")
    x_t, a, b = _setup(task, x_t, t)
    rng = as_generator(rng)
    prior_post = P.denoising_posterior(task.prior, x_t, t)
    prior_hat = P.posterior_mean(prior_post)
    prior_score = (a * prior_hat - x_t) / (b * b)
    naive = config.temper_mode == "naive_rescale" and config.method in ("cbg_gf", "cbg_gb")
    gamma = config.gamma
    inner = GuidanceConfig(**{**config.to_dict(), "gamma": 1.0}) if naive else config

    if config.method == "cbg_gf":
        est = cbg_gradient_free(task, x_t, t, inner, rng, strict=strict)
        if naive:
            est.value = prior_score + gamma * (est.value - prior_score)
            est.x_hat = prior_hat + gamma * (est.x_hat - prior_hat)
        return est

    if config.method == "cbg_gb":
        est = cbg_gradient_based(task, x_t, t, inner, rng, strict=strict)
    elif config.method == "dps":
        est = dps_gradient(task, x_t, t, gamma)
    elif config.method == "lgd":
        est = lgd_gradient(task, x_t, t, config.K, gamma, rng)
    else:
        est = dpg_gradient(task, x_t, t, config.K, gamma, config.C, rng)
    guidance = gamma * est.value if naive else est.value
    est.value = prior_score + guidance
    est.x_hat = prior_hat + (b * b / a) * guidance
    return est
