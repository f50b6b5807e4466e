"""Closed-form priors and their denoising posteriors ``p(x | x_t)``.

Three prior families are supported: isotropic Gaussians, axis-aligned boxes
(uniform) and mixtures of isotropic Gaussians.  The mixture is not one of the
benchmark priors; it is a non-Gaussian stand-in for two-dimensional toy
demonstrations where the posterior is still analytic.

States are arrays of shape ``(d,)`` or ``(n, d)``; posterior parameters keep
that leading shape and draws add a sample axis before the last one.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from . import truncnorm
from ._validation import ContractError, as_generator, check_positive_int, check_state, check_time
from .schedule import FLOW_MATCHING


class NotReparameterizableError(ContractError):
    """The posterior has no differentiable sampler (gradient-based CBG unavailable)."""


# -- priors ----------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class IsoGaussian:
    mean: np.ndarray
    variance: float

    def __post_init__(self):
        object.__setattr__(self, "mean", np.atleast_1d(np.asarray(self.mean, float)))
        if not self.variance > 0:
            raise ContractError("prior variance must be positive")
        object.__setattr__(self, "variance", float(self.variance))

    @property
    def dim(self):
        return self.mean.shape[0]

    def sample(self, n, rng=None):
        rng = as_generator(rng)
        return self.mean + np.sqrt(self.variance) * rng.standard_normal((n, self.dim))

    def logpdf(self, x):
        x = np.asarray(x, float)
        r2 = np.sum(np.square(x - self.mean), axis=-1)
        return -0.5 * r2 / self.variance - 0.5 * self.dim * np.log(2 * np.pi * self.variance)


@dataclass(frozen=True, eq=False)
class Box:
    low: np.ndarray
    high: np.ndarray

    def __post_init__(self):
        low = np.atleast_1d(np.asarray(self.low, float))
        high = np.atleast_1d(np.asarray(self.high, float))
        low, high = np.broadcast_arrays(low, high)
        if np.any(low >= high):
            raise ContractError("Box needs low < high componentwise")
        object.__setattr__(self, "low", low.copy())
        object.__setattr__(self, "high", high.copy())

    @property
    def dim(self):
        return self.low.shape[0]

    def sample(self, n, rng=None):
        rng = as_generator(rng)
        return self.low + (self.high - self.low) * rng.random((n, self.dim))

    def contains(self, x):
        x = np.asarray(x, float)
        return np.all((x >= self.low) & (x <= self.high), axis=-1)

    def logpdf(self, x):
        inside = self.contains(x)
        return np.where(inside, -np.sum(np.log(self.high - self.low)), -np.inf)


@dataclass(frozen=True, eq=False)
class IsoGaussianMixture:
    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, float)
        mu = np.atleast_2d(np.asarray(self.means, float))
        var = np.asarray(self.variances, float)
        if abs(w.sum() - 1.0) > 1e-12 or np.any(w < 0):
            raise ContractError("mixture weights must lie on the simplex")
        if np.any(var <= 0):
            raise ContractError("mixture variances must be positive")
        if not (w.shape[0] == mu.shape[0] == var.shape[0]):
            raise ContractError("mixture weights, means and variances disagree in length")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", mu)
        object.__setattr__(self, "variances", var)

    @property
    def dim(self):
        return self.means.shape[1]

    def sample(self, n, rng=None):
        rng = as_generator(rng)
        k = rng.choice(self.weights.shape[0], size=n, p=self.weights)
        z = rng.standard_normal((n, self.dim))
        return self.means[k] + np.sqrt(self.variances[k])[:, None] * z

    def logpdf(self, x):
        x = np.asarray(x, float)
        r2 = np.sum(np.square(x[..., None, :] - self.means), axis=-1)
        comp = -0.5 * r2 / self.variances - 0.5 * self.dim * np.log(2 * np.pi * self.variances)
        return logsumexp(comp + np.log(self.weights), axis=-1)


# -- denoising posteriors --------------------------------------------------


@dataclass(frozen=True, eq=False)
class GaussianPosterior:
    """``N(mean, variance I)``; ``mean_coef`` is ``d mean / d x_t``."""

    mean: np.ndarray
    variance: float
    mean_coef: float


@dataclass(frozen=True, eq=False)
class TruncBoxGaussian:
    """Independent normals ``N(loc, scale^2)`` truncated to ``[low, high]``."""

    loc: np.ndarray
    scale: float
    low: np.ndarray
    high: np.ndarray
    loc_coef: float

    @property
    def alpha(self):
        return (self.low - self.loc) / self.scale

    @property
    def beta(self):
        return (self.high - self.loc) / self.scale


@dataclass(frozen=True, eq=False)
class MixtureGaussian:
    """Mixture of isotropic Gaussian posteriors with per-state responsibilities.

    ``responsibilities`` has shape ``(..., k)`` and ``means`` ``(..., k, d)``.
    ``mean_coefs`` and ``score_precisions`` let the Jacobian of the posterior
    mean be assembled in closed form.
    """

    responsibilities: np.ndarray
    means: np.ndarray
    variances: np.ndarray
    mean_coefs: np.ndarray
    marginal_scores: np.ndarray


def _gaussian_posterior_params(mu0, var0, x_t, a, b):
    denom = b * b + a * a * var0
    mean = (b * b * mu0 + a * var0 * x_t) / denom
    return mean, var0 * b * b / denom, a * var0 / denom


def denoising_posterior(prior, x_t, t, schedule=FLOW_MATCHING):
    """Closed form of ``p(x | x_t)`` for 0 < t < 1."""
    check_time(t, closed_low=False, closed_high=False)
    x_t = check_state(x_t)
    a, b = schedule.ab(t)
    if isinstance(prior, IsoGaussian):
        mean, var, coef = _gaussian_posterior_params(prior.mean, prior.variance, x_t, a, b)
        return GaussianPosterior(mean=mean, variance=var, mean_coef=coef)
    if isinstance(prior, Box):
        return TruncBoxGaussian(loc=x_t / a, scale=b / a, low=prior.low, high=prior.high, loc_coef=1.0 / a)
    if isinstance(prior, IsoGaussianMixture):
        var0 = prior.variances
        marg_var = a * a * var0 + b * b  # (k,)
        diff = x_t[..., None, :] - a * prior.means  # (..., k, d)
        d = prior.dim
        log_marg = -0.5 * np.sum(diff * diff, axis=-1) / marg_var - 0.5 * d * np.log(2 * np.pi * marg_var)
        with np.errstate(divide="ignore"):  # zero-weight components
            logits = log_marg + np.log(prior.weights)
        resp = np.exp(logits - logsumexp(logits, axis=-1, keepdims=True))
        denom = b * b + a * a * var0
        means = (b * b * prior.means + (a * var0)[:, None] * x_t[..., None, :]) / denom[:, None]
        return MixtureGaussian(
            responsibilities=resp,
            means=means,
            variances=var0 * b * b / denom,
            mean_coefs=a * var0 / denom,
            marginal_scores=-diff / marg_var[:, None],
        )
    raise ContractError(f"unsupported prior {type(prior).__name__}")


def posterior_mean(posterior):
    if isinstance(posterior, GaussianPosterior):
        return posterior.mean
    if isinstance(posterior, TruncBoxGaussian):
        return posterior.loc + posterior.scale * truncnorm.std_mean(posterior.alpha, posterior.beta)
    if isinstance(posterior, MixtureGaussian):
        return np.sum(posterior.responsibilities[..., None] * posterior.means, axis=-2)
    raise ContractError(f"unsupported posterior {type(posterior).__name__}")


def posterior_variance(posterior):
    """Per-dimension variance of ``p(x | x_t)``."""
    if isinstance(posterior, GaussianPosterior):
        return np.broadcast_to(posterior.variance, posterior.mean.shape)
    if isinstance(posterior, TruncBoxGaussian):
        return posterior.scale**2 * truncnorm.std_variance(posterior.alpha, posterior.beta)
    if isinstance(posterior, MixtureGaussian):
        r = posterior.responsibilities[..., None]
        m = posterior_mean(posterior)
        second = np.sum(r * (posterior.variances[:, None] + np.square(posterior.means)), axis=-2)
        return second - np.square(m)
    raise ContractError(f"unsupported posterior {type(posterior).__name__}")


def mean_jacobian_vjp(posterior, v):
    """``J^T v`` where ``J = d E[x | x_t] / d x_t``.

    Gaussian and box posteriors have diagonal Jacobians; the mixture Jacobian
    is the within-component coefficient plus the responsibility-shift term.
    """
    v = np.asarray(v, float)
    if isinstance(posterior, GaussianPosterior):
        return posterior.mean_coef * v
    if isinstance(posterior, TruncBoxGaussian):
        # d E / d loc of a truncated normal is Var / scale^2
        dmean_dloc = truncnorm.std_variance(posterior.alpha, posterior.beta)
        return posterior.loc_coef * dmean_dloc * v
    if isinstance(posterior, MixtureGaussian):
        r = posterior.responsibilities  # (..., k)
        g = posterior.marginal_scores  # (..., k, d)
        m_k = posterior.means
        m_bar = np.sum(r[..., None] * m_k, axis=-2)
        g_bar = np.sum(r[..., None] * g, axis=-2)
        # J = sum_k r_k c_k I + sum_k r_k (m_k - m_bar) (g_k - g_bar)^T
        within = np.sum(r * posterior.mean_coefs, axis=-1)[..., None] * v
        proj = np.sum((m_k - m_bar[..., None, :]) * v[..., None, :], axis=-1)  # (..., k)
        shift = np.sum((r * proj)[..., None] * (g - g_bar[..., None, :]), axis=-2)
        return within + shift
    raise ContractError(f"unsupported posterior {type(posterior).__name__}")


def mean_jacobian_diag(posterior):
    """Diagonal of ``d E[x | x_t] / d x_t`` (exact for factorized posteriors)."""
    if isinstance(posterior, GaussianPosterior):
        return np.broadcast_to(posterior.mean_coef, posterior.mean.shape)
    if isinstance(posterior, TruncBoxGaussian):
        return posterior.loc_coef * truncnorm.std_variance(posterior.alpha, posterior.beta)
    raise ContractError("diagonal Jacobian only defined for factorized posteriors")


def marginal_score(prior, x_t, t, schedule=FLOW_MATCHING):
    """``grad log p(x_t)`` via Tweedie: ``(a E[x | x_t] - x_t) / b^2``."""
    check_time(t, closed_low=False)
    x_t = check_state(x_t)
    if t == 1.0:
        # x_1 is independent of x and standard normal
        return -x_t
    a, b = schedule.ab(t)
    x_hat = posterior_mean(denoising_posterior(prior, x_t, t, schedule))
    return (a * x_hat - x_t) / (b * b)


def _draw_shape(lead, K, d):
    return (*lead, K, d)


def posterior_draw(posterior, rng, K):
    """``K`` exact i.i.d. draws per state; shape ``(..., K, d)``."""
    K = check_positive_int(K, "K")
    rng = as_generator(rng)
    if isinstance(posterior, GaussianPosterior):
        mean = posterior.mean
        z = rng.standard_normal(_draw_shape(mean.shape[:-1], K, mean.shape[-1]))
        z *= np.sqrt(posterior.variance)
        z += mean[..., None, :]
        return z
    if isinstance(posterior, TruncBoxGaussian):
        loc = posterior.loc
        u = rng.random(_draw_shape(loc.shape[:-1], K, loc.shape[-1]))
        # u == 0 is possible for Generator.random; nudge it into the open interval
        np.maximum(u, np.finfo(float).tiny, out=u)
        z = truncnorm.std_ppf(u, posterior.alpha[..., None, :], posterior.beta[..., None, :])
        return loc[..., None, :] + posterior.scale * z
    if isinstance(posterior, MixtureGaussian):
        r = posterior.responsibilities
        lead = r.shape[:-1]
        cum = np.cumsum(r, axis=-1)
        u = rng.random((*lead, K, 1))
        comp = np.minimum(np.sum(u > cum[..., None, :], axis=-1), r.shape[-1] - 1)  # (..., K)
        means = np.take_along_axis(posterior.means, comp[..., None], axis=-2)
        sd = np.sqrt(posterior.variances)[comp]
        z = rng.standard_normal(means.shape)
        return means + sd[..., None] * z
    raise ContractError(f"unsupported posterior {type(posterior).__name__}")


def reparam_draw(posterior, u):
    """Differentiable draw ``x = g(x_t; u)`` and ``dx / dx_t`` per dimension.

    For Gaussian posteriors ``u`` holds standard normal noise; for truncated
    posteriors it holds uniforms in (0, 1).  ``u`` may carry a sample axis
    before the last one.
    """
    u = np.asarray(u, float)
    if isinstance(posterior, GaussianPosterior):
        mean = posterior.mean
        if u.ndim > mean.ndim:
            mean = mean[..., None, :]
        x = mean + np.sqrt(posterior.variance) * u
        return x, np.broadcast_to(posterior.mean_coef, x.shape)
    if isinstance(posterior, TruncBoxGaussian):
        loc, alpha, beta = posterior.loc, posterior.alpha, posterior.beta
        if u.ndim > loc.ndim:
            loc, alpha, beta = loc[..., None, :], alpha[..., None, :], beta[..., None, :]
        z = truncnorm.std_ppf(u, alpha, beta)
        x = loc + posterior.scale * z
        jac = posterior.loc_coef * truncnorm.std_dppf_dloc(u, z, alpha, beta)
        return x, jac
    if isinstance(posterior, MixtureGaussian):
        raise NotReparameterizableError(
            "mixture posteriors have a discrete component choice; gradient-based CBG is unavailable"
        )
    raise ContractError(f"unsupported posterior {type(posterior).__name__}")


def reparam_noise(posterior, rng, K):
    """Frozen noise of the right family for :func:`reparam_draw`."""
    rng = as_generator(rng)
    if isinstance(posterior, GaussianPosterior):
        lead = posterior.mean.shape
        return rng.standard_normal(_draw_shape(lead[:-1], K, lead[-1]))
    if isinstance(posterior, TruncBoxGaussian):
        lead = posterior.loc.shape
        u = rng.random(_draw_shape(lead[:-1], K, lead[-1]))
        return np.maximum(u, np.finfo(float).tiny)
    if isinstance(posterior, MixtureGaussian):
        raise NotReparameterizableError(
            "mixture posteriors have a discrete component choice; gradient-based CBG is unavailable"
        )
    raise ContractError(f"unsupported posterior {type(posterior).__name__}")
