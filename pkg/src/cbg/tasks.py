"""Bayesian inference benchmark tasks: priors, likelihoods and simulators.

Every log-likelihood is vectorized over the leading axes of ``x`` (last axis
is the parameter dimension).  Task 3 stores its four 2-D observations
row-major as a ``(4, 2)`` array; ``y.ravel()`` is ``(y1_1, y1_2, y2_1, ...)``.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np
from scipy.special import log_ndtr, logsumexp

from ._validation import ContractError, as_generator
from .posteriors import Box, IsoGaussian

_LOG_2PI = np.log(2.0 * np.pi)


class GradientUnavailableError(ContractError):
    """The likelihood is not differentiable; gradient-based guidance is unsupported."""


@dataclass(frozen=True)
class LikelihoodEval:
    log_density: float
    gradient: np.ndarray | None = None


class Likelihood:
    """Base class; subclasses implement ``log_prob`` and optionally ``grad_log_prob``."""

    has_gradient = True
    y_shape: tuple = ()

    def __init__(self, y):
        y = np.asarray(y, dtype=float)
        if y.shape != self.y_shape:
            raise ContractError(f"{type(self).__name__} expects y of shape {self.y_shape}, got {y.shape}")
        self.y = y

    def replace_y(self, y):
        y = np.asarray(y, dtype=float)
        if y.shape != self.y.shape:
            raise ContractError(f"expected y of shape {self.y.shape}, got {y.shape}")
        new = copy.copy(self)
        new.y = y
        return new

    def log_prob(self, x):
        raise NotImplementedError

    def grad_log_prob(self, x):
        raise GradientUnavailableError(f"{type(self).__name__} has no gradient")

    def log_prob_and_grad(self, x):
        return self.log_prob(x), self.grad_log_prob(x)

    def simulate(self, x, rng):
        raise NotImplementedError


class GaussianLikelihood(Likelihood):
    """``N(y; x, variance I)``."""

    def __init__(self, y, variance):
        self.y_shape = np.shape(y)
        super().__init__(y)
        self.variance = float(variance)

    def log_prob(self, x):
        r = np.asarray(x, float) - self.y
        d = self.y.shape[-1]
        return -0.5 * np.einsum("...d,...d->...", r, r) / self.variance - 0.5 * d * np.log(2 * np.pi * self.variance)

    def grad_log_prob(self, x):
        return (self.y - np.asarray(x, float)) / self.variance

    def log_prob_and_grad(self, x):
        x = np.asarray(x, float)
        r = self.y - x
        d = self.y.shape[-1]
        lp = -0.5 * np.einsum("...d,...d->...", r, r) / self.variance - 0.5 * d * np.log(2 * np.pi * self.variance)
        return lp, r / self.variance

    def simulate(self, x, rng):
        x = np.asarray(x, float)
        return x + np.sqrt(self.variance) * rng.standard_normal(x.shape)


class ConstantLikelihood(Likelihood):
    """A likelihood that ignores ``x``; guidance must reduce to the prior."""

    def __init__(self, y, log_value=0.0):
        self.y_shape = np.shape(y)
        super().__init__(y)
        self.log_value = float(log_value)

    def log_prob(self, x):
        return np.full(np.shape(x)[:-1], self.log_value)

    def grad_log_prob(self, x):
        return np.zeros(np.shape(x))

    def simulate(self, x, rng):
        return self.y.copy()


class SLCPLikelihood(Likelihood):
    """Four i.i.d. 2-D Gaussians with mean ``(x1, x2)``.

    Standard deviations ``s1 = x3^2``, ``s2 = x4^2`` and correlation
    ``rho = tanh(x5)``.  Zero standard deviation gives ``-inf``.
    """

    y_shape = (4, 2)

    @staticmethod
    def _params(x):
        x = np.asarray(x, float)
        mu = x[..., :2]
        s1 = np.square(x[..., 2])
        s2 = np.square(x[..., 3])
        rho = np.tanh(x[..., 4])
        return mu, s1, s2, rho

    def _terms(self, x):
        mu, s1, s2, rho = self._params(x)
        u = self.y - mu[..., None, :]  # (..., 4, 2)
        r = 1.0 - np.square(rho)
        with np.errstate(divide="ignore", invalid="ignore"):
            z1 = u[..., 0] / s1[..., None]
            z2 = u[..., 1] / s2[..., None]
            q = (z1 * z1 - 2 * rho[..., None] * z1 * z2 + z2 * z2) / r[..., None]
        return mu, s1, s2, rho, r, z1, z2, q

    def log_prob(self, x):
        _, s1, s2, rho, r, _, _, q = self._terms(x)
        with np.errstate(divide="ignore", invalid="ignore"):
            per_obs = -_LOG_2PI - np.log(s1) - np.log(s2) - 0.5 * np.log(r)
            lp = 4 * per_obs - 0.5 * np.sum(q, axis=-1)
        degenerate = (s1 == 0) | (s2 == 0)
        return np.where(degenerate, -np.inf, lp)

    def grad_log_prob(self, x):
        x = np.asarray(x, float)
        _, s1, s2, rho, r, z1, z2, q = self._terms(x)
        rho_ = rho[..., None]
        r_ = r[..., None]
        with np.errstate(divide="ignore", invalid="ignore"):
            g_mu1 = np.sum((z1 - rho_ * z2) / (r_ * s1[..., None]), axis=-1)
            g_mu2 = np.sum((z2 - rho_ * z1) / (r_ * s2[..., None]), axis=-1)
            g_s1 = np.sum(-1.0 / s1[..., None] + (z1 - rho_ * z2) * z1 / (r_ * s1[..., None]), axis=-1)
            g_s2 = np.sum(-1.0 / s2[..., None] + (z2 - rho_ * z1) * z2 / (r_ * s2[..., None]), axis=-1)
            g_rho = np.sum(rho_ / r_ + z1 * z2 / r_ - rho_ * q / r_, axis=-1)
        grad = np.stack(
            [g_mu1, g_mu2, g_s1 * 2 * x[..., 2], g_s2 * 2 * x[..., 3], g_rho * (1.0 - np.square(rho))],
            axis=-1,
        )
        return grad

    def log_prob_and_grad(self, x):
        return self.log_prob(x), self.grad_log_prob(x)

    def covariance(self, x):
        _, s1, s2, rho = self._params(x)
        off = rho * s1 * s2
        return np.stack([np.stack([s1 * s1, off], -1), np.stack([off, s2 * s2], -1)], -2)

    def simulate(self, x, rng):
        x = np.asarray(x, float)
        mu, s1, s2, rho = self._params(x)
        e = rng.standard_normal((*x.shape[:-1], 4, 2))
        y1 = mu[..., None, 0] + s1[..., None] * e[..., 0]
        y2 = mu[..., None, 1] + s2[..., None] * (rho[..., None] * e[..., 0] + np.sqrt(1 - rho[..., None] ** 2) * e[..., 1])
        return np.stack([y1, y2], axis=-1)


class GaussianMixtureLikelihood(Likelihood):
    """``0.5 N(y; x, I) + 0.5 N(y; x, 0.01 I)``."""

    y_shape = (2,)
    variances = np.array([1.0, 0.01])
    weights = np.array([0.5, 0.5])

    def _comp(self, x):
        r = self.y - np.asarray(x, float)
        r2 = np.sum(r * r, axis=-1)[..., None]
        comp = -0.5 * r2 / self.variances - np.log(2 * np.pi * self.variances) + np.log(self.weights)
        return r, comp

    def log_prob(self, x):
        _, comp = self._comp(x)
        return logsumexp(comp, axis=-1)

    def grad_log_prob(self, x):
        r, comp = self._comp(x)
        resp = np.exp(comp - logsumexp(comp, axis=-1, keepdims=True))
        return r * np.sum(resp / self.variances, axis=-1, keepdims=True)

    def simulate(self, x, rng):
        x = np.asarray(x, float)
        k = rng.random(x.shape[:-1]) < self.weights[0]
        sd = np.where(k, 1.0, 0.1)[..., None]
        return x + sd * rng.standard_normal(x.shape)


class TwoMoonsLikelihood(Likelihood):
    """Two-moons density; the half-plane indicator makes it non-differentiable."""

    y_shape = (2,)
    has_gradient = False
    radius_mean = 0.1
    radius_sd = 0.01
    shift = 0.25

    @staticmethod
    def offset(x):
        x = np.asarray(x, float)
        return np.stack(
            [-np.abs(x[..., 0] + x[..., 1]) / np.sqrt(2.0), (-x[..., 0] + x[..., 1]) / np.sqrt(2.0)],
            axis=-1,
        )

    def polar(self, x):
        z = self.y - self.offset(x)
        u = z[..., 0] - self.shift
        v = z[..., 1]
        return np.hypot(u, v), np.arctan2(v, u)

    def log_prob(self, x):
        rho, phi = self.polar(x)
        inside = (phi > -np.pi / 2) & (phi < np.pi / 2) & (rho > 0)
        with np.errstate(divide="ignore"):
            lr = (
                -np.log(np.pi * rho)
                - 0.5 * np.square((rho - self.radius_mean) / self.radius_sd)
                - np.log(self.radius_sd)
                - 0.5 * _LOG_2PI
                - log_ndtr(self.radius_mean / self.radius_sd)
            )
        return np.where(inside, lr, -np.inf)

    def simulate(self, x, rng):
        x = np.asarray(x, float)
        lead = x.shape[:-1]
        angle = rng.uniform(-np.pi / 2, np.pi / 2, size=lead)
        r = self.radius_mean + self.radius_sd * rng.standard_normal(lead)
        while np.any(r <= 0):  # truncated to r > 0; practically never triggers
            bad = r <= 0
            r[bad] = self.radius_mean + self.radius_sd * rng.standard_normal(int(bad.sum()))
        p = np.stack([r * np.cos(angle) + self.shift, r * np.sin(angle)], axis=-1)
        return p + self.offset(x)


@dataclass(frozen=True, eq=False)
class Task:
    """A prior, a likelihood family and one observation."""

    id: int
    prior: object
    likelihood: Likelihood
    x_true: np.ndarray | None = None
    seed: int | None = None
    name: str = field(default="")

    @property
    def dim_x(self):
        return self.prior.dim

    @property
    def y(self):
        return self.likelihood.y

    @property
    def has_gradient(self):
        return self.likelihood.has_gradient

    def with_observation(self, y):
        return Task(self.id, self.prior, self.likelihood.replace_y(y), None, None, self.name)

    def to_dict(self):
        return {
            "id": self.id,
            "name": self.name,
            "seed": self.seed,
            "dim_x": self.dim_x,
            "y": np.asarray(self.y).tolist(),
            "x_true": None if self.x_true is None else np.asarray(self.x_true).tolist(),
        }


_TASK_NAMES = {
    1: "gaussian_linear",
    2: "gaussian_linear_uniform",
    3: "slcp",
    4: "gaussian_mixture",
    5: "two_moons",
}


def task_prior(task_id):
    if task_id == 1:
        return IsoGaussian(np.zeros(10), 0.1)
    if task_id == 2:
        return Box(-np.ones(10), np.ones(10))
    if task_id == 3:
        return Box(-3 * np.ones(5), 3 * np.ones(5))
    if task_id == 4:
        return Box(-10 * np.ones(2), 10 * np.ones(2))
    if task_id == 5:
        return Box(-np.ones(2), np.ones(2))
    raise ContractError(f"task id must be in 1..5, got {task_id!r}")


def task_likelihood(task_id, y):
    if task_id in (1, 2):
        return GaussianLikelihood(y, 0.1)
    if task_id == 3:
        return SLCPLikelihood(y)
    if task_id == 4:
        return GaussianMixtureLikelihood(y)
    if task_id == 5:
        return TwoMoonsLikelihood(y)
    raise ContractError(f"task id must be in 1..5, got {task_id!r}")


_Y_SHAPES = {1: (10,), 2: (10,), 3: (4, 2), 4: (2,), 5: (2,)}


def make_task(task_id, seed=0, y=None):
    """Build task ``task_id`` with ``x_true`` drawn from the prior and ``y`` simulated.

    Passing ``y`` skips the simulation and uses that observation instead.
    """
    if task_id not in _TASK_NAMES:
        raise ContractError(f"task id must be in 1..5, got {task_id!r}")
    prior = task_prior(task_id)
    rng = as_generator(seed)
    if y is not None:
        return Task(task_id, prior, task_likelihood(task_id, y), None, seed, _TASK_NAMES[task_id])
    x_true = prior.sample(1, rng)[0]
    placeholder = task_likelihood(task_id, np.zeros(_Y_SHAPES[task_id]))
    y = simulate_observation(placeholder, x_true, rng)
    return Task(task_id, prior, task_likelihood(task_id, y), x_true, seed, _TASK_NAMES[task_id])


def simulate_observation(task_or_likelihood, x_true, rng=None):
    lik = getattr(task_or_likelihood, "likelihood", task_or_likelihood)
    return lik.simulate(np.asarray(x_true, float), as_generator(rng))


def log_likelihood(task, x):
    """Single-point evaluation with the gradient where one exists."""
    x = np.asarray(x, float)
    if x.shape != (task.dim_x,):
        raise ContractError(f"x must have shape ({task.dim_x},), got {x.shape}")
    lp = float(task.likelihood.log_prob(x))
    grad = None
    if task.has_gradient and np.isfinite(lp):
        grad = np.asarray(task.likelihood.grad_log_prob(x))
    return LikelihoodEval(lp, grad)


def custom_task(prior, likelihood, name="custom"):
    """Bundle an arbitrary prior and likelihood, e.g. for 1-D demonstrations."""
    return Task(0, prior, likelihood, None, None, name)


def gaussian_toy_task(prior_mean=0.0, prior_variance=1.0, y=1.0, noise_variance=0.16):
    """1-D conjugate setting: prior ``N(m, v)``, likelihood ``N(y; x, s^2)``."""
    prior = IsoGaussian(np.array([float(prior_mean)]), float(prior_variance))
    return custom_task(prior, GaussianLikelihood(np.array([float(y)]), noise_variance), "gaussian_toy")
