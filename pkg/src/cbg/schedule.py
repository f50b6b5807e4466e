"""Flow-matching schedule, Tweedie conversions and probability-flow samplers."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from ._validation import (
    ContractError,
    NonFiniteStateError,
    as_generator,
    check_positive_int,
    check_state,
    check_time,
)

# The t = 1 node carries no information about x, so x_hat cannot be recovered
# from a score there; estimators are queried just below it instead.
T_EVAL_MAX = 1.0 - 1e-4


@dataclass(frozen=True)
class Schedule:
    """Coefficients of the forward process ``x_t = a(t) x + b(t) eps``."""

    kind: str = "flow_matching"

    def __post_init__(self):
        if self.kind != "flow_matching":
            raise ContractError(f"unsupported schedule kind {self.kind!r}")

    def __call__(self, t):
        """Return ``(a, b, da_dt, db_dt)`` at time ``t``."""
        check_time(t)
        t = float(t)
        return 1.0 - t, t, -1.0, 1.0

    def ab(self, t):
        t = float(t)
        return 1.0 - t, t


FLOW_MATCHING = Schedule()


def schedule_eval(schedule, t):
    return schedule(t)


@dataclass(frozen=True)
class TimeGrid:
    """Linearly spaced descending times from 1 to 0."""

    num_steps: int

    def __post_init__(self):
        check_positive_int(self.num_steps, "num_steps")

    @property
    def times(self):
        ts = np.linspace(1.0, 0.0, self.num_steps + 1)
        ts[0], ts[-1] = 1.0, 0.0
        return ts

    def __iter__(self):
        ts = self.times
        return iter(zip(ts[:-1], ts[1:]))

    def __len__(self):
        return self.num_steps


@dataclass(frozen=True)
class SamplerConfig:
    num_steps: int = 100
    churn: float = 0.0
    seed: int = 0

    def __post_init__(self):
        check_positive_int(self.num_steps, "num_steps")
        if not 0.0 <= self.churn <= 1.0:
            raise ContractError(f"churn must lie in [0, 1], got {self.churn}")


def forward_perturb(x, t, noise, schedule=FLOW_MATCHING):
    x = np.asarray(x, dtype=float)
    noise = np.asarray(noise, dtype=float)
    if x.shape != noise.shape:
        raise ContractError(f"noise shape {noise.shape} does not match x shape {x.shape}")
    a, b, _, _ = schedule(t)
    return a * x + b * noise


def tweedie_mean(x_t, score, t, schedule=FLOW_MATCHING):
    """Posterior mean ``E[x | x_t]`` from the marginal score."""
    check_time(t, closed_high=False)
    a, b, _, _ = schedule(t)
    return (np.asarray(x_t, float) + b * b * np.asarray(score, float)) / a


def score_from_mean(x_t, x_hat, t, schedule=FLOW_MATCHING):
    """Inverse of :func:`tweedie_mean`: ``(a x_hat - x_t) / b^2``."""
    check_time(t, closed_low=False)
    a, b, _, _ = schedule(t)
    return (a * np.asarray(x_hat, float) - np.asarray(x_t, float)) / (b * b)


def euler_step(x_t, t, t_next, x_hat):
    """One Euler step of ``dx/dt = (x_t - x_hat) / t`` from ``t`` to ``t_next``."""
    t = float(t)
    t_next = float(t_next)
    if t <= 0.0:
        raise ContractError("euler_step needs t > 0")
    if not 0.0 <= t_next <= t <= 1.0:
        raise ContractError(f"need 0 <= t_next <= t <= 1, got t={t}, t_next={t_next}")
    r = t_next / t
    return r * np.asarray(x_t, float) + (1.0 - r) * np.asarray(x_hat, float)


def _denoised(result, x_t, t):
    """Extract ``x_hat`` from whatever a score callable returned."""
    x_hat = getattr(result, "x_hat", None)
    if x_hat is not None:
        return np.asarray(x_hat, float)
    score = getattr(result, "value", result)
    return tweedie_mean(x_t, score, t)


def guided_sample(posterior_score_fn: Callable, d, config: SamplerConfig, rng=None, n=None, on_nonfinite="raise"):
    """Integrate the probability-flow ODE from noise to data.

    ``posterior_score_fn(x_t, t)`` returns either the score array or an object
    exposing ``value`` (the score) and optionally ``x_hat``.  With ``n`` given
    the result has shape ``(n, d)``, otherwise ``(d,)``.

    A non-finite estimate raises :class:`NonFiniteStateError` by default.  With
    ``on_nonfinite="drop"`` (batches only) the offending chains are frozen at
    NaN and the remaining chains carry on.
    """
    d = check_positive_int(d, "d")
    if on_nonfinite not in ("raise", "drop"):
        raise ContractError(f"on_nonfinite must be 'raise' or 'drop', got {on_nonfinite!r}")
    rng = as_generator(config.seed if rng is None else rng)
    shape = (d,) if n is None else (check_positive_int(n, "n"), d)
    x = rng.standard_normal(shape)
    batched = x.ndim == 2
    alive = np.ones(shape[0] if batched else 1, dtype=bool)
    for t, t_next in TimeGrid(config.num_steps):
        t_eval = min(t, T_EVAL_MAX)
        cur = x[alive] if batched else x
        if cur.size == 0:
            break
        x_hat = _denoised(posterior_score_fn(cur, t_eval), cur, t_eval)
        ok = np.all(np.isfinite(np.atleast_2d(x_hat)), axis=-1)
        if not np.all(ok):
            if on_nonfinite == "raise" or not batched:
                bad = np.nonzero(~ok)[0]
                raise NonFiniteStateError(
                    f"non-finite denoised estimate at t={t:.6g} for {bad.size} chain(s)",
                    t=t,
                    x_t=np.atleast_2d(cur)[bad],
                )
        stepped = euler_step(cur, t, t_next, np.where(ok[:, None], x_hat, cur) if batched else x_hat)
        if batched:
            idx = np.nonzero(alive)[0]
            x[idx] = stepped
            x[idx[~ok]] = np.nan
            alive[idx[~ok]] = False
        else:
            x = stepped
    return x


def _denoise_with_spread(score_fn, x, s):
    """``E[x | x_s]`` and the diagonal of ``Var[x | x_s]``.

    The variance uses ``Cov[x | x_s] = (b^2 / a) d E[x | x_s] / d x_s``; the
    derivative is a central difference along the all-ones direction, which
    recovers the diagonal exactly when the prior factorizes over dimensions.
    """
    a, b = 1.0 - s, s
    x_hat = tweedie_mean(x, score_fn(x, s), s)
    h = 1e-5 * (1.0 + np.abs(x))
    up = tweedie_mean(x + h, score_fn(x + h, s), s)
    down = tweedie_mean(x - h, score_fn(x - h, s), s)
    jac = (up - down) / (2.0 * h)
    return x_hat, np.maximum(b * b / a * jac, 0.0)


def inner_posterior_sample(score_fn: Callable, x_t, t, M, eta, rng=None):
    """Approximate draw from ``p(x | x_t)`` with ``M`` stochastic denoising steps.

    Each step from ``s`` to ``r < s`` draws from the Gaussian bridge
    ``q(x_r | x_s, x)`` with ``x`` replaced by its posterior moments, so the
    transition matches the mean and variance of ``p(x_r | x_s)`` whenever the
    denoising posterior is Gaussian.  ``eta`` scales the injected noise:
    ``eta=0`` is the deterministic Euler chain, ``eta=1`` the moment-matched
    ancestral update.
    """
    check_time(t, closed_high=False)
    M = check_positive_int(M, "M")
    if not 0.0 <= eta <= 1.0:
        raise ContractError(f"eta must lie in [0, 1], got {eta}")
    rng = as_generator(rng)
    x = check_state(x_t).copy()
    if t == 0.0:
        return x
    ts = np.linspace(t, 0.0, M + 1)
    ts[-1] = 0.0
    for s, r in zip(ts[:-1], ts[1:]):
        a_s, b_s = 1.0 - s, s
        a_r, b_r = 1.0 - r, r
        if eta == 0.0:
            x = euler_step(x, s, r, tweedie_mean(x, score_fn(x, s), s))
        else:
            x_hat, spread = _denoise_with_spread(score_fn, x, s)
            eps_hat = (x - a_s * x_hat) / b_s
            # DDPM posterior std of x_r given (x_s, x), scaled by the churn
            sigma = eta * b_r * np.sqrt(max(0.0, 1.0 - (a_s * b_r / (a_r * b_s)) ** 2))
            keep = np.sqrt(max(b_r * b_r - sigma * sigma, 0.0))
            coef_x = a_r - keep * a_s / b_s
            x = a_r * x_hat + keep * eps_hat
            var = sigma * sigma + eta * eta * coef_x * coef_x * spread
            x = x + np.sqrt(var) * rng.standard_normal(x.shape)
        if not np.all(np.isfinite(x)):
            raise NonFiniteStateError(f"non-finite inner state at t={r:.6g}", t=r, x_t=x)
    return x
