"""Estimator-style front end for guided posterior sampling."""

from __future__ import annotations

import os

import numpy as np
from joblib import Parallel, delayed
from sklearn.base import BaseEstimator

from ._validation import ContractError, check_positive_int
from .guidance import GuidanceConfig, posterior_score, scg_step
from .schedule import SamplerConfig, TimeGrid, guided_sample
from .tasks import Task

WORKERS_ENV = "CBG_WORKERS"


def resolve_workers(n_jobs=None):
    """Worker count: explicit argument, else ``$CBG_WORKERS``, else 1."""
    if n_jobs is not None:
        return check_positive_int(n_jobs, "n_jobs")
    raw = os.environ.get(WORKERS_ENV)
    if raw is None or raw.strip() == "":
        return 1
    try:
        return check_positive_int(int(raw), WORKERS_ENV)
    except ValueError as exc:
        raise ContractError(f"{WORKERS_ENV} must be a positive integer, got {raw!r}") from exc


def chunk_generator(seed, index):
    """Independent Philox stream for chunk ``index`` of a run seeded with ``seed``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(index),))
    return np.random.Generator(np.random.Philox(ss))


class _Diagnostics:
    """Accumulates effective sample sizes reported by the score estimator."""

    def __init__(self, fn):
        self.fn = fn
        self.ess_sum = 0.0
        self.ess_count = 0
        self.zero_direction = 0

    def __call__(self, x, t):
        est = self.fn(x, t)
        if est.ess is not None:
            ess = np.asarray(est.ess)
            ess = ess[np.isfinite(ess)]
            self.ess_sum += float(ess.sum())
            self.ess_count += ess.size
        if "zero_direction" in est.flags:
            self.zero_direction += int(np.sum(est.flags["zero_direction"]))
        return est


def _run_chunk(task, guidance, num_steps, seed, index, size, strict):
    rng = chunk_generator(seed, index)
    if guidance.method == "scg":
        x = rng.standard_normal((size, task.dim_x))
        for t, t_next in TimeGrid(num_steps):
            x = scg_step(task, x, t, t_next, guidance.K, rng)
        return x, 0.0, 0, 0

    def fn(x, t):
        return posterior_score(task, x, t, guidance, rng, strict=strict)

    diag = _Diagnostics(fn)
    x = guided_sample(diag, task.dim_x, SamplerConfig(num_steps=num_steps), rng, n=size,
                      on_nonfinite="raise" if strict else "drop")
    return x, diag.ess_sum, diag.ess_count, diag.zero_direction


class GuidedPosteriorSampler(BaseEstimator):
    """Draw approximate posterior samples ``x ~ p(x | y)`` for a task.

    Parameters mirror the guidance configuration: ``method`` selects the
    estimator, ``num_steps`` is the outer Euler step count N, ``K`` the
    inner sample count, ``gamma`` the temper or guidance scale and ``C`` the
    DPG magnitude.  Samples are produced in chunks of ``chunk_size`` chains,
    each with its own RNG stream keyed on ``(random_state, chunk index)``, so
    the output does not depend on ``n_jobs``.

    With ``strict=False`` chains whose estimate becomes non-finite (for
    example every inner draw lands where the likelihood is zero) are dropped
    and counted in ``n_failed_`` instead of aborting the run.

    Examples
    --------
    >>> from cbg.tasks import make_task
    >>> sampler = GuidedPosteriorSampler(num_steps=10, K=50, random_state=0)
    >>> sampler.fit(make_task(1)).sample(4).shape
    (4, 10)
    """

    def __init__(
        self,
        method="cbg_gf",
        num_steps=100,
        K=1000,
        gamma=1.0,
        C=1.0,
        temper_mode="inside_integral",
        inner_steps=None,
        chunk_size=250,
        n_jobs=None,
        strict=False,
        random_state=0,
    ):
        self.method = method
        self.num_steps = num_steps
        self.K = K
        self.gamma = gamma
        self.C = C
        self.temper_mode = temper_mode
        self.inner_steps = inner_steps
        self.chunk_size = chunk_size
        self.n_jobs = n_jobs
        self.strict = strict
        self.random_state = random_state

    def fit(self, task):
        if not isinstance(task, Task):
            raise ContractError(f"fit expects a Task, got {type(task).__name__}")
        check_positive_int(self.num_steps, "num_steps")
        check_positive_int(self.chunk_size, "chunk_size")
        if self.random_state is None or not np.isscalar(self.random_state):
            raise ContractError("random_state must be an integer seed")
        self.guidance_ = GuidanceConfig(
            method=self.method,
            K=self.K,
            gamma=float(self.gamma),
            C=float(self.C),
            temper_mode=self.temper_mode,
            inner_steps=self.inner_steps,
        )
        if self.method in ("cbg_gb", "dps", "lgd") and not task.has_gradient:
            from .tasks import GradientUnavailableError

            raise GradientUnavailableError(f"{self.method} needs likelihood gradients; task {task.id} has none")
        self.task_ = task
        self.n_features_in_ = task.dim_x
        return self

    def _check_fitted(self):
        if not hasattr(self, "task_"):
            raise ContractError("call fit(task) before sample()")

    def sample(self, n):
        """Return up to ``n`` samples; failed chains are reported in ``n_failed_``."""
        self._check_fitted()
        n = check_positive_int(n, "n")
        sizes = [min(self.chunk_size, n - start) for start in range(0, n, self.chunk_size)]
        jobs = [
            delayed(_run_chunk)(self.task_, self.guidance_, self.num_steps, self.random_state, i, size, self.strict)
            for i, size in enumerate(sizes)
        ]
        workers = min(resolve_workers(self.n_jobs), len(jobs))
        if workers == 1:
            results = [fn(*args, **kw) for fn, args, kw in jobs]
        else:
            results = Parallel(n_jobs=workers)(jobs)
        x = np.concatenate([r[0] for r in results], axis=0)
        ok = np.all(np.isfinite(x), axis=1)
        ess_sum = sum(r[1] for r in results)
        ess_count = sum(r[2] for r in results)
        self.n_failed_ = int(np.sum(~ok))
        self.diagnostics_ = {
            "n_requested": n,
            "n_failed": self.n_failed_,
            "mean_ess": ess_sum / ess_count if ess_count else None,
            "zero_direction_count": int(sum(r[3] for r in results)),
            "workers": workers,
        }
        return x[ok]

    def fit_sample(self, task, n):
        return self.fit(task).sample(n)
