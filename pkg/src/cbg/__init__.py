"""Calibrated Bayesian guidance for diffusion posterior sampling.

Consistent Monte Carlo estimators of the diffused likelihood, the biased
baselines they are compared against, analytic benchmark tasks with exact
reference posteriors, and a classifier two-sample test for evaluation.
"""

from .estimators import GuidedPosteriorSampler
from .evaluation import C2STConfig, C2STResult, MLPClassifier, c2st, moment_diagnostics
from .guidance import (
    GuidanceConfig,
    ScoreEstimate,
    ZeroLikelihoodError,
    cbg_gradient_based,
    cbg_gradient_free,
    dpg_gradient,
    dps_gradient,
    lgd_gradient,
    posterior_score,
    scg_step,
)
from .oracles import (
    diffused_likelihood_quad,
    theorem1_bias,
    theorem2_bias,
    theorem3_bias,
    variance_experiment,
)
from .posteriors import Box, IsoGaussian, IsoGaussianMixture, denoising_posterior, marginal_score, posterior_mean
from .reference import reference_samples
from .schedule import FLOW_MATCHING, SamplerConfig, Schedule, TimeGrid, guided_sample, inner_posterior_sample
from .tasks import Task, make_task

__version__ = "0.1.0"

__all__ = [
    "Box",
    "C2STConfig",
    "C2STResult",
    "FLOW_MATCHING",
    "GuidanceConfig",
    "GuidedPosteriorSampler",
    "IsoGaussian",
    "IsoGaussianMixture",
    "MLPClassifier",
    "SamplerConfig",
    "Schedule",
    "ScoreEstimate",
    "Task",
    "TimeGrid",
    "ZeroLikelihoodError",
    "c2st",
    "cbg_gradient_based",
    "cbg_gradient_free",
    "denoising_posterior",
    "diffused_likelihood_quad",
    "dpg_gradient",
    "dps_gradient",
    "guided_sample",
    "inner_posterior_sample",
    "lgd_gradient",
    "make_task",
    "marginal_score",
    "moment_diagnostics",
    "posterior_mean",
    "posterior_score",
    "reference_samples",
    "scg_step",
    "theorem1_bias",
    "theorem2_bias",
    "theorem3_bias",
    "variance_experiment",
]
