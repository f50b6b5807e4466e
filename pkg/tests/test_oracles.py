import numpy as np
import pytest
from scipy.stats import norm

from cbg import posteriors as P
from cbg._validation import ContractError
from cbg.guidance import GuidanceConfig, cbg_gradient_free
from cbg.oracles import (
    QuadratureError,
    QuadratureSpec,
    conjugate_guided_mean,
    default_variance_grids,
    diffused_likelihood_quad,
    log_diffused_likelihood_quad,
    tempered_posterior_moments,
    tempered_posterior_samples,
    theorem1_bias,
    theorem2_bias,
    theorem3_bias,
    variance_experiment,
)
from cbg.tasks import ConstantLikelihood, GaussianLikelihood, custom_task, gaussian_toy_task, make_task

from conftest import TOY_SCORE

X0 = np.zeros(1)
TRUTH = norm.pdf(1.0, 0.0, np.sqrt(0.66))  # N(1; 0, 0.66) = 0.2302116


def tempered_closed_form(gamma, y=1.0, s2=0.16, m=0.0, v=0.5):
    # N(y; x, s2)^gamma = (2 pi s2)^((1 - gamma) / 2) gamma^(-1/2) N(y; x, s2 / gamma)
    const = (2 * np.pi * s2) ** ((1 - gamma) / 2) / np.sqrt(gamma)
    return const * norm.pdf(y, m, np.sqrt(v + s2 / gamma))


def test_gamma_zero_is_one(toy):
    assert diffused_likelihood_quad(toy.prior, toy.likelihood, 0.5, X0, gamma=0.0) == 1.0


def test_conjugate_value(toy):
    got = diffused_likelihood_quad(toy.prior, toy.likelihood, 0.5, X0)
    assert got == pytest.approx(TRUTH, abs=1e-12)
    # the printed 0.23023 rounds 0.2302116 at the fourth digit
    assert got == pytest.approx(0.23023, abs=3e-5)


@pytest.mark.parametrize("gamma", [0.5, 2.0, 3.7])
def test_tempered_closed_form(toy, gamma):
    got = diffused_likelihood_quad(toy.prior, toy.likelihood, 0.5, X0, gamma=gamma)
    assert got == pytest.approx(tempered_closed_form(gamma), rel=1e-8)


CASES = [
    ("toy", gaussian_toy_task(), 0.5, np.zeros(1)),
    ("narrow", gaussian_toy_task(prior_variance=0.1), 0.3, np.array([0.4])),
    ("box1d", custom_task(P.Box(-np.ones(1), np.ones(1)), GaussianLikelihood(np.array([0.7]), 0.1)), 0.6, np.array([1.2])),
    ("task4", make_task(4, seed=1), 0.5, np.array([0.3, -0.2])),
]


@pytest.mark.parametrize("name, task, t, x_t", CASES, ids=[c[0] for c in CASES])
def test_resolution_doubling_is_stable(name, task, t, x_t):
    coarse = log_diffused_likelihood_quad(task.prior, task.likelihood, t, x_t)
    fine = log_diffused_likelihood_quad(
        task.prior, task.likelihood, t, x_t, spec=QuadratureSpec(resolution=2 * max(coarse.resolution, 256))
    )
    assert abs(np.expm1(fine.log_value - coarse.log_value)) < 1e-8
    assert coarse.error < QuadratureSpec().rtol


def test_unresolved_integral_is_reported():
    # a needle likelihood on a wide box prior cannot converge on a 256 grid
    task = custom_task(P.Box(-np.ones(1), np.ones(1)), GaussianLikelihood(np.array([0.123]), 1e-9))
    with pytest.raises(QuadratureError):
        log_diffused_likelihood_quad(task.prior, task.likelihood, 0.9, X0, spec=QuadratureSpec(max_resolution=512))


def test_non_smooth_two_moons_is_reported_not_returned():
    # the half-plane indicator and the 0.01-wide ring defeat Simpson's rule at 1e-11
    task = make_task(5, seed=1)
    with pytest.raises(QuadratureError) as info:
        log_diffused_likelihood_quad(task.prior, task.likelihood, 0.4, np.array([0.1, 0.2]))
    assert info.value.error > QuadratureSpec().rtol


def test_quadrature_limited_to_two_dims():
    task = make_task(3)
    with pytest.raises(ContractError):
        log_diffused_likelihood_quad(task.prior, task.likelihood, 0.5, np.zeros(5))


def test_oracle_triangle(toy):
    x_t, t = X0, 0.5
    h = 1e-4
    quad = (
        log_diffused_likelihood_quad(toy.prior, toy.likelihood, t, x_t + h).log_value
        - log_diffused_likelihood_quad(toy.prior, toy.likelihood, t, x_t - h).log_value
    ) / (2 * h)
    closed = TOY_SCORE  # guidance term; the prior score at x_t = 0 is 0
    assert quad == pytest.approx(closed, abs=1e-8)
    reps = np.array(
        [cbg_gradient_free(toy, x_t, t, GuidanceConfig(K=100_000), rng=s).value[0] for s in range(20)]
    )
    se = reps.std(ddof=1) / np.sqrt(len(reps))
    assert abs(reps.mean() - closed) < 3 * se


def test_theorem1_example(toy):
    res = theorem1_bias(toy.prior, toy.likelihood, 0.5, X0)
    assert res.approx == pytest.approx(norm.pdf(1.0, 0.0, 0.4), abs=1e-12)
    assert res.approx == pytest.approx(0.04382, abs=1e-5)
    assert res.truth == pytest.approx(TRUTH, abs=1e-10)
    assert res.gap == pytest.approx(TRUTH - res.approx, abs=1e-10)


def test_theorem1_constant_likelihood(flat_toy):
    assert theorem1_bias(flat_toy.prior, flat_toy.likelihood, 0.5, X0).gap == pytest.approx(0.0, abs=1e-14)


def test_theorem1_gap_vanishes_as_t_to_zero(toy):
    gaps = [theorem1_bias(toy.prior, toy.likelihood, t, np.array([0.5 * (1 - t)])).gap for t in (0.3, 0.1, 0.01, 1e-4)]
    assert np.all(np.diff(gaps) < 0)
    assert gaps[-1] < 1e-6


def test_theorem2_exact_for_standard_normal(toy):
    for t in (0.1, 0.5, 0.9):
        assert theorem2_bias(toy.prior, toy.likelihood, t, np.array([0.3])).gap < 1e-8


def test_theorem2_biased_for_narrow_prior(narrow_toy):
    res = theorem2_bias(narrow_toy.prior, narrow_toy.likelihood, 0.5, X0)
    assert res.gap > 0.05 * res.truth
    post = P.denoising_posterior(narrow_toy.prior, X0, 0.5)
    assert post.variance == pytest.approx(0.0909090909)  # against the surrogate's 0.5


def test_theorem2_constant_likelihood(flat_toy):
    assert theorem2_bias(flat_toy.prior, flat_toy.likelihood, 0.5, X0).gap == pytest.approx(0.0, abs=1e-14)


def test_theorem3_example(toy):
    res = theorem3_bias(toy.prior, toy.likelihood, 0.5, X0, 2.0)
    assert res.score_true == pytest.approx(1 / 0.58, abs=1e-4)
    assert res.score_naive == pytest.approx(2 / 0.66, abs=1e-4)


def test_theorem3_trivial_cases(toy, flat_toy):
    res = theorem3_bias(toy.prior, toy.likelihood, 0.5, X0, 1.0)
    assert res.score_true == res.score_naive
    res = theorem3_bias(flat_toy.prior, flat_toy.likelihood, 0.5, np.array([0.3]), 2.0)
    assert res.score_true == pytest.approx(0.0, abs=1e-9) and res.score_naive == pytest.approx(0.0, abs=1e-9)
    with pytest.raises(ContractError):
        theorem3_bias(toy.prior, toy.likelihood, 0.5, X0, -1.0)


def test_bias_demos_are_one_dimensional():
    task = make_task(4)
    with pytest.raises(ContractError):
        theorem1_bias(task.prior, task.likelihood, 0.5, np.zeros(2))


def test_tempered_moments_closed_form(toy):
    # p(x) p(y | x)^2 with prior N(0, 1), noise 0.16: precision 1 + 2 / 0.16
    prec = 1 + 2 / 0.16
    mean, var = tempered_posterior_moments(toy.prior, toy.likelihood, 2.0)
    assert mean == pytest.approx((2 / 0.16) / prec, rel=1e-10)
    assert var == pytest.approx(1 / prec, rel=1e-10)


def test_tempered_samples(toy):
    x = tempered_posterior_samples(toy.prior, toy.likelihood, 2.0, 100_000, rng=0)
    prec = 1 + 2 / 0.16
    assert abs(x.mean() - (2 / 0.16) / prec) < 4 * np.sqrt(1 / prec / len(x))
    assert x.var() == pytest.approx(1 / prec, rel=0.02)


def test_conjugate_guided_mean_matches_quadrature():
    prior = P.IsoGaussian(np.array([2.0]), 1.0)
    lik = GaussianLikelihood(np.zeros(1), 0.16)
    for t in (0.1, 0.5, 0.9):
        for x_t in (-1.0, 0.5, 3.0):
            h = 1e-5
            up = log_diffused_likelihood_quad(prior, lik, t, np.array([x_t + h])).log_value
            down = log_diffused_likelihood_quad(prior, lik, t, np.array([x_t - h])).log_value
            guidance = (up - down) / (2 * h)
            score = P.marginal_score(prior, np.array([x_t]), t)[0] + guidance
            x_hat = (x_t + t * t * score) / (1 - t)
            assert conjugate_guided_mean(x_t, t) == pytest.approx(x_hat, abs=1e-8)


def test_variance_experiment_grid_and_consistency():
    t_grid, xt_grid = [0.2, 0.6], [-1.0, 0.5, 2.0]
    small = variance_experiment(t_grid, xt_grid, K=100, reps=40, rng=0)
    big = variance_experiment(t_grid, xt_grid, K=100_000, reps=40, rng=0)
    assert [(r["t"], r["x_t"]) for r in small] == [(t, x) for t in t_grid for x in xt_grid]
    for s, b in zip(small, big):
        assert s["var_gf"] >= 0 and s["var_gb"] >= 0
        assert b["var_gf"] < 0.05 * s["var_gf"] + 1e-12
        assert b["var_gb"] < 0.05 * s["var_gb"] + 1e-12


def test_default_variance_grids():
    t, x = default_variance_grids()
    assert len(t) == 19 and t[0] == pytest.approx(0.05) and t[-1] == pytest.approx(0.95)
    assert len(x) == 9


def test_constant_likelihood_helper():
    lik = ConstantLikelihood(np.ones(1))
    assert lik.log_prob(np.zeros((3, 1))).shape == (3,)
