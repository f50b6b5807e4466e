import numpy as np
import pytest
from scipy import integrate

from cbg import reference as R
from cbg._validation import ContractError
from cbg.tasks import make_task
from cbg.truncnorm import truncnorm_logpdf


def test_conjugate_task1():
    task = make_task(1, y=np.ones(10))
    batch = R.reference_samples(task, 10_000, seed=0)
    assert batch.strategy == "analytic_conjugate"
    x = batch.samples
    n = len(x)
    assert np.all(np.abs(x.mean(0) - 0.5) < 4 * np.sqrt(0.05 / n))
    assert np.all(np.abs(x.var(0, ddof=1) - 0.05) < 4 * 0.05 * np.sqrt(2 / n))


def test_truncated_task2_deep_inside():
    y = np.linspace(-0.45, 0.45, 10)
    task = make_task(2, y=y)
    batch = R.reference_samples(task, 20_000, seed=1)
    assert batch.strategy == "exact_truncated"
    x = batch.samples
    assert np.all((x >= -1) & (x <= 1))
    sd = np.sqrt(0.1)
    for j in range(10):
        pdf = lambda v: np.exp(truncnorm_logpdf(v, y[j], sd, -1.0, 1.0))  # noqa: E731
        m = integrate.quad(lambda v: v * pdf(v), -1, 1, epsabs=1e-12)[0]
        var = integrate.quad(lambda v: (v - m) ** 2 * pdf(v), -1, 1, epsabs=1e-12)[0]
        assert abs(x[:, j].mean() - m) < 4 * np.sqrt(var / len(x))
        assert x[:, j].var(ddof=1) == pytest.approx(var, rel=0.05)
        # the truncation is nearly inactive this deep inside
        assert var == pytest.approx(0.1, rel=0.25)


def _prior_mean_likelihood(task, n=2_000_000, seed=5):
    x = task.prior.sample(n, np.random.default_rng(seed))
    return float(np.mean(np.exp(task.likelihood.log_prob(x))))


@pytest.mark.parametrize("task_id", [4, 5])
def test_rejection_validity(task_id):
    task = make_task(task_id, seed=0)
    batch = R.reference_samples(task, 2000, seed=0)
    assert batch.strategy == "rejection"
    d = batch.diagnostics
    lp = task.likelihood.log_prob(batch.samples)
    assert np.all(lp <= d["log_bound"])
    assert d["max_accepted_log_likelihood"] <= d["log_bound"]
    predicted = _prior_mean_likelihood(task) / np.exp(d["log_bound"])
    assert 0.2 * predicted <= d["acceptance_rate"] <= 5 * predicted
    assert np.all(task.prior.contains(batch.samples))


def test_rejection_recovers_from_a_low_bound(monkeypatch):
    task = make_task(4, seed=0)
    true_bound = R.likelihood_bound(task)
    monkeypatch.setattr(R, "likelihood_bound", lambda task: true_bound - 3.0)
    batch = R.reference_samples(task, 500, seed=0)
    assert batch.diagnostics["bound_restarts"] >= 1
    assert np.all(task.likelihood.log_prob(batch.samples) <= batch.diagnostics["log_bound"])


def test_likelihood_bound_matches_known_maximum():
    y = np.array([0.3, -0.4])
    task = make_task(4, y=y)
    assert R.likelihood_bound(task) == pytest.approx(float(task.likelihood.log_prob(y)), abs=1e-6)


@pytest.mark.parametrize("seed", [0, 1])
def test_task3_mcmc_diagnostics(seed):
    task = make_task(3, seed=seed)
    n = 1000
    batch = R.reference_samples(task, n, seed=seed)
    assert batch.strategy == "random_walk_mcmc"
    d = batch.diagnostics
    assert max(d["split_rhat"]) < 1.01
    assert min(d["ess_released"]) >= n / 10
    assert batch.samples.shape == (n, 5)
    assert np.all(task.prior.contains(batch.samples))
    assert np.all(np.isfinite(task.likelihood.log_prob(batch.samples)))


def test_task3_is_deterministic():
    task = make_task(3, seed=2)
    a = R.reference_samples(task, 300, seed=4).samples
    b = R.reference_samples(task, 300, seed=4).samples
    np.testing.assert_array_equal(a, b)


def test_mcmc_non_convergence_raises_with_diagnostics():
    task = make_task(3, seed=0)
    with pytest.raises(R.ConvergenceError) as info:
        R._mcmc(task, 200, np.random.default_rng(0), chains=4, burn_in=2, thin=1, max_rounds=1)
    assert "split_rhat" in info.value.diagnostics


def test_split_rhat_and_ess():
    rng = np.random.default_rng(0)
    iid = rng.standard_normal((8, 1000, 2))
    assert np.all(np.abs(R.split_rhat(iid) - 1) < 0.01)
    ess = R.effective_sample_size(iid)
    assert np.all(ess > 0.7 * 8000)
    shifted = iid + np.arange(8)[:, None, None]
    assert np.all(R.split_rhat(shifted) > 1.5)
    # AR(1) with phi = 0.9 has ESS close to n (1 - phi) / (1 + phi)
    ar = np.zeros((4, 20_000, 1))
    e = rng.standard_normal(ar.shape)
    for i in range(1, ar.shape[1]):
        ar[:, i] = 0.9 * ar[:, i - 1] + e[:, i]
    expected = 4 * 20_000 * 0.1 / 1.9
    assert R.effective_sample_size(ar)[0] == pytest.approx(expected, rel=0.25)
    with pytest.raises(ContractError):
        R.split_rhat(np.zeros((2, 3, 1)))


def test_batch_round_trip(tmp_path):
    task = make_task(4, seed=1)
    batch = R.reference_samples(task, 50, seed=3)
    path = R.write_batch(batch, tmp_path / "ref.csv", extra={"note": "x"})
    back = R.read_batch(path)
    np.testing.assert_array_equal(back.samples, batch.samples)
    assert back.strategy == "rejection" and back.seed == 3
    assert back.diagnostics["log_bound"] == pytest.approx(batch.diagnostics["log_bound"])


def test_reference_rejects_bad_n():
    with pytest.raises(ContractError):
        R.reference_samples(make_task(1), 0)
