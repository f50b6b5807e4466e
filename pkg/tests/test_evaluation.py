import numpy as np
import pytest
from scipy.stats import norm

from cbg._validation import ContractError
from cbg.evaluation import C2STConfig, MLPClassifier, c2st, hidden_width, moment_diagnostics
from cbg.reference import reference_samples
from cbg.tasks import make_task


def normal(n, d=1, shift=0.0, seed=0):
    return np.random.default_rng(seed).standard_normal((n, d)) + shift


def test_hidden_width_rule():
    assert hidden_width(1) == 20 and hidden_width(2) == 20 and hidden_width(10) == 100


def test_config_validation():
    with pytest.raises(ContractError):
        C2STConfig(folds=1)


def test_null_ten_dimensional():
    x = normal(4000, 10)
    res = c2st(x[:2000], x[2000:])
    assert res.accuracy == pytest.approx(0.5, abs=0.02)
    assert len(res.fold_accuracies) == 5
    assert res.accuracy == pytest.approx(np.mean(res.fold_accuracies))


def test_separated_normals_reach_bayes_accuracy():
    res = c2st(normal(2000, seed=1), normal(2000, shift=3.0, seed=2))
    assert res.accuracy == pytest.approx(norm.cdf(1.5), abs=0.02)
    assert 0 <= res.se < 0.02


def test_symmetry():
    p, q = normal(2000, 2, seed=3), normal(2000, 2, shift=0.3, seed=4)
    assert abs(c2st(p, q).accuracy - c2st(q, p).accuracy) <= 0.02


def test_null_calibration():
    accs = []
    for rep in range(20):
        x = normal(4000, 2, seed=100 + rep)
        accs.append(c2st(x[:2000], x[2000:], C2STConfig(seed=rep)).accuracy)
    assert min(accs) >= 0.46 and max(accs) <= 0.54


def test_monotone_in_separation():
    accs = [c2st(normal(2000, seed=10), normal(2000, shift=d, seed=11)).accuracy for d in (0, 1, 2, 3)]
    assert all(b >= a - 0.02 for a, b in zip(accs, accs[1:]))
    assert accs[-1] > 0.9


def test_constant_dimension_is_dropped():
    p, q = normal(500, 2, seed=1), normal(500, 2, seed=2)
    p[:, 1] = q[:, 1] = 4.0
    res = c2st(p, q)
    assert res.diagnostics["dropped_dims"] == 1
    assert res.accuracy == pytest.approx(0.5, abs=0.06)
    both_constant = c2st(np.ones((20, 1)), np.ones((20, 1)))
    assert both_constant.accuracy == 0.5


@pytest.mark.parametrize(
    "p, q",
    [
        (np.zeros((10, 2)), np.zeros((11, 2))),
        (np.zeros((10, 2)), np.zeros((10, 3))),
        (np.zeros((0, 2)), np.zeros((0, 2))),
        (np.full((10, 2), np.nan), np.zeros((10, 2))),
    ],
)
def test_c2st_input_validation(p, q):
    with pytest.raises(ContractError):
        c2st(p, q)


def test_c2st_is_deterministic():
    p, q = normal(400, 2, seed=1), normal(400, 2, shift=0.5, seed=2)
    assert c2st(p, q).fold_accuracies == c2st(p, q).fold_accuracies


def test_mlp_learns_a_nonlinear_boundary():
    rng = np.random.default_rng(0)
    X = rng.uniform(-1, 1, (2000, 2))
    y = (np.hypot(X[:, 0], X[:, 1]) < 0.6).astype(int)
    clf = MLPClassifier(random_state=0).fit(X[:1500], y[:1500])
    assert np.mean(clf.predict(X[1500:]) == y[1500:]) > 0.9
    proba = clf.predict_proba(X[1500:])
    np.testing.assert_allclose(proba.sum(1), 1.0)
    assert clf.n_epochs_ == len(clf.loss_curve_)
    assert set(clf.classes_) == {0, 1}


def test_moment_diagnostics_identity_and_null():
    x = normal(1000, 3)
    mean_err, cov_err = moment_diagnostics(x, x)
    np.testing.assert_array_equal(mean_err, 0.0)
    assert cov_err == 0.0
    task = make_task(1, seed=0)
    a = reference_samples(task, 10_000, seed=1).samples
    b = reference_samples(task, 10_000, seed=2).samples
    mean_err, cov_err = moment_diagnostics(a, b)
    se = np.sqrt(2 * 0.05 / 10_000)
    assert np.all(np.abs(mean_err) < 4 * se)
    with pytest.raises(ContractError):
        moment_diagnostics(a, b[:, :3])
