import numpy as np
import pytest

from gemkit.enet import (ElasticNetDA, EnetPath, _standardize, cv_path, fit_enet, fit_path,
                         kkt_residuals, lambda_path, objective, tune_min_support)
from gemkit.synth import SynthSpec, evaluate_recovery, generate
from gemkit.tabular import InputError


def problem(rng, n=20, p=5):
    x = rng.standard_normal((n, p))
    _, _, xs = _standardize(x)
    y = xs @ rng.standard_normal(p) + rng.standard_normal(n)
    return xs, y - y.mean()


def soft(z, g):
    return np.sign(z) * max(abs(z) - g, 0.0)


def test_standardization_convention(rng):
    _, _, xs = _standardize(rng.standard_normal((9, 4)) * 3 + 1)
    np.testing.assert_allclose(xs.mean(0), 0, atol=1e-12)
    np.testing.assert_allclose(np.mean(xs ** 2, 0), 1, atol=1e-12)


def test_single_predictor_soft_threshold(rng):
    xs, y = problem(rng, 15, 1)
    for lam in (0.01, 0.3, 2.0):
        b, _ = fit_enet(xs, y, lam, alpha=1.0)
        assert b[0] == pytest.approx(soft(xs[:, 0] @ y / 15, lam), abs=1e-9)


@pytest.mark.parametrize("seed", range(5))
def test_small_alpha_matches_ridge(seed):
    rng = np.random.default_rng(seed)
    xs, y = problem(rng)
    lam = 0.4
    b, _ = fit_enet(xs, y, lam, alpha=1e-10)
    ridge = np.linalg.solve(xs.T @ xs / 20 + lam * np.eye(5), xs.T @ y / 20)
    np.testing.assert_allclose(b, ridge, atol=1e-6)


@pytest.mark.parametrize("alpha", [0.1, 0.5, 1.0])
def test_kkt_certificate(rng, alpha):
    xs, y = problem(rng, 30, 60)
    for lam in lambda_path(xs, y, alpha, 8, 1e-2):
        b, _ = fit_enet(xs, y, lam, alpha)
        assert kkt_residuals(xs, y, b, lam, alpha).max() <= 1e-6


def test_zero_at_lambda_max_and_linearity(rng):
    xs, y = problem(rng, 25, 10)
    lam = lambda_path(xs, y, 0.5, 5)
    b, _ = fit_enet(xs, y, lam[0], 0.5)
    assert np.all(b == 0)
    assert lambda_path(xs, 2 * y, 0.5, 5)[0] == pytest.approx(2 * lam[0])


def test_log_spacing(rng):
    xs, y = problem(rng)
    lam = lambda_path(xs, y, 0.5, 3, 0.01)
    np.testing.assert_allclose(lam / lam[0], [1, 0.1, 0.01], rtol=1e-12)


def test_alpha_zero_needs_explicit_path(rng):
    xs, y = problem(rng)
    with pytest.raises(InputError):
        lambda_path(xs, y, 0.0)


def test_orthogonal_response_gives_zero():
    x = np.array([[1.0, 1], [-1, 1], [1, -1], [-1, -1]])
    y = np.array([1.0, -1, -1, 1])  # orthogonal to both columns
    b, _ = fit_enet(x, y, 0.1, 0.5)
    assert np.all(b == 0)


def test_warm_equals_cold(rng):
    xs, y = problem(rng, 30, 40)
    lam = lambda_path(xs, y, 0.5, 15, 1e-2)
    np.testing.assert_allclose(fit_path(xs, y, lam, 0.5, warm_start=True),
                               fit_path(xs, y, lam, 0.5, warm_start=False), atol=1e-5)


def test_strong_screen_matches_full(rng):
    xs, y = problem(rng, 30, 80)
    lam = lambda_path(xs, y, 0.5, 15, 1e-2)
    np.testing.assert_allclose(fit_path(xs, y, lam, 0.5, screen="strong"),
                               fit_path(xs, y, lam, 0.5), atol=1e-6)


def test_objective_not_above_zero_start(rng):
    xs, y = problem(rng, 30, 40)
    lam = 0.05
    b, _ = fit_enet(xs, y, lam, 0.5)
    assert objective(xs, y, b, lam, 0.5) <= objective(xs, y, np.zeros(40), lam, 0.5)


def _path_with_accuracy(acc, chance=0.5):
    k = len(acc)
    coefs = np.zeros((k, 4))
    for i in range(k):
        coefs[i, :i] = 1.0
    return EnetPath(np.logspace(0, -2, k), coefs, 0.5, np.zeros(4), np.ones(4), 0.5,
                    ("a", "b", "c", "d"), ("x", "y"), np.asarray(acc, float), chance)


def test_tune_picks_largest_lambda_on_plateau():
    t = tune_min_support(_path_with_accuracy([0.5, 0.9, 0.9, 0.9]))
    assert t.informative and t.chosen == 1
    assert list(t.support) == [0]


def test_tune_tolerance():
    t = tune_min_support(_path_with_accuracy([0.5, 0.89, 0.9, 0.6]), tolerance=0.02)
    assert t.chosen == 1


def test_tune_reports_no_support_near_chance():
    t = tune_min_support(_path_with_accuracy([0.5, 0.55, 0.6, 0.58]))
    assert not t.informative and t.message == "no informative support"
    assert len(t.support) == 0


def test_separable_support_precision():
    spec = SynthSpec(cohort_sizes=((20, 20),), batch_cohorts=(), n_features=300,
                     n_informative=20, effect_size=3.0, seed=1)
    x, d, truth = generate(spec)
    path = cv_path(x, d["disease"], segments="random", n_segments=10)
    t = tune_min_support(path)
    assert t.informative
    sel = [path.feature_ids[j] for j in t.support]
    assert evaluate_recovery(sel, truth).precision >= 0.8


def test_noise_mostly_uninformative():
    hits = 0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        x = rng.standard_normal((40, 100))
        y = np.repeat(["a", "b"], 20)
        hits += not tune_min_support(cv_path(x, y, n_lambda=20)).informative
    assert hits >= 16


def test_estimator(rng):
    x = rng.standard_normal((30, 20))
    y = np.repeat(["n", "t"], 15)
    x[15:, :3] += 3
    est = ElasticNetDA(cv="random", n_segments=5).fit(x, y)
    assert est.score(x, y) >= 0.9
    assert set(est.support_) <= {0, 1, 2} or len(est.support_) >= 1
    assert est.get_params()["alpha"] == 0.5
