import numpy as np
import pytest

from gemkit.design import ModelFormula, encode_design, er_values, fit_glm
from gemkit.pca import PCA, fit_pca, grouping_separation
from gemkit.synth import SynthSpec, generate
from gemkit.tabular import InputError, standardize

from conftest import make_matrix


def test_rank_one_matrix():
    m = make_matrix([[1.0, 1.0], [2.0, 2.0], [3.0, 3.0]])
    model = fit_pca(m, 1, "center")
    assert model.explained_variance[0] == pytest.approx(1.0, abs=1e-12)


def test_full_reconstruction(rng):
    m = make_matrix(rng.standard_normal((8, 5)))
    model = fit_pca(m, 5, "autoscale")
    xs, _ = standardize(m, "autoscale")
    np.testing.assert_allclose(model.scores @ model.loadings.T, xs.values, atol=1e-8)


@pytest.mark.parametrize("seed", range(3))
def test_explained_variance_vs_covariance_eigenvalues(seed):
    rng = np.random.default_rng(seed)
    m = make_matrix(rng.standard_normal((10, 50)))
    model = fit_pca(m, 9, "center")
    cov = np.cov(m.values, rowvar=False)
    eig = np.sort(np.linalg.eigvalsh(cov))[::-1][:9]
    np.testing.assert_allclose(model.explained_variance, eig / np.trace(cov), atol=1e-8)


def test_loading_sign_convention(rng):
    model = fit_pca(make_matrix(rng.standard_normal((12, 30))), 5)
    for k in range(5):
        col = model.loadings[:, k]
        assert col[np.argmax(np.abs(col))] > 0


def test_k_bounds_and_zero_matrix(rng):
    m = make_matrix(rng.standard_normal((5, 10)))
    with pytest.raises(InputError):
        fit_pca(m, 5)
    with pytest.raises(InputError):
        fit_pca(make_matrix(np.zeros((4, 3))), 1, "center")


def test_separation_perfect():
    r = grouping_separation(np.array([-1.0, -1.0, 1.0, 1.0]), ["a", "a", "b", "b"])
    assert r.ratio == pytest.approx(1.0)


def test_separation_single_level():
    with pytest.raises(InputError):
        grouping_separation(np.array([1.0, 2.0]), ["a", "a"])


@pytest.mark.parametrize("seed", range(10))
def test_separation_shuffled_labels_small(seed):
    rng = np.random.default_rng(seed)
    labels = rng.permutation(["a"] * 100 + ["b"] * 100)
    assert grouping_separation(rng.standard_normal(200), labels).ratio < 0.15


def test_batch_removed_by_gem():
    spec = SynthSpec(cohort_sizes=((13, 14),), batch_cohorts=(0,), batch_shift=3.0,
                     effect_size=1.0, seed=3)
    x, d, _ = generate(spec)
    raw = fit_pca(x, 2)
    assert grouping_separation(raw, d["batch"]).ratio > 0.5
    g = fit_glm(x, encode_design(d, ModelFormula.parse("batch * disease")))
    er = fit_pca(er_values(g, "disease"), 2)
    assert grouping_separation(er, d["batch"]).ratio < 0.1


def test_estimator_wrapper(rng):
    x = rng.standard_normal((10, 6))
    est = PCA(n_components=3).fit(x)
    np.testing.assert_allclose(est.transform(x), est.model_.scores, atol=1e-10)
    assert est.get_params() == {"n_components": 3, "scaling": "autoscale"}
