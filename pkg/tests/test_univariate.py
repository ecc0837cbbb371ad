import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays
from scipy import stats

from gemkit.design import ModelFormula, encode_design
from gemkit.tabular import DesignTable, InputError
from gemkit.univariate import (PvalueTable, adjust_bh, adjust_bonferroni, anova_per_feature,
                               pvalue_histogram, random_orthonormal_rows, rotation_test)

pvals = arrays(np.float64, st.integers(1, 40), elements=st.floats(0, 1))


def test_bh_hand_example():
    np.testing.assert_array_equal(adjust_bh([0.01, 0.02, 0.03, 0.04]), [0.04] * 4)


def test_bh_identities():
    np.testing.assert_array_equal(adjust_bh([1.0, 1.0, 1.0]), [1.0, 1.0, 1.0])
    np.testing.assert_array_equal(adjust_bh([0.3]), [0.3])


def test_bh_hand_oracle_five_values():
    p = [0.02, 0.001, 0.04, 0.03, 0.5]
    # sorted: 0.001 0.02 0.03 0.04 0.5 -> x5/k: 0.005 0.05 0.05 0.05 0.5
    np.testing.assert_allclose(adjust_bh(p), [0.05, 0.005, 0.05, 0.05, 0.5], atol=1e-15)


def test_bonferroni_examples():
    np.testing.assert_array_equal(adjust_bonferroni([0.01, 0.5]), [0.02, 1.0])
    np.testing.assert_array_equal(adjust_bonferroni([0.3]), [0.3])
    np.testing.assert_allclose(adjust_bonferroni([0.001, 0.01, 0.1, 0.15, 0.3]),
                               [0.005, 0.05, 0.5, 0.75, 1.0], atol=1e-15)


def test_adjust_rejects_bad_p():
    with pytest.raises(InputError):
        adjust_bh([0.1, 1.2])
    with pytest.raises(InputError):
        adjust_bonferroni([np.nan])


@settings(max_examples=100, deadline=None)
@given(pvals, st.randoms(use_true_random=False))
def test_adjustments_permutation_equivariant(p, rnd):
    perm = np.array(rnd.sample(range(len(p)), len(p)))
    np.testing.assert_array_equal(adjust_bh(p)[perm], adjust_bh(p[perm]))
    np.testing.assert_array_equal(adjust_bonferroni(p)[perm], adjust_bonferroni(p[perm]))


@settings(max_examples=100, deadline=None)
@given(pvals)
def test_adjustment_ordering(p):
    bh, bonf = adjust_bh(p), adjust_bonferroni(p)
    assert np.all(bonf >= bh - 1e-15)
    assert np.all(bh >= p - 1e-15)


@settings(max_examples=100, deadline=None)
@given(pvals)
def test_bh_matches_textbook_formula(p):
    m = len(p)
    srt = np.sort(p)
    expect = [min(1.0, min(srt[j] * m / (j + 1) for j in range(i, m))) for i in range(m)]
    got = np.sort(adjust_bh(p))
    np.testing.assert_allclose(got, np.sort(expect), atol=1e-15)


def test_anova_equal_groups():
    x = np.array([[1.0], [2.0], [1.0], [2.0]])
    r = anova_per_feature(x, ["a", "a", "b", "b"])
    assert r.f[0] == pytest.approx(0.0) and r.p[0] == pytest.approx(1.0)


def test_anova_degenerate_and_constant():
    x = np.array([[1.0, 3.0], [1.0, 3.0], [2.0, 3.0], [2.0, 3.0]])
    r = anova_per_feature(x, ["a", "a", "b", "b"])
    assert r.degenerate[0] and r.p[0] < 1e-300
    assert r.constant[1] and r.p[1] == 1.0


def test_anova_within_df_guard():
    with pytest.raises(InputError):
        anova_per_feature(np.ones((4, 1)) + np.arange(4)[:, None], ["a", "a", "b", "b"],
                          dof_consumed_step1=2)


@pytest.mark.parametrize("seed", range(3))
def test_anova_matches_scipy(seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((15, 20))
    labels = ["a"] * 5 + ["b"] * 4 + ["c"] * 6
    r = anova_per_feature(x, labels)
    ref = stats.f_oneway(x[:5], x[5:9], x[9:], axis=0)
    np.testing.assert_allclose(r.f, ref.statistic, rtol=1e-10)
    np.testing.assert_allclose(r.p, ref.pvalue, atol=1e-10)


def test_anova_df_monotone(rng):
    x = rng.standard_normal((20, 30))
    labels = ["a", "b"] * 10
    prev = anova_per_feature(x, labels).p
    for k in (1, 3, 8):
        cur = anova_per_feature(x, labels, k).p
        assert np.all(cur >= prev)
        prev = cur


@pytest.mark.parametrize("seed", range(3))
def test_null_uniform(seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((42, 1000))
    p = anova_per_feature(x, ["a"] * 20 + ["b"] * 22).p
    assert stats.kstest(p, "uniform").statistic < 0.05


def test_haar_rows_orthonormal(rng):
    rows = random_orthonormal_rows(rng, 5, 7, 2)
    for r in rows:
        np.testing.assert_allclose(r @ r.T, np.eye(2), atol=1e-12)


def _design(n, k=2):
    d = DesignTable(tuple(f"s{i + 1}" for i in range(n)),
                    {"batch": [f"b{i % k}" for i in range(n)],
                     "disease": ["n"] * (n // 2) + ["t"] * (n - n // 2)})
    return encode_design(d, ModelFormula.parse("batch + disease"))


@pytest.mark.parametrize("seed", range(4))
def test_rotation_single_feature_matches_exact_f_tail(seed):
    # a Haar rotation of a fixed vector yields F(h, d - h) statistics, so for
    # one feature the rotation estimate must approach the exact F tail
    rng = np.random.default_rng(seed)
    dm = _design(20)
    x = rng.standard_normal((20, 1))
    x[10:, 0] += 0.8
    res = rotation_test(x, dm, "disease", n_sim=4000, seed=seed)
    assert res.df_hypothesis == 1 and res.df_error == 17
    exact = stats.f.sf(res.f[0], 1, 17)
    assert abs(res.fdr_raw[0] - exact) < 4 * np.sqrt(exact * (1 - exact) / 4000) + 1e-3


def test_rotation_deterministic(rng):
    dm = _design(16)
    x = rng.standard_normal((16, 50))
    a = rotation_test(x, dm, "disease", 200, seed=3)
    b = rotation_test(x, dm, "disease", 200, seed=3)
    assert np.array_equal(a.p_adjusted, b.p_adjusted)


def test_rotation_guards(rng):
    dm = _design(4)
    with pytest.raises(InputError):
        rotation_test(rng.standard_normal((4, 3)), dm, "disease", 100)
    with pytest.raises(InputError):
        rotation_test(rng.standard_normal((20, 3)), _design(20), "disease", 50)
    with pytest.raises(InputError):
        rotation_test(rng.standard_normal((20, 3)), _design(20), "cohort", 100)


@pytest.mark.parametrize("seed", range(5))
def test_rotation_null_few_discoveries(seed):
    rng = np.random.default_rng(seed)
    res = rotation_test(rng.standard_normal((40, 1000)), _design(40), "disease", 1000, seed)
    assert np.mean(res.p_adjusted < 0.05) < 0.01


def test_rotation_power_single_feature():
    hits = 0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        x = rng.standard_normal((40, 200))
        x[20:, 0] += 5.0
        hits += rotation_test(x, _design(40), "disease", 1000, seed).p_adjusted[0] < 0.05
    assert hits >= 19


def test_pvalue_table_and_histogram(rng):
    x = rng.standard_normal((12, 5))
    an = anova_per_feature(x, ["a", "b"] * 6)
    df = PvalueTable.build([f"g{j}" for j in range(5)], an).to_frame()
    assert list(df.columns) == ["feature", "p_raw", "p_bonf", "p_bh", "p_rot", "df_between",
                                "df_within"]
    h = pvalue_histogram(an.p, bins=10)
    assert sum(h["counts"]) == 5 and len(h["edges"]) == 11
