import json

import numpy as np
import pytest

from gemkit.design import ModelFormula, encode_design, er_values, fit_glm
from gemkit.pca import fit_pca, grouping_separation
from gemkit.synth import (GroundTruth, SynthSpec, batch_shift_for_fraction, evaluate_recovery,
                          generate, oracle_ols, variance_budget, write_dataset)
from gemkit.tabular import InputError

from conftest import saturated_design


def test_default_shape_and_factors():
    x, d, truth = generate(SynthSpec())
    assert x.shape == (42, 1000)
    assert set(d.factors) == {"cohort", "batch", "disease"}
    assert len(truth.informative) == 50
    assert d["disease"].count("T2D") == 22


def test_seed_determinism():
    a = generate(SynthSpec(effect_size=1.0, batch_shift=2.0, seed=7))[0]
    b = generate(SynthSpec(effect_size=1.0, batch_shift=2.0, seed=7))[0]
    assert np.array_equal(a.values, b.values)


@pytest.mark.parametrize("bad", [dict(n_informative=2000), dict(effect_size=-1),
                                 dict(cohort_sizes=((1, 2, 3),)), dict(batch_cohorts=(5,))])
def test_spec_validation(bad):
    with pytest.raises(InputError):
        SynthSpec(**bad)


def test_budget_sums_to_one():
    b = variance_budget(SynthSpec(effect_size=2.0, batch_shift=1.0, cohort_shift=1.0,
                                  nuisance_sd=0.5, interaction_size=1.0, n_interaction=20))
    assert sum(b.values()) == pytest.approx(1.0)


def _empirical_fractions(spec):
    # decompose the noiseless signal parts using the model fit on a big sample
    x, d, truth = generate(spec)
    centered = x.values - x.values.mean(axis=0)
    total = np.sum(centered ** 2)
    g = fit_glm(x, encode_design(d, ModelFormula.parse("batch + disease")))
    return {t: float(np.sum(g.effects[t] ** 2) / total) for t in ("batch", "disease")}


@pytest.mark.parametrize("seed", range(3))
def test_budget_matches_empirical(seed):
    spec = SynthSpec(cohort_sizes=((120, 120),), batch_cohorts=(0,), batch_shift=1.5,
                     effect_size=3.0, n_features=400, n_informative=100, seed=seed)
    emp = _empirical_fractions(spec)
    budget = variance_budget(spec)
    for t in emp:
        assert abs(emp[t] - budget[t]) < 0.05


def test_batch_fraction_calibration():
    spec = SynthSpec(cohort_sizes=((13, 14),), batch_cohorts=(0,), effect_size=1.0)
    shift = batch_shift_for_fraction(spec, 0.56)
    from dataclasses import replace
    assert variance_budget(replace(spec, batch_shift=shift))["batch"] == pytest.approx(0.56)


def test_null_model_has_flat_spectrum():
    x, _, _ = generate(SynthSpec(effect_size=0.0, seed=1))
    ev = fit_pca(x, 5).explained_variance
    assert ev[0] < 0.06  # pure noise: roughly 1/41 per component


def test_planted_term_survives_other_vanishes():
    spec = SynthSpec(cohort_sizes=((12, 12),), batch_cohorts=(0,), batch_shift=2.0,
                     effect_size=2.0, n_informative=200, seed=4)
    x, d, _ = generate(spec)
    g = fit_glm(x, encode_design(d, ModelFormula.parse("batch * disease")))
    er = fit_pca(er_values(g, "disease"), 2)
    assert grouping_separation(er, d["disease"]).ratio > 0.5
    assert grouping_separation(er, d["batch"]).ratio < 0.1


def test_oracle_examples():
    x, _, dm = saturated_design()
    np.testing.assert_allclose(oracle_ols(x, dm)[:, 0], [3, 2, 1, 0], atol=1e-12)
    dup = np.hstack([dm.columns, dm.columns[:, 1:2]])
    with pytest.raises(InputError):
        oracle_ols(x.values, dup)


def test_recovery_conventions():
    truth = ("g1", "g2")
    r = evaluate_recovery(["g1", "g2"], truth)
    assert (r.precision, r.recall) == (1.0, 1.0)
    r = evaluate_recovery([], truth)
    assert r.precision == 1.0 and not r.precision_defined and r.recall == 0.0
    r = evaluate_recovery(["g1", "g9"], truth)
    assert r.exceptions == ["g9"] and r.precision == 0.5


def test_write_dataset(tmp_path):
    x, d, truth = generate(SynthSpec(n_features=20, n_informative=3, seed=2))
    paths = write_dataset(tmp_path, x, d, truth)
    data = json.loads(paths["truth"].read_text())
    assert data["informative"] == list(truth.informative)
    assert paths["features"].read_text().startswith("id,g0001")
