import hashlib
import json

import numpy as np
import pytest

from gemkit.cli import main
from gemkit.pca import fit_pca, grouping_separation
from gemkit.report import boxplot_data, five_number_summary, pair_scatter
from gemkit.synth import SynthSpec, generate, write_dataset
from gemkit.tabular import InputError, load_design_table, load_feature_matrix


@pytest.fixture(scope="module")
def batch_data(tmp_path_factory):
    root = tmp_path_factory.mktemp("batch")
    spec = SynthSpec(cohort_sizes=((13, 14),), batch_cohorts=(0,), batch_shift=4.0,
                     effect_size=1.5, seed=0)
    x, d, truth = generate(spec)
    write_dataset(root, x, d, truth)
    return root


@pytest.fixture(scope="module")
def null_data(tmp_path_factory):
    root = tmp_path_factory.mktemp("null")
    x, d, truth = generate(SynthSpec(effect_size=0.0, seed=0))
    write_dataset(root, x, d, truth)
    return root


def run(*args):
    return main([str(a) for a in args])


def test_missing_design_is_usage_error(batch_data, tmp_path):
    assert run("explore", "--features", batch_data / "features.csv", "--design",
               tmp_path / "nope.csv", "--out", tmp_path) == 2


def test_bad_arguments_exit_2(tmp_path):
    assert run("pls") == 2
    assert run("frobnicate") == 2


def test_bad_formula_exit_2(batch_data, tmp_path):
    assert run("gem", "--features", batch_data / "features.csv", "--design",
               batch_data / "design.csv", "--formula", "batch * missing", "--out", tmp_path) == 2


def test_explore_names_batch(batch_data, tmp_path, capsys):
    assert run("explore", "--features", batch_data / "features.csv", "--design",
               batch_data / "design.csv", "--out", tmp_path) == 0
    report = json.loads((tmp_path / "explore.json").read_text())
    assert report["dominant"] == "batch"
    assert "explained_variance" in capsys.readouterr().out
    assert (tmp_path / "pca_scores.svg").read_text().startswith("<svg")


def test_explore_null_flags_nothing(null_data, tmp_path):
    assert run("explore", "--features", null_data / "features.csv", "--design",
               null_data / "design.csv", "--out", tmp_path) == 0
    report = json.loads((tmp_path / "explore.json").read_text())
    assert report["flagged"] == []


def test_gem_batch_removal(batch_data, tmp_path, capsys):
    assert run("gem", "--features", batch_data / "features.csv", "--design",
               batch_data / "design.csv", "--formula", "batch * disease", "--term", "disease",
               "--er", "--verify", "--out", tmp_path) == 0
    out = capsys.readouterr().out
    assert "residual_df=23" in out  # 27 samples, rank 4
    er = load_feature_matrix(tmp_path / "er_disease.csv")
    with pytest.warns(UserWarning, match="single level"):
        d = load_design_table(batch_data / "design.csv")
    assert grouping_separation(fit_pca(er, 2), d["batch"]).ratio < 0.1
    verify = json.loads((tmp_path / "gem_verify.json").read_text())
    assert verify["reconstruction_rel_error"] < 1e-8
    side = json.loads((tmp_path / "er_disease.csv.json").read_text())
    assert side["dof_consumed"] == 2
    assert (tmp_path / "gem" / "ledger.json").exists()


def test_verify_command(batch_data, tmp_path):
    assert run("verify", "--features", batch_data / "features.csv", "--design",
               batch_data / "design.csv", "--out", tmp_path) == 0
    assert json.loads((tmp_path / "verify.json").read_text())["oracle_max_abs_diff"] < 1e-10


def test_enet_on_noise_reports_no_support(null_data, tmp_path, capsys):
    code = run("enet", "--features", null_data / "features.csv", "--design",
               null_data / "design.csv", "--out", tmp_path)
    assert code == 1
    summary = json.loads((tmp_path / "enet_summary.json").read_text())
    assert summary["message"] == "no informative support"
    assert "no informative support" in capsys.readouterr().out


def test_pls_and_anova_outputs(batch_data, tmp_path):
    er_dir = tmp_path / "gem"
    run("gem", "--features", batch_data / "features.csv", "--design", batch_data / "design.csv",
        "--term", "disease", "--er", "--out", er_dir)
    args = ["--features", er_dir / "er_disease.csv", "--design", batch_data / "design.csv"]
    assert run("pls", *args, "--out", tmp_path / "pls") == 0
    s = json.loads((tmp_path / "pls" / "pls_summary.json").read_text())
    assert s["dof_consumed_step1"] == 2 and s["jackknife_df"] == 27 - 1 - 2
    assert run("anova", *args, "--formula", "batch * disease", "--n-sim", 200,
               "--out", tmp_path / "anova") == 0
    a = json.loads((tmp_path / "anova" / "anova_summary.json").read_text())
    assert a["df_within"] == 27 - 2 - 2
    header = (tmp_path / "anova" / "pvalues.csv").read_text().splitlines()[0]
    assert header == "feature,p_raw,p_bonf,p_bh,p_rot,df_between,df_within"


def test_five_number_summary_constant():
    s = five_number_summary([2.0] * 6)
    assert len({s[k] for k in ("whisker_low", "q1", "median", "q3", "whisker_high")}) == 1
    assert s["outliers"] == []


def test_planted_feature_medians_ordered():
    spec = SynthSpec(effect_size=4.0, cohort_shift=0.0, seed=5)
    x, d, truth = generate(spec)
    up = next(f for f, s in truth.signs.items() if s > 0)
    data = boxplot_data(x, d, [up])
    groups = data["features"][up]
    for cohort in ("cohort1", "cohort2"):
        med = {g["group"]["disease"]: g["median"] for g in groups if g["group"]["cohort"] == cohort}
        assert med["T2D"] > med["nonD"]
    assert len(groups) == 4


def test_pair_scatter_shape():
    x, d, _ = generate(SynthSpec(n_features=10, n_informative=2, seed=1))
    data = pair_scatter(x, d, ("g0001", "g0002"))
    assert len(data["points"]) == x.n_samples
    assert {"cohort", "disease", "sample", "x", "y"} <= set(data["points"][0])
    with pytest.raises(InputError):
        boxplot_data(x, d, ["nope"])


def test_boxplot_command(null_data, tmp_path):
    assert run("boxplot", "--features", null_data / "features.csv", "--design",
               null_data / "design.csv", "--ids", "g0001,g0002", "--pair", "g0001,g0002",
               "--out", tmp_path) == 0
    assert (tmp_path / "pair_scatter.json").exists()
    assert run("boxplot", "--features", null_data / "features.csv", "--design",
               null_data / "design.csv", "--ids", "zzz", "--out", tmp_path) == 2


def _digest(folder):
    h = {}
    for p in sorted(folder.rglob("*")):
        if p.is_file():
            h[str(p.relative_to(folder))] = hashlib.sha256(p.read_bytes()).hexdigest()
    return h


def test_commands_are_deterministic(batch_data, tmp_path):
    common = ["--features", batch_data / "features.csv", "--design", batch_data / "design.csv"]
    for rep in ("a", "b"):
        out = tmp_path / rep
        run("synth", "--seed", 3, "--n-features", 50, "--n-informative", 5, "--out", out / "synth")
        run("explore", *common, "--out", out / "explore")
        run("gem", *common, "--er", "--term", "disease", "--out", out / "gem")
        run("anova", *common, "--formula", "batch * disease", "--n-sim", 100, "--seed", 4,
            "--out", out / "anova")
        run("pls", *common, "--segments", "random", "--seed", 2, "--out", out / "pls")
    assert _digest(tmp_path / "a") == _digest(tmp_path / "b")
    assert len(_digest(tmp_path / "a")) > 20
