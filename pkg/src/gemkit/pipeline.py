"""The two GEM workflows (batch removal, cohort fusion) and the step-2 bundle.

Degrees of freedom spent by every GEM step are accumulated and handed to
the jackknife and ANOVA so their reference distributions shrink accordingly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .design import ModelFormula, encode_design, er_values, fit_glm
from .enet import cv_path, tune_min_support
from .pls import ClassResponse, cross_validate, fit_pls, jackknife_test
from .tabular import DesignTable, FeatureMatrix, InputError, merge_cohorts
from .univariate import PvalueTable, anova_per_feature, rotation_test

__all__ = [
    "FUSION_ORDERS",
    "GemStep",
    "Analysis",
    "gem_step",
    "remove_batch",
    "fuse_cohorts",
    "analyse",
]

FUSION_ORDERS = ("scale-stack-scale", "stack-scale")


@dataclass(eq=False)
class GemStep:
    er: FeatureMatrix
    design: DesignTable
    decomposition: object
    term: str
    dof_consumed: int
    notes: list = field(default_factory=list)


def gem_step(x: FeatureMatrix, design: DesignTable, formula: str, term: str,
             er_mode: str = "auto", levels: dict | None = None) -> GemStep:
    f = ModelFormula.parse(formula)
    design.check_aligned(x)
    dm = encode_design(design, f, levels)
    g = fit_glm(x, dm, er_mode)
    er = er_values(g, term)
    return GemStep(er, design, g, term, g.dof.consumed_by_others(term))


def remove_batch(x: FeatureMatrix, design: DesignTable, batch: str = "batch",
                 target: str = "disease", er_mode: str = "auto") -> GemStep:
    """Model ``batch * target`` and keep the ER values of ``target``."""
    return gem_step(x, design, f"{batch} * {target}", target, er_mode)


def fuse_cohorts(x: FeatureMatrix, design: DesignTable, cohort: str = "cohort",
                 batch: str | None = "batch", target: str = "disease",
                 fusion_order: str = "scale-stack-scale"):
    """Split by ``cohort``, remove batch effects inside cohorts that have
    more than one batch, then fuse.

    ``fusion_order="scale-stack-scale"`` autoscales each cohort before
    stacking and the stack again afterwards; ``"stack-scale"`` skips the
    per-cohort scaling.

    Returns
    -------
    fused : FeatureMatrix
    fused_design : DesignTable
    dof_consumed : int
        Degrees of freedom removed by batch correction.
    info : dict
    """
    if fusion_order not in FUSION_ORDERS:
        raise InputError(f"fusion order must be one of {FUSION_ORDERS}")
    design.check_aligned(x)
    names = list(dict.fromkeys(design[cohort]))
    parts = []
    dof = 0
    corrected = []
    for name in names:
        sids = [s for s, c in zip(design.sample_ids, design[cohort]) if c == name]
        xc, dc = x.select_samples(sids), design.select_samples(sids)
        if batch is not None and batch in dc and len(set(dc[batch])) > 1:
            step = remove_batch(xc, dc, batch, target)
            xc = step.er
            dof += step.dof_consumed
            corrected.append(name)
        keep = {k: v for k, v in dc.factors.items() if k != cohort}
        parts.append((xc, DesignTable(dc.sample_ids, keep)))
    fused, fdesign, info = merge_cohorts(parts, names, prescale=fusion_order == "scale-stack-scale")
    info.update({"batch_corrected": corrected, "fusion_order": fusion_order,
                 "dof_consumed_batch": dof})
    return fused, fdesign, dof, info


@dataclass(eq=False)
class Analysis:
    response: ClassResponse
    dof_consumed: int
    cv: object
    pls: object
    jackknife: object
    enet_path: object
    enet: object
    anova: object
    rotation: object | None
    pvalues: PvalueTable

    @property
    def pls_selected(self) -> list:
        return self.jackknife.selected_ids

    @property
    def enet_selected(self) -> list:
        fids = self.enet_path.feature_ids
        return [fids[j] for j in self.enet.support]

    def summary(self) -> dict:
        out = {"dof_consumed_step1": self.dof_consumed}
        if self.cv is not None:
            out["pls"] = {"chosen_components": self.cv.chosen,
                          "cv_accuracy": self.cv.chosen_accuracy,
                          "misclassified": [int(v) for v in self.cv.misclassified],
                          "rule": self.cv.rule,
                          "jackknife_df": self.jackknife.df,
                          "n_selected": int(self.jackknife.selected.sum()),
                          "rejection_limit": self.jackknife.rejection_limit}
        if self.enet is not None:
            out["enet"] = {**self.enet.to_dict(), "alpha": self.enet_path.alpha}
        if self.pvalues is not None:
            out["anova"] = {"df_between": self.pvalues.df_between,
                            "df_within": self.pvalues.df_within,
                            "min_p_raw": float(self.pvalues.p_raw.min()),
                            "min_p_bh": float(self.pvalues.p_bh.min()),
                            "min_p_bonf": float(self.pvalues.p_bonf.min()),
                            "min_p_rot": None if self.pvalues.p_rot is None
                            else float(self.pvalues.p_rot.min()),
                            "n_bh_05": int(np.sum(self.pvalues.p_bh < 0.05))}
        return out


def analyse(x: FeatureMatrix, labels, dof_consumed: int = 0, *, levels=None,
            a_max: int = 5, segments="loo", n_segments: int = 10, alpha: float = 0.5,
            n_lambda: int = 50, ratio: float = 1e-2, tolerance: float = 0.02,
            n_sim: int = 1000, seed: int = 0, rotation_design=None, term: str | None = None,
            rejection_limit: float = 0.05, run=("pls", "enet", "anova")) -> Analysis:
    """GEM step 2 on one ER (or raw) matrix: PLS-DA + jackknife, elastic
    net, and per-feature ANOVA with Bonferroni/BH/rotation adjustment.

    ``rotation_design``/``term`` select the full design the rotation test
    works in; without them no rotation p-values are produced.
    """
    resp = ClassResponse.from_labels(labels, levels)
    cv = full = jk = path = tune = anova = rot = table = None
    if "pls" in run:
        cv = cross_validate(x, resp, segments, a_max, "autoscale", n_segments, seed)
        full = fit_pls(x, resp, cv.chosen, "autoscale")
        jk = jackknife_test(cv, full, dof_consumed, rejection_limit,
                            a=min(cv.chosen, full.n_components))
    if "enet" in run:
        path = cv_path(x, resp, alpha, n_lambda, ratio, segments, n_segments, seed)
        tune = tune_min_support(path, tolerance)
    if "anova" in run:
        anova = anova_per_feature(x, labels, dof_consumed)
        if rotation_design is not None and n_sim:
            rot = rotation_test(x, rotation_design, term, n_sim, seed)
        table = PvalueTable.build(x.feature_ids, anova, rot)
    return Analysis(resp, dof_consumed, cv, full, jk, path, tune, anova, rot, table)
