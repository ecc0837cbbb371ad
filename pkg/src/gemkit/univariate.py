"""Univariate benchmark: per-feature F tests and multiplicity adjustment."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats

from .design import INTERCEPT, DesignMatrix
from .tabular import FeatureMatrix, InputError

__all__ = [
    "AnovaResult",
    "RotationResult",
    "PvalueTable",
    "anova_per_feature",
    "adjust_bonferroni",
    "adjust_bh",
    "rotation_test",
    "random_orthonormal_rows",
    "pvalue_histogram",
]

P_FLOOR = np.finfo(float).tiny


@dataclass(eq=False)
class AnovaResult:
    f: np.ndarray
    p: np.ndarray
    df_between: int
    df_within: int
    constant: np.ndarray
    degenerate: np.ndarray


def _values(x):
    return np.asarray(x.values if isinstance(x, FeatureMatrix) else x, dtype=float)


def anova_per_feature(x, labels, dof_consumed_step1: int = 0) -> AnovaResult:
    """One-way F test of ``labels`` for every column of ``x``.

    The within-group degrees of freedom are ``N - levels - dof_consumed_step1``,
    which accounts for effects removed by a preceding GEM step.
    """
    xv = _values(x)
    labels = np.asarray([str(v) for v in labels])
    n = xv.shape[0]
    if len(labels) != n:
        raise InputError("labels do not align with samples")
    levels = sorted(set(labels))
    if len(levels) < 2:
        raise InputError("ANOVA needs at least two levels")
    sizes = [int(np.sum(labels == lv)) for lv in levels]
    if min(sizes) < 2:
        raise InputError(f"every level needs >= 2 samples, got {dict(zip(levels, sizes))}")
    dfb = len(levels) - 1
    dfw = n - len(levels) - int(dof_consumed_step1)
    if dfw < 1:
        raise InputError(f"within-group df {dfw} < 1")
    grand = xv.mean(axis=0)
    ssb = np.zeros(xv.shape[1])
    ssw = np.zeros(xv.shape[1])
    for lv in levels:
        g = xv[labels == lv]
        m = g.mean(axis=0)
        ssb += len(g) * (m - grand) ** 2
        ssw += np.sum((g - m) ** 2, axis=0)
    sst = ssb + ssw
    scale = np.maximum(np.sum(xv ** 2, axis=0), 1e-300)
    constant = sst <= 1e-24 * scale
    degenerate = (ssw <= 1e-24 * scale) & ~constant
    with np.errstate(divide="ignore", invalid="ignore"):
        f = (ssb / dfb) / (ssw / dfw)
    f = np.where(constant, 0.0, np.where(degenerate, np.inf, f))
    p = stats.f.sf(f, dfb, dfw)
    p = np.where(constant, 1.0, np.where(degenerate, P_FLOOR, np.maximum(p, P_FLOOR)))
    return AnovaResult(f, p, dfb, dfw, constant, degenerate)


def adjust_bonferroni(p) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    _check_p(p)
    return np.minimum(1.0, p * len(p))


def adjust_bh(p) -> np.ndarray:
    """Benjamini-Hochberg step-up adjusted p-values, in input order."""
    p = np.asarray(p, dtype=float)
    _check_p(p)
    m = len(p)
    if m == 0:
        return p.copy()
    order = np.argsort(p, kind="stable")
    ranked = p[order] * m / np.arange(1, m + 1)
    q = np.minimum.accumulate(ranked[::-1])[::-1]
    out = np.empty(m)
    out[order] = np.minimum(q, 1.0)
    return out


def _check_p(p):
    if np.any(~np.isfinite(p)) or np.any(p < 0) or np.any(p > 1):
        raise InputError("p-values must lie in [0, 1]")


def random_orthonormal_rows(rng, n_sim: int, d: int, h: int) -> np.ndarray:
    """``n_sim`` stacks of ``h`` Haar-distributed orthonormal rows in R^d."""
    g = rng.standard_normal((n_sim, d, h))
    q, r = np.linalg.qr(g)
    signs = np.sign(np.diagonal(r, axis1=1, axis2=2))
    signs[signs == 0] = 1.0
    q = q * signs[:, None, :]
    return np.transpose(q, (0, 2, 1))


@dataclass(eq=False)
class RotationResult:
    f: np.ndarray
    p_adjusted: np.ndarray
    fdr_raw: np.ndarray
    n_sim: int
    df_hypothesis: int
    df_error: int
    seed: int
    method: str = ("pooled-null rotation FDR: rotations of the sample space orthogonal "
                   "to the reduced model, F statistics pooled across features")


def rotation_test(x, design: DesignMatrix, term: str, n_sim: int = 1000,
                  seed: int = 0) -> RotationResult:
    """FDR-adjusted p-values for ``term`` from random rotations.

    The data are projected on the orthogonal complement of the model
    without ``term`` (those directions stay fixed).  Within that complement
    the hypothesis and error parts are rotated jointly by Haar rotations;
    each rotation gives a full set of null F statistics.  For feature i the
    FDR is the expected number of null statistics per rotation at least
    ``F_i`` divided by the number of observed statistics at least ``F_i``,
    capped at one and made monotone as in Benjamini-Hochberg.
    """
    if n_sim < 100:
        raise InputError("n_sim must be >= 100")
    if term == INTERCEPT or term not in design.term_spans:
        raise InputError(f"unknown term {term!r}")
    y = _values(x)
    n = design.n_samples
    if y.shape[0] != n:
        raise InputError("data and design have different sample counts")
    a, b = design.term_spans[term]
    reduced = np.delete(design.columns, np.s_[a:b], axis=1)
    dt = design.columns[:, a:b]
    q_full, _ = np.linalg.qr(reduced, mode="complete")
    r0 = np.linalg.matrix_rank(reduced)
    qc = q_full[:, r0:]
    d = qc.shape[1]
    hyp = qc.T @ dt
    h = np.linalg.matrix_rank(hyp)
    df_e = d - h
    if df_e < 2:
        raise InputError(f"residual subspace dimension {df_e} < 2")
    z = qc.T @ y
    total = np.sum(z ** 2, axis=0)
    uh, _ = np.linalg.qr(hyp)
    uh = uh[:, :h]
    ss_h = np.sum((uh.T @ z) ** 2, axis=0)

    def fstat(ssh, tot):
        sse = np.maximum(tot - ssh, 0.0)
        with np.errstate(divide="ignore", invalid="ignore"):
            f = (ssh / h) / (sse / df_e)
        f = np.where(tot <= 0, 0.0, f)
        return np.where(np.isnan(f), 0.0, f)

    f_obs = fstat(ss_h, total)
    rng = np.random.default_rng(seed)
    rows = random_orthonormal_rows(rng, n_sim, d, h)
    null = np.empty((n_sim, y.shape[1]))
    for k in range(n_sim):
        null[k] = fstat(np.sum((rows[k] @ z) ** 2, axis=0), total)
    pooled = np.sort(null.ravel())
    exceed = (pooled.size - np.searchsorted(pooled, f_obs, side="left")) / n_sim
    obs_sorted = np.sort(f_obs)
    n_obs = f_obs.size - np.searchsorted(obs_sorted, f_obs, side="left")
    fdr = np.minimum(1.0, exceed / n_obs)
    order = np.argsort(-f_obs, kind="stable")
    mono = np.minimum.accumulate(fdr[order][::-1])[::-1]
    adj = np.empty_like(fdr)
    adj[order] = mono
    return RotationResult(f_obs, adj, fdr, n_sim, h, df_e, seed)


@dataclass(eq=False)
class PvalueTable:
    feature_ids: tuple
    p_raw: np.ndarray
    p_bonf: np.ndarray
    p_bh: np.ndarray
    p_rot: np.ndarray | None
    df_between: int
    df_within: int

    @classmethod
    def build(cls, feature_ids, anova: AnovaResult, rotation: RotationResult | None = None):
        return cls(tuple(feature_ids), anova.p, adjust_bonferroni(anova.p), adjust_bh(anova.p),
                   None if rotation is None else rotation.p_adjusted,
                   anova.df_between, anova.df_within)

    def to_frame(self):
        import pandas as pd
        m = len(self.feature_ids)
        return pd.DataFrame({
            "feature": list(self.feature_ids),
            "p_raw": self.p_raw,
            "p_bonf": self.p_bonf,
            "p_bh": self.p_bh,
            "p_rot": self.p_rot if self.p_rot is not None else np.full(m, np.nan),
            "df_between": np.full(m, self.df_between),
            "df_within": np.full(m, self.df_within),
        })


def pvalue_histogram(p, bins: int = 20) -> dict:
    counts, edges = np.histogram(np.asarray(p, dtype=float), bins=bins, range=(0.0, 1.0))
    return {"edges": [float(e) for e in edges], "counts": [int(c) for c in counts]}
