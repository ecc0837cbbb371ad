"""Explorative PCA and a score-column grouping diagnostic."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import stats
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .tabular import FeatureMatrix, InputError, StandardizationRecord, standardize

__all__ = ["PcaModel", "fit_pca", "grouping_separation", "SeparationReport", "PCA"]


@dataclass(eq=False)
class PcaModel:
    sample_ids: tuple
    feature_ids: tuple
    scores: np.ndarray
    loadings: np.ndarray
    singular_values: np.ndarray
    explained_variance: np.ndarray
    record: StandardizationRecord

    @property
    def n_components(self) -> int:
        return self.scores.shape[1]


def _svd_signed(x):
    u, s, vt = np.linalg.svd(x, full_matrices=False)
    # largest-magnitude loading entry positive
    idx = np.argmax(np.abs(vt), axis=1)
    signs = np.sign(vt[np.arange(vt.shape[0]), idx])
    signs[signs == 0] = 1.0
    return u * signs, s, vt * signs[:, None]


def fit_pca(x: FeatureMatrix, k: int, scaling: str = "autoscale") -> PcaModel:
    """Truncated PCA of the preprocessed matrix.

    Explained variance fractions are relative to the total variance of the
    preprocessed matrix, so they sum to one over all components.
    """
    xs, rec = standardize(x, scaling)
    n, p = xs.shape
    if k < 1 or k > min(n - 1, p):
        raise InputError(f"k={k} outside 1..{min(n - 1, p)}")
    values = xs.values
    total = float(np.sum(values ** 2))
    if total == 0.0:
        raise InputError("matrix is all zeros after preprocessing")
    u, s, vt = _svd_signed(values)
    ev = s ** 2 / np.sum(s ** 2)
    return PcaModel(xs.sample_ids, xs.feature_ids, u[:, :k] * s[:k], vt[:k].T.copy(),
                    s[:k].copy(), ev[:k].copy(), rec)


@dataclass
class SeparationReport:
    component: int
    ratio: float
    levels: tuple
    t_statistic: float | None = None
    p_value: float | None = None

    def to_dict(self):
        return {"component": self.component, "ratio": self.ratio, "levels": list(self.levels),
                "t_statistic": self.t_statistic, "p_value": self.p_value}


def grouping_separation(m, labels, comp: int = 0) -> SeparationReport:
    """Between-group share of the variance of one score column.

    ``m`` is a :class:`PcaModel` or a plain score matrix.  For two groups a
    pooled two-sample t statistic is added.
    """
    scores = m.scores if isinstance(m, PcaModel) else np.asarray(m, dtype=float)
    if scores.ndim == 1:
        scores = scores[:, None]
    col = scores[:, comp]
    labels = np.asarray([str(v) for v in labels])
    if len(labels) != len(col):
        raise InputError("labels do not align with samples")
    levels = tuple(sorted(set(labels)))
    if len(levels) < 2:
        raise InputError("grouping needs at least two levels")
    centered = col - col.mean()
    total = float(centered @ centered)
    between = 0.0
    for lv in levels:
        g = col[labels == lv]
        between += len(g) * (g.mean() - col.mean()) ** 2
    ratio = float(min(1.0, between / total)) if total > 0 else 0.0
    report = SeparationReport(comp, ratio, levels)
    if len(levels) == 2:
        a, b = col[labels == levels[0]], col[labels == levels[1]]
        if len(a) > 1 and len(b) > 1:
            with warnings.catch_warnings():
                # zero within-group spread gives an infinite t; that is fine
                warnings.simplefilter("ignore", RuntimeWarning)
                res = stats.ttest_ind(b, a)
            report.t_statistic = float(res.statistic)
            report.p_value = float(res.pvalue)
    return report


class PCA(TransformerMixin, BaseEstimator):
    """scikit-learn wrapper around :func:`fit_pca`.

    Parameters
    ----------
    n_components : int
    scaling : {"autoscale", "center"}
    """

    def __init__(self, n_components=2, scaling="autoscale"):
        self.n_components = n_components
        self.scaling = scaling

    def fit(self, X, y=None):
        if isinstance(X, FeatureMatrix):
            fm = X
        else:
            X = check_array(X)
            fm = FeatureMatrix([f"s{i}" for i in range(X.shape[0])],
                               [f"f{j}" for j in range(X.shape[1])], X)
        self.model_ = fit_pca(fm, self.n_components, self.scaling)
        self.components_ = self.model_.loadings.T
        self.explained_variance_ratio_ = self.model_.explained_variance
        self.n_features_in_ = fm.n_features
        return self

    def transform(self, X):
        check_is_fitted(self, "model_")
        rec = self.model_.record
        if isinstance(X, FeatureMatrix):
            xs = rec.apply(X).values
        else:
            X = check_array(X)
            if X.shape[1] != self.n_features_in_:
                raise ValueError("feature count differs from training data")
            keep = [j for j in range(X.shape[1]) if f"f{j}" in set(rec.feature_ids)]
            xs = (X[:, keep] - rec.center) / rec.scale
        return xs @ self.model_.loadings
