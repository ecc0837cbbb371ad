"""Two-class PLS-DA with segmented cross-validation and jackknife selection.

The regression is orthogonal-scores NIPALS on a single 0/1 dummy response.
Jackknife uncertainty follows the modified jack-knife for bilinear models:
each cross-validation segment's coefficient vector is compared with the
full-data vector, and the spread gives a per-feature t statistic.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import stats
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from .tabular import FeatureMatrix, InputError

__all__ = [
    "ClassResponse",
    "PlsModel",
    "CvResult",
    "JackknifeReport",
    "SegmentationError",
    "make_segments",
    "fit_pls",
    "cross_validate",
    "jackknife_test",
    "predict",
    "PLSDA",
]


class SegmentationError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class ClassResponse:
    """0/1 dummy response; ``levels[0]`` is the reference class."""

    values: np.ndarray
    levels: tuple

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if len(self.levels) != 2:
            raise InputError("PLS-DA needs exactly two class levels")
        if not np.all((v == 0) | (v == 1)):
            raise InputError("class dummy must be 0/1")
        if v.min() == v.max():
            raise InputError("both classes must be present")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "levels", tuple(self.levels))

    @classmethod
    def from_labels(cls, labels, levels=None) -> "ClassResponse":
        labels = [str(x) for x in labels]
        lv = tuple(levels) if levels is not None else tuple(sorted(set(labels)))
        if len(lv) != 2 or set(labels) - set(lv):
            raise InputError(f"expected two class levels, got {sorted(set(labels))}")
        return cls(np.array([float(x == lv[1]) for x in labels]), lv)

    def labels(self) -> list:
        return [self.levels[int(v)] for v in self.values]


def _as_values(x):
    if isinstance(x, FeatureMatrix):
        return np.array(x.values), x.feature_ids
    x = np.asarray(x, dtype=float)
    return x, tuple(f"f{j}" for j in range(x.shape[1]))


def _as_response(y):
    if isinstance(y, ClassResponse):
        return y
    y = np.asarray(y)
    if y.dtype.kind in "fiub" and set(np.unique(y).tolist()) <= {0, 1}:
        return ClassResponse(y.astype(float), ("0", "1"))
    return ClassResponse.from_labels(y)


@dataclass(eq=False)
class PlsModel:
    """Fitted PLS1 model.

    ``weights``, ``loadings`` and ``coef_scaled`` live in the preprocessed
    feature space; ``coef``/``intercept`` map raw inputs to the dummy scale.
    """

    feature_ids: tuple
    levels: tuple
    weights: np.ndarray
    loadings: np.ndarray
    y_loadings: np.ndarray
    scores: np.ndarray
    x_mean: np.ndarray
    x_scale: np.ndarray
    y_mean: float
    scaling: str
    requested_components: int
    coef_scaled: np.ndarray = field(init=False)
    coef: np.ndarray = field(init=False)
    intercept: float = field(init=False)

    def __post_init__(self):
        self.coef_scaled = self.coefficients()
        self.coef = self.coef_scaled / self.x_scale
        self.intercept = float(self.y_mean - self.x_mean @ self.coef)

    @property
    def n_components(self) -> int:
        return self.weights.shape[1]

    def coefficients(self, a: int | None = None) -> np.ndarray:
        """Regression vector (preprocessed space) of the first ``a`` components."""
        a = self.n_components if a is None else a
        if a == 0:
            return np.zeros(self.weights.shape[0])
        w, p, q = self.weights[:, :a], self.loadings[:, :a], self.y_loadings[:a]
        return w @ np.linalg.solve(p.T @ w, q)

    def preprocess(self, x: np.ndarray) -> np.ndarray:
        return (x - self.x_mean) / self.x_scale


def _nipals_pls1(x, y, a_max):
    n, p = x.shape
    w_all, p_all, q_all, t_all = [], [], [], []
    x = x.copy()
    y = y.copy()
    ref = None
    for _ in range(a_max):
        w = x.T @ y
        norm = np.linalg.norm(w)
        if ref is None:
            ref = norm
        if norm <= 1e-12 * max(ref, 1e-300):
            break
        w /= norm
        j = np.argmax(np.abs(w))
        if w[j] < 0:
            w = -w
        t = x @ w
        tt = t @ t
        if tt <= 1e-24 * max(1.0, np.sum(x * x)):
            break
        pl = x.T @ t / tt
        q = y @ t / tt
        x -= np.outer(t, pl)
        y -= q * t
        w_all.append(w)
        p_all.append(pl)
        q_all.append(q)
        t_all.append(t)
    a = len(w_all)
    if a == 0:
        raise InputError("no PLS component could be extracted (x orthogonal to y)")
    return (np.column_stack(w_all), np.column_stack(p_all), np.array(q_all),
            np.column_stack(t_all))


def _preprocess_fit(x, scaling):
    mean = x.mean(axis=0)
    if scaling == "autoscale":
        scale = x.std(axis=0, ddof=1)
        scale = np.where(scale > 1e-12 * np.maximum(np.abs(mean), 1.0), scale, 1.0)
    elif scaling == "center":
        scale = np.ones(x.shape[1])
    else:
        raise InputError(f"unknown scaling {scaling!r}")
    return mean, scale


def fit_pls(x, y, a_max: int, scaling: str = "autoscale") -> PlsModel:
    """Fit PLS1 on a 0/1 class dummy with ``a_max`` components.

    Fewer components are returned (with a warning) when the data run out
    of rank first.
    """
    xv, fids = _as_values(x)
    resp = _as_response(y)
    n, p = xv.shape
    if len(resp.values) != n:
        raise InputError("response length differs from sample count")
    if a_max < 1 or a_max > min(n - 1, p):
        raise InputError(f"a_max={a_max} outside 1..{min(n - 1, p)}")
    mean, scale = _preprocess_fit(xv, scaling)
    xs = (xv - mean) / scale
    y_mean = float(resp.values.mean())
    w, pl, q, t = _nipals_pls1(xs, resp.values - y_mean, a_max)
    if w.shape[1] < a_max:
        warnings.warn(f"PLS truncated to {w.shape[1]} components (rank exhausted)", stacklevel=2)
    return PlsModel(fids, resp.levels, w, pl, q, t, mean, scale, y_mean, scaling, a_max)


def predict(model: PlsModel, x_new, a: int | None = None, sequential: bool = False):
    """Dummy-scale scores and class labels for new samples.

    ``sequential=True`` projects component by component with deflation
    instead of using the regression vector; both routes agree.
    Scores above 0.5 go to ``levels[1]``; ties go to ``levels[0]``.
    """
    if isinstance(x_new, FeatureMatrix):
        if tuple(x_new.feature_ids) != tuple(model.feature_ids):
            raise InputError("features differ from the training features")
        xv = np.array(x_new.values)
    else:
        xv = np.atleast_2d(np.asarray(x_new, dtype=float))
        if xv.shape[1] != len(model.feature_ids):
            raise InputError("feature count differs from the training features")
    a = model.n_components if a is None else a
    xs = model.preprocess(xv)
    if sequential:
        yhat = np.full(xs.shape[0], model.y_mean)
        xs = xs.copy()
        for k in range(a):
            t = xs @ model.weights[:, k]
            yhat += model.y_loadings[k] * t
            xs -= np.outer(t, model.loadings[:, k])
    else:
        yhat = model.y_mean + xs @ model.coefficients(a)
    classes = [model.levels[1] if s > 0.5 else model.levels[0] for s in yhat]
    return yhat, classes


def make_segments(y, scheme="loo", n_segments: int = 10, seed: int = 0) -> list:
    """Sample-index segments: leave-one-out or class-balanced random folds."""
    resp = _as_response(y)
    n = len(resp.values)
    if scheme == "loo":
        return [np.array([i]) for i in range(n)]
    if scheme != "random":
        raise SegmentationError(f"unknown segmentation {scheme!r}")
    if not 2 <= n_segments <= n:
        raise SegmentationError(f"n_segments={n_segments} outside 2..{n}")
    rng = np.random.default_rng(seed)
    buckets: list = [[] for _ in range(n_segments)]
    pos = 0
    for c in (0.0, 1.0):
        idx = np.flatnonzero(resp.values == c)
        rng.shuffle(idx)
        for i in idx:
            buckets[pos % n_segments].append(int(i))
            pos += 1
    return [np.array(sorted(b)) for b in buckets]


@dataclass(eq=False)
class CvResult:
    segments: list
    coefs: np.ndarray  # (segments, a_max, features), preprocessed space
    predictions: np.ndarray  # (a_max, samples) out-of-fold
    misclassified: np.ndarray  # (a_max,)
    chosen: int
    y: ClassResponse
    scaling: str
    rule: str = "smallest A with misclassifications <= min + 1"

    @property
    def accuracy(self) -> np.ndarray:
        return 1.0 - self.misclassified / len(self.y.values)

    @property
    def chosen_accuracy(self) -> float:
        return float(self.accuracy[self.chosen - 1])


def _check_segments(segments, resp):
    n = len(resp.values)
    allidx = np.sort(np.concatenate(segments))
    if not np.array_equal(allidx, np.arange(n)):
        raise SegmentationError("segments must partition the samples exactly once")
    for k, seg in enumerate(segments):
        mask = np.ones(n, bool)
        mask[seg] = False
        counts = [int(np.sum(resp.values[mask] == c)) for c in (0.0, 1.0)]
        if min(counts) < 2:
            raise SegmentationError(
                f"segment {k} leaves {counts} samples per class in training (need >= 2 each)")


def cross_validate(x, y, segments="loo", a_max: int = 5, scaling: str = "autoscale",
                   n_segments: int = 10, seed: int = 0) -> CvResult:
    """Refit on every training split and predict the held-out segment."""
    xv, _ = _as_values(x)
    resp = _as_response(y)
    n, p = xv.shape
    if isinstance(segments, str):
        segments = make_segments(resp, segments, n_segments, seed)
    segments = [np.asarray(s, dtype=int) for s in segments]
    _check_segments(segments, resp)
    a_cap = min(a_max, min(n - 1 - max(len(s) for s in segments), p))
    if a_cap < 1:
        raise SegmentationError("segments too large for any PLS component")
    coefs = np.zeros((len(segments), a_max, p))
    preds = np.full((a_max, n), np.nan)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for m, seg in enumerate(segments):
            train = np.setdiff1d(np.arange(n), seg)
            model = fit_pls(xv[train], resp.values[train], a_cap, scaling)
            xs = model.preprocess(xv[seg])
            for a in range(1, a_max + 1):
                b = model.coefficients(min(a, model.n_components))
                coefs[m, a - 1] = b
                preds[a - 1, seg] = model.y_mean + xs @ b
    truth = resp.values
    mis = np.array([int(np.sum((preds[a] > 0.5) != (truth == 1))) for a in range(a_max)])
    chosen = int(np.flatnonzero(mis <= mis.min() + 1)[0]) + 1
    return CvResult(segments, coefs, preds, mis, chosen, resp, scaling)


@dataclass(eq=False)
class JackknifeReport:
    feature_ids: tuple
    coef: np.ndarray
    se: np.ndarray
    t: np.ndarray
    p: np.ndarray
    selected: np.ndarray
    degenerate: np.ndarray
    df: int
    n_components: int
    rejection_limit: float
    dof_consumed_step1: int
    df_floored: bool = False

    @property
    def selected_ids(self) -> list:
        return [f for f, s in zip(self.feature_ids, self.selected) if s]

    def to_frame(self):
        import pandas as pd
        return pd.DataFrame({"feature": list(self.feature_ids), "b": self.coef, "se": self.se,
                             "t": self.t, "p": self.p, "selected": self.selected.astype(int),
                             "degenerate": self.degenerate.astype(int)})


def jackknife_test(cv: CvResult, full: PlsModel, dof_consumed_step1: int = 0,
                   rejection_limit: float = 0.05, a: int | None = None) -> JackknifeReport:
    """Per-feature t test on the stability of the regression coefficients.

    The variance of coefficient j is ``sum_m (b_mj - b_j)**2 * (M-1)/M`` over
    the M segments; ``t = b_j / se_j`` is referred to a t distribution with
    ``M - 1 - dof_consumed_step1`` degrees of freedom (at least 1).
    """
    a = cv.chosen if a is None else a
    if full.scaling != cv.scaling:
        raise InputError("cross-validation and full model use different preprocessing")
    if a > full.n_components:
        raise InputError(f"full model has {full.n_components} components, need {a}")
    b = full.coefficients(a)
    bm = cv.coefs[:, a - 1, :]
    m = bm.shape[0]
    se = np.sqrt(np.sum((bm - b) ** 2, axis=0) * (m - 1) / m)
    df = m - 1 - int(dof_consumed_step1)
    floored = df < 1
    if floored:
        warnings.warn(f"jackknife df {df} floored at 1", stacklevel=2)
        df = 1
    # coefficients that are zero up to rounding count as zero
    tiny = 1e-13 * max(float(np.max(np.abs(b))), 1e-300)
    zero_se = se <= tiny
    zero_b = np.abs(b) <= tiny
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(zero_se, 0.0, b / np.where(zero_se, 1.0, se))
    p = 2.0 * stats.t.sf(np.abs(t), df)
    degenerate = zero_se & ~zero_b
    t = np.where(degenerate, np.copysign(np.inf, b), t)
    p = np.where(degenerate, 0.0, p)
    p = np.where(zero_se & zero_b, 1.0, p)
    p = np.clip(p, 0.0, 1.0)
    return JackknifeReport(full.feature_ids, b, se, t, p, p < rejection_limit, degenerate,
                           df, a, rejection_limit, int(dof_consumed_step1), floored)


class PLSDA(ClassifierMixin, BaseEstimator):
    """PLS-DA classifier with cross-validated component choice and jackknife.

    Parameters
    ----------
    max_components : int
        Largest component count tried in cross-validation.
    scaling : {"autoscale", "center"}
    cv : {"loo", "random"}
    n_segments : int
        Used when ``cv="random"``.
    rejection_limit : float
    dof_consumed : int
        Degrees of freedom already spent by a preceding GEM step.
    random_state : int
    """

    def __init__(self, max_components=5, scaling="autoscale", cv="loo", n_segments=10,
                 rejection_limit=0.05, dof_consumed=0, random_state=0):
        self.max_components = max_components
        self.scaling = scaling
        self.cv = cv
        self.n_segments = n_segments
        self.rejection_limit = rejection_limit
        self.dof_consumed = dof_consumed
        self.random_state = random_state

    def fit(self, X, y):
        xv, fids = _as_values(X)
        resp = _as_response(y)
        self.classes_ = np.array(resp.levels)
        self.cv_ = cross_validate(xv, resp, self.cv, self.max_components, self.scaling,
                                  self.n_segments, self.random_state)
        self.n_components_ = self.cv_.chosen
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            self.model_ = fit_pls(xv, resp, self.n_components_, self.scaling)
        self.model_.feature_ids = fids
        self.jackknife_ = jackknife_test(self.cv_, self.model_, self.dof_consumed,
                                         self.rejection_limit,
                                         a=min(self.n_components_, self.model_.n_components))
        self.selected_ = np.flatnonzero(self.jackknife_.selected)
        self.coef_ = self.model_.coef
        self.intercept_ = self.model_.intercept
        self.n_features_in_ = xv.shape[1]
        return self

    def decision_function(self, X):
        check_is_fitted(self, "model_")
        xv, _ = _as_values(X)
        return predict(self.model_, xv)[0]

    def predict(self, X):
        return np.array(predict(self.model_, _as_values(X)[0])[1])
