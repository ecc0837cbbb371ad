"""Elastic-net regression on a class dummy, by cyclic coordinate descent.

Objective for standardized ``x`` (mean 0, ``x_j @ x_j / N == 1``) and
centered ``y``::

    1/(2N) ||y - X b||^2 + lam * (alpha ||b||_1 + (1 - alpha)/2 ||b||_2^2)

The path is tuned for the smallest support whose cross-validated accuracy
is within a tolerance of the best accuracy on the path.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numba import njit
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from .pls import _as_response, _as_values, make_segments
from .tabular import InputError

__all__ = [
    "ConvergenceError",
    "EnetPath",
    "TuneResult",
    "lambda_path",
    "fit_enet",
    "fit_path",
    "cv_path",
    "tune_min_support",
    "kkt_residuals",
    "objective",
    "ElasticNetDA",
]

TOL = 1e-7
KKT_TOL = 1e-6
MAX_SWEEPS = 100_000


class ConvergenceError(RuntimeError):
    pass


@njit(cache=True)
def _objective(r, b, lam, alpha, n):
    l1 = 0.0
    l2 = 0.0
    for j in range(b.shape[0]):
        l1 += abs(b[j])
        l2 += b[j] * b[j]
    return (r @ r) / (2.0 * n) + lam * (alpha * l1 + 0.5 * (1.0 - alpha) * l2)


@njit(cache=True)
def _sweep(x, xsq, r, b, idx, lam, alpha, n):
    thr = lam * alpha
    den_pen = lam * (1.0 - alpha)
    dmax = 0.0
    for k in range(idx.shape[0]):
        j = idx[k]
        col = x[:, j]
        g = (col @ r) / n + xsq[j] * b[j]
        if g > thr:
            new = (g - thr) / (xsq[j] + den_pen)
        elif g < -thr:
            new = (g + thr) / (xsq[j] + den_pen)
        else:
            new = 0.0
        d = new - b[j]
        if d != 0.0:
            r -= d * col
            b[j] = new
            if abs(d) > dmax:
                dmax = abs(d)
    return dmax


@njit(cache=True)
def _cd(x, xsq, r, b, eligible, lam, alpha, tol, max_sweeps):
    """Active-set coordinate descent; returns (sweeps, status).

    status 0 converged, 1 sweep limit, 2 objective increased.
    """
    n = x.shape[0]
    sweeps = 0
    obj = _objective(r, b, lam, alpha, n)
    while sweeps < max_sweeps:
        dmax = _sweep(x, xsq, r, b, eligible, lam, alpha, n)
        sweeps += 1
        new_obj = _objective(r, b, lam, alpha, n)
        if new_obj > obj + 1e-12 * max(1.0, abs(obj)):
            return sweeps, 2
        obj = new_obj
        if dmax < tol:
            return sweeps, 0
        # iterate on the current nonzero set until it settles
        while sweeps < max_sweeps:
            cnt = 0
            for k in range(eligible.shape[0]):
                if b[eligible[k]] != 0.0:
                    cnt += 1
            active = np.empty(cnt, dtype=np.int64)
            cnt = 0
            for k in range(eligible.shape[0]):
                if b[eligible[k]] != 0.0:
                    active[cnt] = eligible[k]
                    cnt += 1
            dmax = _sweep(x, xsq, r, b, active, lam, alpha, n)
            sweeps += 1
            new_obj = _objective(r, b, lam, alpha, n)
            if new_obj > obj + 1e-12 * max(1.0, abs(obj)):
                return sweeps, 2
            obj = new_obj
            if dmax < tol:
                break
    return sweeps, 1


def objective(x, y, b, lam, alpha):
    r = y - x @ b
    return float(r @ r / (2 * len(y)) + lam * (alpha * np.abs(b).sum()
                                                + 0.5 * (1 - alpha) * b @ b))


def kkt_residuals(x, y, b, lam, alpha) -> np.ndarray:
    """Per-coordinate violation of the optimality conditions."""
    n = x.shape[0]
    grad = x.T @ (y - x @ b) / n - lam * (1 - alpha) * b
    out = np.maximum(np.abs(grad) - lam * alpha, 0.0)
    act = b != 0
    out[act] = np.abs(grad[act] - lam * alpha * np.sign(b[act]))
    return out


def lambda_path(x, y, alpha: float = 0.5, n_lambda: int = 100, ratio: float = 1e-3) -> np.ndarray:
    """Decreasing, log-spaced path from the smallest all-zero lambda."""
    if alpha <= 0:
        raise InputError("alpha must be > 0 to derive lambda_max; pass an explicit path")
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    lam_max = float(np.max(np.abs(x.T @ y)) / (len(y) * alpha))
    if lam_max == 0.0:
        raise InputError("y is orthogonal to every predictor; lambda_max is zero")
    if n_lambda == 1:
        return np.array([lam_max])
    return lam_max * np.logspace(0.0, np.log10(ratio), n_lambda)


def _polish(x, y, b, r, lam, alpha):
    """Exact minimizer on the current support with its signs held fixed.

    Accepted only when the signs survive and the objective does not grow;
    coordinate descent then re-verifies the result.
    """
    act = np.flatnonzero(b)
    if act.size == 0:
        return False
    n = x.shape[0]
    xa = x[:, act]
    s = np.sign(b[act])
    gram = xa.T @ xa / n + lam * (1 - alpha) * np.eye(act.size)
    rhs = xa.T @ y / n - lam * alpha * s
    try:
        ba = np.linalg.solve(gram, rhs)
    except np.linalg.LinAlgError:
        return False
    if not np.all(np.sign(ba) == s):
        return False
    trial = b.copy()
    trial[act] = ba
    if objective(x, y, trial, lam, alpha) > objective(x, y, b, lam, alpha):
        return False
    b[:] = trial
    r[:] = y - x @ b
    return True


POLISH_EVERY = 20


def _solve(x, xsq, y, b, r, lam, alpha, eligible=None, tol=TOL, max_sweeps=MAX_SWEEPS):
    n, p = x.shape
    # at or beyond lambda_max zero is optimal; skip the rounding-level
    # coordinate updates that would otherwise leave tiny nonzeros
    if np.max(np.abs(x.T @ y)) / n <= lam * alpha * (1 + 1e-12):
        b[:] = 0.0
        r[:] = y
        return 0
    all_idx = np.arange(p, dtype=np.int64)
    idx = all_idx if eligible is None else np.asarray(eligible, dtype=np.int64)
    total = 0
    while True:
        chunk = min(POLISH_EVERY, max_sweeps - total)
        sweeps, status = _cd(x, xsq, r, b, idx, lam, alpha, tol, chunk)
        total += sweeps
        if status == 2:
            raise ConvergenceError(f"objective increased during a sweep at lambda={lam:g}")
        if status == 1:
            if total >= max_sweeps:
                raise ConvergenceError(
                    f"no convergence after {max_sweeps} sweeps at lambda={lam:g}; "
                    f"max KKT residual {kkt_residuals(x, y, b, lam, alpha).max():.3g}")
            _polish(x, y, b, r, lam, alpha)
            continue
        viol = kkt_residuals(x, y, b, lam, alpha)
        if viol.max() <= KKT_TOL:
            return total
        # screened-out coordinates violate KKT: widen to the full set
        if len(idx) < p:
            idx = all_idx
            continue
        tol = tol / 10
        if tol < 1e-15:
            raise ConvergenceError(f"KKT residual {viol.max():.3g} above {KKT_TOL}")


def fit_enet(x, y, lam: float, alpha: float = 0.5, b0=None, tol: float = TOL,
             max_sweeps: int = MAX_SWEEPS):
    """Coefficients for one lambda.

    ``x`` must be standardized and ``y`` centered; the intercept returned is
    the mean of ``y`` (zero for centered input).  ``b0`` warm-starts.
    """
    x = np.asfortranarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n, p = x.shape
    xsq = np.einsum("ij,ij->j", x, x) / n
    b = np.zeros(p) if b0 is None else np.array(b0, dtype=float)
    r = y - x @ b
    _solve(x, xsq, y, b, r, lam, alpha, tol=tol, max_sweeps=max_sweeps)
    return b, float(y.mean())


def _standardize(x):
    mean = x.mean(axis=0)
    xc = x - mean
    scale = np.sqrt(np.mean(xc ** 2, axis=0))
    scale = np.where(scale > 1e-12 * np.maximum(np.abs(mean), 1.0), scale, 1.0)
    return mean, scale, xc / scale


def fit_path(x, y, lambdas, alpha: float = 0.5, warm_start: bool = True,
             screen: str | None = None) -> np.ndarray:
    """Coefficients along ``lambdas`` for standardized x and centered y.

    ``screen="strong"`` applies the sequential strong rule before each
    lambda; every solution is still KKT-checked over all coordinates.
    """
    x = np.asfortranarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n, p = x.shape
    xsq = np.einsum("ij,ij->j", x, x) / n
    out = np.zeros((len(lambdas), p))
    b = np.zeros(p)
    prev = None
    for k, lam in enumerate(lambdas):
        if not warm_start:
            b = np.zeros(p)
        r = y - x @ b
        eligible = None
        if screen == "strong":
            lam_prev = prev if prev is not None else lam
            grad = np.abs(x.T @ r) / n
            eligible = np.flatnonzero((grad >= alpha * (2 * lam - lam_prev)) | (b != 0))
        elif screen is not None:
            raise InputError(f"unknown screen {screen!r}")
        _solve(x, xsq, y, b, r, lam, alpha, eligible)
        out[k] = b
        prev = lam
    return out


@dataclass(eq=False)
class EnetPath:
    lambdas: np.ndarray
    coefs: np.ndarray  # (n_lambda, features) in standardized units
    intercept: float
    x_mean: np.ndarray
    x_scale: np.ndarray
    alpha: float
    feature_ids: tuple
    levels: tuple
    cv_accuracy: np.ndarray | None = None
    chance: float | None = None
    chosen: int | None = None

    @property
    def supports(self) -> list:
        return [np.flatnonzero(c) for c in self.coefs]

    @property
    def support_sizes(self) -> np.ndarray:
        return np.array([np.count_nonzero(c) for c in self.coefs])

    def decision(self, x, k: int) -> np.ndarray:
        return self.intercept + ((np.asarray(x, dtype=float) - self.x_mean) / self.x_scale) @ self.coefs[k]

    def to_frame(self):
        import pandas as pd
        return pd.DataFrame({
            "lambda": self.lambdas,
            "support_size": self.support_sizes,
            "cv_accuracy": self.cv_accuracy if self.cv_accuracy is not None
            else np.full(len(self.lambdas), np.nan),
            "chosen": [int(k == self.chosen) for k in range(len(self.lambdas))],
        })


def cv_path(x, y, alpha: float = 0.5, n_lambda: int = 50, ratio: float = 1e-2,
            segments="loo", n_segments: int = 10, seed: int = 0,
            screen: str | None = None) -> EnetPath:
    """Fit the full-data path and score every lambda by out-of-fold accuracy."""
    xv, fids = _as_values(x)
    resp = _as_response(y)
    n = xv.shape[0]
    mean, scale, xs = _standardize(xv)
    yv = resp.values
    ym = yv.mean()
    lambdas = lambda_path(xs, yv - ym, alpha, n_lambda, ratio)
    coefs = fit_path(xs, yv - ym, lambdas, alpha, screen=screen)
    if isinstance(segments, str):
        segments = make_segments(resp, segments, n_segments, seed)
    preds = np.zeros((len(lambdas), n))
    for seg in segments:
        seg = np.asarray(seg, dtype=int)
        train = np.setdiff1d(np.arange(n), seg)
        m, s, xt = _standardize(xv[train])
        yt = yv[train]
        bt = fit_path(xt, yt - yt.mean(), lambdas, alpha, screen=screen)
        preds[:, seg] = yt.mean() + bt @ ((xv[seg] - m) / s).T
    acc = np.mean((preds > 0.5) == (yv == 1)[None, :], axis=1)
    chance = float(max(np.mean(yv), 1 - np.mean(yv)))
    return EnetPath(lambdas, coefs, float(ym), mean, scale, alpha, fids, resp.levels,
                    acc, chance)


@dataclass
class TuneResult:
    informative: bool
    chosen: int | None
    lam: float | None
    support: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    best_accuracy: float = 0.0
    chosen_accuracy: float | None = None
    chance: float = 0.5
    tolerance: float = 0.02
    message: str = ""

    def to_dict(self):
        return {"informative": self.informative, "chosen_index": self.chosen,
                "lambda": self.lam, "support_size": int(len(self.support)),
                "best_accuracy": self.best_accuracy, "chosen_accuracy": self.chosen_accuracy,
                "chance": self.chance, "tolerance": self.tolerance, "message": self.message}


def tune_min_support(path: EnetPath, tolerance: float = 0.02, margin: float = 0.1) -> TuneResult:
    """Largest lambda whose CV accuracy is within ``tolerance`` of the best.

    When the best accuracy does not beat chance (majority-class rate) by
    more than ``margin`` nothing is selected.
    """
    if path.cv_accuracy is None:
        raise InputError("path has no cross-validated accuracy")
    acc = path.cv_accuracy
    best = float(acc.max())
    chance = path.chance if path.chance is not None else 0.5
    if best <= chance + margin:
        path.chosen = None
        return TuneResult(False, None, None, np.zeros(0, dtype=int), best, None, chance,
                          tolerance, "no informative support")
    # lambdas decrease, so the first qualifying index is the largest lambda
    k = int(np.flatnonzero(acc >= best - tolerance - 1e-12)[0])
    path.chosen = k
    return TuneResult(True, k, float(path.lambdas[k]), np.flatnonzero(path.coefs[k]), best,
                      float(acc[k]), chance, tolerance, "ok")


class ElasticNetDA(ClassifierMixin, BaseEstimator):
    """Elastic-net classifier tuned for minimal support.

    Parameters
    ----------
    alpha : float
        L1 share of the penalty.
    n_lambda : int
    ratio : float
        Smallest lambda as a fraction of lambda_max.
    tolerance : float
        Accuracy slack when trading accuracy for a smaller support.
    cv : {"loo", "random"}
    n_segments : int
    screen : {None, "strong"}
    random_state : int
    """

    def __init__(self, alpha=0.5, n_lambda=50, ratio=1e-2, tolerance=0.02, cv="loo",
                 n_segments=10, screen=None, random_state=0):
        self.alpha = alpha
        self.n_lambda = n_lambda
        self.ratio = ratio
        self.tolerance = tolerance
        self.cv = cv
        self.n_segments = n_segments
        self.screen = screen
        self.random_state = random_state

    def fit(self, X, y):
        resp = _as_response(y)
        self.classes_ = np.array(resp.levels)
        self.path_ = cv_path(X, resp, self.alpha, self.n_lambda, self.ratio, self.cv,
                             self.n_segments, self.random_state, self.screen)
        self.tune_ = tune_min_support(self.path_, self.tolerance)
        k = self.tune_.chosen if self.tune_.informative else 0
        self.support_ = self.tune_.support
        self.coef_ = self.path_.coefs[k] / self.path_.x_scale
        self.intercept_ = self.path_.intercept - self.path_.x_mean @ self.coef_
        self.n_features_in_ = len(self.path_.x_mean)
        return self

    def decision_function(self, X):
        check_is_fitted(self, "path_")
        return self.intercept_ + _as_values(X)[0] @ self.coef_

    def predict(self, X):
        s = self.decision_function(X)
        return np.where(s > 0.5, self.classes_[1], self.classes_[0])

