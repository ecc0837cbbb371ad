"""GEM step 1: effect-coded design, multi-response least squares, ER values.

The design is tiny (a handful of columns) while the response is wide, so a
single SVD of the design is shared by every feature.  All products that
touch the feature axis are accumulated in a fixed order over the short axis,
which makes each feature's result bitwise independent of the others
(permuting features permutes the output exactly).
"""

from __future__ import annotations

import itertools
import json
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .tabular import DesignTable, FeatureMatrix, InputError, write_feature_matrix

__all__ = [
    "ModelFormula",
    "DesignMatrix",
    "DofLedger",
    "GemDecomposition",
    "DesignError",
    "encode_design",
    "fit_glm",
    "er_values",
    "GEM",
]

INTERCEPT = "(Intercept)"
RANK_RTOL = 1e-10


class DesignError(ValueError):
    """The requested model cannot be fitted to the given design."""


@dataclass(frozen=True)
class ModelFormula:
    main_factors: tuple
    interactions: tuple = ()

    def __post_init__(self):
        mains = tuple(self.main_factors)
        inters = tuple(tuple(p) for p in self.interactions)
        if len(set(mains)) != len(mains):
            raise DesignError("duplicate main factor in formula")
        seen = set()
        for pair in inters:
            if len(pair) != 2 or pair[0] == pair[1]:
                raise DesignError(f"interaction must name two distinct factors: {pair}")
            for f in pair:
                if f not in mains:
                    raise DesignError(f"interaction {':'.join(pair)} uses undeclared factor {f!r}")
            key = frozenset(pair)
            if key in seen:
                raise DesignError(f"duplicate interaction {':'.join(pair)}")
            seen.add(key)
        object.__setattr__(self, "main_factors", mains)
        object.__setattr__(self, "interactions", inters)

    @property
    def terms(self) -> list:
        return list(self.main_factors) + [f"{a}:{b}" for a, b in self.interactions]

    @classmethod
    def parse(cls, text: str) -> "ModelFormula":
        """Parse R-style right-hand sides such as ``"a * b"`` or
        ``"cohort + disease + cohort:disease"``.  A leading ``y ~`` is ignored.
        """
        if "~" in text:
            text = text.split("~", 1)[1]
        mains: list = []
        inters: list = []

        def add_main(f):
            if f not in mains:
                mains.append(f)

        def add_inter(a, b):
            if frozenset((a, b)) not in {frozenset(p) for p in inters}:
                inters.append((a, b))

        for raw in text.split("+"):
            tok = raw.strip()
            if not tok:
                raise DesignError(f"empty term in formula {text!r}")
            if "*" in tok:
                parts = [p.strip() for p in tok.split("*")]
                for p in parts:
                    _check_name(p)
                    add_main(p)
                for a, b in itertools.combinations(parts, 2):
                    add_inter(a, b)
            elif ":" in tok:
                parts = [p.strip() for p in tok.split(":")]
                if len(parts) != 2:
                    raise DesignError(f"only two-way interactions are supported: {tok!r}")
                for p in parts:
                    _check_name(p)
                inters.append(tuple(parts))
            else:
                _check_name(tok)
                if tok in mains:
                    raise DesignError(f"duplicate term {tok!r}")
                mains.append(tok)
        return cls(tuple(mains), tuple(inters))

    def __str__(self):
        return " + ".join(self.terms)


def _check_name(name):
    if not re.fullmatch(r"[A-Za-z_.][A-Za-z0-9_.]*", name):
        raise DesignError(f"invalid factor name {name!r}")


@dataclass(frozen=True, eq=False)
class DesignMatrix:
    columns: np.ndarray
    column_names: tuple
    term_spans: dict
    levels: dict
    sample_ids: tuple
    coding: str = "effect"

    @property
    def terms(self) -> list:
        return [t for t in self.term_spans if t != INTERCEPT]

    @property
    def n_samples(self) -> int:
        return self.columns.shape[0]

    def term_columns(self, term: str) -> np.ndarray:
        a, b = self.term_spans[term]
        return self.columns[:, a:b]

    def drop_terms(self, terms) -> "DesignMatrix":
        """Design with ``terms`` removed (their interactions are kept as given)."""
        terms = set(terms)
        keep_cols: list = []
        spans: dict = {}
        for t, (a, b) in self.term_spans.items():
            if t in terms:
                continue
            spans[t] = (len(keep_cols), len(keep_cols) + b - a)
            keep_cols.extend(range(a, b))
        return DesignMatrix(self.columns[:, keep_cols],
                            tuple(self.column_names[i] for i in keep_cols),
                            spans, self.levels, self.sample_ids, self.coding)


def _effect_columns(values, levels):
    k = len(levels)
    out = np.zeros((len(values), k - 1))
    for i, v in enumerate(values):
        j = levels.index(v)
        if j == k - 1:
            out[i, :] = -1.0
        else:
            out[i, j] = 1.0
    return out


def encode_design(d: DesignTable, f: ModelFormula, levels: dict | None = None) -> DesignMatrix:
    """Sum-to-zero coding of the formula's terms.

    A k-level factor gives k-1 columns; column j is +1 for level j, -1 for
    the last level and 0 otherwise.  Levels are sorted unless ``levels``
    fixes their order.  Interaction columns are products of the parents'
    columns.
    """
    levels = dict(levels or {})
    n = d.n_samples
    blocks = [np.ones((n, 1))]
    names = [INTERCEPT]
    spans = {INTERCEPT: (0, 1)}
    used_levels = {}
    main_cols = {}
    pos = 1
    for fac in f.main_factors:
        if fac not in d:
            raise DesignError(f"factor {fac!r} not in design table")
        observed = sorted(set(d[fac]))
        lv = list(levels.get(fac, observed))
        absent = [x for x in lv if x not in observed]
        if absent:
            raise DesignError(f"level(s) {absent} of factor {fac!r} absent from the data")
        unknown = [x for x in observed if x not in lv]
        if unknown:
            raise DesignError(f"level(s) {unknown} of factor {fac!r} missing from level order")
        if len(lv) < 2:
            raise DesignError(f"factor {fac!r} has a single level {lv[0]!r}")
        cols = _effect_columns(d[fac], lv)
        used_levels[fac] = tuple(lv)
        main_cols[fac] = cols
        blocks.append(cols)
        names.extend(f"{fac}[{x}]" for x in lv[:-1])
        spans[fac] = (pos, pos + cols.shape[1])
        pos += cols.shape[1]
    for a, b in f.interactions:
        ca, cb = main_cols[a], main_cols[b]
        cols = np.column_stack([ca[:, i] * cb[:, j]
                                for i in range(ca.shape[1]) for j in range(cb.shape[1])])
        blocks.append(cols)
        names.extend(f"{na}:{nb}" for na in names[spans[a][0]:spans[a][1]]
                     for nb in names[spans[b][0]:spans[b][1]])
        spans[f"{a}:{b}"] = (pos, pos + cols.shape[1])
        pos += cols.shape[1]
    return DesignMatrix(np.hstack(blocks), tuple(names), spans, used_levels, d.sample_ids)


@dataclass
class DofLedger:
    n_samples: int
    consumed: dict
    residual_df: int

    def consumed_by_others(self, term: str) -> int:
        """Degrees of freedom spent on every non-intercept term except ``term``.

        This is what ER values of ``term`` have lost relative to plain
        centered data; the intercept is excluded because downstream methods
        center again.
        """
        if term not in self.consumed or term == INTERCEPT:
            raise DesignError(f"unknown term {term!r}")
        return int(sum(r for t, r in self.consumed.items() if t not in (term, INTERCEPT)))

    def to_dict(self) -> dict:
        return {"n_samples": self.n_samples, "consumed": dict(self.consumed),
                "residual_df": self.residual_df}


@dataclass(eq=False)
class GemDecomposition:
    sample_ids: tuple
    feature_ids: tuple
    design: DesignMatrix
    intercept: np.ndarray
    coefficients: dict
    effects: dict
    residuals: np.ndarray
    er: dict
    dof: DofLedger
    er_mode: str
    balanced: bool
    metadata: dict = field(default_factory=dict)

    @property
    def centered(self) -> np.ndarray:
        out = self.residuals.copy()
        for t in self.design.terms:
            out = out + self.effects[t]
        return out

    @property
    def fitted(self) -> np.ndarray:
        out = np.zeros_like(self.residuals)
        for t in self.design.terms:
            out = out + self.effects[t]
        return out

    def save(self, directory) -> None:
        """One CSV per ER matrix, per-term coefficient CSVs, residuals, ledger JSON."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        for t in self.design.terms:
            write_feature_matrix(er_values(self, t), directory / f"er_{_fname(t)}.csv")
            a, b = self.design.term_spans[t]
            coef = FeatureMatrix(self.design.column_names[a:b], self.feature_ids,
                                 self.coefficients[t])
            write_feature_matrix(coef, directory / f"coef_{_fname(t)}.csv")
        write_feature_matrix(FeatureMatrix((INTERCEPT,), self.feature_ids, self.intercept[None, :]),
                             directory / "coef_intercept.csv")
        write_feature_matrix(FeatureMatrix(self.sample_ids, self.feature_ids, self.residuals),
                             directory / "residuals.csv")
        meta = {
            "ledger": self.dof.to_dict(),
            "terms": self.design.terms,
            "design_columns": list(self.design.column_names),
            "levels": {k: list(v) for k, v in self.design.levels.items()},
            "coding": self.design.coding,
            "er_mode": self.er_mode,
            "balanced": self.balanced,
            "files": {t: f"er_{_fname(t)}.csv" for t in self.design.terms},
            **self.metadata,
        }
        (directory / "ledger.json").write_text(json.dumps(meta, indent=1, sort_keys=True))


def _fname(term: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]", "_x_", term)


def _fixed_matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # accumulate over the (short) inner axis in a fixed order so each output
    # column depends only on its own input column
    out = np.zeros((a.shape[0], b.shape[1]))
    for i in range(a.shape[1]):
        out += np.multiply.outer(a[:, i], b[i])
    return out


def _column_means(y: np.ndarray) -> np.ndarray:
    # row-by-row accumulation: independent of memory layout and column count
    acc = np.zeros(y.shape[1])
    for row in y:
        acc += row
    return acc / y.shape[0]


def _rank(m: np.ndarray, ref: float | None = None) -> int:
    if m.size == 0:
        return 0
    s = np.linalg.svd(m, compute_uv=False)
    top = s[0] if ref is None else ref
    return int(np.sum(s > RANK_RTOL * top)) if top > 0 else 0


def _aliased_terms(dm: DesignMatrix) -> list:
    # add terms one by one; a term that does not raise the rank fully is
    # reported together with the earlier terms whose removal would free it
    ref = np.linalg.svd(dm.columns, compute_uv=False)[0]
    added = [INTERCEPT]
    out = []
    for t in dm.terms:
        cols = dm.term_columns(t)
        acc = np.hstack([dm.term_columns(u) for u in added])
        if _rank(np.hstack([acc, cols]), ref) < _rank(acc, ref) + cols.shape[1]:
            partners = []
            for u in added[1:]:
                rest = np.hstack([dm.term_columns(v) for v in added if v != u])
                if _rank(np.hstack([rest, cols]), ref) == _rank(rest, ref) + cols.shape[1]:
                    partners.append(u)
            out.append(f"{t} (with {', '.join(partners)})" if partners else t)
        added.append(t)
    return out


def fit_glm(x: FeatureMatrix, dm: DesignMatrix, er_mode: str = "auto") -> GemDecomposition:
    """Least-squares fit of every feature on the effect-coded design.

    Parameters
    ----------
    x : FeatureMatrix
        Samples x features response block.
    dm : DesignMatrix
        Output of :func:`encode_design` for the same samples.
    er_mode : {"auto", "direct", "orthogonalized"}
        How the per-term effect inside each ER matrix is formed.  "direct"
        uses the term's columns times its coefficients.  "orthogonalized"
        first projects the term's columns off every other term, so the ER
        matrix carries no trace of the omitted terms even when the design
        is unbalanced.  "auto" picks "direct" when the terms are already
        mutually orthogonal (balanced designs) and "orthogonalized"
        otherwise; the choice is recorded in ``er_mode``.
    """
    if er_mode not in ("auto", "direct", "orthogonalized"):
        raise DesignError(f"unknown er_mode {er_mode!r}")
    if tuple(x.sample_ids) != tuple(dm.sample_ids):
        raise InputError("feature matrix and design have different samples")
    n, k = dm.columns.shape
    if k > n:
        raise DesignError(f"{k} design columns for {n} samples")
    full_rank = _rank(dm.columns)
    if full_rank < k:
        raise DesignError("rank-deficient design; aliased term(s): "
                          + ", ".join(_aliased_terms(dm)))

    terms = dm.terms
    y = np.ascontiguousarray(x.values)
    y_mean = _column_means(y)
    yc = y - y_mean
    d = dm.columns[:, 1:]
    d_mean = d.mean(axis=0)
    dc = d - d_mean

    if dc.shape[1]:
        u, s, vt = np.linalg.svd(dc, full_matrices=False)
        beta = _fixed_matmul(vt.T / s, _fixed_matmul(u.T, yc))
    else:
        beta = np.zeros((0, y.shape[1]))
    intercept = y_mean - _fixed_matmul(d_mean[None, :], beta)[0]

    coefficients = {}
    effects = {}
    for t in terms:
        a, b = dm.term_spans[t]
        coefficients[t] = beta[a - 1:b - 1]
        effects[t] = _fixed_matmul(dc[:, a - 1:b - 1], coefficients[t])
    fitted = np.zeros_like(yc)
    for t in terms:
        fitted += effects[t]
    residuals = yc - fitted

    cross = 0.0
    for t1, t2 in itertools.combinations(terms, 2):
        a1, b1 = dm.term_spans[t1]
        a2, b2 = dm.term_spans[t2]
        cross = max(cross, float(np.abs(dc[:, a1 - 1:b1 - 1].T @ dc[:, a2 - 1:b2 - 1]).max()))
    balanced = cross <= 1e-12 * n
    mode = er_mode if er_mode != "auto" else ("direct" if balanced else "orthogonalized")

    er = {}
    for t in terms:
        if mode == "direct":
            eff = effects[t]
        else:
            a, b = dm.term_spans[t]
            own = dc[:, a - 1:b - 1]
            others = np.delete(dc, np.s_[a - 1:b - 1], axis=1)
            if others.shape[1]:
                q, _ = np.linalg.qr(others)
                own = own - q @ (q.T @ own)
            eff = _fixed_matmul(own, coefficients[t])
        er[t] = eff + residuals

    consumed = {INTERCEPT: 1}
    for t in terms:
        consumed[t] = _rank(dm.term_columns(t))
    ledger = DofLedger(n, consumed, n - full_rank)
    meta = {"er_mode_note": (
        "terms mutually orthogonal; ER effect = term columns x coefficients"
        if mode == "direct" else
        "each term's effect projected off all other terms before forming ER values")}
    return GemDecomposition(x.sample_ids, x.feature_ids, dm, intercept, coefficients,
                            effects, residuals, er, ledger, mode, balanced, meta)


def er_values(g: GemDecomposition, term: str) -> FeatureMatrix:
    """ER matrix of ``term`` (its effect plus the full-model residuals)."""
    if term == INTERCEPT:
        raise DesignError("the intercept has no ER values")
    if term not in g.er:
        # accept b:a for a:b
        if ":" in term:
            a, b = term.split(":", 1)
            if f"{b}:{a}" in g.er:
                term = f"{b}:{a}"
        if term not in g.er:
            raise DesignError(f"unknown term {term!r}; model terms are {list(g.er)}")
    return FeatureMatrix(g.sample_ids, g.feature_ids, g.er[term])


def _as_design_table(design, sample_ids):
    if isinstance(design, DesignTable):
        return design
    import pandas as pd
    if isinstance(design, pd.DataFrame):
        return DesignTable(tuple(sample_ids), {c: [str(v) for v in design[c]] for c in design.columns})
    if isinstance(design, dict):
        return DesignTable(tuple(sample_ids), {k: [str(v) for v in col] for k, col in design.items()})
    raise TypeError("design must be a DesignTable, DataFrame or dict of columns")


def _as_feature_matrix(X):
    if isinstance(X, FeatureMatrix):
        return X
    import pandas as pd
    if isinstance(X, pd.DataFrame):
        return FeatureMatrix.from_frame(X)
    X = np.asarray(X, dtype=float)
    return FeatureMatrix(tuple(f"s{i}" for i in range(X.shape[0])),
                         tuple(f"f{j}" for j in range(X.shape[1])), X)


class GEM(TransformerMixin, BaseEstimator):
    """Effect-plus-residual decomposition as a scikit-learn transformer.

    ``fit(X, design)`` fits the model; ``fit_transform(X, design)`` returns
    the ER values of ``term`` as a plain array.  Use :meth:`er_values` for
    the other terms.

    Parameters
    ----------
    formula : str
        Right-hand side of the model, e.g. ``"batch * disease"``.
    term : str, optional
        Term returned by ``fit_transform``; defaults to the last main factor.
    er_mode : {"auto", "direct", "orthogonalized"}
    """

    def __init__(self, formula="batch * disease", term=None, er_mode="auto"):
        self.formula = formula
        self.term = term
        self.er_mode = er_mode

    def fit(self, X, design=None):
        if design is None:
            raise TypeError("GEM.fit needs the design table as its second argument")
        fm = _as_feature_matrix(X)
        dt = _as_design_table(design, fm.sample_ids)
        if not isinstance(X, FeatureMatrix) and not isinstance(design, DesignTable):
            dt = DesignTable(fm.sample_ids, dt.factors)
        self.formula_ = ModelFormula.parse(self.formula)
        self.design_matrix_ = encode_design(dt, self.formula_)
        self.decomposition_ = fit_glm(fm, self.design_matrix_, er_mode=self.er_mode)
        self.dof_ = self.decomposition_.dof
        self.n_features_in_ = fm.n_features
        return self

    def _target(self):
        return self.term if self.term is not None else self.formula_.main_factors[-1]

    def er_values(self, term=None) -> np.ndarray:
        return np.array(er_values(self.decomposition_, term or self._target()).values)

    def transform(self, X=None):
        # ER values exist only for the samples the model was fitted on
        return self.er_values()

    def fit_transform(self, X, design=None, **fit_params):
        return self.fit(X, design).er_values()
