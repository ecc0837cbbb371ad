"""Feature matrices, design tables and the cohort-fusion recipe.

Everything here is immutable after construction: ``values`` arrays are
flagged read-only so loaded objects can be shared freely.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd

__all__ = [
    "FeatureMatrix",
    "DesignTable",
    "StandardizationRecord",
    "InputError",
    "detect_delimiter",
    "load_feature_matrix",
    "write_feature_matrix",
    "load_design_table",
    "write_design_table",
    "standardize",
    "merge_cohorts",
]


class InputError(ValueError):
    """Malformed or inconsistent input data."""


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float, copy=True)
    a.setflags(write=False)
    return a


def _check_unique(ids: Sequence[str], what: str) -> None:
    seen = set()
    for i in ids:
        if i in seen:
            raise InputError(f"duplicate {what} identifier {i!r}")
        seen.add(i)


@dataclass(frozen=True, eq=False)
class FeatureMatrix:
    """Samples x features table of real values with row/column identifiers."""

    sample_ids: tuple
    feature_ids: tuple
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "sample_ids", tuple(str(s) for s in self.sample_ids))
        object.__setattr__(self, "feature_ids", tuple(str(f) for f in self.feature_ids))
        values = _readonly(self.values)
        if values.ndim != 2:
            raise InputError("values must be a 2-D matrix")
        if values.shape != (len(self.sample_ids), len(self.feature_ids)):
            raise InputError(
                f"values shape {values.shape} does not match "
                f"{len(self.sample_ids)} samples x {len(self.feature_ids)} features"
            )
        _check_unique(self.sample_ids, "sample")
        _check_unique(self.feature_ids, "feature")
        if not np.all(np.isfinite(values)):
            r, c = np.argwhere(~np.isfinite(values))[0]
            raise InputError(
                f"non-finite value at sample {self.sample_ids[r]!r}, "
                f"feature {self.feature_ids[c]!r}"
            )
        object.__setattr__(self, "values", values)

    @property
    def shape(self):
        return self.values.shape

    @property
    def n_samples(self) -> int:
        return len(self.sample_ids)

    @property
    def n_features(self) -> int:
        return len(self.feature_ids)

    def with_values(self, values: np.ndarray) -> "FeatureMatrix":
        return FeatureMatrix(self.sample_ids, self.feature_ids, values)

    def select_features(self, feature_ids: Sequence[str]) -> "FeatureMatrix":
        index = {f: j for j, f in enumerate(self.feature_ids)}
        missing = [f for f in feature_ids if f not in index]
        if missing:
            raise InputError(f"unknown feature(s): {', '.join(missing[:5])}")
        cols = [index[f] for f in feature_ids]
        return FeatureMatrix(self.sample_ids, tuple(feature_ids), self.values[:, cols])

    def select_samples(self, sample_ids: Sequence[str]) -> "FeatureMatrix":
        index = {s: i for i, s in enumerate(self.sample_ids)}
        missing = [s for s in sample_ids if s not in index]
        if missing:
            raise InputError(f"unknown sample(s): {', '.join(missing[:5])}")
        rows = [index[s] for s in sample_ids]
        return FeatureMatrix(tuple(sample_ids), self.feature_ids, self.values[rows])

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            np.array(self.values),
            index=pd.Index(self.sample_ids, name="id"),
            columns=list(self.feature_ids),
        )

    @classmethod
    def from_frame(cls, df: pd.DataFrame) -> "FeatureMatrix":
        return cls(tuple(df.index), tuple(df.columns), df.to_numpy(dtype=float))


@dataclass(frozen=True, eq=False)
class DesignTable:
    """Per-sample categorical factors.

    ``warnings`` collects non-fatal problems found at load time (for example
    a factor with a single observed level); they become errors only when
    that factor is used in a model.
    """

    sample_ids: tuple
    factors: dict
    warnings: tuple = field(default=())

    def __post_init__(self):
        sids = tuple(str(s) for s in self.sample_ids)
        object.__setattr__(self, "sample_ids", sids)
        _check_unique(sids, "sample")
        factors = {}
        for name, col in self.factors.items():
            col = tuple(col)
            if len(col) != len(sids):
                raise InputError(
                    f"factor {name!r} has {len(col)} entries for {len(sids)} samples"
                )
            for sid, v in zip(sids, col):
                if v is None or (isinstance(v, float) and np.isnan(v)) or str(v) == "":
                    raise InputError(f"missing level for factor {name!r} at sample {sid!r}")
            factors[str(name)] = tuple(str(v) for v in col)
        object.__setattr__(self, "factors", factors)
        found = list(self.warnings)
        for name, col in factors.items():
            if len(set(col)) < 2:
                msg = f"factor {name!r} has a single level {col[0]!r}" if col else (
                    f"factor {name!r} is empty")
                if msg not in found:
                    found.append(msg)
        object.__setattr__(self, "warnings", tuple(found))

    @property
    def n_samples(self) -> int:
        return len(self.sample_ids)

    def levels(self, factor: str) -> list:
        """Distinct levels of ``factor`` in sorted order."""
        return sorted(set(self[factor]))

    def __getitem__(self, factor: str) -> tuple:
        try:
            return self.factors[factor]
        except KeyError:
            raise InputError(f"unknown factor {factor!r}") from None

    def __contains__(self, factor: str) -> bool:
        return factor in self.factors

    def select_samples(self, sample_ids: Sequence[str]) -> "DesignTable":
        index = {s: i for i, s in enumerate(self.sample_ids)}
        rows = [index[s] for s in sample_ids]
        return DesignTable(
            tuple(sample_ids), {k: [v[i] for i in rows] for k, v in self.factors.items()}
        )

    def check_aligned(self, m: FeatureMatrix) -> None:
        if tuple(m.sample_ids) != tuple(self.sample_ids):
            raise InputError("design table and feature matrix sample ids differ")

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(dict(self.factors), index=pd.Index(self.sample_ids, name="id"))


@dataclass(frozen=True, eq=False)
class StandardizationRecord:
    feature_ids: tuple
    center: np.ndarray
    scale: np.ndarray
    mode: str
    dropped: tuple = ()

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "feature_ids": list(self.feature_ids),
            "center": [float(v) for v in self.center],
            "scale": [float(v) for v in self.scale],
            "dropped": list(self.dropped),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "StandardizationRecord":
        return cls(
            tuple(d["feature_ids"]),
            np.asarray(d["center"], dtype=float),
            np.asarray(d["scale"], dtype=float),
            d["mode"],
            tuple(d.get("dropped", ())),
        )

    def save(self, path) -> None:
        # repr-exact floats via json's float formatting
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))

    @classmethod
    def load(cls, path) -> "StandardizationRecord":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def apply(self, m: FeatureMatrix) -> FeatureMatrix:
        sub = m.select_features(self.feature_ids)
        return sub.with_values((sub.values - self.center) / self.scale)


def detect_delimiter(path, delimiter: str | None = None) -> str:
    if delimiter is not None:
        return {"comma": ",", "tab": "\t", "\\t": "\t"}.get(delimiter, delimiter)
    suffix = Path(path).suffix.lower()
    if suffix == ".csv":
        return ","
    if suffix in (".tsv", ".txt", ".tab"):
        return "\t"
    raise InputError(f"cannot infer delimiter from extension of {str(path)!r}")


def _read_raw(path, delimiter):
    sep = detect_delimiter(path, delimiter)
    path = Path(path)
    if not path.exists():
        raise InputError(f"no such file: {str(path)!r}")
    lines = [ln for ln in path.read_text().splitlines() if ln.strip() != ""]
    if len(lines) < 2:
        raise InputError(f"{str(path)!r} is empty (needs a header and at least one row)")
    rows = [ln.split(sep) for ln in lines]
    width = len(rows[0])
    for k, r in enumerate(rows[1:], start=2):
        if len(r) != width:
            raise InputError(f"ragged row at line {k} of {str(path)!r}: "
                             f"{len(r)} cells, header has {width}")
    if width < 2:
        raise InputError(f"{str(path)!r} has no data columns")
    header = [c.strip() for c in rows[0][1:]]
    row_ids = [r[0].strip() for r in rows[1:]]
    cells = [[c.strip() for c in r[1:]] for r in rows[1:]]
    return header, row_ids, cells


def load_feature_matrix(path, orientation: str = "samples-as-rows",
                        delimiter: str | None = None) -> FeatureMatrix:
    """Read a delimited numeric table.

    The first row holds column identifiers, the first column row identifiers.
    With ``orientation="features-as-rows"`` the table is transposed so the
    result is always samples x features.
    """
    if orientation not in ("samples-as-rows", "features-as-rows"):
        raise InputError(f"unknown orientation {orientation!r}")
    header, row_ids, cells = _read_raw(path, delimiter)
    values = np.empty((len(row_ids), len(header)))
    for i, row in enumerate(cells):
        for j, c in enumerate(row):
            try:
                v = float(c)
            except ValueError:
                v = np.nan
            if not np.isfinite(v):
                if orientation == "samples-as-rows":
                    s, f = row_ids[i], header[j]
                else:
                    s, f = header[j], row_ids[i]
                raise InputError(
                    f"non-numeric cell {c!r} at sample {s!r}, feature {f!r}")
            values[i, j] = v
    if orientation == "features-as-rows":
        return FeatureMatrix(tuple(header), tuple(row_ids), values.T)
    return FeatureMatrix(tuple(row_ids), tuple(header), values)


def write_feature_matrix(m: FeatureMatrix, path, delimiter: str | None = None) -> None:
    sep = detect_delimiter(path, delimiter)
    out = [sep.join(["id", *m.feature_ids])]
    for sid, row in zip(m.sample_ids, m.values):
        out.append(sep.join([sid, *(repr(float(v)) for v in row)]))
    Path(path).write_text("\n".join(out) + "\n")


def load_design_table(path, delimiter: str | None = None) -> DesignTable:
    header, row_ids, cells = _read_raw(path, delimiter)
    for i, row in enumerate(cells):
        for j, c in enumerate(row):
            if c == "":
                raise InputError(
                    f"missing level for factor {header[j]!r} at sample {row_ids[i]!r}")
    factors = {name: [row[j] for row in cells] for j, name in enumerate(header)}
    d = DesignTable(tuple(row_ids), factors)
    for w in d.warnings:
        warnings.warn(w, stacklevel=2)
    return d


def write_design_table(d: DesignTable, path, delimiter: str | None = None) -> None:
    sep = detect_delimiter(path, delimiter)
    names = list(d.factors)
    out = [sep.join(["id", *names])]
    for i, sid in enumerate(d.sample_ids):
        out.append(sep.join([sid, *(d.factors[n][i] for n in names)]))
    Path(path).write_text("\n".join(out) + "\n")


def standardize(m: FeatureMatrix, mode: str = "autoscale"):
    """Center (and for ``mode="autoscale"`` scale to unit sd, divisor n-1).

    Zero-variance features are dropped under autoscale and listed in the
    returned record.
    """
    if mode not in ("center", "autoscale"):
        raise InputError(f"unknown standardization mode {mode!r}")
    x = m.values
    center = x.mean(axis=0)
    xc = x - center
    if mode == "center":
        rec = StandardizationRecord(m.feature_ids, center, np.ones(m.n_features), mode)
        return m.with_values(xc), rec
    if m.n_samples < 2:
        raise InputError("autoscale needs at least two samples")
    scale = xc.std(axis=0, ddof=1)
    # relative to the column magnitude so rounding noise in constants counts as zero
    ref = np.maximum(np.abs(center), 1.0)
    keep = scale > 1e-12 * ref
    if not keep.any():
        raise InputError("all features have zero variance")
    dropped = tuple(f for f, k in zip(m.feature_ids, keep) if not k)
    fids = tuple(f for f, k in zip(m.feature_ids, keep) if k)
    rec = StandardizationRecord(fids, center[keep], scale[keep], mode, dropped)
    out = FeatureMatrix(m.sample_ids, fids, xc[:, keep] / scale[keep])
    return out, rec


def merge_cohorts(cohorts, cohort_names: Sequence[str], prescale: bool = True):
    """Fuse several cohorts on their shared features.

    Each cohort is restricted to the shared features, autoscaled on its own
    (skipped when ``prescale`` is False), the cohorts are stacked by rows and
    the stacked matrix is autoscaled once more.  The returned design gains a
    ``cohort`` factor.  Colliding sample ids are prefixed with the cohort
    name.

    Returns
    -------
    merged : FeatureMatrix
    design : DesignTable
    info : dict
        ``renamed`` sample ids and ``dropped`` zero-variance features.
    """
    cohorts = list(cohorts)
    if len(cohorts) < 2:
        raise InputError("merge_cohorts needs at least two cohorts")
    if len(cohort_names) != len(cohorts):
        raise InputError("one name per cohort required")
    if len(set(cohort_names)) != len(cohort_names):
        raise InputError("cohort names must be distinct")
    for (m, d), name in zip(cohorts, cohort_names):
        d.check_aligned(m)

    shared = set(cohorts[0][0].feature_ids)
    for m, _ in cohorts[1:]:
        shared &= set(m.feature_ids)
    if not shared:
        raise InputError("cohorts share no features")
    # keep the first cohort's column order
    features = [f for f in cohorts[0][0].feature_ids if f in shared]

    factor_names = [f for f in cohorts[0][1].factors if all(f in d for _, d in cohorts)]
    if "cohort" in factor_names:
        factor_names.remove("cohort")
    if not factor_names:
        raise InputError("cohort design tables share no factor")

    dropped: list = []
    blocks = []
    for m, _ in cohorts:
        sub = m.select_features(features)
        if prescale:
            sub, rec = standardize(sub, "autoscale")
            dropped.extend(rec.dropped)
        blocks.append(sub)
    if dropped:
        keep = [f for f in features if f not in set(dropped)]
        if not keep:
            raise InputError("no shared feature has nonzero variance in every cohort")
        blocks = [b.select_features(keep) for b in blocks]
        features = keep

    counts: dict = {}
    for m, _ in cohorts:
        for s in m.sample_ids:
            counts[s] = counts.get(s, 0) + 1
    renamed = {}
    sample_ids: list = []
    levels: dict = {f: [] for f in factor_names}
    cohort_col: list = []
    for (m, d), b, name in zip(cohorts, blocks, cohort_names):
        for i, s in enumerate(m.sample_ids):
            sid = f"{name}:{s}" if counts[s] > 1 else s
            if sid != s:
                renamed[s] = renamed.get(s, []) + [sid]
            sample_ids.append(sid)
            cohort_col.append(name)
            for f in factor_names:
                levels[f].append(d.factors[f][i])

    stacked = FeatureMatrix(tuple(sample_ids), tuple(features),
                            np.vstack([b.values for b in blocks]))
    merged, rec = standardize(stacked, "autoscale")
    dropped.extend(rec.dropped)
    design = DesignTable(tuple(sample_ids), {"cohort": cohort_col, **levels})
    return merged, design, {"renamed": renamed, "dropped": sorted(set(dropped))}
