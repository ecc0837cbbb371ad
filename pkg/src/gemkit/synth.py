"""Synthetic multi-cohort data with planted effects, and independent oracles.

Every additive term uses constant-magnitude, random-sign per-feature
effects, so each feature carries the same variance budget and the budget
has a closed form (see :func:`variance_budget`).
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .design import DesignMatrix
from .tabular import DesignTable, FeatureMatrix, InputError, write_design_table, write_feature_matrix

__all__ = [
    "SynthSpec",
    "GroundTruth",
    "Recovery",
    "generate",
    "variance_budget",
    "batch_shift_for_fraction",
    "oracle_ols",
    "evaluate_recovery",
    "write_dataset",
]


@dataclass(frozen=True)
class SynthSpec:
    """Generator settings.

    Effect sizes are differences between level means in units of
    ``noise_sd``.  ``cohort_sizes`` holds one ``(reference, other)`` class
    count pair per cohort; the default mirrors two cohorts of 7/8 and 13/14.
    ``nuisance_sd`` is the loading magnitude of one shared latent sample
    factor that touches every feature (random sign per feature), which
    gives the features a common correlated component unrelated to the
    design.
    """

    cohort_sizes: tuple = ((7, 8), (13, 14))
    n_features: int = 1000
    n_informative: int = 50
    effect_size: float = 1.0
    batch_cohorts: tuple = (1,)
    batch_shift: float = 0.0
    cohort_shift: float = 0.0
    interaction_size: float = 0.0
    n_interaction: int = 0
    nuisance_sd: float = 0.0
    noise_sd: float = 1.0
    baseline_sd: float = 1.0
    class_levels: tuple = ("nonD", "T2D")
    seed: int = 0

    def __post_init__(self):
        sizes = tuple(tuple(int(v) for v in c) for c in self.cohort_sizes)
        object.__setattr__(self, "cohort_sizes", sizes)
        object.__setattr__(self, "batch_cohorts", tuple(int(c) for c in self.batch_cohorts))
        object.__setattr__(self, "class_levels", tuple(self.class_levels))
        if not sizes or any(len(c) != 2 or min(c) < 0 for c in sizes):
            raise InputError("cohort_sizes must be (reference, other) count pairs")
        if not 0 <= self.n_informative <= self.n_features:
            raise InputError("n_informative must lie in 0..n_features")
        if not 0 <= self.n_interaction <= self.n_features:
            raise InputError("n_interaction must lie in 0..n_features")
        for name in ("effect_size", "batch_shift", "cohort_shift", "interaction_size",
                     "nuisance_sd", "noise_sd", "baseline_sd"):
            if getattr(self, name) < 0:
                raise InputError(f"{name} must be >= 0")
        if any(c < 0 or c >= len(sizes) for c in self.batch_cohorts):
            raise InputError("batch_cohorts index out of range")
        if len(self.class_levels) != 2:
            raise InputError("two class levels required")

    @property
    def n_samples(self) -> int:
        return sum(sum(c) for c in self.cohort_sizes)

    def to_dict(self) -> dict:
        d = asdict(self)
        return {k: (list(map(list, v)) if k == "cohort_sizes" else
                    list(v) if isinstance(v, tuple) else v) for k, v in d.items()}


@dataclass(eq=False)
class GroundTruth:
    informative: tuple
    signs: dict
    interaction: tuple
    variance_fractions: dict
    spec: SynthSpec
    nuisance_scores: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def to_dict(self) -> dict:
        return {"informative": list(self.informative), "signs": dict(self.signs),
                "interaction": list(self.interaction),
                "variance_fractions": dict(self.variance_fractions),
                "spec": self.spec.to_dict()}


def _patterns(spec: SynthSpec):
    """Per-sample design patterns (level codes +-1/2) and labels."""
    cohort, batch, disease, ids = [], [], [], []
    n_c = len(spec.cohort_sizes)
    for c, (n0, n1) in enumerate(spec.cohort_sizes):
        for cls, cnt in ((0, n0), (1, n1)):
            for i in range(cnt):
                ids.append(f"c{c + 1}_{spec.class_levels[cls]}_{i + 1:03d}")
                cohort.append(c)
                disease.append(cls)
                batch.append(1 + (i % 2) if c in spec.batch_cohorts else 1)
    cohort = np.array(cohort)
    batch = np.array(batch)
    disease = np.array(disease)
    in_batch = np.isin(cohort, spec.batch_cohorts)
    pat = {
        "disease": disease - 0.5,
        "batch": np.where(in_batch, batch - 1.5, 0.0),
        "cohort": (0.5 - cohort) if n_c == 2 else np.zeros(len(cohort)),
    }
    pat["interaction"] = 2 * pat["cohort"] * pat["disease"] if n_c == 2 else np.zeros(len(cohort))
    return ids, cohort, batch, disease, pat


def _sample_var(v):
    return float(np.var(v, ddof=1)) if len(v) > 1 else 0.0


def variance_budget(spec: SynthSpec) -> dict:
    """Expected share of the total (ddof=1) variance held by each term."""
    _, cohort, _, _, pat = _patterns(spec)
    p = spec.n_features
    parts = {
        "batch": spec.batch_shift ** 2 * _sample_var(pat["batch"]) * p,
        "disease": spec.effect_size ** 2 * _sample_var(pat["disease"]) * spec.n_informative,
        "interaction": spec.interaction_size ** 2 * _sample_var(pat["interaction"]) * spec.n_interaction,
        "nuisance": spec.nuisance_sd ** 2 * p,
        "noise": spec.noise_sd ** 2 * p,
    }
    n_c = len(spec.cohort_sizes)
    if n_c == 2:
        parts["cohort"] = spec.cohort_shift ** 2 * _sample_var(pat["cohort"]) * p
    else:
        # independent random-sign offsets of size cohort_shift/2 per cohort
        n = len(cohort)
        counts = np.bincount(cohort, minlength=n_c)
        spread = (n - np.sum(counts ** 2) / n) / (n - 1) if n > 1 else 0.0
        parts["cohort"] = (spec.cohort_shift / 2) ** 2 * spread * p
    total = sum(parts.values())
    scale = spec.noise_sd ** 2 * p if total == 0 else total
    return {k: v / scale for k, v in parts.items()}


def batch_shift_for_fraction(spec: SynthSpec, fraction: float) -> float:
    """Batch shift that makes the batch term hold ``fraction`` of the variance."""
    if not 0 < fraction < 1:
        raise InputError("fraction must lie in (0, 1)")
    _, _, _, _, pat = _patterns(spec)
    unit = _sample_var(pat["batch"]) * spec.n_features
    if unit == 0:
        raise InputError("no batch contrast in this design")
    b = variance_budget(replace(spec, batch_shift=0.0))
    rest_total = spec.noise_sd ** 2 * spec.n_features / b["noise"] if b["noise"] > 0 else 0.0
    return float(np.sqrt(fraction * rest_total / ((1 - fraction) * unit)))


def generate(spec: SynthSpec):
    """Draw one dataset.

    Returns
    -------
    x : FeatureMatrix
    design : DesignTable
        Factors ``cohort``, ``batch`` and ``disease``.
    truth : GroundTruth
    """
    rng = np.random.default_rng(spec.seed)
    ids, cohort, batch, disease, pat = _patterns(spec)
    n, p = len(ids), spec.n_features
    if n < 2:
        raise InputError("at least two samples required")
    feature_ids = tuple(f"g{j + 1:04d}" for j in range(p))

    def signs():
        return rng.choice(np.array([-1.0, 1.0]), size=p)

    baseline = spec.baseline_sd * rng.standard_normal(p)
    x = np.tile(baseline, (n, 1))
    x += np.outer(pat["batch"], spec.batch_shift * signs())
    n_c = len(spec.cohort_sizes)
    if n_c == 2:
        x += np.outer(pat["cohort"], spec.cohort_shift * signs())
    else:
        offsets = (spec.cohort_shift / 2) * np.vstack([signs() for _ in range(n_c)])
        x += offsets[cohort]
    informative = np.sort(rng.permutation(p)[:spec.n_informative])
    inf_signs = signs()[:spec.n_informative]
    x[:, informative] += np.outer(pat["disease"], spec.effect_size * inf_signs)
    inter = np.sort(rng.permutation(p)[:spec.n_interaction])
    x[:, inter] += np.outer(pat["interaction"], spec.interaction_size * signs()[:spec.n_interaction])
    z = rng.standard_normal(n)
    x += np.outer(z, spec.nuisance_sd * signs())
    x += spec.noise_sd * rng.standard_normal((n, p))

    design = DesignTable(tuple(ids), {
        "cohort": [f"cohort{c + 1}" for c in cohort],
        "batch": [f"batch{b}" for b in batch],
        "disease": [spec.class_levels[d] for d in disease],
    })
    truth = GroundTruth(
        tuple(feature_ids[j] for j in informative),
        {feature_ids[j]: int(s) for j, s in zip(informative, inf_signs)},
        tuple(feature_ids[j] for j in inter),
        variance_budget(spec), spec, z,
    )
    return FeatureMatrix(tuple(ids), feature_ids, x), design, truth


def oracle_ols(x, design) -> np.ndarray:
    """Least-squares coefficients via the normal equations.

    Deliberately shares no code with :func:`gemkit.design.fit_glm`.
    """
    d = np.asarray(design.columns if isinstance(design, DesignMatrix) else design, dtype=float)
    y = np.asarray(x.values if isinstance(x, FeatureMatrix) else x, dtype=float)
    if np.linalg.matrix_rank(d) < d.shape[1]:
        raise InputError("design is rank deficient")
    return np.linalg.solve(d.T @ d, d.T @ y)


@dataclass
class Recovery:
    precision: float
    recall: float
    exceptions: list
    n_selected: int
    precision_defined: bool = True

    def to_dict(self):
        return asdict(self)


def evaluate_recovery(selected, truth) -> Recovery:
    """Precision/recall of ``selected`` against the informative features.

    With nothing selected precision is reported as 1 and flagged undefined.
    """
    informative = set(truth.informative if isinstance(truth, GroundTruth) else truth)
    sel = list(dict.fromkeys(selected))
    hits = [s for s in sel if s in informative]
    exceptions = [s for s in sel if s not in informative]
    recall = len(hits) / len(informative) if informative else 1.0
    if not sel:
        return Recovery(1.0, recall, [], 0, False)
    return Recovery(len(hits) / len(sel), recall, exceptions, len(sel))


def write_dataset(directory, x: FeatureMatrix, design: DesignTable, truth: GroundTruth,
                  delimiter: str | None = None) -> dict:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    ext = ".tsv" if delimiter in ("\t", "tab") else ".csv"
    paths = {"features": directory / f"features{ext}", "design": directory / f"design{ext}",
             "truth": directory / "truth.json"}
    write_feature_matrix(x, paths["features"], delimiter)
    write_design_table(design, paths["design"], delimiter)
    paths["truth"].write_text(json.dumps(truth.to_dict(), indent=1, sort_keys=True))
    return paths
