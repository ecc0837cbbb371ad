"""Plot-data emission: SVG score scatter, box-plot summaries, pair scatter."""

from __future__ import annotations

import json
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

from .tabular import DesignTable, FeatureMatrix, InputError

__all__ = ["svg_scatter", "five_number_summary", "boxplot_data", "pair_scatter", "write_json"]

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2",
           "#7f7f7f")


def write_json(obj, path) -> None:
    Path(path).write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


def svg_scatter(xs, ys, labels, title: str = "", xlabel: str = "", ylabel: str = "",
                size: int = 480) -> str:
    """Static scatter with one marker color per label level."""
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    labels = [str(v) for v in labels]
    levels = sorted(set(labels))
    pad = 48
    span_x = float(xs.max() - xs.min()) or 1.0
    span_y = float(ys.max() - ys.min()) or 1.0

    def px(v):
        return pad + (v - xs.min()) / span_x * (size - 2 * pad)

    def py(v):
        return size - pad - (v - ys.min()) / span_y * (size - 2 * pad)

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
           f'viewBox="0 0 {size} {size}">',
           f'<rect width="{size}" height="{size}" fill="white"/>',
           f'<text x="{size / 2:.1f}" y="20" text-anchor="middle" font-size="14">{escape(title)}</text>',
           f'<text x="{size / 2:.1f}" y="{size - 10}" text-anchor="middle" font-size="12">{escape(xlabel)}</text>',
           f'<text x="14" y="{size / 2:.1f}" text-anchor="middle" font-size="12" '
           f'transform="rotate(-90 14 {size / 2:.1f})">{escape(ylabel)}</text>',
           f'<rect x="{pad}" y="{pad}" width="{size - 2 * pad}" height="{size - 2 * pad}" '
           f'fill="none" stroke="#888"/>']
    for x, y, lab in zip(xs, ys, labels):
        color = PALETTE[levels.index(lab) % len(PALETTE)]
        out.append(f'<circle cx="{px(x):.2f}" cy="{py(y):.2f}" r="4" fill="{color}"/>')
    for k, lv in enumerate(levels):
        color = PALETTE[k % len(PALETTE)]
        out.append(f'<circle cx="{size - pad - 80}" cy="{pad + 12 + 16 * k}" r="4" fill="{color}"/>')
        out.append(f'<text x="{size - pad - 70}" y="{pad + 16 + 16 * k}" font-size="11">{escape(lv)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def five_number_summary(v) -> dict:
    """Quartiles with Tukey whiskers (1.5 IQR) and the points beyond them."""
    v = np.sort(np.asarray(v, dtype=float))
    if v.size == 0:
        raise InputError("empty group")
    q1, med, q3 = np.percentile(v, [25, 50, 75])
    iqr = q3 - q1
    lo_lim, hi_lim = q1 - 1.5 * iqr, q3 + 1.5 * iqr
    inside = v[(v >= lo_lim) & (v <= hi_lim)]
    return {
        "n": int(v.size),
        "min": float(v[0]),
        "whisker_low": float(inside.min()),
        "q1": float(q1),
        "median": float(med),
        "q3": float(q3),
        "whisker_high": float(inside.max()),
        "max": float(v[-1]),
        "outliers": [float(x) for x in v[(v < lo_lim) | (v > hi_lim)]],
    }


def _groups(design: DesignTable, by):
    keys = [tuple(design[f][i] for f in by) for i in range(design.n_samples)]
    return keys, sorted(set(keys))


def boxplot_data(x: FeatureMatrix, design: DesignTable, features, by=("cohort", "disease")) -> dict:
    """Per-feature box-plot statistics for every combination of ``by`` levels."""
    design.check_aligned(x)
    by = [f for f in by if f in design]
    if not by:
        raise InputError("no grouping factor available")
    index = {f: j for j, f in enumerate(x.feature_ids)}
    unknown = [f for f in features if f not in index]
    if unknown:
        raise InputError(f"unknown feature(s): {', '.join(unknown)}")
    keys, groups = _groups(design, by)
    out = {"group_by": list(by), "features": {}}
    for f in features:
        col = x.values[:, index[f]]
        out["features"][f] = [
            {"group": dict(zip(by, g)),
             **five_number_summary([col[i] for i, k in enumerate(keys) if k == g])}
            for g in groups
        ]
    return out


def pair_scatter(x: FeatureMatrix, design: DesignTable, pair, tags=("cohort", "disease")) -> dict:
    """One point per sample for a feature pair, tagged with design levels."""
    a, b = pair
    index = {f: j for j, f in enumerate(x.feature_ids)}
    for f in pair:
        if f not in index:
            raise InputError(f"unknown feature {f!r}")
    tags = [t for t in tags if t in design]
    pts = []
    for i, sid in enumerate(x.sample_ids):
        pts.append({"sample": sid, "x": float(x.values[i, index[a]]),
                    "y": float(x.values[i, index[b]]),
                    **{t: design[t][i] for t in tags}})
    return {"x_feature": a, "y_feature": b, "points": pts}
