"""Command-line entry point.

Exit codes: 0 success, 1 analysis ran but the result is degenerate (for
example no informative elastic-net support), 2 usage or input error.
"""

from __future__ import annotations

import argparse
import json
import sys
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .design import DesignError, ModelFormula, encode_design, er_values, fit_glm
from .enet import ConvergenceError
from .pca import fit_pca, grouping_separation
from .pipeline import FUSION_ORDERS, analyse, fuse_cohorts, gem_step
from .pls import SegmentationError, predict
from .report import boxplot_data, pair_scatter, svg_scatter, write_json
from .synth import SynthSpec, batch_shift_for_fraction, generate, oracle_ols, write_dataset
from .tabular import (InputError, load_design_table, load_feature_matrix,
                      write_design_table, write_feature_matrix)
from .univariate import pvalue_histogram

EXIT_OK, EXIT_DEGENERATE, EXIT_USAGE = 0, 1, 2
SEPARATION_FLAG = 0.3


class UsageError(Exception):
    pass


def _global(p):
    g = p.add_argument_group("global")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", default="gem_out", help="output directory")
    g.add_argument("--delimiter", default=None, help="override delimiter detection (comma, tab)")
    g.add_argument("--formula", default=None)
    g.add_argument("--term", default=None)


def _inputs(p, design_required=True):
    p.add_argument("--features", required=True, help="feature matrix (CSV/TSV)")
    p.add_argument("--design", required=design_required, help="design table (CSV/TSV)")
    p.add_argument("--orientation", default="samples-as-rows",
                   choices=["samples-as-rows", "features-as-rows"])


def _step2_opts(p):
    p.add_argument("--levels", default=None, help="reference,other class levels")
    p.add_argument("--dof-consumed", type=int, default=None,
                   help="degrees of freedom spent by earlier GEM steps "
                        "(default: read from the input's .json sidecar, else 0)")
    p.add_argument("--segments", default="loo", choices=["loo", "random"])
    p.add_argument("--n-segments", type=int, default=10)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gemkit", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic multi-cohort dataset")
    _global(p)
    p.add_argument("--cohort-sizes", nargs="+", default=["7:8", "13:14"],
                   help="reference:other class counts per cohort")
    p.add_argument("--n-features", type=int, default=1000)
    p.add_argument("--n-informative", type=int, default=50)
    p.add_argument("--effect-size", type=float, default=1.0)
    p.add_argument("--batch-cohorts", type=int, nargs="*", default=[1])
    p.add_argument("--batch-shift", type=float, default=0.0)
    p.add_argument("--batch-fraction", type=float, default=None,
                   help="set the batch shift so the batch term holds this variance share")
    p.add_argument("--cohort-shift", type=float, default=0.0)
    p.add_argument("--interaction-size", type=float, default=0.0)
    p.add_argument("--n-interaction", type=int, default=0)
    p.add_argument("--nuisance-sd", type=float, default=0.0)
    p.add_argument("--noise-sd", type=float, default=1.0)

    p = sub.add_parser("explore", help="PCA pre-analysis (scores, loadings, SVG)")
    _global(p)
    _inputs(p)
    p.add_argument("--components", type=int, default=5)
    p.add_argument("--scaling", default="autoscale", choices=["autoscale", "center"])
    p.add_argument("--color-by", default=None)
    p.add_argument("--subset", default=None, help="factor=level to restrict samples")

    p = sub.add_parser("gem", help="GEM step 1: GLM decomposition and ER values")
    _global(p)
    _inputs(p)
    p.add_argument("--er", action="store_true", help="also write ER values of --term as a matrix")
    p.add_argument("--er-mode", default="auto", choices=["auto", "direct", "orthogonalized"])
    p.add_argument("--verify", action="store_true", help="check reconstruction and orthogonality")
    p.add_argument("--subset", default=None, help="factor=level to restrict samples")

    p = sub.add_parser("fuse", help="batch-correct cohorts and fuse them")
    _global(p)
    _inputs(p)
    p.add_argument("--cohort-factor", default="cohort")
    p.add_argument("--batch-factor", default="batch")
    p.add_argument("--fusion-order", default=FUSION_ORDERS[0], choices=FUSION_ORDERS)

    for name, helptext in (("pls", "PLS-DA with jackknife selection"),
                           ("enet", "elastic net tuned for minimal support"),
                           ("anova", "per-feature ANOVA with p-value adjustment")):
        p = sub.add_parser(name, help=helptext)
        _global(p)
        _inputs(p)
        _step2_opts(p)
        if name == "pls":
            p.add_argument("--a-max", type=int, default=5)
            p.add_argument("--rejection-limit", type=float, default=0.05)
        if name == "enet":
            p.add_argument("--alpha", type=float, default=0.5)
            p.add_argument("--n-lambda", type=int, default=50)
            p.add_argument("--ratio", type=float, default=1e-2)
            p.add_argument("--tolerance", type=float, default=0.02)
        if name == "anova":
            p.add_argument("--n-sim", type=int, default=1000)

    p = sub.add_parser("boxplot", help="box-plot and pair-scatter data")
    _global(p)
    _inputs(p)
    p.add_argument("--ids", required=True, help="comma-separated feature ids")
    p.add_argument("--pair", default=None, help="two comma-separated feature ids")
    p.add_argument("--group-by", default="cohort,disease")

    p = sub.add_parser("verify", help="check GLM fit against an independent oracle")
    _global(p)
    _inputs(p)

    p = sub.add_parser("pipeline", help="explore, fuse, gem, pls, enet and anova in one go")
    _global(p)
    _inputs(p)
    p.add_argument("--cohort-factor", default="cohort")
    p.add_argument("--batch-factor", default="batch")
    p.add_argument("--fusion-order", default=FUSION_ORDERS[0], choices=FUSION_ORDERS)
    p.add_argument("--n-sim", type=int, default=1000)
    p.add_argument("--a-max", type=int, default=5)
    p.add_argument("--alpha", type=float, default=0.5)
    p.add_argument("--levels", default=None)
    return parser


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load(args, design=True):
    fm = load_feature_matrix(args.features, args.orientation, args.delimiter)
    if not design:
        return fm, None
    if not Path(args.design).exists():
        raise UsageError(f"design file not found: {args.design}")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        dt = load_design_table(args.design, args.delimiter)
    if tuple(dt.sample_ids) != tuple(fm.sample_ids):
        order = list(fm.sample_ids)
        if set(order) != set(dt.sample_ids):
            raise InputError("design and feature matrix list different samples")
        dt = dt.select_samples(order)
    return fm, dt


def _subset(fm, dt, spec):
    if not spec:
        return fm, dt
    factor, _, level = spec.partition("=")
    sids = [s for s, v in zip(dt.sample_ids, dt[factor]) if v == level]
    if not sids:
        raise InputError(f"no samples with {factor}={level}")
    return fm.select_samples(sids), dt.select_samples(sids)


def _sidecar(path) -> dict:
    side = Path(str(path) + ".json")
    return json.loads(side.read_text()) if side.exists() else {}


def _dof(args) -> int:
    if args.dof_consumed is not None:
        return args.dof_consumed
    return int(_sidecar(args.features).get("dof_consumed", 0))


def _levels(args):
    return tuple(args.levels.split(",")) if args.levels else None


def _frame_csv(df, path):
    df.to_csv(path, index=False, float_format="%.17g", lineterminator="\n")


def cmd_synth(args) -> int:
    sizes = tuple(tuple(int(v) for v in s.split(":")) for s in args.cohort_sizes)
    spec = SynthSpec(cohort_sizes=sizes, n_features=args.n_features,
                     n_informative=args.n_informative, effect_size=args.effect_size,
                     batch_cohorts=tuple(args.batch_cohorts), batch_shift=args.batch_shift,
                     cohort_shift=args.cohort_shift, interaction_size=args.interaction_size,
                     n_interaction=args.n_interaction, nuisance_sd=args.nuisance_sd,
                     noise_sd=args.noise_sd, seed=args.seed)
    if args.batch_fraction is not None:
        from dataclasses import replace
        spec = replace(spec, batch_shift=batch_shift_for_fraction(spec, args.batch_fraction))
    x, d, truth = generate(spec)
    paths = write_dataset(_out(args), x, d, truth, args.delimiter)
    print(f"wrote {x.n_samples} samples x {x.n_features} features to {paths['features']}")
    return EXIT_OK


def _explore(fm, dt, out, k, scaling, color_by, prefix=""):
    k = min(k, fm.n_samples - 1, fm.n_features)
    model = fit_pca(fm, k, scaling)
    write_feature_matrix(type(fm)(model.sample_ids, [f"PC{i + 1}" for i in range(k)], model.scores),
                         out / f"{prefix}pca_scores.csv")
    write_feature_matrix(type(fm)(model.feature_ids, [f"PC{i + 1}" for i in range(k)], model.loadings),
                         out / f"{prefix}pca_loadings.csv")
    (out / f"{prefix}pca_explained_variance.csv").write_text(
        "component,explained_variance\n"
        + "".join(f"PC{i + 1},{v!r}\n" for i, v in enumerate(model.explained_variance)))
    seps = {}
    for fac in dt.factors:
        if len(set(dt[fac])) >= 2:
            seps[fac] = grouping_separation(model, dt[fac], 0).to_dict()
    flagged = sorted((f for f, s in seps.items() if s["ratio"] > SEPARATION_FLAG),
                     key=lambda f: -seps[f]["ratio"])
    dominant = flagged[0] if flagged else None
    color = color_by or dominant or next(iter(dt.factors))
    if k >= 2:
        svg = svg_scatter(model.scores[:, 0], model.scores[:, 1], dt[color],
                          title=f"PCA scores coloured by {color}",
                          xlabel=f"PC1 ({100 * model.explained_variance[0]:.1f}%)",
                          ylabel=f"PC2 ({100 * model.explained_variance[1]:.1f}%)")
        (out / f"{prefix}pca_scores.svg").write_text(svg)
    report = {"explained_variance": [float(v) for v in model.explained_variance],
              "pc1_separation": seps, "flag_threshold": SEPARATION_FLAG,
              "flagged": flagged, "dominant": dominant, "scaling": scaling}
    write_json(report, out / f"{prefix}explore.json")
    print("component  explained_variance")
    for i, v in enumerate(model.explained_variance):
        print(f"PC{i + 1:<9d}{v:.4f}")
    for f, s in seps.items():
        print(f"PC1 separation by {f}: {s['ratio']:.3f}")
    print(f"dominant grouping on PC1: {dominant if dominant else 'none'}")
    return report


def cmd_explore(args) -> int:
    fm, dt = _load(args)
    fm, dt = _subset(fm, dt, args.subset)
    _explore(fm, dt, _out(args), args.components, args.scaling, args.color_by)
    return EXIT_OK


def _check_decomposition(g, x):
    centered = x.values - x.values.mean(axis=0)
    recon = float(np.linalg.norm(g.fitted + g.residuals - centered)
                  / max(np.linalg.norm(centered), 1e-300))
    ortho = float(np.abs(g.design.columns.T @ g.residuals).max()) / max(
        1.0, float(np.abs(x.values).max()))
    return {"reconstruction_rel_error": recon, "reconstruction_ok": recon <= 1e-8,
            "residual_orthogonality": ortho, "orthogonality_ok": ortho <= 1e-8,
            "ledger_ok": sum(g.dof.consumed.values()) + g.dof.residual_df == g.dof.n_samples}


def cmd_gem(args) -> int:
    fm, dt = _load(args)
    fm, dt = _subset(fm, dt, args.subset)
    formula = ModelFormula.parse(args.formula or "batch * disease")
    dm = encode_design(dt, formula)
    g = fit_glm(fm, dm, args.er_mode)
    out = _out(args)
    g.save(out / "gem")
    print(f"model: {formula}  (er_mode={g.er_mode}, balanced={g.balanced})")
    print(f"n_samples={g.dof.n_samples}  residual_df={g.dof.residual_df}")
    for t, r in g.dof.consumed.items():
        print(f"  {t}: {r} df")
    status = EXIT_OK
    if args.er:
        term = args.term or formula.main_factors[-1]
        er = er_values(g, term)
        path = out / f"er_{term.replace(':', '_x_')}.csv"
        write_feature_matrix(er, path)
        write_json({"term": term, "formula": str(formula),
                    "dof_consumed": g.dof.consumed_by_others(term),
                    "residual_df": g.dof.residual_df, "er_mode": g.er_mode},
                   Path(str(path) + ".json"))
        print(f"ER values of {term} -> {path}")
    if args.verify:
        chk = _check_decomposition(g, fm)
        write_json(chk, out / "gem_verify.json")
        print(f"reconstruction error {chk['reconstruction_rel_error']:.2e}, "
              f"orthogonality {chk['residual_orthogonality']:.2e}")
        if not (chk["reconstruction_ok"] and chk["orthogonality_ok"] and chk["ledger_ok"]):
            status = EXIT_DEGENERATE
    if g.dof.residual_df < 1:
        print("warning: no residual degrees of freedom left", file=sys.stderr)
        status = EXIT_DEGENERATE
    return status


def cmd_fuse(args) -> int:
    fm, dt = _load(args)
    fused, fdesign, dof, info = fuse_cohorts(fm, dt, args.cohort_factor, args.batch_factor,
                                             args.term or "disease", args.fusion_order)
    out = _out(args)
    write_feature_matrix(fused, out / "fused.csv")
    write_json({"dof_consumed": dof, **info}, out / "fused.csv.json")
    write_design_table(fdesign, out / "fused_design.csv")
    print(f"fused {fused.n_samples} samples x {fused.n_features} shared features "
          f"(batch-corrected: {', '.join(info['batch_corrected']) or 'none'})")
    return EXIT_OK


def _rotation_design(args, dt):
    if not args.formula:
        return None, None
    term = args.term or "disease"
    dm = encode_design(dt, ModelFormula.parse(args.formula))
    return dm, term


def cmd_pls(args) -> int:
    fm, dt = _load(args)
    term = args.term or "disease"
    a = analyse(fm, dt[term], _dof(args), levels=_levels(args), a_max=args.a_max,
                segments=args.segments, n_segments=args.n_segments, seed=args.seed,
                rejection_limit=args.rejection_limit, run=("pls",))
    out = _out(args)
    _write_pls(a, fm, dt, out, term)
    s = a.summary()["pls"]
    print(f"components={s['chosen_components']} cv_accuracy={s['cv_accuracy']:.3f} "
          f"selected={s['n_selected']} (df={s['jackknife_df']})")
    return EXIT_OK


def _write_pls(a, fm, dt, out, term):
    model = a.pls
    scores = type(fm)(fm.sample_ids, [f"T{i + 1}" for i in range(model.n_components)],
                      model.scores)
    write_feature_matrix(scores, out / "pls_scores.csv")
    _frame_csv(a.jackknife.to_frame(), out / "pls_jackknife.csv")
    sel = a.jackknife.selected
    import pandas as pd
    load = pd.DataFrame(model.loadings[sel], columns=[f"P{i + 1}" for i in range(model.n_components)])
    load.insert(0, "feature", [f for f, s in zip(fm.feature_ids, sel) if s])
    _frame_csv(load, out / "pls_loadings_selected.csv")
    cv = pd.DataFrame({"components": np.arange(1, len(a.cv.misclassified) + 1),
                       "misclassified": a.cv.misclassified, "accuracy": a.cv.accuracy})
    _frame_csv(cv, out / "pls_cv.csv")
    yhat, classes = predict(model, fm)
    pred = pd.DataFrame({"sample": list(fm.sample_ids), "score": yhat, "class": classes,
                         "cv_score": a.cv.predictions[a.cv.chosen - 1], term: list(dt[term])})
    _frame_csv(pred, out / "pls_predictions.csv")
    if model.n_components >= 2:
        (out / "pls_scores.svg").write_text(svg_scatter(
            model.scores[:, 0], model.scores[:, 1], dt[term], title=f"PLS-DA scores ({term})",
            xlabel="T1", ylabel="T2"))
    write_json({"term": term, "levels": list(a.response.levels), **a.summary()["pls"],
                "dof_consumed_step1": a.dof_consumed}, out / "pls_summary.json")


def cmd_enet(args) -> int:
    fm, dt = _load(args)
    term = args.term or "disease"
    a = analyse(fm, dt[term], _dof(args), levels=_levels(args), segments=args.segments,
                n_segments=args.n_segments, seed=args.seed, alpha=args.alpha,
                n_lambda=args.n_lambda, ratio=args.ratio, tolerance=args.tolerance,
                run=("enet",))
    out = _out(args)
    _write_enet(a, out, term)
    t = a.enet
    if not t.informative:
        print(f"no informative support (best CV accuracy {t.best_accuracy:.3f}, "
              f"chance {t.chance:.3f})")
        return EXIT_DEGENERATE
    print(f"lambda={t.lam:.4g} support={len(t.support)} cv_accuracy={t.chosen_accuracy:.3f}")
    return EXIT_OK


def _write_enet(a, out, term):
    import pandas as pd
    path = a.enet_path
    _frame_csv(path.to_frame(), out / "enet_path.csv")
    t = a.enet
    if t.informative:
        coefs = path.coefs[t.chosen]
        sel = pd.DataFrame({"feature": [path.feature_ids[j] for j in t.support],
                            "coef_standardized": coefs[t.support],
                            "coef": coefs[t.support] / path.x_scale[t.support]})
    else:
        sel = pd.DataFrame({"feature": [], "coef_standardized": [], "coef": []})
    _frame_csv(sel, out / "enet_selected.csv")
    write_json({"term": term, "levels": list(a.response.levels), **a.summary()["enet"],
                "dof_consumed_step1": a.dof_consumed}, out / "enet_summary.json")


def cmd_anova(args) -> int:
    fm, dt = _load(args)
    term = args.term or "disease"
    dm, rterm = _rotation_design(args, dt)
    a = analyse(fm, dt[term], _dof(args), n_sim=args.n_sim, seed=args.seed,
                rotation_design=dm, term=rterm, run=("anova",))
    out = _out(args)
    _write_anova(a, out, term)
    s = a.summary()["anova"]
    print(f"min p: raw={s['min_p_raw']:.3g} bh={s['min_p_bh']:.3g} bonf={s['min_p_bonf']:.3g}"
          + (f" rot={s['min_p_rot']:.3g}" if s["min_p_rot"] is not None else ""))
    return EXIT_OK


def _write_anova(a, out, term):
    _frame_csv(a.pvalues.to_frame(), out / "pvalues.csv")
    hist = {"p_raw": pvalue_histogram(a.pvalues.p_raw), "p_bh": pvalue_histogram(a.pvalues.p_bh),
            "p_bonf": pvalue_histogram(a.pvalues.p_bonf)}
    if a.pvalues.p_rot is not None:
        hist["p_rot"] = pvalue_histogram(a.pvalues.p_rot)
    write_json(hist, out / "pvalue_histogram.json")
    summary = {"term": term, **a.summary()["anova"], "dof_consumed_step1": a.dof_consumed}
    if a.rotation is not None:
        summary["rotation"] = {"n_sim": a.rotation.n_sim, "seed": a.rotation.seed,
                               "method": a.rotation.method}
    write_json(summary, out / "anova_summary.json")


def cmd_boxplot(args) -> int:
    fm, dt = _load(args)
    ids = [s for s in args.ids.split(",") if s]
    out = _out(args)
    write_json(boxplot_data(fm, dt, ids, tuple(args.group_by.split(","))), out / "boxplot.json")
    if args.pair:
        pair = args.pair.split(",")
        if len(pair) != 2:
            raise UsageError("--pair needs exactly two feature ids")
        write_json(pair_scatter(fm, dt, pair), out / "pair_scatter.json")
    print(f"box-plot data for {len(ids)} feature(s) -> {out / 'boxplot.json'}")
    return EXIT_OK


def cmd_verify(args) -> int:
    fm, dt = _load(args)
    formula = ModelFormula.parse(args.formula or "batch * disease")
    dm = encode_design(dt, formula)
    g = fit_glm(fm, dm)
    coefs = np.vstack([g.intercept[None, :]] + [g.coefficients[t] for t in dm.terms])
    oracle = oracle_ols(fm, dm)
    diff = float(np.abs(coefs - oracle).max())
    chk = {"formula": str(formula), "oracle_max_abs_diff": diff, "oracle_ok": diff <= 1e-10,
           **_check_decomposition(g, fm)}
    write_json(chk, _out(args) / "verify.json")
    for k, v in chk.items():
        print(f"{k}: {v}")
    ok = chk["oracle_ok"] and chk["reconstruction_ok"] and chk["orthogonality_ok"] and chk["ledger_ok"]
    return EXIT_OK if ok else EXIT_DEGENERATE


def cmd_pipeline(args) -> int:
    fm, dt = _load(args)
    out = _out(args)
    term = args.term or "disease"
    cohort = args.cohort_factor
    explore = {}
    if cohort in dt and len(set(dt[cohort])) > 1:
        for name in dict.fromkeys(dt[cohort]):
            sx, sd = _subset(fm, dt, f"{cohort}={name}")
            explore[name] = _explore(sx, sd, out, 5, "autoscale", None, prefix=f"{name}_")
        fused, fdesign, dof_batch, info = fuse_cohorts(fm, dt, cohort, args.batch_factor, term,
                                                       args.fusion_order)
        formula = args.formula or f"{cohort} * {term}"
    else:
        explore["all"] = _explore(fm, dt, out, 5, "autoscale", None)
        if args.batch_factor in dt and len(set(dt[args.batch_factor])) > 1:
            fused, fdesign, dof_batch, info = fm, dt, 0, {}
            formula = args.formula or f"{args.batch_factor} * {term}"
        else:
            fused, fdesign, dof_batch, info = fm, dt, 0, {}
            formula = args.formula or term
    write_feature_matrix(fused, out / "fused.csv")
    write_design_table(fdesign, out / "fused_design.csv")
    step = gem_step(fused, fdesign, formula, term)
    step.decomposition.save(out / "gem")
    write_feature_matrix(step.er, out / f"er_{term}.csv")
    dof = dof_batch + step.dof_consumed
    write_json({"term": term, "formula": formula, "dof_consumed": dof}, out / f"er_{term}.csv.json")
    a = analyse(step.er, fdesign[term], dof, levels=_levels(args), a_max=args.a_max,
                alpha=args.alpha, n_sim=args.n_sim, seed=args.seed,
                rotation_design=step.decomposition.design, term=term)
    _write_pls(a, step.er, fdesign, out, term)
    _write_enet(a, out, term)
    _write_anova(a, out, term)
    summary = {"formula": formula, "term": term, "fusion": info, **a.summary(),
               "overlap": {"enet_not_in_pls": sorted(set(a.enet_selected) - set(a.pls_selected))}}
    write_json(summary, out / "pipeline_summary.json")
    s = a.summary()
    print(f"PLS: A={s['pls']['chosen_components']} accuracy={s['pls']['cv_accuracy']:.3f} "
          f"jackknife-selected={s['pls']['n_selected']}")
    print(f"elastic net: support={s['enet']['support_size']} ({s['enet']['message']})")
    print(f"ANOVA: min BH p={s['anova']['min_p_bh']:.3g}, min rotation p={s['anova']['min_p_rot']:.3g}")
    return EXIT_OK


COMMANDS = {"synth": cmd_synth, "explore": cmd_explore, "gem": cmd_gem, "fuse": cmd_fuse,
            "pls": cmd_pls, "enet": cmd_enet, "anova": cmd_anova, "boxplot": cmd_boxplot,
            "verify": cmd_verify, "pipeline": cmd_pipeline}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code) if e.code is not None else EXIT_OK
    try:
        return COMMANDS[args.command](args)
    except (UsageError, InputError, DesignError, SegmentationError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except ConvergenceError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DEGENERATE


if __name__ == "__main__":
    sys.exit(main())
