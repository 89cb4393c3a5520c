"""Command-line front end: simulate / analyze / impute / pool / report.

Exit codes: 0 success, 1 partial or domain failure (with per-cell log lines
on stderr), 2 usage or configuration errors.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .data import Dataset, ModelFormula, VariableSpec
from .errors import ConfigError, InterimputeError
from .fileio import (
    CONFIG_DEFAULTS,
    effective_config,
    infer_schema,
    load_config,
    read_raw_csv,
    read_table_csv,
    write_config,
    write_dataset_csv,
    write_table_csv,
)
from .figures import MEASURES, TERM_LABELS, render_all
from .impute import ImputationConfig, STRATEGIES, impute
from .performance import PerformanceRow, build_table
from .pooling import complete_case_fit, pooled_fit, rubin_pool
from .simulate import COMPLETE_CASE, ESTIMAND_TERMS, run_study

REPLICATE_COLUMNS = (
    "dgm", "replicate", "method", "term",
    "estimate", "se", "ci_low", "ci_high", "truth", "failed_flag",
)
PERFORMANCE_COLUMNS = (
    "dgm", "method", "term", "n_sim_effective",
    "absolute_bias", "relative_bias_pct", "coverage_pct",
    "mod_se", "emp_se", "relative_error_pct",
    "mcse_bias", "mcse_coverage", "mcse_relative_error",
)
ANALYSIS_COLUMNS = (
    "method", "term", "or", "or_ci_low", "or_ci_high",
    "estimate", "se", "ci_low", "ci_high", "df",
)
VALID_METHODS = STRATEGIES + (COMPLETE_CASE,)


def _parse_list(text):
    return [s.strip() for s in text.split(",") if s.strip()]


def _default_workers():
    return int(os.environ.get("INTERIMPUTE_WORKERS", "1"))


def build_parser():
    p = argparse.ArgumentParser(
        prog="interimpute",
        description="Multiple imputation for logistic models with a partially "
                    "observed interaction, plus the simulation benchmark.",
    )
    sub = p.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run the simulation study")
    sim.add_argument("--dgm", help="comma list from null,1,2,3,4,5,6")
    sim.add_argument("--n-sim", type=int, dest="n_sim")
    sim.add_argument("--n-obs", type=int, dest="n_obs")
    sim.add_argument("--methods", help="comma list of imputation methods")
    sim.add_argument("--seed", type=int)
    sim.add_argument("--m", type=int)
    sim.add_argument("--iterations", "--iter", type=int, dest="iterations")
    sim.add_argument("--workers", type=int)
    sim.add_argument("--calibration-probe", type=int, dest="calibration_probe")
    sim.add_argument("--config", help="TOML config file (flags override it)")
    sim.add_argument("--out", required=True, help="output directory")
    sim.set_defaults(func=cmd_simulate)

    ana = sub.add_parser("analyze", help="analyse an incomplete CSV dataset")
    ana.add_argument("--data", required=True)
    ana.add_argument("--formula", help='e.g. "y ~ z1 + z2 + x + x:z1"')
    ana.add_argument("--methods", help="comma list of imputation methods")
    ana.add_argument("--m", type=int)
    ana.add_argument("--iterations", "--iter", type=int, dest="iterations")
    ana.add_argument("--seed", type=int)
    ana.add_argument("--config")
    ana.add_argument("--out", required=True, help="output directory")
    ana.set_defaults(func=cmd_analyze)

    imp = sub.add_parser("impute", help="write the m completed datasets")
    imp.add_argument("--data", required=True)
    imp.add_argument("--formula", required=True)
    imp.add_argument("--strategy", required=True, choices=STRATEGIES)
    imp.add_argument("--m", type=int)
    imp.add_argument("--iterations", "--iter", type=int, dest="iterations")
    imp.add_argument("--seed", type=int)
    imp.add_argument("--out", required=True, help="output directory")
    imp.set_defaults(func=cmd_impute)

    poo = sub.add_parser("pool", help="pool completed datasets with Rubin's rules")
    poo.add_argument("--imputed", required=True,
                     help="directory holding imputed_*.csv files")
    poo.add_argument("--formula", required=True)
    poo.add_argument("--out", required=True, help="output directory")
    poo.set_defaults(func=cmd_pool)

    rep = sub.add_parser("report", help="pivot results to the wide benchmark "
                                        "table and render figures")
    rep.add_argument("--results", required=True,
                     help="directory with replicates.csv and performance.csv")
    rep.add_argument("--out", required=True, help="output directory")
    rep.set_defaults(func=cmd_report)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except InterimputeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


# -- simulate -------------------------------------------------------------------


def _merged_config(args, keys):
    file_values = load_config(args.config) if getattr(args, "config", None) else {}
    flags = {k: getattr(args, k, None) for k in keys}
    if getattr(args, "dgm", None) is not None:
        flags["dgm"] = _parse_list(args.dgm)
    if getattr(args, "methods", None) is not None:
        flags["methods"] = _parse_list(args.methods)
    defaults = {k: CONFIG_DEFAULTS[k] for k in keys if k in CONFIG_DEFAULTS}
    if "workers" in keys:
        defaults["workers"] = _default_workers()
    return effective_config(defaults, {k: v for k, v in file_values.items() if k in keys},
                            flags)


def _validate_methods(methods):
    for m in methods:
        if m not in VALID_METHODS:
            raise ConfigError(f"unknown method {m!r}; choose from {', '.join(VALID_METHODS)}")
    return methods


def performance_rows_as_dicts(table):
    out = []
    for row in table:
        out.append({c: getattr(row, c) for c in PERFORMANCE_COLUMNS})
    return out


def cmd_simulate(args):
    cfgv = _merged_config(
        args,
        ("dgm", "methods", "n_sim", "n_obs", "seed", "m", "iterations",
         "workers", "calibration_probe"),
    )
    methods = _validate_methods(cfgv["methods"])
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    cfg = ImputationConfig(m=cfgv["m"], iterations=cfgv["iterations"])
    result = run_study(
        cfgv["dgm"],
        methods,
        cfgv["n_sim"],
        cfgv["seed"],
        cfg=cfg,
        n_obs=cfgv["n_obs"],
        workers=cfgv["workers"],
        calibration_probe=cfgv["calibration_probe"],
    )
    write_table_csv(outdir / "replicates.csv", REPLICATE_COLUMNS, result.rows)
    perf_methods = [m for m in ("passive", "jav", "sia", "smcfcs") if m in methods]
    perf_methods += [m for m in methods if m not in perf_methods]
    table = build_table(
        [r for r in result.rows if r["method"] in methods],
        terms=ESTIMAND_TERMS,
        methods=perf_methods,
    )
    write_table_csv(outdir / "performance.csv", PERFORMANCE_COLUMNS,
                    performance_rows_as_dicts(table))
    echo = {k: cfgv[k] for k in
            ("dgm", "methods", "n_sim", "n_obs", "seed", "m", "iterations",
             "calibration_probe")}
    write_config(outdir / "config.toml", echo)
    failures = result.diagnostics["failures"]
    print(f"wrote {outdir/'replicates.csv'} ({len(result.rows)} rows) and "
          f"{outdir/'performance.csv'} ({len(table)} cells)")
    if failures:
        for dgm, rep, method, msg in failures:
            print(f"failed cell: dgm={dgm} replicate={rep} method={method}: {msg}",
                  file=sys.stderr)
        print(f"{len(failures)} method-replicate failures recorded", file=sys.stderr)
        return 1
    return 0


# -- analyze / impute / pool -----------------------------------------------------


def _load_analysis_dataset(path, formula):
    """Ingest an analysis CSV: restrict to the formula variables and
    materialise one derived column per interaction pair."""
    header, values, mask = read_raw_csv(path)
    missing_vars = [v for v in (formula.outcome,) + formula.main_terms
                    if v not in header]
    if missing_vars:
        raise InterimputeError(f"{path}: formula variables missing: {missing_vars}")
    if not mask[:, header.index(formula.outcome)].all():
        raise InterimputeError(
            f"{path}: outcome {formula.outcome!r} has missing values; "
            "the outcome must be fully observed"
        )
    keep = list((formula.outcome,) + formula.main_terms)
    idx = [header.index(v) for v in keep]
    sub_values = values[:, idx]
    sub_mask = mask[:, idx]
    specs = infer_schema(keep, sub_values, sub_mask, formula)
    data = Dataset(specs, sub_values, sub_mask)
    for a, b in formula.interaction_terms:
        name = f"{a}_{b}"
        prod = data.column(a) * data.column(b)
        obs = data.observed(a) & data.observed(b)
        kind = "binary" if (data.spec(a).kind == "binary" and data.spec(b).kind == "binary") \
            else "continuous"
        data = data.add_column(
            VariableSpec(name, kind, "derived-interaction", parents=(a, b)),
            np.where(obs, prod, 0.0),
            observed=obs,
        )
    data.validate()
    data.check_derived_consistency()
    return data


def _method_cfg(base_cfg, method, seed):
    mseed = int(np.random.SeedSequence((seed, 1000 + STRATEGIES.index(method)))
                .generate_state(1, dtype=np.uint64)[0])
    return replace(base_cfg, strategy=method, seed=mseed)


def _estimates_rows(method, estimates):
    rows = []
    for est in estimates:
        lo, hi = est.or_ci
        rows.append({
            "method": method,
            "term": est.term,
            "or": est.or_estimate,
            "or_ci_low": lo,
            "or_ci_high": hi,
            "estimate": est.estimate,
            "se": est.se,
            "ci_low": est.ci_low,
            "ci_high": est.ci_high,
            "df": est.df,
        })
    return rows


def cmd_analyze(args):
    cfgv = _merged_config(args, ("methods", "m", "iterations", "seed", "formula",
                                 "data"))
    if args.formula:
        cfgv["formula"] = args.formula
    if "formula" not in cfgv or not cfgv["formula"]:
        raise ConfigError("analyze needs --formula (or a formula key in --config)")
    formula = ModelFormula.parse(cfgv["formula"])
    methods = _validate_methods([m for m in cfgv["methods"] if m != COMPLETE_CASE])
    data = _load_analysis_dataset(args.data, formula)
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)

    rows = _estimates_rows(COMPLETE_CASE, complete_case_fit(data, formula))
    base_cfg = ImputationConfig(m=cfgv["m"], iterations=cfgv["iterations"])
    failures = []
    for method in methods:
        try:
            imputed = impute(data, formula, _method_cfg(base_cfg, method, cfgv["seed"]))
            rows.extend(_estimates_rows(method, pooled_fit(imputed, formula)))
        except InterimputeError as exc:
            failures.append((method, str(exc)))
    write_table_csv(outdir / "analysis.csv", ANALYSIS_COLUMNS, rows)
    echo = {k: cfgv[k] for k in ("methods", "m", "iterations", "seed")}
    echo["formula"] = cfgv["formula"]
    echo["data"] = str(args.data)
    write_config(outdir / "config.toml", echo)
    print(f"wrote {outdir/'analysis.csv'} ({len(rows)} rows)")
    if failures:
        for method, msg in failures:
            print(f"failed method: {method}: {msg}", file=sys.stderr)
        return 1
    return 0


def cmd_impute(args):
    cfgv = _merged_config(args, ("m", "iterations", "seed"))
    formula = ModelFormula.parse(args.formula)
    data = _load_analysis_dataset(args.data, formula)
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    cfg = ImputationConfig(strategy=args.strategy, m=cfgv["m"],
                           iterations=cfgv["iterations"], seed=cfgv["seed"])
    imputed = impute(data, formula, cfg)
    width = max(2, len(str(cfg.m)))
    for ell, ds in enumerate(imputed.datasets, start=1):
        write_dataset_csv(ds, outdir / f"imputed_{ell:0{width}d}.csv")
    echo = {"strategy": args.strategy, "m": cfgv["m"],
            "iterations": cfgv["iterations"], "seed": cfgv["seed"],
            "formula": args.formula, "data": str(args.data)}
    write_config(outdir / "config.toml", echo)
    print(f"wrote {cfg.m} completed datasets to {outdir}")
    return 0


def cmd_pool(args):
    formula = ModelFormula.parse(args.formula)
    indir = Path(args.imputed)
    paths = sorted(indir.glob("imputed_*.csv"))
    if len(paths) < 2:
        raise InterimputeError(f"{indir}: need at least two imputed_*.csv files")
    from .data import build_design_matrix, response_vector
    from .glm import fit_logistic

    coefs, variances = [], []
    names = None
    n_obs = p = None
    for path in paths:
        header, values, mask = read_raw_csv(str(path))
        specs = infer_schema(header, values, mask, formula)
        derived_names = {f"{a}_{b}": (a, b) for a, b in formula.interaction_terms}
        final = []
        for s in specs:
            if s.name in derived_names:
                final.append(VariableSpec(s.name, s.kind, "derived-interaction",
                                          parents=derived_names[s.name]))
            else:
                final.append(s)
        ds = Dataset(final, values, mask, validate=False)
        x = build_design_matrix(ds, formula, rows="all")
        y = response_vector(ds, formula, rows="all")
        fit = fit_logistic(x, y)
        coefs.append(fit.coefficients)
        variances.append(np.diag(fit.covariance))
        names = formula.term_names()
        n_obs, p = fit.n_obs, fit.n_params
    coefs = np.vstack(coefs)
    variances = np.vstack(variances)
    rows = []
    for j, name in enumerate(names):
        est = rubin_pool(coefs[:, j], variances[:, j], df_complete=n_obs - p, term=name)
        rows.extend(_estimates_rows("pooled", [est]))
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    write_table_csv(outdir / "pooled.csv", ANALYSIS_COLUMNS, rows)
    print(f"wrote {outdir/'pooled.csv'} ({len(rows)} terms, m={len(paths)})")
    return 0


# -- report -----------------------------------------------------------------------


A1_MEASURES = (
    ("relative_bias_pct", "rbias"),
    ("mcse_bias", "rbias_mcse"),
    ("coverage_pct", "cov"),
    ("mcse_coverage", "cov_mcse"),
    ("relative_error_pct", "relerr"),
    ("mcse_relative_error", "relerr_mcse"),
)
A1_TERMS = (("z5", "z"), ("x", "x"), ("x:z5", "xz"))


def _read_performance(path):
    numeric = set(PERFORMANCE_COLUMNS) - {"dgm", "method", "term"}
    _, raw = read_table_csv(path, numeric=numeric)
    rows = []
    for r in raw:
        rows.append(PerformanceRow(
            dgm=r["dgm"], method=r["method"], term=r["term"],
            n_sim_effective=int(r["n_sim_effective"]),
            absolute_bias=r["absolute_bias"],
            relative_bias_pct=r["relative_bias_pct"],
            coverage_pct=r["coverage_pct"],
            mod_se=r["mod_se"], emp_se=r["emp_se"],
            relative_error_pct=r["relative_error_pct"],
            mcse_bias=r["mcse_bias"], mcse_coverage=r["mcse_coverage"],
            mcse_relative_error=r["mcse_relative_error"],
        ))
    return rows


def cmd_report(args):
    results = Path(args.results)
    rows = _read_performance(str(results / "performance.csv"))
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)

    # wide pivot: one row per (mechanism, method), measure columns per term
    wide_cols = ["dgm", "method"]
    for _, tlabel in A1_TERMS:
        for _, mlabel in A1_MEASURES:
            wide_cols.append(f"{tlabel}_{mlabel}")
    by_key = {}
    order = []
    for r in rows:
        key = (r.dgm, r.method)
        if key not in by_key:
            by_key[key] = {"dgm": r.dgm, "method": r.method}
            order.append(key)
        for term, tlabel in A1_TERMS:
            if r.term == term:
                for attr, mlabel in A1_MEASURES:
                    by_key[key][f"{tlabel}_{mlabel}"] = getattr(r, attr)
    write_table_csv(outdir / "table_a1.csv", wide_cols, [by_key[k] for k in order])

    # tidy per-figure exports
    n_csv = 0
    for measure, (attr, _) in MEASURES.items():
        for term, tlabel in TERM_LABELS.items():
            frows = [
                {"dgm": r.dgm, "method": r.method, "value": getattr(r, attr),
                 "mcse": getattr(r, {"relative_bias_pct": "mcse_bias",
                                      "coverage_pct": "mcse_coverage",
                                      "relative_error_pct": "mcse_relative_error"}[attr])}
                for r in rows if r.term == term and getattr(r, attr) is not None
            ]
            if frows:
                write_table_csv(outdir / f"figure_{measure}_{tlabel}.csv",
                                ("dgm", "method", "value", "mcse"), frows)
                n_csv += 1
    pngs = render_all(rows, outdir)
    print(f"wrote table_a1.csv, {n_csv} figure CSVs and {len(pngs)} figure PNGs "
          f"to {outdir}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
