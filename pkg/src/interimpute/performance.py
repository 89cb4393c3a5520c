"""Performance measures over the replicate-level results table.

Bias and coverage are computed on the log-odds coefficient scale.  Cells
where a method failed are summarised over the surviving replicates with the
effective count recorded; a null-truth coefficient reports absolute rather
than relative bias.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InterimputeError, TableGapError

METHOD_ORDER = ("passive", "jav", "sia", "smcfcs")
TERM_ORDER = ("z5", "x", "x:z5")


def relative_bias(estimates, truth):
    """100 * (mean(estimates) - truth) / truth; undefined at truth zero."""
    estimates = np.asarray(estimates, dtype=np.float64)
    if truth == 0:
        raise InterimputeError("undefined relative bias at truth 0; use absolute bias")
    return float(100.0 * (estimates.mean() - truth) / truth)


def absolute_bias(estimates, truth):
    return float(np.asarray(estimates, dtype=np.float64).mean() - truth)


def coverage(ci_lows, ci_highs, truth):
    """Percent of intervals containing the truth, with its Monte-Carlo
    standard error (percent scale)."""
    lows = np.asarray(ci_lows, dtype=np.float64)
    highs = np.asarray(ci_highs, dtype=np.float64)
    if lows.shape != highs.shape:
        raise InterimputeError("interval bounds must have equal length")
    hit = (lows <= truth) & (truth <= highs)
    p = float(hit.mean())
    mcse = 100.0 * float(np.sqrt(p * (1.0 - p) / hit.size))
    return 100.0 * p, mcse


def emp_se(estimates):
    """Standard deviation of the estimates across replicates (ddof 1)."""
    estimates = np.asarray(estimates, dtype=np.float64)
    if estimates.size < 2:
        raise InterimputeError("empirical SE needs at least two replicates")
    return float(np.sqrt(np.sum((estimates - estimates.mean()) ** 2) / (estimates.size - 1)))


def mod_se(variances):
    """Square root of the mean model-based variance."""
    variances = np.asarray(variances, dtype=np.float64)
    return float(np.sqrt(variances.mean()))


def relative_error(mod, emp):
    """100 * (ModSE / EmpSE - 1)."""
    if emp <= 0:
        raise InterimputeError("relative error needs a positive empirical SE")
    return float(100.0 * (mod / emp - 1.0))


def mcse_bias(estimates, truth=None):
    """EmpSE/sqrt(n); on the percent scale when a nonzero truth is given."""
    estimates = np.asarray(estimates, dtype=np.float64)
    base = emp_se(estimates) / np.sqrt(estimates.size)
    if truth:
        return float(100.0 * base / abs(truth))
    return float(base)


def mcse_relative_error(variances, mod, emp, n_sim):
    """Delta-method Monte-Carlo SE of the relative error of ModSE."""
    variances = np.asarray(variances, dtype=np.float64)
    var_of_var = float(variances.var(ddof=1)) if variances.size > 1 else 0.0
    inner = var_of_var / (4.0 * n_sim * mod**4) + 1.0 / (2.0 * (n_sim - 1.0))
    return float(100.0 * (mod / emp) * np.sqrt(inner))


@dataclass
class PerformanceRow:
    """One (mechanism, method, term) cell of the performance table."""

    dgm: str
    method: str
    term: str
    n_sim_effective: int
    absolute_bias: float | None = None
    relative_bias_pct: float | None = None
    coverage_pct: float | None = None
    mod_se: float | None = None
    emp_se: float | None = None
    relative_error_pct: float | None = None
    mcse_bias: float | None = None
    mcse_coverage: float | None = None
    mcse_relative_error: float | None = None


def _cell_row(dgm, method, term, rows):
    ok = [r for r in rows if not r["failed_flag"]]
    n = len(ok)
    out = PerformanceRow(dgm=dgm, method=method, term=term, n_sim_effective=n)
    if n == 0:
        return out
    est = np.array([r["estimate"] for r in ok])
    se = np.array([r["se"] for r in ok])
    lows = np.array([r["ci_low"] for r in ok])
    highs = np.array([r["ci_high"] for r in ok])
    truth = ok[0]["truth"]
    if truth is None:
        raise TableGapError(f"no truth recorded for {dgm}/{method}/{term}")
    out.absolute_bias = absolute_bias(est, truth)
    if truth != 0:
        out.relative_bias_pct = relative_bias(est, truth)
    out.coverage_pct, out.mcse_coverage = coverage(lows, highs, truth)
    out.mod_se = mod_se(se**2)
    if n >= 2:
        out.mcse_bias = mcse_bias(est, truth if truth != 0 else None)
        out.emp_se = emp_se(est)
        if out.emp_se > 0:
            out.relative_error_pct = relative_error(out.mod_se, out.emp_se)
            out.mcse_relative_error = mcse_relative_error(se**2, out.mod_se, out.emp_se, n)
    return out


def build_table(rows, terms=None, methods=None):
    """Pivot replicate rows into one PerformanceRow per (dgm, method, term).

    Row order is mechanism, then method (passive, jav, sia, smcfcs, others
    last), then term (z5, x, x:z5 first).  A method missing one of its terms
    in some replicate is a gap error.
    """
    by_dgm_method = {}
    dgm_terms = {}
    for r in rows:
        by_dgm_method.setdefault((r["dgm"], r["method"]), []).append(r)
        dgm_terms.setdefault(r["dgm"], set()).add(r["term"])

    dgms = sorted({r["dgm"] for r in rows},
                  key=lambda d: ("null", "1", "2", "3", "4", "5", "6").index(d)
                  if d in ("null", "1", "2", "3", "4", "5", "6") else 99)
    if methods is None:
        methods = sorted(
            {r["method"] for r in rows},
            key=lambda m: METHOD_ORDER.index(m) if m in METHOD_ORDER else 99,
        )

    out = []
    for dgm in dgms:
        for method in methods:
            cell_rows = by_dgm_method.get((dgm, method))
            if cell_rows is None:
                raise TableGapError(f"no results for {dgm}/{method}")
            if terms is None:
                present = {r["term"] for r in cell_rows}
                use_terms = [t for t in TERM_ORDER if t in present]
                use_terms += sorted(t for t in present if t not in TERM_ORDER)
            else:
                # a term absent from the mechanism's model is skipped, but a
                # term other methods produced must be present here too
                use_terms = [t for t in terms if t in dgm_terms[dgm]]
            replicates = {r["replicate"] for r in cell_rows}
            for term in use_terms:
                trows = [r for r in cell_rows if r["term"] == term]
                if not trows:
                    raise TableGapError(f"missing cell {dgm}/{method}/{term}")
                if {r["replicate"] for r in trows} != replicates:
                    raise TableGapError(f"incomplete cell {dgm}/{method}/{term}")
                out.append(_cell_row(dgm, method, term, trows))
    return out
