"""Rubin's-rules combination of per-imputation fits, and the complete-case
comparator."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats

from .data import build_design_matrix, complete_cases, response_vector
from .errors import InterimputeError
from .glm import fit_logistic

DF_CAP = 1e6


@dataclass
class PooledEstimate:
    """One pooled coefficient with its variance decomposition and intervals.

    Log-odds scale throughout; ``or_*`` fields are the exponentiated
    estimate and bounds.
    """

    term: str
    estimate: float
    within_var: float
    between_var: float
    total_var: float
    df: float
    ci_low: float
    ci_high: float
    m: int

    @property
    def se(self):
        return float(np.sqrt(self.total_var))

    @property
    def or_estimate(self):
        return float(np.exp(self.estimate))

    @property
    def or_ci(self):
        return (float(np.exp(self.ci_low)), float(np.exp(self.ci_high)))


def rubin_pool(estimates, variances, m=None, df_complete=None, term=""):
    """Combine m point estimates and their squared standard errors.

    estimate = mean, W = mean of variances, B = sample variance of the
    estimates, T = W + (1 + 1/m) B.  Degrees of freedom follow the
    large-sample rule (m-1)(1 + W/((1+1/m)B))^2 capped at 1e6 when B=0 and,
    when ``df_complete`` is given, the Barnard-Rubin small-sample adjustment.
    """
    estimates = np.asarray(estimates, dtype=np.float64)
    variances = np.asarray(variances, dtype=np.float64)
    if m is None:
        m = estimates.shape[0]
    if m < 2 or estimates.shape[0] != m:
        raise InterimputeError("insufficient imputations: need m >= 2 estimates")
    if variances.shape[0] != m:
        raise InterimputeError("estimates and variances must have equal length")
    if (variances < 0).any():
        raise InterimputeError("variances must be nonnegative")

    estimate = float(estimates.mean())
    w = float(variances.mean())
    b = float(estimates.var(ddof=1))
    t = w + (1.0 + 1.0 / m) * b

    if b > 0:
        df = (m - 1) * (1.0 + w / ((1.0 + 1.0 / m) * b)) ** 2
        df = min(df, DF_CAP)
    else:
        df = DF_CAP
    if df_complete is not None:
        lam = ((1.0 + 1.0 / m) * b / t) if t > 0 else 0.0
        df_obs = (df_complete + 1.0) / (df_complete + 3.0) * df_complete * (1.0 - lam)
        df = df * df_obs / (df + df_obs)

    half = stats.t.ppf(0.975, df) * np.sqrt(t)
    return PooledEstimate(
        term=term,
        estimate=estimate,
        within_var=w,
        between_var=b,
        total_var=t,
        df=float(df),
        ci_low=estimate - half,
        ci_high=estimate + half,
        m=m,
    )


def pooled_fit(imputed, formula, ledger=None):
    """Fit the model on each completed dataset and pool term by term.

    Uses the strategy's analysis formula when set, relabelling terms back to
    the requested ones.  ``ledger`` (optional) collects fit diagnostics.
    """
    fit_formula = imputed.analysis_formula or formula
    aliases = imputed.term_aliases
    coefs, variances = [], []
    n_obs = p = None
    for ell, ds in enumerate(imputed.datasets):
        try:
            x = build_design_matrix(ds, fit_formula, rows="all")
            y = response_vector(ds, fit_formula, rows="all")
            fit = fit_logistic(x, y)
        except InterimputeError as exc:
            raise InterimputeError(f"analysis fit failed on dataset {ell}: {exc}") from exc
        if ledger is not None:
            ledger.record(fit, dataset=ell, model="analysis")
        coefs.append(fit.coefficients)
        variances.append(np.diag(fit.covariance))
        n_obs, p = fit.n_obs, fit.n_params
    coefs = np.vstack(coefs)
    variances = np.vstack(variances)
    names = fit_formula.term_names()
    out = []
    for j, name in enumerate(names):
        out.append(
            rubin_pool(
                coefs[:, j],
                variances[:, j],
                df_complete=n_obs - p,
                term=aliases.get(name, name),
            )
        )
    return out


def complete_case_fit(data, formula, ledger=None):
    """Single logistic fit on the fully observed rows, shaped like pooled
    output (between-imputation variance zero, df = n1 - p)."""
    cc, _report = complete_cases(data)
    x = build_design_matrix(cc, formula, rows="all")
    y = response_vector(cc, formula, rows="all")
    if cc.n_obs < x.shape[1] + 1:
        raise InterimputeError("too few complete cases for the model")
    fit = fit_logistic(x, y)
    if ledger is not None:
        ledger.record(fit, model="complete-case")
    names = formula.term_names()
    out = []
    df = float(fit.n_obs - fit.n_params)
    for j, name in enumerate(names):
        est = float(fit.coefficients[j])
        var = float(fit.covariance[j, j])
        half = stats.t.ppf(0.975, df) * np.sqrt(var)
        out.append(
            PooledEstimate(
                term=name,
                estimate=est,
                within_var=var,
                between_var=0.0,
                total_var=var,
                df=df,
                ci_low=est - half,
                ci_high=est + half,
                m=1,
            )
        )
    return out
