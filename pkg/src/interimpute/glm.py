"""Maximum-likelihood logistic and linear fits plus proper-imputation draws.

Everything here is a pure function of its inputs and an explicitly passed
RNG; callers own parallelism.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    ConvergenceError,
    DegenerateOutcomeError,
    InterimputeError,
    SingularDesignError,
)

SCORE_TOL = 1e-8
MAX_ITER = 25
SEPARATION_BETA = 15.0
DRIFT_BETA = 30.0
PERFECT_FIT_TOL = 1e-6
CHOLESKY_JITTER = 1e-10


def expit(x):
    """Inverse logit, exact and overflow-free for any float argument."""
    x = np.asarray(x, dtype=np.float64)
    return np.exp(-np.logaddexp(0.0, -x))


def logit(p):
    p = np.asarray(p, dtype=np.float64)
    return np.log(p) - np.log1p(-p)


def bernoulli_loglik(y, eta):
    """log P(Y=y) for logit-scale linear predictor eta, elementwise."""
    # log p = -log(1+e^-eta), log(1-p) = -log(1+e^eta)
    return np.where(y == 1.0, -np.logaddexp(0.0, -eta), -np.logaddexp(0.0, eta))


@dataclass
class GlmFit:
    """A fitted model: point estimates, covariance and solver diagnostics.

    ``residual_variance`` is set for linear fits only.  ``score_norm`` is the
    max-norm of the score at the returned coefficients (0 for linear fits).
    """

    coefficients: np.ndarray
    covariance: np.ndarray
    converged: bool
    iterations: int
    separation_flag: bool = False
    residual_variance: float | None = None
    score_norm: float = 0.0
    n_obs: int = 0
    n_params: int = 0

    @property
    def standard_errors(self):
        return np.sqrt(np.diag(self.covariance))

    @property
    def df_residual(self):
        return self.n_obs - self.n_params


@dataclass
class ParamDraw:
    """One posterior draw of model parameters (proper-imputation step)."""

    coefficients: np.ndarray
    residual_variance: float | None = None
    seed_state: str = ""


def _chol_solve(a, b):
    lo = np.linalg.cholesky(a)
    z = np.linalg.solve(lo, b)
    return np.linalg.solve(lo.T, z)


def _chol_inverse_with_jitter(a):
    """Inverse of a symmetric PD matrix; one absolute-jitter retry, then
    escalate to a singular-design error."""
    eye = np.eye(a.shape[0])
    for jitter in (0.0, CHOLESKY_JITTER):
        try:
            inv = _chol_solve(a + jitter * eye, eye)
            return (inv + inv.T) / 2.0
        except np.linalg.LinAlgError:
            continue
    raise SingularDesignError("information matrix singular beyond jitter")


def _check_design(x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise SingularDesignError("design must be 2-d")
    xtx = x.T @ x
    try:
        np.linalg.cholesky(xtx)
    except np.linalg.LinAlgError:
        raise SingularDesignError("singular design") from None
    return x, xtx


def _deviance(y, eta, weights=None):
    cell = np.logaddexp(0.0, eta) - y * eta
    if weights is not None:
        cell = weights * cell
    return 2.0 * float(np.sum(cell))


def fit_logistic(x, y, start=None, tol=SCORE_TOL, max_iter=MAX_ITER, weights=None):
    """Newton/IRLS logistic regression.

    Iterates until the score max-norm drops below ``tol`` or ``max_iter``
    updates have been taken; the covariance is the inverse observed
    information at the returned coefficients.  Perfectly predicted data has
    its maximum at the boundary: once the deviance and score are both below
    ``PERFECT_FIT_TOL`` the fit counts as converged there.  Separation is
    reported via ``separation_flag`` (sd-scaled coefficients past 15, raw
    drift past 30, or a step that cannot reduce the deviance) and never
    repaired.  ``weights`` scale the per-row likelihood contributions.

    A warm ``start`` left at a saturation plateau by earlier data can strand
    the first step; such fits are retried once from zero.
    """
    fit = _fit_logistic_once(x, y, start, tol, max_iter, weights)
    if not fit.converged and start is not None and np.any(start):
        fit = _fit_logistic_once(x, y, None, tol, max_iter, weights)
    return fit


def _fit_logistic_once(x, y, start, tol, max_iter, weights):
    x, _ = _check_design(x)
    y = np.asarray(y, dtype=np.float64)
    n, p = x.shape
    if y.shape != (n,):
        raise InterimputeError("rows of design and response differ")
    wts = None if weights is None else np.asarray(weights, dtype=np.float64)
    beta = np.zeros(p) if start is None else np.asarray(start, dtype=np.float64).copy()
    if y.min() == y.max():
        raise DegenerateOutcomeError("degenerate outcome: y is constant")

    col_sd = x.std(axis=0)
    eta = x @ beta
    dev = _deviance(y, eta, wts)
    diverged = False
    iterations = 0
    for iterations in range(max_iter + 1):
        prob = expit(eta)
        resid = y - prob if wts is None else wts * (y - prob)
        score = x.T @ resid
        score_norm = float(np.abs(score).max())
        if score_norm < tol or (dev < PERFECT_FIT_TOL and score_norm < PERFECT_FIT_TOL):
            converged = True
            break
        if iterations == max_iter:
            converged = False
            break
        w = prob * (1.0 - prob) if wts is None else wts * prob * (1.0 - prob)
        info = (x * w[:, None]).T @ x
        try:
            step = _chol_solve(info, score)
        except np.linalg.LinAlgError:
            try:
                step = _chol_solve(info + CHOLESKY_JITTER * np.eye(p), score)
            except np.linalg.LinAlgError:
                raise SingularDesignError("information matrix singular beyond jitter") from None
        # step halving keeps the deviance monotone
        scale = 1.0
        for _ in range(30):
            cand = beta + scale * step
            cand_eta = x @ cand
            cand_dev = _deviance(y, cand_eta, wts)
            if cand_dev <= dev + 1e-12:
                break
            scale /= 2.0
        else:
            diverged = True
            converged = False
            break
        if scale == 1.0:
            # greedy step doubling: a separated fit drifts to its boundary
            # in O(log) updates instead of crawling past the iteration cap;
            # near a regular optimum the extension is rejected at once
            for _ in range(10):
                cand2 = beta + 2.0 * scale * step
                cand2_eta = x @ cand2
                cand2_dev = _deviance(y, cand2_eta, wts)
                if cand2_dev < cand_dev - 1e-12:
                    scale *= 2.0
                    cand, cand_eta, cand_dev = cand2, cand2_eta, cand2_dev
                else:
                    break
        beta, eta, dev = cand, cand_eta, cand_dev
    else:  # pragma: no cover - loop always breaks
        converged = False

    prob = expit(eta)
    resid = y - prob if wts is None else wts * (y - prob)
    score_norm = float(np.abs(x.T @ resid).max())
    w = prob * (1.0 - prob) if wts is None else wts * prob * (1.0 - prob)
    info = (x * w[:, None]).T @ x
    covariance = _chol_inverse_with_jitter(info)

    scaled = np.where(col_sd > 0, np.abs(beta) * col_sd, 0.0)
    separation = bool(
        diverged or scaled.max() > SEPARATION_BETA or np.abs(beta).max() > DRIFT_BETA
    )
    return GlmFit(
        coefficients=beta,
        covariance=covariance,
        converged=converged and not diverged,
        iterations=iterations,
        separation_flag=separation,
        score_norm=score_norm,
        n_obs=n,
        n_params=p,
    )


def fit_linear(x, y):
    """Ordinary least squares with the classical covariance.

    ``residual_variance`` is RSS/(n-p); needs strictly more rows than
    columns.
    """
    x, xtx = _check_design(x)
    y = np.asarray(y, dtype=np.float64)
    n, p = x.shape
    if y.shape != (n,):
        raise SingularDesignError("rows of design and response differ")
    if n <= p:
        raise SingularDesignError("linear fit needs more rows than parameters")
    beta = _chol_solve(xtx, x.T @ y)
    resid = y - x @ beta
    rss = float(resid @ resid)
    sigma2 = rss / (n - p)
    covariance = sigma2 * _chol_inverse_with_jitter(xtx)
    return GlmFit(
        coefficients=beta,
        covariance=covariance,
        converged=True,
        iterations=0,
        residual_variance=sigma2,
        score_norm=0.0,
        n_obs=n,
        n_params=p,
    )


def _psd_factor(cov):
    """Matrix square root for sampling: Cholesky when possible, otherwise an
    eigenvalue factor with negative (round-off) eigenvalues clipped."""
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        pass
    try:
        return np.linalg.cholesky(cov + CHOLESKY_JITTER * np.eye(cov.shape[0]))
    except np.linalg.LinAlgError:
        vals, vecs = np.linalg.eigh(cov)
        return vecs * np.sqrt(np.clip(vals, 0.0, None))


def _rng_tag(rng):
    state = rng.bit_generator.state
    inner = state.get("state", {})
    raw = inner.get("state", inner) if isinstance(inner, dict) else inner
    return f"{state.get('bit_generator', 'rng')}:{int(np.uint64(hash(str(raw)) & 0xFFFFFFFF))}"


def draw_params(fit, rng):
    """Approximate-Bayesian parameter draw from a converged fit.

    Logistic fits draw from N(beta, covariance).  Linear fits first draw the
    residual variance from its scaled inverse chi-square posterior with n-p
    degrees of freedom, then scale the coefficient covariance accordingly.
    """
    if not fit.converged:
        raise ConvergenceError("cannot draw from unconverged fit")
    tag = _rng_tag(rng)
    cov = fit.covariance
    p = fit.coefficients.shape[0]
    if not cov.any():
        coef = fit.coefficients.copy()
        return ParamDraw(coef, fit.residual_variance, tag)
    sigma2_star = None
    scale = 1.0
    if fit.residual_variance is not None:
        df = fit.df_residual
        if fit.residual_variance == 0.0:
            sigma2_star = 0.0
            scale = 0.0
        else:
            sigma2_star = fit.residual_variance * df / rng.chisquare(df)
            scale = sigma2_star / fit.residual_variance
    lo = _psd_factor(cov)
    coef = fit.coefficients + np.sqrt(scale) * (lo @ rng.standard_normal(p))
    return ParamDraw(coef, sigma2_star, tag)


def impute_binary(draw, x_rows, rng):
    """Bernoulli draws at expit(row . coefficients), one per row."""
    prob = expit(np.asarray(x_rows) @ draw.coefficients)
    return (rng.random(prob.shape[0]) < prob).astype(np.float64)


def impute_continuous(draw, x_rows, rng):
    """Normal draws at the linear predictor with the drawn residual variance."""
    if draw.residual_variance is None or draw.residual_variance < 0:
        raise InterimputeError("continuous imputation needs a nonnegative residual variance")
    mean = np.asarray(x_rows) @ draw.coefficients
    return mean + np.sqrt(draw.residual_variance) * rng.standard_normal(mean.shape[0])
