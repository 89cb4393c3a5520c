import math

import numpy as np
import pytest
from scipy import stats

from interimpute.data import Dataset, ModelFormula
from interimpute.errors import EmptyCompleteCaseError, InterimputeError
from interimpute.glm import fit_logistic
from interimpute.impute import ImputationConfig, impute_passive
from interimpute.pooling import DF_CAP, complete_case_fit, pooled_fit, rubin_pool

from conftest import make_toy_dataset, toy_formula, toy_specs


def oracle_rubin(estimates, variances, df_complete=None):
    """Independent implementation of the combining rules (plain Python)."""
    m = len(estimates)
    qbar = sum(estimates) / m
    w = sum(variances) / m
    b = sum((e - qbar) ** 2 for e in estimates) / (m - 1)
    t = w + (1 + 1 / m) * b
    if b > 0:
        df = (m - 1) * (1 + w / ((1 + 1 / m) * b)) ** 2
        df = min(df, DF_CAP)
    else:
        df = DF_CAP
    if df_complete is not None:
        lam = (1 + 1 / m) * b / t if t > 0 else 0.0
        df_obs = (df_complete + 1) / (df_complete + 3) * df_complete * (1 - lam)
        df = df * df_obs / (df + df_obs)
    half = stats.t.ppf(0.975, df) * math.sqrt(t)
    return qbar, w, b, t, df, qbar - half, qbar + half


def test_rubin_degenerate_between_variance():
    est = rubin_pool([1.0, 1.0], [4.0, 4.0])
    assert est.estimate == 1.0
    assert est.within_var == 4.0
    assert est.between_var == 0.0
    assert est.total_var == 4.0
    assert est.df == DF_CAP


def test_rubin_forced_arithmetic():
    est = rubin_pool([0.0, 2.0], [1.0, 1.0])
    assert est.estimate == 1.0
    assert est.within_var == 1.0
    assert est.between_var == 2.0
    assert est.total_var == 1.0 + 1.5 * 2.0
    assert est.total_var >= est.within_var
    assert est.ci_low < est.ci_high


def test_rubin_matches_scripted_oracle():
    rng = np.random.default_rng(12)
    for _ in range(1000):
        m = int(rng.integers(2, 12))
        estimates = list(rng.normal(size=m))
        variances = list(rng.random(m) + 0.01)
        df_com = float(rng.integers(5, 5000)) if rng.random() < 0.7 else None
        got = rubin_pool(estimates, variances, df_complete=df_com)
        want = oracle_rubin(estimates, variances, df_complete=df_com)
        for g, w in zip(
            (got.estimate, got.within_var, got.between_var, got.total_var,
             got.df, got.ci_low, got.ci_high),
            want,
        ):
            assert abs(g - w) < 1e-9 * max(1.0, abs(w))


def test_rubin_insufficient_imputations():
    with pytest.raises(InterimputeError):
        rubin_pool([1.0], [1.0])
    with pytest.raises(InterimputeError):
        rubin_pool([1.0, 2.0], [1.0])
    with pytest.raises(InterimputeError):
        rubin_pool([1.0, 2.0], [1.0, -0.5])


def test_or_fields_are_exponentiated_bounds():
    est = rubin_pool([0.5, 0.7], [0.04, 0.05])
    assert est.or_estimate == pytest.approx(math.exp(est.estimate))
    lo, hi = est.or_ci
    assert lo == pytest.approx(math.exp(est.ci_low))
    assert hi == pytest.approx(math.exp(est.ci_high))


def test_pooled_fit_identical_datasets_no_between_variance():
    d = make_toy_dataset(missing=0.0)
    cfg = ImputationConfig(strategy="passive", m=3, iterations=2, seed=5)
    imputed = impute_passive(d, toy_formula(), cfg)
    estimates = pooled_fit(imputed, toy_formula())
    assert [e.term for e in estimates] == ["(intercept)", "z", "x", "x:z"]
    for e in estimates:
        assert e.between_var == 0.0


def test_pooled_estimate_is_mean_of_per_dataset_fits():
    d = make_toy_dataset(n=500, seed=14)
    cfg = ImputationConfig(strategy="passive", m=4, iterations=3, seed=6)
    imputed = impute_passive(d, toy_formula(), cfg)
    estimates = pooled_fit(imputed, toy_formula())
    from interimpute.data import build_design_matrix, response_vector

    per = []
    for ds in imputed.datasets:
        x = build_design_matrix(ds, toy_formula(), rows="all")
        y = response_vector(ds, toy_formula(), rows="all")
        per.append(fit_logistic(x, y).coefficients)
    per = np.vstack(per)
    for j, e in enumerate(estimates):
        assert e.estimate == pytest.approx(per[:, j].mean(), rel=1e-12)


def test_complete_case_fit_fully_observed_equals_plain_fit():
    d = make_toy_dataset(missing=0.0)
    estimates = complete_case_fit(d, toy_formula())
    from interimpute.data import build_design_matrix, response_vector

    fit = fit_logistic(
        build_design_matrix(d, toy_formula(), rows="all"),
        response_vector(d, toy_formula(), rows="all"),
    )
    for j, e in enumerate(estimates):
        assert e.estimate == pytest.approx(fit.coefficients[j], rel=1e-12)
        assert e.between_var == 0.0
        assert e.df == d.n_obs - 4


def test_complete_case_fit_two_by_two_after_masking():
    # 2x2 geometry preserved after masking rows that keep the counts intact:
    # start from x=1: 9/3, x=0: 3/9 and mask one row of each cell type
    n = 24
    x = np.repeat([1.0, 0.0], 12)
    y = np.concatenate([np.ones(9), np.zeros(3), np.ones(3), np.zeros(9)])
    z = np.zeros(n)
    values = np.column_stack([y, z, x, x * z])
    mask = np.ones_like(values, dtype=bool)
    for row in (0, 9, 12, 15):  # one from each (x, y) cell
        mask[row, 2] = mask[row, 3] = False
    d = Dataset(toy_specs(), values, mask)
    formula = ModelFormula("y", ("x",))
    estimates = complete_case_fit(d, formula)
    # retained counts: x=1: 8/2, x=0: 2/8
    assert estimates[0].estimate == pytest.approx(math.log(2 / 8), abs=1e-8)
    assert estimates[1].estimate == pytest.approx(math.log(16.0), abs=1e-8)


def test_complete_case_fit_requires_complete_rows():
    d = make_toy_dataset()
    empty = Dataset(d.columns, d.values, np.zeros_like(d.mask), validate=False)
    with pytest.raises(EmptyCompleteCaseError):
        complete_case_fit(empty, toy_formula())


def test_exp_invariance_of_interval_coverage():
    rng = np.random.default_rng(3)
    for _ in range(200):
        theta = rng.normal()
        lo = theta + rng.normal(scale=0.5) - 0.5
        hi = lo + rng.random() * 2
        inside = lo <= theta <= hi
        inside_exp = math.exp(lo) <= math.exp(theta) <= math.exp(hi)
        assert inside == inside_exp


def test_covariate_scaling_property():
    d = make_toy_dataset(n=700, seed=30, z_kind="continuous")
    cfg = ImputationConfig(strategy="passive", m=3, iterations=2, seed=9)
    est1 = pooled_fit(impute_passive(d, toy_formula(), cfg), toy_formula())

    c = 4.0
    scaled_values = d.values.copy()
    scaled_values[:, d.index("z")] *= c
    scaled_values[:, d.index("xz")] *= c
    d2 = Dataset(d.columns, scaled_values, d.mask)
    est2 = pooled_fit(impute_passive(d2, toy_formula(), cfg), toy_formula())

    z1 = next(e for e in est1 if e.term == "z")
    z2 = next(e for e in est2 if e.term == "z")
    assert z2.estimate == pytest.approx(z1.estimate / c, rel=1e-6)
    # coverage indicator of the scaled truth is unchanged
    theta = 0.6
    assert (z1.ci_low <= theta <= z1.ci_high) == (z2.ci_low <= theta / c <= z2.ci_high)
