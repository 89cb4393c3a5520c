"""Data-generating mechanisms, missingness imposition, and the study driver.

Seven mechanisms are built in: a base case plus one-factor variations
(weaker/stronger interaction, MCAR, continuous moderator, 1% moderator
prevalence) and a no-interaction null.  The outcome model coefficients are
the logs of the benchmark odds ratios with a -3 intercept; every value is
overridable per mechanism.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .data import Dataset, ModelFormula, VariableSpec
from .errors import CalibrationError, InterimputeError
from .glm import expit, logit
from .impute import ImputationConfig, STRATEGIES, _FitLedger, impute
from .pooling import complete_case_fit, pooled_fit

DGM_IDS = ("null", "1", "2", "3", "4", "5", "6")
ESTIMAND_TERMS = ("z5", "x", "x:z5")
METHOD_ORDER = ("passive", "jav", "sia", "smcfcs")
COMPLETE_CASE = "complete_case"

# odds ratios behind the base-case outcome model
BASE_ORS = {"z1": 0.85, "z2": 1.3, "z3": 0.9, "z4": 1.2, "z5": 0.9, "x": 1.4}
BASE_INTERCEPT = -3.0
INTERACTION_OR = {"null": 1.0, "1": 1.3, "2": 1.1, "3": 1.7, "4": 1.3, "5": 1.3, "6": 1.3}


@dataclass(frozen=True)
class DgmSpec:
    """Full parameterisation of one data-generating mechanism."""

    dgm: str
    n_obs: int = 10_000
    mechanism: str = "MAR"           # MAR | MCAR
    z5_mode: str = "binary"          # binary | continuous
    z5_prevalence: float = 0.30
    z5_sigma: float = 0.5            # sd of the continuous moderator
    x_prevalence: float = 0.40
    coefficients: dict = field(default_factory=dict)
    alphas: dict = field(default_factory=dict)
    target_observed: float = 0.80

    def __post_init__(self):
        if self.mechanism not in ("MAR", "MCAR"):
            raise InterimputeError(f"unknown mechanism {self.mechanism!r}")
        if not 0.0 < self.target_observed < 1.0:
            raise InterimputeError("target observed proportion must be in (0, 1)")
        for p in (self.z5_prevalence, self.x_prevalence):
            if not 0.0 <= p <= 1.0:
                raise InterimputeError("prevalences must be probabilities")
        if self.mechanism == "MCAR" and any(v != 0.0 for v in self.alphas.values()):
            raise InterimputeError("MCAR requires all missingness slopes to be zero")

    @property
    def has_interaction(self):
        return "x:z5" in self.coefficients

    def formula(self):
        inter = (("x", "z5"),) if self.has_interaction else ()
        return ModelFormula(
            outcome="y",
            main_terms=("z1", "z2", "z3", "z4", "z5", "x"),
            interaction_terms=inter,
        )

    def truth(self):
        return dict(self.coefficients)

    def variable_specs(self):
        z5_kind = "binary" if self.z5_mode == "binary" else "continuous"
        specs = [
            VariableSpec("y", "binary", "outcome"),
            VariableSpec("z1", "binary"),
            VariableSpec("z2", "continuous"),
            VariableSpec("z3", "binary"),
            VariableSpec("z4", "continuous"),
            VariableSpec("z5", z5_kind),
            VariableSpec("x", "binary", "exposure"),
        ]
        if self.has_interaction:
            specs.append(
                VariableSpec("xz", z5_kind, "derived-interaction", parents=("x", "z5"))
            )
        return specs


def make_dgm(dgm_id, n_obs=10_000, **overrides):
    """Mechanism ``null`` or ``1``..``6``; keyword overrides replace any
    DgmSpec field (``interaction_or`` rescales just the interaction)."""
    dgm_id = str(dgm_id)
    if dgm_id not in DGM_IDS:
        raise InterimputeError(f"unknown data-generating mechanism {dgm_id!r}")
    coefficients = {"(intercept)": BASE_INTERCEPT}
    coefficients.update({k: math.log(v) for k, v in BASE_ORS.items()})
    interaction_or = overrides.pop("interaction_or", INTERACTION_OR[dgm_id])
    if dgm_id != "null":
        coefficients["x:z5"] = math.log(interaction_or)
    mechanism = "MCAR" if dgm_id == "4" else "MAR"
    # unit slopes on the log-odds of being MISSING: observation is least
    # likely exactly where the model signal sits (high risk factors, outcome 1)
    slope = 0.0 if mechanism == "MCAR" else -1.0
    alphas = {k: slope for k in ("z1", "z2", "z3", "z4", "z5", "y")}
    spec = DgmSpec(
        dgm=dgm_id,
        n_obs=n_obs,
        mechanism=mechanism,
        z5_mode="continuous" if dgm_id == "5" else "binary",
        z5_prevalence=0.01 if dgm_id == "6" else 0.30,
        coefficients=coefficients,
        alphas=alphas,
    )
    if "coefficients" in overrides:
        merged = dict(coefficients)
        merged.update(overrides.pop("coefficients"))
        spec = replace(spec, coefficients=merged)
    if overrides:
        spec = replace(spec, **overrides)
    return spec


def generate_covariates(spec, rng, n_obs=None):
    """I.i.d. covariate rows (the outcome column is not present yet)."""
    n = spec.n_obs if n_obs is None else int(n_obs)
    z1 = (rng.random(n) < 0.3).astype(np.float64)
    age = rng.normal(70.0, 10.0, n)
    z2 = (age - 70.0) / 10.0
    z3 = (rng.random(n) < 0.5).astype(np.float64)
    z4 = rng.beta(1.0, 1.2, n)
    if spec.z5_mode == "binary":
        z5 = (rng.random(n) < spec.z5_prevalence).astype(np.float64)
    else:
        z5 = rng.normal(0.0, spec.z5_sigma, n)
    x = (rng.random(n) < spec.x_prevalence).astype(np.float64)
    cols = [s for s in spec.variable_specs() if s.name != "y"]
    grid = {"z1": z1, "z2": z2, "z3": z3, "z4": z4, "z5": z5, "x": x}
    if spec.has_interaction:
        grid["xz"] = x * z5
    values = np.column_stack([grid[s.name] for s in cols])
    return Dataset(cols, values, None, validate=False)


def _linear_predictor(data, spec):
    eta = np.full(data.n_obs, spec.coefficients["(intercept)"])
    for name in ("z1", "z2", "z3", "z4", "z5", "x"):
        eta += spec.coefficients[name] * data.column(name)
    if spec.has_interaction:
        eta += spec.coefficients["x:z5"] * data.column("x") * data.column("z5")
    return eta


def generate_outcome(data, spec, rng):
    """Bernoulli outcome from the logistic model; returns data with ``y``
    prepended."""
    eta = _linear_predictor(data, spec)
    y = (rng.random(data.n_obs) < expit(eta)).astype(np.float64)
    cols = (VariableSpec("y", "binary", "outcome"),) + data.columns
    values = np.column_stack([y, data.values])
    mask = np.column_stack([np.ones(data.n_obs, dtype=bool), data.mask])
    return Dataset(cols, values, mask, validate=False)


def _missingness_scores(data, spec):
    s = np.zeros(data.n_obs)
    for name in ("z1", "z2", "z3", "z4", "z5"):
        s += spec.alphas[name] * data.column(name)
    s += spec.alphas["y"] * data.column("y")
    return s


def calibrate_alpha0(spec, rng, n_probe=1_000_000, tol=1e-3):
    """Missingness intercept giving the target observed proportion.

    MCAR has the closed form logit(target).  Otherwise bisect on a fresh
    probe sample of ``n_probe`` rows until the mean observation probability
    is within ``tol`` of the target.
    """
    if all(v == 0.0 for v in spec.alphas.values()):
        return float(logit(spec.target_observed))
    probe = generate_outcome(generate_covariates(spec, rng, n_probe), spec, rng)
    s = _missingness_scores(probe, spec)
    lo, hi = -20.0, 20.0
    p_lo = float(expit(lo + s).mean())
    p_hi = float(expit(hi + s).mean())
    if not (p_lo <= spec.target_observed <= p_hi):
        raise CalibrationError(
            f"bracket failure: [{p_lo:.4f}, {p_hi:.4f}] misses {spec.target_observed}"
        )
    mid = 0.0
    for _ in range(200):
        mid = (lo + hi) / 2.0
        p = float(expit(mid + s).mean())
        if abs(p - spec.target_observed) <= tol or (hi - lo) < 1e-10:
            return mid
        if p < spec.target_observed:
            lo = mid
        else:
            hi = mid
    return mid


def impose_missingness(data, spec, alpha0, rng):
    """Mask the covariate (and its interaction) where the observation
    indicator comes up zero."""
    prob = expit(alpha0 + _missingness_scores(data, spec))
    observed = rng.random(data.n_obs) < prob
    mask = data.mask.copy()
    mask[:, data.index("x")] &= observed
    if "xz" in data.names:
        mask[:, data.index("xz")] &= observed
    return Dataset(data.columns, data.values, mask, validate=False)


@dataclass(frozen=True)
class SimReplicate:
    """One generated incomplete dataset and the coefficients behind it."""

    dgm: str
    replicate: int
    seed: tuple
    dataset: Dataset
    truth: dict


def _replicate_rng(base_seed, dgm_id, replicate, channel):
    code = DGM_IDS.index(dgm_id)
    return np.random.default_rng(
        np.random.SeedSequence((int(base_seed), code, int(replicate), int(channel)))
    )


def _method_seed(base_seed, dgm_id, replicate, method):
    code = DGM_IDS.index(dgm_id)
    mcode = 10 + (STRATEGIES.index(method) if method in STRATEGIES else 99)
    ss = np.random.SeedSequence((int(base_seed), code, int(replicate), mcode))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def generate_replicate(spec, alpha0, base_seed, replicate):
    """Deterministically keyed draw of one incomplete dataset."""
    rng = _replicate_rng(base_seed, spec.dgm, replicate, 0)
    data = generate_outcome(generate_covariates(spec, rng), spec, rng)
    data = impose_missingness(data, spec, alpha0, rng)
    return SimReplicate(
        dgm=spec.dgm,
        replicate=replicate,
        seed=(base_seed, spec.dgm, replicate),
        dataset=data,
        truth=spec.truth(),
    )


@dataclass
class StudyResult:
    """Long-format replicate rows plus study-level diagnostics."""

    rows: list
    diagnostics: dict


def _estimates_to_rows(dgm, replicate, method, estimates, truth):
    rows = []
    for est in estimates:
        rows.append(
            {
                "dgm": dgm,
                "replicate": replicate,
                "method": method,
                "term": est.term,
                "estimate": est.estimate,
                "se": est.se,
                "ci_low": est.ci_low,
                "ci_high": est.ci_high,
                "truth": truth.get(est.term),
                "failed_flag": 0,
            }
        )
    return rows


def _failed_rows(dgm, replicate, method, formula, truth):
    return [
        {
            "dgm": dgm,
            "replicate": replicate,
            "method": method,
            "term": term,
            "estimate": None,
            "se": None,
            "ci_low": None,
            "ci_high": None,
            "truth": truth.get(term),
            "failed_flag": 1,
        }
        for term in formula.term_names()
    ]


def _run_replicate(spec, alpha0, base_seed, replicate, methods, cfg):
    rep = generate_replicate(spec, alpha0, base_seed, replicate)
    formula = spec.formula()
    truth = rep.truth
    ledger = _FitLedger()
    rows = []
    failures = []
    for method in (COMPLETE_CASE,) + tuple(m for m in methods if m != COMPLETE_CASE):
        try:
            if method == COMPLETE_CASE:
                estimates = complete_case_fit(rep.dataset, formula, ledger=ledger)
            else:
                mcfg = replace(
                    cfg,
                    strategy=method,
                    seed=_method_seed(base_seed, spec.dgm, replicate, method),
                    sia_moderator="z5" if method == "sia" else cfg.sia_moderator,
                )
                imputed = impute(rep.dataset, formula, mcfg)
                ledger.max_score_norm = max(
                    ledger.max_score_norm, imputed.diagnostics["max_score_norm"]
                )
                ledger.n_fits += imputed.diagnostics["n_fits"]
                estimates = pooled_fit(imputed, formula, ledger=ledger)
            rows.extend(_estimates_to_rows(spec.dgm, replicate, method, estimates, truth))
        except (InterimputeError, np.linalg.LinAlgError) as exc:
            failures.append((spec.dgm, replicate, method, str(exc)))
            rows.extend(_failed_rows(spec.dgm, replicate, method, formula, truth))
    return rows, failures, ledger.max_score_norm, ledger.n_fits


def _run_replicate_star(args):
    return _run_replicate(*args)


def run_study(dgm_ids, methods, n_sim, base_seed, cfg=None, n_obs=None, workers=1,
              dgm_overrides=None, calibration_probe=1_000_000):
    """Generate, impute and pool across mechanisms and replicates.

    Every method sees the identical incomplete dataset within a replicate; a
    complete-case comparator is always included.  Failures are recorded, not
    dropped.  Results are sorted by (dgm, replicate, method, term) so output
    does not depend on worker scheduling.
    """
    cfg = cfg or ImputationConfig()
    dgm_ids = [str(d) for d in dgm_ids]
    methods = list(methods)
    for m in methods:
        if m not in STRATEGIES + (COMPLETE_CASE,):
            raise InterimputeError(f"unknown method {m!r}")
    tasks = []
    alpha0s = {}
    for dgm_id in dgm_ids:
        spec = make_dgm(dgm_id, **(dict(dgm_overrides or {})))
        if n_obs is not None:
            spec = replace(spec, n_obs=int(n_obs))
        cal_rng = _replicate_rng(base_seed, dgm_id, 0, 1)
        alpha0s[dgm_id] = calibrate_alpha0(spec, cal_rng, n_probe=calibration_probe)
        for r in range(n_sim):
            tasks.append((spec, alpha0s[dgm_id], base_seed, r, methods, cfg))

    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_replicate_star, tasks, chunksize=1))
    else:
        results = [_run_replicate_star(t) for t in tasks]

    rows = []
    failures = []
    max_score = 0.0
    n_fits = 0
    for rep_rows, rep_failures, rep_score, rep_fits in results:
        rows.extend(rep_rows)
        failures.extend(rep_failures)
        max_score = max(max_score, rep_score)
        n_fits += rep_fits

    method_rank = {m: i for i, m in enumerate((COMPLETE_CASE,) + METHOD_ORDER)}
    dgm_rank = {d: i for i, d in enumerate(DGM_IDS)}
    rows.sort(
        key=lambda r: (
            dgm_rank[r["dgm"]],
            r["replicate"],
            method_rank.get(r["method"], 99),
            r["term"],
        )
    )
    return StudyResult(
        rows=rows,
        diagnostics={
            "alpha0": alpha0s,
            "failures": failures,
            "max_converged_score_norm": max_score,
            "n_fits": n_fits,
        },
    )
