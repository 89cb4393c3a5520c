"""The four imputation strategies over a shared chained-equations core.

All strategies impute a single partially observed binary covariate (and,
where one exists, the materialised interaction column masked alongside it)
and return ``m`` completed datasets.  Observed cells are never rewritten.

passive   impute the covariate, then recompute interaction = product
jav       impute covariate and interaction as unrelated variables
sia       stratify on the interaction partner, impute within strata, append
smcfcs    rejection-sample the covariate against the substantive likelihood
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import Dataset, ModelFormula
from .errors import (
    DegenerateOutcomeError,
    InterimputeError,
    NoDonorsError,
    SingularDesignError,
    StratumError,
    StrategyError,
)
from .glm import (
    bernoulli_loglik,
    draw_params,
    fit_linear,
    fit_logistic,
    impute_binary,
    impute_continuous,
)

STRATEGIES = ("passive", "jav", "sia", "smcfcs")

# numerical failures inside a chain surface as strategy errors with context
_FIT_ERRORS = (InterimputeError, np.linalg.LinAlgError)


@dataclass
class ImputationConfig:
    """Strategy selector plus shared imputation settings."""

    strategy: str = "smcfcs"
    m: int = 10
    iterations: int = 10
    seed: int | None = None
    sia_groups: int = 5
    sia_moderator: str | None = None
    smcfcs_max_rejections: int = 1000

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise InterimputeError(f"unknown strategy {self.strategy!r}")
        if self.m < 2:
            raise InterimputeError("m must be at least 2")
        if self.iterations < 1:
            raise InterimputeError("iterations must be at least 1")
        if self.sia_groups < 2:
            raise InterimputeError("sia_groups must be at least 2")


@dataclass
class ImputedSet:
    """m completed datasets plus provenance and solver diagnostics.

    ``analysis_formula``/``term_aliases`` are set when a strategy analyses a
    transformed moderator (quintile-coded continuous partner) and map fitted
    terms back to the reporting terms.
    """

    datasets: list
    strategy: str
    seed: object
    iterations: int
    diagnostics: dict = field(default_factory=dict)
    analysis_formula: ModelFormula | None = None
    term_aliases: dict = field(default_factory=dict)

    @property
    def provenance(self):
        return (self.strategy, self.seed, self.iterations)

    @property
    def m(self):
        return len(self.datasets)


def impute(data, formula, cfg, rng=None):
    """Dispatch on ``cfg.strategy``."""
    fn = {
        "passive": impute_passive,
        "jav": impute_jav,
        "sia": impute_sia,
        "smcfcs": impute_smcfcs,
    }[cfg.strategy]
    return fn(data, formula, cfg, rng)


# -- shared plumbing ---------------------------------------------------------


def initial_fill(data, rng):
    """Fill every missing cell with a uniform draw from the column's
    observed values; returns a fully observed dataset."""
    values = data.values.copy()
    for j, col in enumerate(data.columns):
        obs = data.mask[:, j]
        n_mis = int((~obs).sum())
        if n_mis == 0:
            continue
        donors = values[obs, j]
        if donors.size == 0:
            raise NoDonorsError(f"no observed donors for {col.name!r}")
        values[~obs, j] = donors[rng.integers(0, donors.size, n_mis)]
    return Dataset(data.columns, values, None, validate=False)


def _dataset_rngs(cfg, rng, m):
    root = np.random.default_rng(cfg.seed) if rng is None else rng
    return root.spawn(m)


@dataclass
class _Problem:
    """Resolved column structure for one imputation run."""

    x: str                      # the partially observed covariate
    x_idx: int
    missing: np.ndarray         # row indices where x is masked
    derived: str | None         # materialised interaction masked with x
    derived_idx: int | None
    moderator: str | None       # the interaction's fully observed member
    outcome: str


def _trivial_copies(data, cfg):
    """m identical copies when there is nothing to impute."""
    if not data.mask.all():
        return None
    ledger = _FitLedger()
    return _finish(data, [data.values.copy() for _ in range(cfg.m)], ledger, cfg)


def _resolve_problem(data, formula, need_derived=False):
    if formula.outcome not in data.names:
        raise StrategyError(f"outcome {formula.outcome!r} not in data")
    if not data.observed(formula.outcome).all():
        raise StrategyError("outcome has missing values; it must be fully observed")
    part = [c.name for j, c in enumerate(data.columns) if not data.mask[:, j].all()]
    plain = [n for n in part if data.spec(n).role != "derived-interaction"]
    if len(plain) != 1:
        raise StrategyError(
            f"exactly one partially observed covariate expected, found {plain!r}"
        )
    x = plain[0]
    derived = None
    moderator = None
    for c in data.columns:
        if c.role == "derived-interaction" and x in c.parents:
            derived = c.name
            moderator = c.parents[0] if c.parents[1] == x else c.parents[1]
            break
    extra = [n for n in part if n not in (x, derived)]
    if extra:
        raise StrategyError(f"unsupported extra partially observed columns {extra!r}")
    if derived is not None:
        if not np.array_equal(data.observed(derived), data.observed(x) & data.observed(moderator)):
            raise StrategyError(f"{derived!r} must be masked exactly where {x!r} is")
        if not data.observed(moderator).all():
            raise StrategyError(f"interaction parent {moderator!r} must be fully observed")
    if need_derived and derived is None:
        raise StrategyError("strategy needs a materialised interaction column")
    if moderator is None and formula.interaction_terms:
        for a, b in formula.interaction_terms:
            if x in (a, b):
                moderator = a if b == x else b
    return _Problem(
        x=x,
        x_idx=data.index(x),
        missing=np.flatnonzero(~data.observed(x)),
        derived=derived,
        derived_idx=None if derived is None else data.index(derived),
        moderator=moderator,
        outcome=formula.outcome,
    )


def _predictor_matrix(data, rows, names):
    """Intercept + named columns (current values, mask ignored) at ``rows``."""
    cols = [np.ones(rows.size)]
    cols += [data.values[rows, data.index(n)] for n in names]
    return np.column_stack(cols)


def _imputation_model_terms(formula, exclude):
    """Outcome first, then every main term not excluded (standard FCS set)."""
    return [formula.outcome] + [t for t in formula.main_terms if t not in exclude]


def _augment_rows(design, target):
    """Pseudo-observations guarding binary imputation fits against perfect
    prediction (White-Royston style, as mainstream FCS engines apply).

    Four rows per non-intercept column, displaced half an sd around the
    column means (clamped to the observed range) and carrying both outcome
    values; the added weight totals the parameter count.
    """
    n, p = design.shape
    mu = design.mean(axis=0)
    sd = design.std(axis=0)
    lo = design.min(axis=0)
    hi = design.max(axis=0)
    extra, yextra = [], []
    for j in range(1, p):
        for yval in (0.0, 1.0):
            for sign in (0.5, -0.5):
                row = mu.copy()
                row[0] = 1.0
                row[j] = min(max(mu[j] + sign * sd[j], lo[j]), hi[j])
                extra.append(row)
                yextra.append(yval)
    if not extra:
        return design, target, None
    k = len(extra)
    aug_design = np.vstack([design, np.asarray(extra)])
    aug_y = np.concatenate([target, np.asarray(yextra)])
    weights = np.concatenate([np.ones(n), np.full(k, p / k)])
    return aug_design, aug_y, weights


def _fit_binary_imputation(design, target):
    """Augmented logistic fit used by the mice-style strategies."""
    aug_design, aug_y, weights = _augment_rows(design, target)
    return fit_logistic(aug_design, aug_y, weights=weights)


class _FitLedger:
    """Tracks score norms and separation flags across the fits of one run."""

    def __init__(self):
        self.max_score_norm = 0.0
        self.n_fits = 0
        self.separations = []

    def record(self, fit, dataset=-1, iteration=-1, model=""):
        self.n_fits += 1
        if fit.converged:
            self.max_score_norm = max(self.max_score_norm, fit.score_norm)
        if fit.separation_flag:
            self.separations.append((dataset, iteration, model))
        return fit

    def diagnostics(self, **extra):
        out = {
            "max_score_norm": self.max_score_norm,
            "n_fits": self.n_fits,
            "separations": self.separations,
        }
        out.update(extra)
        return out


def _finish(data, values_list, ledger, cfg, analysis_formula=None, term_aliases=None,
            extra_columns=None, **extra_diag):
    datasets = []
    for vals in values_list:
        ds = Dataset(data.columns, vals, None, validate=False)
        if extra_columns:
            for spec, col in extra_columns:
                ds = ds.add_column(spec, col)
        datasets.append(ds)
    return ImputedSet(
        datasets=datasets,
        strategy=cfg.strategy,
        seed=cfg.seed,
        iterations=cfg.iterations,
        diagnostics=ledger.diagnostics(**extra_diag),
        analysis_formula=analysis_formula,
        term_aliases=term_aliases or {},
    )


def _wrap(exc, dataset, iteration):
    return StrategyError(f"dataset {dataset}, iteration {iteration}: {exc}")


# -- passive ------------------------------------------------------------------


def impute_passive(data, formula, cfg, rng=None):
    """Impute the covariate from X ~ Y + remaining mains, then recompute the
    interaction as the product of its parents."""
    trivial = _trivial_copies(data, cfg)
    if trivial is not None:
        return trivial
    prob = _resolve_problem(data, formula)
    ledger = _FitLedger()
    obs_rows = np.flatnonzero(data.observed(prob.x))
    mis = prob.missing
    terms = _imputation_model_terms(formula, exclude={prob.x})
    design_obs = _predictor_matrix(data, obs_rows, terms)
    design_mis = _predictor_matrix(data, mis, terms)
    x_obs = data.values[obs_rows, prob.x_idx]

    fit = None
    if mis.size:
        try:
            fit = ledger.record(_fit_binary_imputation(design_obs, x_obs), model="x")
        except _FIT_ERRORS as exc:
            raise _wrap(exc, 0, 0) from exc

    out = []
    for ell, chain_rng in enumerate(_dataset_rngs(cfg, rng, cfg.m)):
        vals = data.values.copy()
        if mis.size:
            _fill_column(vals, data, prob.x_idx, mis, chain_rng)
            for t in range(cfg.iterations):
                try:
                    draw = draw_params(fit, chain_rng)
                except _FIT_ERRORS as exc:
                    raise _wrap(exc, ell, t) from exc
                vals[mis, prob.x_idx] = impute_binary(draw, design_mis, chain_rng)
        _recompute_derived(vals, data, prob)
        out.append(vals)
    return _finish(data, out, ledger, cfg)


def _fill_column(vals, data, j, mis, rng):
    donors = data.values[data.mask[:, j], j]
    if donors.size == 0:
        raise NoDonorsError(f"no observed donors for {data.columns[j].name!r}")
    vals[mis, j] = donors[rng.integers(0, donors.size, mis.size)]


def _recompute_derived(vals, data, prob):
    """Write parent products into originally-missing interaction cells."""
    if prob.derived_idx is None:
        return
    rows = np.flatnonzero(~data.observed(prob.derived))
    a, b = data.spec(prob.derived).parents
    vals[rows, prob.derived_idx] = vals[rows, data.index(a)] * vals[rows, data.index(b)]


# -- just another variable ----------------------------------------------------


def impute_jav(data, formula, cfg, rng=None):
    """Chained equations over (X, XZ) with no consistency constraint.

    Each variable gets its own model with the other among the predictors:
    logistic for the covariate, and logistic or linear for the interaction
    column by its kind.  Nothing ties the imputed interaction to the parent
    product.
    """
    trivial = _trivial_copies(data, cfg)
    if trivial is not None:
        return trivial
    prob = _resolve_problem(data, formula)
    if prob.derived is None:
        # no interaction column: nothing to treat as its own variable, the
        # strategy degenerates to plain covariate imputation
        return impute_passive(data, formula, cfg, rng)
    ledger = _FitLedger()
    mis = prob.missing
    obs_rows = np.flatnonzero(data.observed(prob.x))
    xz_kind = data.spec(prob.derived).kind

    x_terms = _imputation_model_terms(formula, exclude={prob.x}) + [prob.derived]
    xz_terms = _imputation_model_terms(formula, exclude={prob.x}) + [prob.x]

    fit_x = fit_xz = None
    if mis.size:
        dx = _predictor_matrix(data, obs_rows, x_terms)
        dxz = _predictor_matrix(data, obs_rows, xz_terms)
        try:
            fit_x = ledger.record(
                _fit_binary_imputation(dx, data.values[obs_rows, prob.x_idx]), model="x")
            xz_obs = data.values[obs_rows, prob.derived_idx]
            if xz_kind == "binary":
                fit_xz = ledger.record(_fit_binary_imputation(dxz, xz_obs), model="xz")
            else:
                fit_xz = ledger.record(fit_linear(dxz, xz_obs), model="xz")
        except _FIT_ERRORS as exc:
            raise _wrap(exc, 0, 0) from exc

    # predictor buffers at the missing rows; the trailing column is the
    # chained one and is refreshed each half-cycle
    mis_x_design = _predictor_matrix(data, mis, x_terms)
    mis_xz_design = _predictor_matrix(data, mis, xz_terms)

    out = []
    for ell, chain_rng in enumerate(_dataset_rngs(cfg, rng, cfg.m)):
        vals = data.values.copy()
        if mis.size:
            _fill_column(vals, data, prob.x_idx, mis, chain_rng)
            _fill_column(vals, data, prob.derived_idx, mis, chain_rng)
            for t in range(cfg.iterations):
                try:
                    mis_x_design[:, -1] = vals[mis, prob.derived_idx]
                    draw = draw_params(fit_x, chain_rng)
                    vals[mis, prob.x_idx] = impute_binary(draw, mis_x_design, chain_rng)
                    mis_xz_design[:, -1] = vals[mis, prob.x_idx]
                    draw = draw_params(fit_xz, chain_rng)
                    if xz_kind == "binary":
                        vals[mis, prob.derived_idx] = impute_binary(
                            draw, mis_xz_design, chain_rng)
                    else:
                        vals[mis, prob.derived_idx] = impute_continuous(
                            draw, mis_xz_design, chain_rng)
                except _FIT_ERRORS as exc:
                    raise _wrap(exc, ell, t) from exc
        out.append(vals)
    return _finish(data, out, ledger, cfg)


# -- stratify-impute-append ----------------------------------------------------


def stratify(data, z_name, groups, min_rows=10):
    """Partition rows by the fully observed stratifier.

    Binary columns give the two value strata; continuous columns are cut at
    empirical quantiles (type-7, ties to the lower stratum) into ``groups``
    near-equal strata.  A stratum below ``min_rows`` rows, or one with a
    constant outcome, is an error: within-stratum fits would be degenerate.
    """
    if not data.observed(z_name).all():
        raise StratumError(f"stratifier {z_name!r} has missing values")
    z = data.column(z_name)
    if data.spec(z_name).kind == "binary":
        strata = [("0", np.flatnonzero(z == 0.0)), ("1", np.flatnonzero(z == 1.0))]
    else:
        cuts = np.quantile(z, np.arange(1, groups) / groups, method="linear")
        which = np.searchsorted(cuts, z, side="left")
        strata = [(f"q{k + 1}", np.flatnonzero(which == k)) for k in range(groups)]
    outcome = next((c.name for c in data.columns if c.role == "outcome"), None)
    for label, idx in strata:
        if idx.size < min_rows:
            raise StratumError(f"stratum {label!r} too small/degenerate ({idx.size} rows)")
        if outcome is not None:
            yv = data.values[idx, data.index(outcome)]
            if yv.min() == yv.max():
                raise StratumError(f"stratum {label!r} too small/degenerate (constant outcome)")
    return strata


def impute_sia(data, formula, cfg, rng=None):
    """Impute the covariate separately within strata of the moderator.

    The moderator is dropped from the within-stratum model (it is constant or
    nearly so there).  With a continuous moderator the strata are quintiles
    and the returned sets carry an analysis formula in which the moderator is
    replaced by its quintile code (1..groups) entering linearly.
    """
    trivial = _trivial_copies(data, cfg)
    if trivial is not None:
        return trivial
    prob = _resolve_problem(data, formula)
    moderator = cfg.sia_moderator or prob.moderator
    if moderator is None:
        raise StrategyError("sia needs a moderator (interaction partner or cfg.sia_moderator)")
    if not data.observed(moderator).all():
        raise StrategyError(f"moderator {moderator!r} must be fully observed")
    ledger = _FitLedger()
    mis = prob.missing
    strata = stratify(data, moderator, cfg.sia_groups)
    continuous_mod = data.spec(moderator).kind == "continuous"

    terms = _imputation_model_terms(formula, exclude={prob.x, moderator})
    obs_mask = data.observed(prob.x)
    pieces = []
    for label, idx in strata:
        s_obs = idx[obs_mask[idx]]
        s_mis = idx[~obs_mask[idx]]
        fit = None
        if s_mis.size:
            design = _predictor_matrix(data, s_obs, terms)
            try:
                fit = ledger.record(
                    _fit_binary_imputation(design, data.values[s_obs, prob.x_idx]),
                    model=f"x[{label}]",
                )
            except (SingularDesignError, DegenerateOutcomeError) as exc:
                raise StratumError(f"stratum {label!r}: {exc}") from exc
        pieces.append((label, s_mis, fit, _predictor_matrix(data, s_mis, terms)))

    out = []
    for ell, chain_rng in enumerate(_dataset_rngs(cfg, rng, cfg.m)):
        vals = data.values.copy()
        if mis.size:
            _fill_column(vals, data, prob.x_idx, mis, chain_rng)
            for t in range(cfg.iterations):
                for label, s_mis, fit, design in pieces:
                    if not s_mis.size:
                        continue
                    try:
                        draw = draw_params(fit, chain_rng)
                        vals[s_mis, prob.x_idx] = impute_binary(draw, design, chain_rng)
                    except _FIT_ERRORS as exc:
                        raise _wrap(exc, ell, t) from exc
        _recompute_derived(vals, data, prob)
        out.append(vals)

    analysis_formula = None
    aliases = {}
    extra_columns = None
    if continuous_mod:
        qname = f"{moderator}_q"
        codes = np.empty(data.n_obs)
        for k, (_, idx) in enumerate(strata):
            codes[idx] = float(k + 1)
        from .data import VariableSpec

        extra_columns = [(VariableSpec(qname, "continuous", "covariate"), codes)]
        analysis_formula = formula.rename({moderator: qname})
        aliases = {qname: moderator}
        for a, b in formula.interaction_terms:
            if moderator in (a, b):
                ra, rb = (qname if a == moderator else a), (qname if b == moderator else b)
                aliases[f"{ra}:{rb}"] = f"{a}:{b}"
    return _finish(data, out, ledger, cfg,
                   analysis_formula=analysis_formula,
                   term_aliases=aliases,
                   extra_columns=extra_columns)


# -- substantive-model-compatible FCS ------------------------------------------


class SmcfcsDesign:
    """Design-row builders for the two working models of the rejection step.

    The substantive model is the analyst's logistic regression (with its
    interactions); the covariate model regresses the partially observed
    covariate on every other main term.
    """

    def __init__(self, formula, x_name):
        if x_name not in formula.main_terms:
            raise InterimputeError(f"{x_name!r} is not a main term")
        self.formula = formula
        self.x_name = x_name
        self.covariate_terms = [t for t in formula.main_terms if t != x_name]

    def _value(self, name, z_values, x):
        if name == self.x_name:
            return x
        return z_values[name]

    def substantive_matrix(self, z_values, x):
        """Rows of the substantive design with the covariate forced to ``x``."""
        x = np.asarray(x, dtype=np.float64)
        n = x.shape[0]
        cols = [np.ones(n)]
        for t in self.formula.main_terms:
            cols.append(np.broadcast_to(self._value(t, z_values, x), (n,)))
        for a, b in self.formula.interaction_terms:
            cols.append(self._value(a, z_values, x) * self._value(b, z_values, x))
        return np.column_stack(cols)

    def covariate_matrix(self, z_values):
        arrays = [np.asarray(z_values[t], dtype=np.float64) for t in self.covariate_terms]
        n = arrays[0].shape[0] if arrays else 1
        return np.column_stack([np.ones(n)] + arrays)


def _cell_log_likelihoods(y, z_values, psi, phi, design):
    n = np.asarray(y, dtype=np.float64).shape[0]
    ones = np.ones(n)
    eta1 = design.substantive_matrix(z_values, ones) @ psi.coefficients
    eta0 = design.substantive_matrix(z_values, np.zeros(n)) @ psi.coefficients
    logf1 = bernoulli_loglik(y, eta1)
    logf0 = bernoulli_loglik(y, eta0)
    eta_g = design.covariate_matrix(z_values) @ phi.coefficients
    logg1 = -np.logaddexp(0.0, -eta_g)
    logg0 = -np.logaddexp(0.0, eta_g)
    return logf1, logf0, logg1, logg0


def _direct_prob(logf1, logf0, logg1, logg0):
    a = logf1 + logg1
    b = logf0 + logg0
    return np.exp(a - np.logaddexp(a, b))


def smcfcs_cell_prob(y, z_row, psi, phi, design):
    """P(X=1 | Y=y, Z=z) implied by the substantive draw ``psi`` and the
    covariate-model draw ``phi``."""
    z_values = {k: np.atleast_1d(np.float64(v)) for k, v in z_row.items()}
    parts = _cell_log_likelihoods(np.atleast_1d(np.float64(y)), z_values, psi, phi, design)
    return float(_direct_prob(*parts)[0])


def _rejection_sample_batch(logf1, logf0, logg1, logg0, rng, max_rejections):
    """Propose from the covariate model, accept against the substantive
    likelihood ratio.  Cells still pending after ``max_rejections`` rounds
    fall back to the exact conditional; the fallback count is returned."""
    n = logf1.shape[0]
    out = np.empty(n)
    g1 = np.exp(logg1)
    logfmax = np.maximum(logf1, logf0)
    acc1 = logf1 - logfmax
    acc0 = logf0 - logfmax
    pending = np.arange(n)
    for _ in range(max_rejections):
        if pending.size == 0:
            break
        proposal = rng.random(pending.size) < g1[pending]
        logacc = np.where(proposal, acc1[pending], acc0[pending])
        with np.errstate(divide="ignore"):
            accept = np.log(rng.random(pending.size)) <= logacc
        out[pending[accept]] = proposal[accept].astype(np.float64)
        pending = pending[~accept]
    fallbacks = pending.size
    if fallbacks:
        p1 = _direct_prob(logf1[pending], logf0[pending], logg1[pending], logg0[pending])
        out[pending] = (rng.random(fallbacks) < p1).astype(np.float64)
    return out, fallbacks


def smcfcs_reject_sample(y, z_row, psi, phi, rng, max_rejections=1000, design=None):
    """Draw one value of the covariate for a single cell via rejection
    sampling; distributionally identical to ``smcfcs_cell_prob``."""
    if design is None:
        raise InterimputeError("smcfcs_reject_sample needs the working-model design")
    z_values = {k: np.atleast_1d(np.float64(v)) for k, v in z_row.items()}
    parts = _cell_log_likelihoods(np.atleast_1d(np.float64(y)), z_values, psi, phi, design)
    vals, _ = _rejection_sample_batch(*parts, rng, max_rejections)
    return float(vals[0])


def impute_smcfcs(data, formula, cfg, rng=None):
    """FCS whose covariate draws are made compatible with the substantive
    model by rejection sampling; the interaction is recomputed every cycle."""
    trivial = _trivial_copies(data, cfg)
    if trivial is not None:
        return trivial
    prob = _resolve_problem(data, formula)
    if data.spec(prob.x).kind != "binary":
        raise StrategyError("smcfcs imputes a binary covariate")
    ledger = _FitLedger()
    mis = prob.missing
    design = SmcfcsDesign(formula, prob.x)
    y_all = data.column(formula.outcome)
    y_mis = y_all[mis]

    z_values_mis = {
        t: data.values[mis, data.index(t)] for t in formula.main_terms if t != prob.x
    }
    d1_mis = design.substantive_matrix(z_values_mis, np.ones(mis.size)) if mis.size else None
    d0_mis = design.substantive_matrix(z_values_mis, np.zeros(mis.size)) if mis.size else None
    g_mis = design.covariate_matrix(z_values_mis) if mis.size else None

    subst_terms = list(formula.main_terms)
    cov_terms = design.covariate_terms

    out = []
    fallbacks = 0
    for ell, chain_rng in enumerate(_dataset_rngs(cfg, rng, cfg.m)):
        vals = data.values.copy()
        if mis.size:
            _fill_column(vals, data, prob.x_idx, mis, chain_rng)
            _recompute_derived(vals, data, prob)
            psi_start = phi_start = None
            for t in range(cfg.iterations):
                try:
                    subst = np.column_stack(
                        [np.ones(data.n_obs)]
                        + [vals[:, data.index(n)] for n in subst_terms]
                        + [
                            vals[:, data.index(a)] * vals[:, data.index(b)]
                            for a, b in formula.interaction_terms
                        ]
                    )
                    fit_s = ledger.record(
                        fit_logistic(subst, y_all, start=psi_start),
                        dataset=ell, iteration=t, model="substantive",
                    )
                    psi_start = fit_s.coefficients
                    covariate = np.column_stack(
                        [np.ones(data.n_obs)]
                        + [vals[:, data.index(n)] for n in cov_terms]
                    )
                    fit_c = ledger.record(
                        fit_logistic(covariate, vals[:, prob.x_idx], start=phi_start),
                        dataset=ell, iteration=t, model="covariate",
                    )
                    phi_start = fit_c.coefficients
                    psi = draw_params(fit_s, chain_rng)
                    phi = draw_params(fit_c, chain_rng)
                except _FIT_ERRORS as exc:
                    raise _wrap(exc, ell, t) from exc
                eta1 = d1_mis @ psi.coefficients
                eta0 = d0_mis @ psi.coefficients
                logf1 = bernoulli_loglik(y_mis, eta1)
                logf0 = bernoulli_loglik(y_mis, eta0)
                eta_g = g_mis @ phi.coefficients
                logg1 = -np.logaddexp(0.0, -eta_g)
                logg0 = -np.logaddexp(0.0, eta_g)
                drawn, n_fb = _rejection_sample_batch(
                    logf1, logf0, logg1, logg0, chain_rng, cfg.smcfcs_max_rejections
                )
                fallbacks += n_fb
                vals[mis, prob.x_idx] = drawn
                _recompute_derived(vals, data, prob)
        out.append(vals)
    return _finish(data, out, ledger, cfg, rejection_fallbacks=fallbacks)
