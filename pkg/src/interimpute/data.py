"""Rectangular data with an explicit missingness mask.

A :class:`Dataset` is a fixed grid of float values plus a boolean mask
(``True`` = observed) and per-column metadata.  Missingness is carried by the
mask rather than a sentinel so that ``0.0`` stays a legal observed value.
Interaction columns are stored materialised: the "just another variable"
strategy needs an interaction whose imputed value may disagree with the
product of its parents.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import (
    EmptyCompleteCaseError,
    FormulaError,
    IncompleteRowError,
    InterimputeError,
)

KINDS = ("binary", "continuous")
ROLES = ("outcome", "covariate", "exposure", "derived-interaction")


@dataclass(frozen=True)
class VariableSpec:
    """Name, measurement kind and modelling role of one column.

    ``parents`` names the two components of a derived interaction and must be
    ``None`` for every other role.
    """

    name: str
    kind: str
    role: str = "covariate"
    parents: tuple[str, str] | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InterimputeError(f"unknown variable kind {self.kind!r}")
        if self.role not in ROLES:
            raise InterimputeError(f"unknown variable role {self.role!r}")
        if self.role == "derived-interaction":
            if self.parents is None or len(self.parents) != 2:
                raise InterimputeError(
                    f"derived interaction {self.name!r} must name exactly two parents"
                )
        elif self.parents is not None:
            raise InterimputeError(f"{self.name!r}: only derived interactions have parents")


@dataclass(frozen=True)
class MissingnessReport:
    """Observed-cell counts per variable plus the complete-case count."""

    n_obs: int
    observed_counts: dict[str, int]
    n_complete_cases: int


class Dataset:
    """Immutable n_obs x n_var grid with mask and column specs.

    Mutation happens only through the explicit ``with_*`` copies used by the
    imputation engine, so a Dataset can be shared read-only across parallel
    simulation replicates.
    """

    def __init__(self, columns, values, mask=None, validate=True):
        self.columns = tuple(columns)
        self.values = np.asarray(values, dtype=np.float64)
        if self.values.ndim != 2:
            raise InterimputeError("values must be a 2-d array")
        if mask is None:
            mask = np.ones(self.values.shape, dtype=bool)
        self.mask = np.asarray(mask, dtype=bool)
        self._index = {c.name: i for i, c in enumerate(self.columns)}
        if len(self._index) != len(self.columns):
            raise InterimputeError("duplicate column names")
        if validate:
            self.validate()
        self.values.setflags(write=False)
        self.mask.setflags(write=False)

    # -- basic access -------------------------------------------------------

    @property
    def n_obs(self):
        return self.values.shape[0]

    @property
    def n_var(self):
        return self.values.shape[1]

    @property
    def names(self):
        return tuple(c.name for c in self.columns)

    def index(self, name):
        try:
            return self._index[name]
        except KeyError:
            raise FormulaError(f"unknown variable {name!r}") from None

    def spec(self, name):
        return self.columns[self.index(name)]

    def column(self, name):
        return self.values[:, self.index(name)]

    def observed(self, name):
        return self.mask[:, self.index(name)]

    # -- invariants ---------------------------------------------------------

    def validate(self):
        if self.mask.shape != self.values.shape:
            raise InterimputeError("mask and values must have identical shape")
        if len(self.columns) != self.values.shape[1]:
            raise InterimputeError("column specs do not match value grid width")
        outcomes = [c for c in self.columns if c.role == "outcome"]
        if len(outcomes) > 1:
            raise InterimputeError("at most one variable may have role outcome")
        for j, c in enumerate(self.columns):
            if c.kind == "binary":
                vals = self.values[self.mask[:, j], j]
                if vals.size and not np.isin(vals, (0.0, 1.0)).all():
                    raise InterimputeError(
                        f"binary column {c.name!r} contains values outside {{0, 1}}"
                    )
            if c.role == "derived-interaction":
                pa, pb = (self._index.get(p) for p in c.parents)
                if pa is None or pb is None:
                    raise InterimputeError(f"{c.name!r}: parent column missing")
                expected = self.mask[:, pa] & self.mask[:, pb]
                if not np.array_equal(self.mask[:, j], expected):
                    raise InterimputeError(
                        f"{c.name!r} must be observed exactly where both parents are"
                    )

    def check_derived_consistency(self):
        """Require every observed derived cell to equal the parent product.

        Run at ingestion; imputed output of the just-another-variable strategy
        deliberately breaks this, so it is not part of ``validate``.
        """
        for j, c in enumerate(self.columns):
            if c.role != "derived-interaction":
                continue
            obs = self.mask[:, j]
            prod = self.column(c.parents[0]) * self.column(c.parents[1])
            if not np.array_equal(self.values[obs, j], prod[obs]):
                raise InterimputeError(
                    f"{c.name!r} disagrees with {c.parents[0]}*{c.parents[1]} on observed rows"
                )

    # -- derived copies -----------------------------------------------------

    def with_values(self, values, mask=None, validate=False):
        return Dataset(self.columns, values, self.mask if mask is None else mask,
                       validate=validate)

    def with_column(self, name, values, observed=None):
        """Copy with one column's values (and optionally its mask) replaced."""
        j = self.index(name)
        new_values = self.values.copy()
        new_values[:, j] = values
        new_mask = self.mask
        if observed is not None:
            new_mask = self.mask.copy()
            new_mask[:, j] = observed
        return Dataset(self.columns, new_values, new_mask, validate=False)

    def add_column(self, spec, values, observed=None):
        if spec.name in self._index:
            raise InterimputeError(f"column {spec.name!r} already exists")
        new_values = np.column_stack([self.values, np.asarray(values, dtype=np.float64)])
        col_mask = np.ones(self.n_obs, dtype=bool) if observed is None else observed
        new_mask = np.column_stack([self.mask, col_mask])
        return Dataset(self.columns + (spec,), new_values, new_mask, validate=False)

    def complete_row_mask(self):
        return self.mask.all(axis=1)

    def missingness_report(self):
        counts = {c.name: int(self.mask[:, j].sum()) for j, c in enumerate(self.columns)}
        return MissingnessReport(
            n_obs=self.n_obs,
            observed_counts=counts,
            n_complete_cases=int(self.complete_row_mask().sum()),
        )


@dataclass(frozen=True)
class ModelFormula:
    """Outcome, main-effect terms, and interaction pairs.

    Interaction pairs must be built from the main terms; term order is the
    reporting order everywhere downstream.
    """

    outcome: str
    main_terms: tuple[str, ...]
    interaction_terms: tuple[tuple[str, str], ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "main_terms", tuple(self.main_terms))
        object.__setattr__(self, "interaction_terms",
                          tuple(tuple(p) for p in self.interaction_terms))
        seen = set()
        for t in (self.outcome,) + self.main_terms:
            if t in seen:
                raise FormulaError(f"duplicate term {t!r}")
            seen.add(t)
        pairs = set()
        for a, b in self.interaction_terms:
            if a not in self.main_terms or b not in self.main_terms:
                raise FormulaError(f"interaction {a}:{b} members must be main terms")
            key = frozenset((a, b))
            if key in pairs:
                raise FormulaError(f"duplicate interaction {a}:{b}")
            pairs.add(key)

    @classmethod
    def parse(cls, text):
        """Parse ``"y ~ a + b + a:b"`` into a formula."""
        if text.count("~") != 1:
            raise FormulaError(f"formula needs exactly one '~': {text!r}")
        lhs, rhs = (s.strip() for s in text.split("~"))
        if not lhs:
            raise FormulaError("formula has no outcome")
        mains, inters = [], []
        for raw in rhs.split("+"):
            term = raw.strip()
            if not term:
                raise FormulaError(f"empty term in {text!r}")
            if ":" in term:
                a, _, b = (s.strip() for s in term.partition(":"))
                if not a or not b:
                    raise FormulaError(f"bad interaction term {term!r}")
                inters.append((a, b))
            else:
                mains.append(term)
        return cls(outcome=lhs, main_terms=tuple(mains), interaction_terms=tuple(inters))

    def interaction_names(self):
        return tuple(f"{a}:{b}" for a, b in self.interaction_terms)

    def term_names(self):
        """Design-matrix column names: intercept, mains, interactions."""
        return ("(intercept)",) + self.main_terms + self.interaction_names()

    def without_interactions(self):
        return replace(self, interaction_terms=())

    def rename(self, mapping):
        """Copy with variables renamed per ``mapping`` (missing keys kept)."""
        return ModelFormula(
            outcome=mapping.get(self.outcome, self.outcome),
            main_terms=tuple(mapping.get(t, t) for t in self.main_terms),
            interaction_terms=tuple(
                (mapping.get(a, a), mapping.get(b, b)) for a, b in self.interaction_terms
            ),
        )


def resolve_rows(data, rows, required=None):
    """Turn a row selector into an index array.

    ``rows`` is ``"all"``, ``"complete"`` (fully observed rows), or an index
    array.  ``required`` narrows the completeness check to the named columns.
    """
    if isinstance(rows, str):
        if rows == "all":
            return np.arange(data.n_obs)
        if rows == "complete":
            if required is None:
                keep = data.complete_row_mask()
            else:
                cols = [data.index(n) for n in required]
                keep = data.mask[:, cols].all(axis=1)
            return np.flatnonzero(keep)
        raise InterimputeError(f"unknown row selector {rows!r}")
    idx = np.asarray(rows, dtype=np.intp)
    if idx.ndim != 1:
        raise InterimputeError("row index selector must be 1-d")
    return idx


def _interaction_column(data, a, b):
    """Stored interaction values when a matching derived column exists,
    otherwise the elementwise product of the parents."""
    for c in data.columns:
        if c.role == "derived-interaction" and set(c.parents) == {a, b}:
            return data.column(c.name), data.observed(c.name)
    prod = data.column(a) * data.column(b)
    obs = data.observed(a) & data.observed(b)
    return prod, obs


def build_design_matrix(data, formula, rows="all"):
    """Design matrix for ``formula`` on the selected rows.

    Column order is intercept, main terms in formula order, then interaction
    products in formula order.  The ``"complete"`` selector keeps rows
    observed for every formula term; for any other selector a masked cell is
    an error, so masked values never leak into a fit.
    """
    inter = [(a, b, *_interaction_column(data, a, b))
             for a, b in formula.interaction_terms]
    if isinstance(rows, str) and rows == "complete":
        keep = np.ones(data.n_obs, dtype=bool)
        for name in formula.main_terms:
            keep &= data.observed(name)
        for _a, _b, _vals, obs in inter:
            keep &= obs
        idx = np.flatnonzero(keep)
    else:
        idx = resolve_rows(data, rows)
    cols = [np.ones(idx.size)]
    for name in formula.main_terms:
        if not data.observed(name)[idx].all():
            raise IncompleteRowError(f"incomplete row: {name!r} masked in selection")
        cols.append(data.column(name)[idx])
    for a, b, vals, obs in inter:
        if not obs[idx].all():
            raise IncompleteRowError(f"incomplete row: {a}:{b} masked in selection")
        cols.append(vals[idx])
    return np.column_stack(cols)


def response_vector(data, formula, rows="all"):
    idx = resolve_rows(data, rows)
    if not data.observed(formula.outcome)[idx].all():
        raise IncompleteRowError(f"incomplete row: outcome {formula.outcome!r} masked")
    return data.column(formula.outcome)[idx]


def complete_cases(data):
    """Restrict to fully observed rows.

    Returns the restricted dataset (all-true mask) and a
    :class:`MissingnessReport` for the input.
    """
    report = data.missingness_report()
    if report.n_complete_cases == 0:
        raise EmptyCompleteCaseError("empty complete-case set")
    keep = data.complete_row_mask()
    return Dataset(data.columns, data.values[keep], None, validate=False), report
