"""Multiple imputation for logistic regression with a partially observed
interaction, plus a Monte-Carlo benchmark harness."""

from .data import (
    Dataset,
    MissingnessReport,
    ModelFormula,
    VariableSpec,
    build_design_matrix,
    complete_cases,
)
from .glm import (
    GlmFit,
    ParamDraw,
    draw_params,
    expit,
    fit_linear,
    fit_logistic,
    impute_binary,
    impute_continuous,
    logit,
)
from .impute import (
    ImputationConfig,
    ImputedSet,
    SmcfcsDesign,
    impute,
    impute_jav,
    impute_passive,
    impute_sia,
    impute_smcfcs,
    initial_fill,
    smcfcs_cell_prob,
    smcfcs_reject_sample,
    stratify,
)
from .pooling import PooledEstimate, complete_case_fit, pooled_fit, rubin_pool
from .simulate import (
    DgmSpec,
    SimReplicate,
    StudyResult,
    calibrate_alpha0,
    generate_covariates,
    generate_outcome,
    generate_replicate,
    impose_missingness,
    make_dgm,
    run_study,
)

__version__ = "0.1.0"
