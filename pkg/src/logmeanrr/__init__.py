"""Recursive log-mean regressions for multivariate binary data.

Fits the regression of binary responses on intermediate variables and a
binary background variable (``Y_V | Z_U, X``) and of the intermediates on
the background (``Z_U | X``), with coefficients that are log relative
risks, and splits the marginal relative risk of ``X`` into a conditional
relative risk times a deviation term.
"""

__version__ = "0.1.0"

from .decomposition import (
    RRDecomposition,
    brute_force_marginal,
    conditional_rr,
    decompose,
    decompose_fit,
    deviation_multi,
    deviation_univariate,
    marginal_rr,
    weighted_avg_rr,
)
from .estimation import (
    FitResult,
    ModelComparison,
    bic,
    compare,
    fit,
    loglik,
    standard_errors,
    stepwise_select,
)
from .estimator import LogMeanRegression
from .model import (
    BlockStructure,
    LogMeanParams,
    ZeroConstraintSet,
    build_design,
    cells_to_params,
    constraints_from_independence,
    params_to_conditional_cells,
    zero,
)
from .modelspec import load_model_spec, parse_model_spec
from .subsets import MarginVector, VarSet, enumerate_subsets, moebius_invert, zeta_transform
from .tables import (
    ContingencyTable,
    conditional_proportion,
    from_records,
    load_records,
    marginal_table,
)

__all__ = [
    "bic",
    "BlockStructure",
    "brute_force_marginal",
    "build_design",
    "cells_to_params",
    "compare",
    "conditional_proportion",
    "conditional_rr",
    "constraints_from_independence",
    "ContingencyTable",
    "decompose",
    "decompose_fit",
    "deviation_multi",
    "deviation_univariate",
    "enumerate_subsets",
    "fit",
    "FitResult",
    "from_records",
    "load_model_spec",
    "load_records",
    "loglik",
    "LogMeanParams",
    "LogMeanRegression",
    "marginal_rr",
    "marginal_table",
    "MarginVector",
    "ModelComparison",
    "moebius_invert",
    "params_to_conditional_cells",
    "parse_model_spec",
    "RRDecomposition",
    "standard_errors",
    "stepwise_select",
    "VarSet",
    "weighted_avg_rr",
    "zero",
    "ZeroConstraintSet",
    "zeta_transform",
]
