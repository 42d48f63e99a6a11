"""Scikit-learn style wrapper around the fitting and decomposition routines."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .decomposition import decompose_fit
from .estimation import GRAD_TOL, MAX_ITER, bic, fit, loglik, standard_errors
from .model import (
    INTERMEDIATE_BLOCK,
    RESPONSE_BLOCK,
    BlockStructure,
    ZeroConstraintSet,
    build_design,
    conditional_cells,
    constraints_from_independence,
    zero,
)
from .modelspec import parse_label
from .tables import ContingencyTable, from_records, marginal_table
from .validation import check_binary_data, check_counts


def _tuple(x):
    if x is None:
        return ()
    return (x,) if isinstance(x, str) else tuple(x)


class LogMeanRegression(BaseEstimator):
    """Recursive log-mean regression of ``responses`` on ``intermediates`` and
    ``background``, and of ``intermediates`` on ``background``.

    Parameters
    ----------
    responses : sequence of str
        Response variables ``V``.
    intermediates : sequence of str
        Intermediate variables ``U``; may be empty.
    background : str
        The binary background (treatment) variable ``X``.
    interactions : bool
        Saturated response block when True; main effects only when False.
    independences : sequence of str
        Statements like ``"{Y1} _||_ Z | {X}"``; each fixes the implied
        coefficients at zero.
    zeros : sequence of str
        Single coefficients fixed at zero, e.g. ``"theta[Y|Z,X]"``.
    max_iter, tol : optimizer settings.
    bic_convention : {"full", "paper-compat"}

    Attributes
    ----------
    fit_result_ : FitResult
    coef_ : dict
        Coefficient label to estimate, over both blocks.
    bse_ : dict
        Coefficient label to standard error (free coefficients only).
    loglik_ : float
        Log-likelihood of the block regressions.
    bic_ : float
    table_ : ContingencyTable
        The aggregated training data.
    """

    def __init__(
        self,
        responses=("Y",),
        intermediates=(),
        background="X",
        interactions=True,
        independences=(),
        zeros=(),
        max_iter=MAX_ITER,
        tol=GRAD_TOL,
        bic_convention="full",
    ):
        self.responses = responses
        self.intermediates = intermediates
        self.background = background
        self.interactions = interactions
        self.independences = independences
        self.zeros = zeros
        self.max_iter = max_iter
        self.tol = tol
        self.bic_convention = bic_convention

    def _structure(self):
        return BlockStructure(_tuple(self.responses), _tuple(self.intermediates), self.background)

    def _constraints(self, design):
        out = ZeroConstraintSet()
        for stmt in _tuple(self.independences):
            out = out | constraints_from_independence(stmt, design)
        for label in _tuple(self.zeros):
            out = out | zero(design, *parse_label(label))
        return out

    def _table(self, X, sample_weight):
        structure = self._structure()
        names = list(structure.variables)
        if isinstance(X, ContingencyTable):
            if sample_weight is not None:
                raise ValueError("sample_weight cannot be combined with a ContingencyTable")
            return marginal_table(X, names)
        arr = check_binary_data(X, names)
        return from_records(arr, names, check_counts(sample_weight, arr.shape[0]))

    def fit(self, X, y=None, sample_weight=None):
        """Fit both block regressions.

        ``X`` is a DataFrame with a column per model variable, a 0/1 array
        with columns ordered responses, intermediates, background, or a
        :class:`ContingencyTable`. ``sample_weight`` holds integer cell
        frequencies when rows are aggregated cells.
        """
        structure = self._structure()
        design = build_design(structure, bool(self.interactions))
        table = self._table(X, sample_weight)
        result = fit(design, table, self._constraints(design), self.max_iter, self.tol)
        self.design_ = design
        self.table_ = table
        self.fit_result_ = result
        self.coef_ = {}
        for b in result.blocks:
            self.coef_.update(b.params.as_dict())
        self.bse_ = standard_errors(result, table).as_dict()
        self.loglik_ = result.loglik
        self.bic_ = bic(result, k_convention=self.bic_convention)
        self.n_features_in_ = len(structure.variables)
        self.feature_names_in_ = np.array(structure.variables, dtype=object)
        return self

    def _covariate_configs(self, X, block):
        names = list(block.covariates.names)
        arr = check_binary_data(X, names)
        return (arr << np.arange(len(names))).sum(axis=1)

    def predict_proba(self, X):
        """Response-cell probabilities given each row's intermediates and background.

        Returns an array of shape ``(n_samples, 2**len(responses))`` whose
        column ``c`` is the probability of the response pattern with bit
        ``i`` of ``c`` equal to response ``i``.
        """
        check_is_fitted(self, "fit_result_")
        params = self.fit_result_.block(RESPONSE_BLOCK).params
        cells = conditional_cells(params)
        return cells[self._covariate_configs(X, params.design)]

    def predict(self, X):
        """``P(Y_v = 1 | intermediates, background)`` for every response ``v``."""
        proba = self.predict_proba(X)
        k = self.fit_result_.design.structure.responses.arity
        cols = np.arange(proba.shape[1])
        return np.column_stack([proba[:, (cols >> i) & 1 == 1].sum(axis=1) for i in range(k)])

    def score(self, X, y=None, sample_weight=None):
        """Average log-likelihood per observation of the block regressions."""
        check_is_fitted(self, "fit_result_")
        table = self._table(X, sample_weight)
        return loglik(self.fit_result_.params, table) / table.n

    def decompose(self, over=None, singletons_only=False):
        """Relative risk decomposition of the fitted model, with delta-method s.e."""
        check_is_fitted(self, "fit_result_")
        return decompose_fit(
            self.fit_result_, self.table_, over=over, singletons_only=singletons_only
        )

    @property
    def intermediate_params_(self):
        check_is_fitted(self, "fit_result_")
        if len(self.fit_result_.blocks) < 2:
            return None
        return self.fit_result_.block(INTERMEDIATE_BLOCK).params

    @property
    def response_params_(self):
        check_is_fitted(self, "fit_result_")
        return self.fit_result_.block(RESPONSE_BLOCK).params
