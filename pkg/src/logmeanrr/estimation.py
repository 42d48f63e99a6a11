"""Maximum likelihood fitting of recursive log-mean regressions.

The joint likelihood factorizes over the background margin and the block
regressions, so every block is fitted on its own. A saturated,
unconstrained block has a closed-form estimate (the empirical
proportions). Anything else is fitted by a guarded Newton ascent: the
analytic gradient and Hessian drive the step, and a halving line search
rejects steps that leave the region where the parameters define
probabilities.

Reported gradient norms are those of the *average* log-likelihood (the
total divided by n), so the convergence tolerance does not depend on the
sample size.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Iterable

import numpy as np
from scipy import stats

from .exceptions import (
    ConvergenceError,
    DomainError,
    LogDomainError,
    SingularInformationError,
)
from .model import (
    BlockDesign,
    LogMeanParams,
    ModelDesign,
    RESPONSE_BLOCK,
    ZeroConstraintSet,
    cells_to_params,
    is_valid,
)
from .subsets import COHERENCE_TOL, subset_sum, superset_sum
from .tables import ContingencyTable, cross_counts, marginal_table

logger = logging.getLogger(__name__)

MAX_ITER = 500
GRAD_TOL = 1e-8
REL_LOGLIK_TOL = 1e-12
BIC_CONVENTIONS = ("full", "paper-compat")


# --- block likelihood and derivatives ----------------------------------------


def _moebius_matrix(k: int) -> np.ndarray:
    """``M[c, D] = (-1)^{|D - c|}`` if c is a subset of D, else 0."""
    size = 1 << k
    c = np.arange(size)[:, None]
    d = np.arange(size)[None, :]
    sub = (c & d) == c
    sign = np.vectorize(lambda m: -1.0 if bin(m).count("1") % 2 else 1.0)(d & ~c)
    return np.where(sub, sign, 0.0)


def _cells(params: LogMeanParams) -> tuple[np.ndarray, np.ndarray]:
    pi = params.margins()
    with np.errstate(invalid="ignore"):  # inf - inf at overflowing trial points
        return pi, superset_sum(pi, -1)


def block_loglik(params: LogMeanParams, counts: np.ndarray) -> float:
    """``sum_i sum_c N[i, c] log p[i, c]``; ``-inf`` outside the model.

    A configuration whose cells are not a distribution returns ``-inf``, as
    does a zero-probability cell with a positive count. Empty strata
    contribute nothing.
    """
    _, p = _cells(params)
    if not np.all(np.isfinite(p)) or np.any(p < -COHERENCE_TOL):
        return -math.inf
    occupied = counts > 0
    if np.any(p[occupied] <= 0):
        return -math.inf
    return float(np.sum(counts[occupied] * np.log(p[occupied])))


def block_gradient(params: LogMeanParams, counts: np.ndarray) -> np.ndarray:
    """Analytic gradient of :func:`block_loglik` over the full coefficient vector."""
    pi, p = _cells(params)
    w = np.divide(counts, p, out=np.zeros_like(p), where=counts > 0)
    # s[i, D] = sum_c M[c, D] w[i, c]
    s = subset_sum(w, -1)
    r = pi * s
    a = params.design.indicator()
    return (r.T @ a)[1:].reshape(-1)


def block_hessian(params: LogMeanParams, counts: np.ndarray) -> np.ndarray:
    """Analytic Hessian of :func:`block_loglik` over the full coefficient vector."""
    design = params.design
    pi, p = _cells(params)
    m = _moebius_matrix(design.responses.arity)
    w = np.divide(counts, p, out=np.zeros_like(p), where=counts > 0)
    w2 = np.divide(counts, p * p, out=np.zeros_like(p), where=counts > 0)
    r = pi * subset_sum(w, -1)
    # h[i, D, E] = delta_DE r[i, D] - pi_D pi_E sum_c w2[i, c] M[c, D] M[c, E]
    q = np.einsum("ic,cd,ce->ide", w2, m, m)
    h = -pi[:, :, None] * pi[:, None, :] * q
    idx = np.arange(pi.shape[1])
    h[:, idx, idx] += r
    h = h[:, 1:, 1:]
    a = design.indicator()
    full = np.einsum("ij,ik,ide->djek", a, a, h)
    n = design.size
    return full.reshape(n, n)


def numeric_hessian(params: LogMeanParams, counts: np.ndarray, step: float = 1e-5):
    """Central finite differences of the analytic gradient."""
    base = params.values
    n = base.size
    out = np.empty((n, n))
    for j in range(n):
        e = np.zeros(n)
        e[j] = step
        gp = block_gradient(LogMeanParams(params.design, base + e), counts)
        gm = block_gradient(LogMeanParams(params.design, base - e), counts)
        out[:, j] = (gp - gm) / (2 * step)
    return 0.5 * (out + out.T)


# --- results -----------------------------------------------------------------


@dataclass(frozen=True)
class BlockFit:
    """Maximum likelihood estimate for one block regression."""

    params: LogMeanParams
    free: np.ndarray = field(repr=False)
    loglik: float
    n: int
    converged: bool
    iterations: int
    gradient_norm: float
    closed_form: bool = False

    @property
    def name(self) -> str:
        return self.params.design.name

    @property
    def free_param_count(self) -> int:
        return int(self.free.sum())

    @property
    def free_labels(self) -> list[str]:
        labels = self.params.design.labels()
        return [lab for lab, f in zip(labels, self.free) if f]


@dataclass(frozen=True)
class FitResult:
    """Fitted recursive model.

    ``loglik`` sums the block regressions; ``loglik_joint`` adds the
    (saturated) margin of the background variable, giving the likelihood
    of the full joint distribution.
    """

    design: ModelDesign
    constraints: ZeroConstraintSet
    blocks: tuple[BlockFit, ...]
    loglik_background: float
    n: int

    @property
    def params(self) -> dict[str, LogMeanParams]:
        return {b.name: b.params for b in self.blocks}

    def block(self, name: str) -> BlockFit:
        for b in self.blocks:
            if b.name == name:
                return b
        raise DomainError(f"no block named {name!r}")

    @property
    def loglik(self) -> float:
        return float(sum(b.loglik for b in self.blocks))

    @property
    def loglik_joint(self) -> float:
        return self.loglik + self.loglik_background

    @property
    def free_param_count(self) -> dict[str, int]:
        return {b.name: b.free_param_count for b in self.blocks}

    @property
    def converged(self) -> bool:
        return all(b.converged for b in self.blocks)

    @property
    def iterations(self) -> int:
        return max(b.iterations for b in self.blocks)

    @property
    def gradient_norm(self) -> float:
        return max(b.gradient_norm for b in self.blocks)

    def free_set(self) -> set[tuple[str, int, int]]:
        out = set()
        for b in self.blocks:
            for (d, t), f in zip(b.params.design.pairs, b.free):
                if f:
                    out.add((b.name, d, t))
        return out


@dataclass(frozen=True)
class ModelComparison:
    deviance: float
    df: int
    p_value: float
    delta_bic: float


# --- fitting -----------------------------------------------------------------


def background_loglik(table: ContingencyTable, background: str) -> float:
    counts = marginal_table(table, [background]).counts
    n = counts.sum()
    nz = counts[counts > 0]
    return float(np.sum(nz * np.log(nz / n)))


def _free_mask(design: BlockDesign, constraints: ZeroConstraintSet) -> np.ndarray:
    fixed = constraints.for_block(design.name)
    return np.array([(d, t) not in fixed for d, t in design.pairs])


def _empirical(counts: np.ndarray, smooth: bool) -> np.ndarray:
    counts = counts.astype(float)
    pooled = counts.sum(axis=0)
    pooled = pooled / pooled.sum()
    out = np.empty_like(counts)
    for i, row in enumerate(counts):
        base = row.sum()
        if base == 0:
            out[i] = pooled
            continue
        prop = row / base
        if smooth:
            prop = np.where(prop == 0, 0.5 / base, prop)
            prop = prop / prop.sum()
        out[i] = prop
    if smooth:
        out = np.where(out == 0, 1e-12, out)
        out = out / out.sum(axis=1, keepdims=True)
    return out


def _saturated_twin(design: BlockDesign) -> BlockDesign:
    return replace(design, terms=tuple(range(design.n_configs)))


def _start(design: BlockDesign, counts: np.ndarray, free: np.ndarray) -> LogMeanParams:
    sat = _saturated_twin(design)
    emp = cells_to_params(_empirical(counts, smooth=True), sat)
    eta = emp.predictor()[:, 1:]
    a = design.indicator()
    beta = np.zeros((eta.shape[1], len(design.terms)))
    free2 = free.reshape(beta.shape)
    for di in range(eta.shape[1]):
        cols = np.flatnonzero(free2[di])
        sol, *_ = np.linalg.lstsq(a[:, cols], eta[:, di], rcond=None)
        beta[di, cols] = sol
    start = LogMeanParams(design, beta.reshape(-1))
    if is_valid(start) and np.all(start.margins() <= 1):
        return start
    # intercept-only start: the pooled distribution at every configuration
    pooled = counts.sum(axis=0).astype(float) + 0.5
    pooled /= pooled.sum()
    pi = superset_sum(pooled, 1)
    beta = np.zeros((eta.shape[1], len(design.terms)))
    beta[:, 0] = np.log(pi[1:])
    return LogMeanParams(design, beta.reshape(-1))


def _closed_form(design: BlockDesign, counts: np.ndarray) -> LogMeanParams:
    empty = np.flatnonzero(counts.sum(axis=1) == 0)
    if empty.size:
        cfg = ", ".join(
            f"{n}={(empty[0] >> k) & 1}" for k, n in enumerate(design.covariates.names)
        )
        raise LogDomainError(
            f"block {design.name}: no observations at {cfg}; a saturated block "
            "needs every stratum observed (merge categories or smooth the counts)"
        )
    return cells_to_params(_empirical(counts, smooth=False), design)


def _ascent_step(h: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Newton step, or a modified one where the Hessian is not negative definite.

    The log-likelihood is not concave in log-mean coefficients, so away from
    the optimum the curvature can be indefinite. Eigenvalues of ``-h`` are
    then replaced by their absolute values (floored relative to the
    largest), which keeps the step an ascent direction.
    """
    try:
        chol = np.linalg.cholesky(-h)
        return np.linalg.solve(chol.T, np.linalg.solve(chol, g))
    except np.linalg.LinAlgError:
        pass
    evals, evecs = np.linalg.eigh(-h)
    mags = np.abs(evals)
    mags = np.maximum(mags, max(mags.max(), 1.0) * 1e-8)
    return evecs @ ((evecs.T @ g) / mags)


def fit_block(
    design: BlockDesign,
    counts: np.ndarray,
    constraints: ZeroConstraintSet = ZeroConstraintSet(),
    max_iter: int = MAX_ITER,
    tol: float = GRAD_TOL,
) -> BlockFit:
    """Maximum likelihood fit of one block on its stratum-by-cell counts."""
    free = _free_mask(design, constraints)
    n = int(counts.sum())
    if design.saturated and free.all():
        params = _closed_form(design, counts)
        g = block_gradient(params, counts) / n
        return BlockFit(
            params, free, block_loglik(params, counts), n, True, 0,
            float(np.linalg.norm(g[free])), closed_form=True,
        )

    params = _start(design, counts, free)
    ll = block_loglik(params, counts)
    if not math.isfinite(ll):
        raise ConvergenceError(
            f"block {design.name}: no feasible starting point", last=params
        )
    fi = np.flatnonzero(free)
    gnorm = math.inf
    for it in range(1, max_iter + 1):
        g = block_gradient(params, counts)[fi]
        h = block_hessian(params, counts)[np.ix_(fi, fi)]
        step = _ascent_step(h, g)
        slope = float(g @ step)
        t = 1.0
        new_ll = -math.inf
        for _ in range(60):
            cand = params.values.copy()
            cand[fi] += t * step
            trial = LogMeanParams(design, cand)
            new_ll = block_loglik(trial, counts)
            if math.isfinite(new_ll) and new_ll >= ll + 1e-4 * t * slope:
                break
            t *= 0.5
        else:
            trial, new_ll = params, ll
        change = abs(new_ll - ll) / max(abs(ll), 1.0)
        params, ll = trial, new_ll
        gnorm = float(np.linalg.norm(block_gradient(params, counts)[fi])) / n
        logger.debug("block %s iter %d loglik %.12f |g| %.3e", design.name, it, ll, gnorm)
        if gnorm < tol and change < REL_LOGLIK_TOL:
            return BlockFit(params, free, ll, n, True, it, gnorm)
        if gnorm < tol * 1e-3:
            return BlockFit(params, free, ll, n, True, it, gnorm)
    last = BlockFit(params, free, ll, n, False, max_iter, gnorm)
    raise ConvergenceError(
        f"block {design.name}: no convergence after {max_iter} iterations "
        f"(gradient norm {gnorm:.3g})",
        last=last,
    )


def fit(
    design: ModelDesign,
    table: ContingencyTable,
    constraints: ZeroConstraintSet | None = None,
    max_iter: int = MAX_ITER,
    tol: float = GRAD_TOL,
) -> FitResult:
    """Fit every block of ``design`` to ``table`` under zero ``constraints``.

    Raises
    ------
    SchemaError
        If the table lacks a model variable.
    LogDomainError
        If a saturated block meets an empty stratum or a zero margin.
    ConvergenceError
        If an iterative block fit does not converge; ``last`` holds the
        final iterate.
    """
    constraints = constraints or ZeroConstraintSet()
    constraints.validate(design)
    blocks = []
    for b in design.blocks:
        counts = cross_counts(table, b.responses, b.covariates)
        blocks.append(fit_block(b, counts, constraints, max_iter, tol))
    return FitResult(
        design,
        constraints,
        tuple(blocks),
        background_loglik(table, design.structure.background),
        table.n,
    )


def loglik(params, table: ContingencyTable, design: ModelDesign | None = None,
           include_background: bool = False) -> float:
    """Log-likelihood of ``table`` under block parameters.

    ``params`` is a :class:`FitResult`, a mapping of block name to
    :class:`LogMeanParams`, or a sequence of :class:`LogMeanParams`. The
    result is ``-inf`` when the parameters put zero probability on observed
    data or do not define probabilities.
    """
    if isinstance(params, FitResult):
        design = design or params.design
        params = params.params
    if isinstance(params, LogMeanParams):
        params = [params]
    if isinstance(params, dict):
        params = list(params.values())
    total = 0.0
    for p in params:
        counts = cross_counts(table, p.design.responses, p.design.covariates)
        total += block_loglik(p, counts)
    if include_background:
        if design is None:
            raise DomainError("the background margin needs the model design")
        total += background_loglik(table, design.structure.background)
    return total


# --- inference ---------------------------------------------------------------


@dataclass(frozen=True)
class StandardErrors:
    """Per-block standard errors and covariance of the free coefficients."""

    labels: dict[str, list[str]]
    se: dict[str, np.ndarray]
    covariance: dict[str, np.ndarray]

    def __getitem__(self, label: str) -> float:
        for block, labs in self.labels.items():
            if label in labs:
                return float(self.se[block][labs.index(label)])
        raise KeyError(label)

    def as_dict(self) -> dict[str, float]:
        out = {}
        for block, labs in self.labels.items():
            out.update(zip(labs, map(float, self.se[block])))
        return out


def observed_information(
    block: BlockFit, table: ContingencyTable, method: str = "analytic"
) -> np.ndarray:
    """Negative Hessian of the block log-likelihood over its free coefficients."""
    d = block.params.design
    counts = cross_counts(table, d.responses, d.covariates)
    if method == "analytic":
        h = block_hessian(block.params, counts)
    elif method == "numeric":
        h = numeric_hessian(block.params, counts)
    else:
        raise DomainError(f"unknown method {method!r}")
    fi = np.flatnonzero(block.free)
    return -h[np.ix_(fi, fi)]


def standard_errors(
    fit_result: FitResult, table: ContingencyTable, method: str = "analytic"
) -> StandardErrors:
    """Square roots of the diagonal of the inverse observed information.

    Raises
    ------
    SingularInformationError
        When the information of some block is singular; the message names
        the coefficients spanning the null direction.
    """
    labels, se, cov = {}, {}, {}
    for b in fit_result.blocks:
        info = observed_information(b, table, method)
        labs = b.free_labels
        evals, evecs = np.linalg.eigh(info)
        if evals.size and evals[0] <= 1e-10 * max(evals[-1], 1.0):
            v = evecs[:, 0]
            names = [labs[j] for j in np.flatnonzero(np.abs(v) > 0.1)]
            raise SingularInformationError(
                f"block {b.name}: observed information is singular along "
                f"{', '.join(names)}",
                null_direction=dict(zip(labs, v)),
            )
        c = np.linalg.inv(info)
        labels[b.name] = labs
        cov[b.name] = c
        se[b.name] = np.sqrt(np.diag(c))
    return StandardErrors(labels, se, cov)


def bic(fit_result: FitResult, n: int | None = None, k_convention: str = "full") -> float:
    """Bayesian information criterion on the full joint likelihood.

    ``k_convention="full"`` counts every free coefficient of every block
    plus the probability of the background margin. ``"paper-compat"``
    counts only the non-intercept free coefficients of the response block.
    """
    n = fit_result.n if n is None else n
    return -2.0 * fit_result.loglik_joint + bic_parameter_count(fit_result, k_convention) * math.log(n)


def bic_parameter_count(fit_result: FitResult, k_convention: str = "full") -> int:
    if k_convention == "full":
        return sum(fit_result.free_param_count.values()) + 1
    if k_convention == "paper-compat":
        b = fit_result.block(RESPONSE_BLOCK)
        terms = [t for _, t in b.params.design.pairs]
        return int(sum(1 for f, t in zip(b.free, terms) if f and t != 0))
    if k_convention == "none":
        return 0
    raise DomainError(f"unknown BIC convention {k_convention!r}; use one of {BIC_CONVENTIONS}")


def compare(fit_reduced: FitResult, fit_full: FitResult, n: int | None = None) -> ModelComparison:
    """Likelihood-ratio comparison of two nested fits.

    ``delta_bic`` is BIC(reduced) - BIC(full); negative values favour the
    reduced model. It does not depend on the parameter-count convention.
    """
    if fit_reduced.design.structure != fit_full.design.structure:
        raise DomainError("models have different block structures")
    red, full = fit_reduced.free_set(), fit_full.free_set()
    if not red <= full:
        raise DomainError("models are not nested: the reduced model has free "
                          "coefficients the full model fixes or lacks")
    n = fit_full.n if n is None else n
    df = len(full) - len(red)
    dev = 2.0 * (fit_full.loglik - fit_reduced.loglik)
    if dev < -1e-6:
        logger.warning("negative deviance %.3g: full model fit may not be optimal", dev)
    dev = max(dev, 0.0)
    p = float(stats.chi2.sf(dev, df)) if df > 0 else 1.0
    return ModelComparison(dev, df, p, dev - df * math.log(n))


# --- stepwise selection ------------------------------------------------------


@dataclass(frozen=True)
class Candidate:
    label: str
    constraints: ZeroConstraintSet


@dataclass(frozen=True)
class Step:
    applied: Candidate
    comparison: ModelComparison
    bic: float
    considered: tuple[tuple[str, float], ...]


@dataclass(frozen=True)
class StepwiseResult:
    fit: FitResult
    trace: tuple[Step, ...]
    start: FitResult


def _order_key(design: ModelDesign, cand: Candidate) -> tuple:
    names = [b.name for b in design.blocks]
    keys = [
        (names.index(b), design.block(b).index(d, t)) for b, d, t in cand.constraints.pairs
    ]
    return min(keys) if keys else (len(names), 0)


def stepwise_select(
    design: ModelDesign,
    table: ContingencyTable,
    candidates: Iterable[Candidate],
    constraints: ZeroConstraintSet | None = None,
    k_convention: str = "full",
) -> StepwiseResult:
    """Backward elimination over candidate zero constraints by BIC.

    At every step each remaining candidate is added to the current
    constraints and refitted; the one lowering BIC the most is kept. The
    search stops when no candidate lowers BIC. Ties go to the candidate
    whose first coefficient comes earliest in the design.
    """
    current = constraints or ZeroConstraintSet()
    fit_now = fit(design, table, current)
    start = fit_now
    bic_now = bic(fit_now, k_convention=k_convention)
    pool = sorted(candidates, key=lambda c: _order_key(design, c))
    trace = []
    while pool:
        best = None
        considered = []
        for cand in pool:
            merged = current | cand.constraints
            if merged == current:
                continue
            try:
                trial = fit(design, table, merged)
            except (ConvergenceError, LogDomainError) as exc:
                logger.info("candidate %s skipped: %s", cand.label, exc)
                continue
            cmp = compare(trial, fit_now)
            considered.append((cand.label, cmp.delta_bic))
            if best is None or cmp.delta_bic < best[2].delta_bic:
                best = (cand, trial, cmp)
        if best is None or best[2].delta_bic >= 0:
            break
        cand, fit_now, cmp = best
        current = current | cand.constraints
        bic_now = bic(fit_now, k_convention=k_convention)
        trace.append(Step(cand, cmp, bic_now, tuple(considered)))
        pool = [c for c in pool if c is not cand]
    return StepwiseResult(fit_now, tuple(trace), start)
