"""Marginal versus conditional relative risks in recursive log-mean models.

For a response subset ``D`` the marginal log relative risk of ``X`` (with
the intermediates summed out) splits into the conditional one (at
``Z_U = 0``) plus a deviation term ``lambda_D``:

    theta_{D|X} = theta_{D|X.U} + lambda_D

``exp(lambda_D)`` is the ratio of two weighted averages of the relative
risks of the intermediate configurations, with weights
``P(Z_E = 1, Z_{U-E} = 0 | X = x)`` for the treated (x = 1) and control
(x = 0) groups.

:func:`brute_force_marginal` computes ``theta_{D|X}`` independently by
building the joint conditional distribution and summing over ``Z_U``; the
closed forms are checked against it in the test suite.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np

from .exceptions import DomainError, IncoherentMarginsError, InvalidParamsError
from .estimation import standard_errors
from .model import (
    INTERMEDIATE_BLOCK,
    RESPONSE_BLOCK,
    LogMeanParams,
    params_to_conditional_cells,
)
from .subsets import COHERENCE_TOL, VarSet, popcount, superset_sum


@dataclass(frozen=True)
class RRDecomposition:
    """Decomposition of the marginal relative risk of ``X`` for ``Y^D``."""

    subset: tuple[str, ...]
    rr_conditional: float
    deviation: float
    rr_marginal: float
    weighted_rr_treated: float
    weighted_rr_control: float
    over: tuple[str, ...] = ()
    se_log_deviation: float | None = None
    se_log_marginal: float | None = None

    @property
    def log_rr_conditional(self) -> float:
        return math.log(self.rr_conditional)

    @property
    def log_deviation(self) -> float:
        return math.log(self.deviation)

    @property
    def log_rr_marginal(self) -> float:
        return math.log(self.rr_marginal)

    @property
    def label(self) -> str:
        return "{" + ",".join(self.subset) + "}"


def _resp_mask(params: LogMeanParams, subset) -> int:
    d = params.design.responses.mask(subset)
    if d == 0:
        raise DomainError("response subset must be nonempty")
    return d


def _background(params_y: LogMeanParams, params_z: LogMeanParams | None) -> str:
    if params_z is not None:
        if params_z.design.covariates.arity != 1:
            raise DomainError("the intermediate block must regress on one background variable")
        x = params_z.design.covariates.names[0]
    else:
        if params_y.design.covariates.arity != 1:
            raise DomainError("intermediate-block parameters are required")
        x = params_y.design.covariates.names[0]
    if x not in params_y.design.covariates:
        raise DomainError(f"background variable {x!r} is not a covariate of the response block")
    if params_z is not None:
        expected = set(params_y.design.covariates) - {x}
        if set(params_z.design.responses) != expected:
            raise DomainError(
                f"intermediate block responses {list(params_z.design.responses)} do not "
                f"match the response-block intermediates {sorted(expected)}"
            )
    return x


def _theta(params: LogMeanParams, d: int, t: int) -> float:
    """Coefficient ``beta[d, t]``, zero for terms outside the design."""
    if t in params.design.terms:
        return float(params.values[params.design.index(d, t)])
    return 0.0


def conditional_rr(
    params: LogMeanParams,
    subset,
    covariate: str,
    at: Mapping[str, int] | None = None,
) -> float:
    """Relative risk of ``Y^D = 1`` for ``covariate`` = 1 vs 0.

    The other covariates are held at the levels in ``at`` (0 when not
    given). At level 0 this is ``exp(theta[D, {w}])``; each other
    covariate at level 1 multiplies in the matching interaction.
    """
    d = _resp_mask(params, subset)
    cov = params.design.covariates
    w = cov.mask(covariate)
    on = w
    for name, level in (at or {}).items():
        if name == covariate:
            continue
        if level not in (0, 1):
            raise DomainError(f"{name}={level!r} is not binary")
        if level:
            on |= cov.mask(name)
    log_rr = sum(
        _theta(params, d, t) for t in params.design.terms if t & w and t & ~on == 0
    )
    return math.exp(log_rr)


def _prob(value: float, what: str) -> float:
    if not 0.0 < value < 1.0:
        raise InvalidParamsError(f"{what} = {value:.6g} is not a probability in (0, 1)")
    return value


def deviation_univariate(
    params_y: LogMeanParams, params_z: LogMeanParams, subset
) -> float:
    """``lambda_D`` for a single intermediate ``Z`` (interaction with X allowed).

        lambda_D = log [(e^{th_Z + th_ZX} pi1 + 1 - pi1) / (e^{th_Z} pi0 + 1 - pi0)]

    with ``pi_x = P(Z = 1 | X = x)`` from the intermediate regression.
    """
    x = _background(params_y, params_z)
    if params_z.design.responses.arity != 1:
        raise DomainError("deviation_univariate needs exactly one intermediate variable")
    z = params_z.design.responses.names[0]
    d = _resp_mask(params_y, subset)
    cov = params_y.design.covariates
    th_z = _theta(params_y, d, cov.mask(z))
    th_zx = _theta(params_y, d, cov.mask([z, x]))
    a_z = params_z.alpha(z)
    th_zx_z = params_z.coef(z, x)
    pi1 = _prob(math.exp(a_z + th_zx_z), f"P({z}=1 | {x}=1)")
    pi0 = _prob(math.exp(a_z), f"P({z}=1 | {x}=0)")
    num = math.exp(th_z + th_zx) * pi1 + 1.0 - pi1
    den = math.exp(th_z) * pi0 + 1.0 - pi0
    return math.log(num / den)


def intermediate_weights(
    params_z: LogMeanParams, x_level: int, over: Iterable[str] | None = None
) -> tuple[VarSet, np.ndarray]:
    """``P(Z_E = 1, Z_{over - E} = 0 | X = x)`` for every ``E`` within ``over``.

    The weights are indexed by bitmask over the returned VarSet (``over``
    in the block's variable order).
    """
    u = params_z.design.responses
    over_vs = u if over is None else u.sub(over)
    idx = [u.index(n) for n in over_vs.names]
    pi_full = params_z.margins()[int(x_level)]
    pi = np.empty(1 << over_vs.arity)
    for e in range(pi.size):
        full = 0
        for j, i in enumerate(idx):
            if (e >> j) & 1:
                full |= 1 << i
        pi[e] = pi_full[full]
    cells = superset_sum(pi, -1)
    if not np.all(np.isfinite(cells)) or cells.min() < -COHERENCE_TOL or pi.max() > 1 + COHERENCE_TOL:
        raise InvalidParamsError(
            f"intermediate-block parameters do not define a distribution at "
            f"{params_z.design.covariates.names[0]}={x_level}"
        )
    cells = np.clip(cells, 0.0, None)
    return over_vs, cells / cells.sum()


def _check_over(params_y: LogMeanParams, d: int, x: str, over_vs: VarSet) -> None:
    cov = params_y.design.covariates
    keep = cov.mask(list(over_vs.names) + [x])
    for t in params_y.design.terms:
        if t & ~keep and _theta(params_y, d, t) != 0.0:
            raise DomainError(
                f"{params_y.design.label(d, t)} is nonzero, so the response block "
                f"depends on intermediates outside {list(over_vs.names)}"
            )


def _log_rr_intermediates(params_y, d: int, x: str, over_vs: VarSet, x_level: int) -> np.ndarray:
    """``log RR_{D|E.X=x}`` for each E within ``over`` (other intermediates at 0)."""
    cov = params_y.design.covariates
    xm = cov.mask(x)
    out = np.zeros(1 << over_vs.arity)
    for e in range(out.size):
        em = cov.mask(over_vs.subset_names(e))
        on = em | (xm if x_level else 0)
        out[e] = sum(
            _theta(params_y, d, t)
            for t in params_y.design.terms
            if t & em and t & ~on == 0
        )
    return out


def weighted_avg_rr(
    params_y: LogMeanParams,
    params_z: LogMeanParams,
    subset,
    x_level: int,
    over: Iterable[str] | None = None,
) -> float:
    """Average over intermediate configurations of ``RR_{D|E.X=x}``.

    Each configuration ``Z_E = 1, Z_{U-E} = 0`` is weighted by its
    probability given ``X = x``. ``RR_{D|E.X=x}`` compares that
    configuration with ``Z_U = 0`` at the same ``x``; without interactions
    it is the product of the single-intermediate relative risks.
    """
    if x_level not in (0, 1):
        raise DomainError("x_level must be 0 or 1")
    x = _background(params_y, params_z)
    d = _resp_mask(params_y, subset)
    over_vs, w = intermediate_weights(params_z, x_level, over)
    _check_over(params_y, d, x, over_vs)
    # 1 + sum (RR - 1) w, since the weights sum to one; exact when all RR = 1
    return 1.0 + float(np.expm1(_log_rr_intermediates(params_y, d, x, over_vs, x_level)) @ w)


def deviation_multi(
    params_y: LogMeanParams,
    params_z: LogMeanParams,
    subset,
    over: Iterable[str] | None = None,
) -> float:
    """``lambda_D`` for several intermediates, response block without interactions.

        lambda_D = log [sum_E exp(sum_{u in E} th_{D|u}) P(Z_E=1, rest 0 | X=1)
                      / sum_E exp(sum_{u in E} th_{D|u}) P(Z_E=1, rest 0 | X=0)]

    ``over`` restricts the sum to a subset of the intermediates; the
    weights then come from the corresponding margin of the intermediate
    block, and the response block must not depend on the dropped ones.
    """
    x = _background(params_y, params_z)
    d = _resp_mask(params_y, subset)
    design = params_y.design
    for t in design.terms:
        if popcount(t) > 1 and _theta(params_y, d, t) != 0.0:
            raise DomainError(
                f"{design.label(d, t)} is an interaction; deviation_multi assumes "
                "main effects only"
            )
    over_vs, w1 = intermediate_weights(params_z, 1, over)
    _, w0 = intermediate_weights(params_z, 0, over)
    _check_over(params_y, d, x, over_vs)
    cov = design.covariates
    main = np.array([_theta(params_y, d, cov.mask(u)) for u in over_vs.names])
    e = np.arange(1 << over_vs.arity)
    ind = ((e[:, None] >> np.arange(over_vs.arity)[None, :]) & 1).astype(float)
    excess = np.expm1(ind @ main)
    return math.log1p(float(excess @ w1)) - math.log1p(float(excess @ w0))


def deviation(params_y, params_z, subset, over=None) -> float:
    """``lambda_D`` by the appropriate closed form (0 without intermediates)."""
    if params_z is None:
        _background(params_y, None)
        return 0.0
    if params_z.design.responses.arity == 1 and over in (None, params_z.design.responses.names,
                                                          list(params_z.design.responses.names)):
        return deviation_univariate(params_y, params_z, subset)
    return deviation_multi(params_y, params_z, subset, over)


def marginal_rr(
    params_y: LogMeanParams,
    params_z: LogMeanParams | None,
    subset,
    over: Iterable[str] | None = None,
) -> RRDecomposition:
    """Assemble the decomposition ``RR_{D|X} = RR_{D|X.U=0} * exp(lambda_D)``."""
    x = _background(params_y, params_z)
    d = _resp_mask(params_y, subset)
    names = params_y.design.responses.subset_names(d)
    rr_c = conditional_rr(params_y, names, x)
    if params_z is None:
        return RRDecomposition(names, rr_c, 1.0, rr_c, 1.0, 1.0)
    over_t = tuple(params_z.design.responses.sub(over).names) if over is not None else tuple(
        params_z.design.responses.names
    )
    lam = deviation(params_y, params_z, names, over)
    wt = weighted_avg_rr(params_y, params_z, names, 1, over)
    wc = weighted_avg_rr(params_y, params_z, names, 0, over)
    dev = math.exp(lam)
    return RRDecomposition(names, rr_c, dev, rr_c * dev, wt, wc, over_t)


def brute_force_marginal(
    params_y: LogMeanParams, params_z: LogMeanParams | None, subset
) -> float:
    """``theta_{D|X} = log P(Y^D=1 | X=1) - log P(Y^D=1 | X=0)`` by explicit summation.

    Builds ``P(Y_V = y, Z_U = e | X = x)`` cell by cell from the two
    blocks' conditional distributions, sums out ``Z_U`` and reads off the
    probability that every response in ``D`` equals one.
    """
    x = _background(params_y, params_z)
    d = _resp_mask(params_y, subset)
    n_y = 1 << params_y.design.responses.arity
    pi = []
    for xv in (0, 1):
        marg = np.zeros(n_y)
        if params_z is None:
            marg += params_to_conditional_cells(params_y, {x: xv})
        else:
            zvars = params_z.design.responses
            qz = params_to_conditional_cells(params_z, {x: xv})
            for e in range(1 << zvars.arity):
                assignment = {x: xv}
                for k, name in enumerate(zvars.names):
                    assignment[name] = (e >> k) & 1
                py = params_to_conditional_cells(params_y, assignment)
                for y in range(n_y):
                    marg[y] += py[y] * qz[e]
        total = sum(marg[y] for y in range(n_y) if y & d == d)
        if total <= 0:
            raise IncoherentMarginsError(f"P(Y^D=1 | {x}={xv}) is zero")
        pi.append(total)
    return math.log(pi[1]) - math.log(pi[0])


def decompose(
    params_y: LogMeanParams,
    params_z: LogMeanParams | None,
    over: Iterable[str] | None = None,
    subsets: Iterable | None = None,
    singletons_only: bool = False,
) -> list[RRDecomposition]:
    """Decomposition for every nonempty response subset (or those in ``subsets``)."""
    resp = params_y.design.responses
    if subsets is None:
        masks = list(range(1, 1 << resp.arity))
    else:
        masks = [_resp_mask(params_y, s) for s in subsets]
    if singletons_only:
        masks = [m for m in masks if popcount(m) == 1]
    return [marginal_rr(params_y, params_z, resp.subset_names(m), over) for m in masks]


def _log_effect(fit, values: dict, subset, over, which: str) -> float:
    py = LogMeanParams(fit.block(RESPONSE_BLOCK).params.design, values[RESPONSE_BLOCK])
    pz = None
    if INTERMEDIATE_BLOCK in values:
        pz = LogMeanParams(fit.block(INTERMEDIATE_BLOCK).params.design, values[INTERMEDIATE_BLOCK])
    r = marginal_rr(py, pz, subset, over)
    return r.log_deviation if which == "deviation" else r.log_rr_marginal


def decompose_fit(
    fit,
    table=None,
    over: Iterable[str] | None = None,
    subsets: Iterable | None = None,
    singletons_only: bool = False,
    step: float = 1e-6,
) -> list[RRDecomposition]:
    """Decompose a :class:`~logmeanrr.estimation.FitResult`.

    With the fitted ``table`` the log deviation and log marginal relative
    risk get delta-method standard errors from the observed information
    (blocks are independent, so the covariance is block diagonal).
    """
    py = fit.block(RESPONSE_BLOCK).params
    pz = fit.block(INTERMEDIATE_BLOCK).params if len(fit.blocks) > 1 else None
    rows = decompose(py, pz, over, subsets, singletons_only)
    if table is None:
        return rows
    ses = standard_errors(fit, table)
    out = []
    for row in rows:
        extra = {}
        for which in ("deviation", "marginal"):
            base = {b.name: b.params.values.copy() for b in fit.blocks}
            var = 0.0
            for b in fit.blocks:
                fi = np.flatnonzero(b.free)
                grad = np.zeros(fi.size)
                for j, k in enumerate(fi):
                    up = {n: v.copy() for n, v in base.items()}
                    dn = {n: v.copy() for n, v in base.items()}
                    up[b.name][k] += step
                    dn[b.name][k] -= step
                    grad[j] = (
                        _log_effect(fit, up, row.subset, over, which)
                        - _log_effect(fit, dn, row.subset, over, which)
                    ) / (2 * step)
                var += float(grad @ ses.covariance[b.name] @ grad)
            extra[which] = math.sqrt(max(var, 0.0))
        out.append(
            RRDecomposition(
                row.subset, row.rr_conditional, row.deviation, row.rr_marginal,
                row.weighted_rr_treated, row.weighted_rr_control, row.over,
                se_log_deviation=extra["deviation"], se_log_marginal=extra["marginal"],
            )
        )
    return out
