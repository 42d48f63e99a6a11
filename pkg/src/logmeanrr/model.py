"""Recursive log-mean linear regressions for binary variables.

Variables fall into three ordered blocks: the responses ``V``, the
intermediates ``U`` (possibly empty) and one binary background variable
``X``. Two regressions are modelled:

* the response block ``Y_V | (Z_U, X)``; and
* when ``U`` is not empty, the intermediate block ``Z_U | X``.

For a block with responses ``R`` and covariates ``C``, and for every
nonempty ``D`` subset of ``R``, the log of the "all ones" probability
``pi_{D|i} = P(Y_D = 1 | C = i)`` is linear in 0/1 covariate indicators:

    log pi_{D|i} = sum_{t in terms} beta[D, t] * prod_{w in t} i_w

where ``t`` runs over subsets of ``C``; ``t = {}`` is the intercept. With
all subsets of ``C`` as terms the block is saturated. Coefficients are
log relative risks, so exp(beta[{Y}, {X}]) is the relative risk of Y for
X = 1 versus X = 0 with every other covariate at 0.

Parameter points are stored per block as a :class:`LogMeanParams`. The
parameter space is variation dependent: not every coefficient vector
gives probabilities, and :func:`conditional_cells` reports which ones do.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

from .exceptions import (
    DomainError,
    IncoherentMarginsError,
    LogDomainError,
    ParseError,
)
from .subsets import (
    COHERENCE_TOL,
    VarSet,
    subset_sum,
    superset_sum,
)

RESPONSE_BLOCK = "responses"
INTERMEDIATE_BLOCK = "intermediates"


def _names(x) -> tuple[str, ...]:
    if x is None:
        return ()
    if isinstance(x, str):
        return (x,)
    return tuple(x)


@dataclass(frozen=True)
class BlockStructure:
    """Partition of the variables into responses, intermediates and background."""

    responses: VarSet
    intermediates: VarSet
    background: str

    def __init__(self, responses, intermediates=(), background="X"):
        if not isinstance(background, str):
            bg = _names(background)
            if len(bg) != 1:
                raise DomainError(
                    f"exactly one background variable is supported, got {list(bg)}"
                )
            background = bg[0]
        v = responses if isinstance(responses, VarSet) else VarSet(_names(responses))
        u = (
            intermediates
            if isinstance(intermediates, VarSet)
            else VarSet(_names(intermediates))
        )
        if v.arity == 0:
            raise DomainError("at least one response variable is required")
        overlap = (set(v) & set(u)) | ({background} & (set(v) | set(u)))
        if overlap:
            raise DomainError(f"blocks overlap on {sorted(overlap)}")
        object.__setattr__(self, "responses", v)
        object.__setattr__(self, "intermediates", u)
        object.__setattr__(self, "background", background)

    @property
    def variables(self) -> tuple[str, ...]:
        return self.responses.names + self.intermediates.names + (self.background,)

    @property
    def response_covariates(self) -> VarSet:
        return VarSet(self.intermediates.names + (self.background,))


@dataclass(frozen=True)
class BlockDesign:
    """Which coefficients a block regression carries.

    ``terms`` are covariate bitmasks (0 = intercept) shared by every
    response subset ``D``; the coefficient vector is laid out ``D``-major
    over ``pairs``.
    """

    name: str
    responses: VarSet
    covariates: VarSet
    terms: tuple[int, ...]

    def __post_init__(self):
        terms = tuple(sorted(set(int(t) for t in self.terms)))
        if not terms or terms[0] != 0:
            raise DomainError("a block design must include the intercept")
        if terms[-1] > self.covariates.full:
            raise DomainError("term outside the block covariates")
        object.__setattr__(self, "terms", terms)

    @property
    def subsets(self) -> range:
        """Nonempty response subsets ``D`` as bitmasks."""
        return range(1, 1 << self.responses.arity)

    @property
    def pairs(self) -> tuple[tuple[int, int], ...]:
        return tuple((d, t) for d in self.subsets for t in self.terms)

    @property
    def size(self) -> int:
        return len(self.subsets) * len(self.terms)

    @property
    def saturated(self) -> bool:
        return len(self.terms) == 1 << self.covariates.arity

    @property
    def n_configs(self) -> int:
        return 1 << self.covariates.arity

    def index(self, d: int, t: int) -> int:
        if not 1 <= d <= self.responses.full:
            raise DomainError(f"response subset {d} not in block {self.name}")
        try:
            j = self.terms.index(t)
        except ValueError:
            raise DomainError(
                f"term {self.covariates.label(t)} is not in the design of block "
                f"{self.name}"
            ) from None
        return (d - 1) * len(self.terms) + j

    def key(self, d, t=()) -> tuple[int, int]:
        """Bitmask pair for response subset ``d`` and term ``t`` given by names."""
        dm = self.responses.mask(d)
        if dm == 0:
            raise DomainError("response subset must be nonempty")
        return dm, self.covariates.mask(t)

    def indicator(self) -> np.ndarray:
        """``A[i, j] = 1`` when term ``j`` is switched on at configuration ``i``."""
        cfg = np.arange(self.n_configs)[:, None]
        terms = np.asarray(self.terms)[None, :]
        return ((cfg & terms) == terms).astype(float)

    def label(self, d: int, t: int) -> str:
        dn = ",".join(self.responses.subset_names(d))
        if t == 0:
            return f"alpha[{dn}]"
        return f"theta[{dn}|{','.join(self.covariates.subset_names(t))}]"

    def labels(self) -> list[str]:
        return [self.label(d, t) for d, t in self.pairs]


@dataclass(frozen=True)
class ModelDesign:
    structure: BlockStructure
    blocks: tuple[BlockDesign, ...]
    interactions: bool = True

    def block(self, name: str) -> BlockDesign:
        for b in self.blocks:
            if b.name == name:
                return b
        raise DomainError(f"no block named {name!r}")

    def block_for(self, responses: Iterable[str]) -> BlockDesign:
        responses = set(_names(responses))
        for b in self.blocks:
            if responses and responses <= set(b.responses):
                return b
        raise DomainError(f"no block has responses {sorted(responses)}")


def _all_terms(k: int) -> tuple[int, ...]:
    return tuple(range(1 << k))


def build_design(structure: BlockStructure, interactions: bool = True) -> ModelDesign:
    """Coefficient layout for the response block and the intermediate block.

    With ``interactions`` the response block is saturated in ``(Z_U, X)``.
    Without, it carries an intercept, one main effect per intermediate and
    one for ``X`` only. The intermediate block is always saturated in X.
    """
    cov = structure.response_covariates
    if interactions:
        terms = _all_terms(cov.arity)
    else:
        terms = (0,) + tuple(1 << i for i in range(cov.arity))
    blocks = [BlockDesign(RESPONSE_BLOCK, structure.responses, cov, terms)]
    if structure.intermediates.arity:
        blocks.append(
            BlockDesign(
                INTERMEDIATE_BLOCK,
                structure.intermediates,
                VarSet([structure.background]),
                (0, 1),
            )
        )
    return ModelDesign(structure, tuple(blocks), bool(interactions))


# --- zero constraints -------------------------------------------------------


@dataclass(frozen=True)
class ZeroConstraintSet:
    """Coefficients forced to zero, as ``(block name, D mask, term mask)``."""

    pairs: frozenset = frozenset()

    def __or__(self, other: "ZeroConstraintSet") -> "ZeroConstraintSet":
        return ZeroConstraintSet(self.pairs | other.pairs)

    def __len__(self) -> int:
        return len(self.pairs)

    def __iter__(self):
        return iter(sorted(self.pairs))

    def __contains__(self, item) -> bool:
        return item in self.pairs

    def for_block(self, name: str) -> set[tuple[int, int]]:
        return {(d, t) for b, d, t in self.pairs if b == name}

    def labels(self, design: ModelDesign) -> list[str]:
        return [design.block(b).label(d, t) for b, d, t in sorted(self.pairs)]

    def validate(self, design: ModelDesign) -> None:
        for b, d, t in self.pairs:
            block = design.block(b)
            if t == 0:
                raise DomainError("intercepts cannot be constrained")
            block.index(d, t)


def zero(design: ModelDesign, responses, term) -> ZeroConstraintSet:
    """Constraint fixing the single coefficient ``beta[responses, term]`` at 0."""
    block = design.block_for(responses)
    d, t = block.key(responses, term)
    if t == 0:
        raise DomainError("intercepts cannot be constrained")
    block.index(d, t)
    return ZeroConstraintSet(frozenset({(block.name, d, t)}))


@dataclass(frozen=True)
class Independence:
    """Statement ``Y_A _||_ W | rest`` about one block's regression."""

    responses: tuple[str, ...]
    covariate: str
    given: tuple[str, ...] = ()

    def __str__(self):
        return (
            "{" + ",".join(self.responses) + "} _||_ " + self.covariate
            + " | {" + ",".join(self.given) + "}"
        )


_INDEP_RE = re.compile(
    r"^\s*\{?\s*(?P<a>[^{}|_]+?)\s*\}?\s*_\|\|_\s*(?P<w>[^\s|{}]+)\s*"
    r"(?:\|\s*\{?\s*(?P<rest>[^{}]*?)\s*\}?\s*)?$"
)


def parse_independence(text: str) -> Independence:
    """Parse ``{A1,A2} _||_ W | {C1,C2}``; braces around single names are optional."""
    m = _INDEP_RE.match(text)
    if not m:
        raise ParseError(f"cannot parse independence statement {text!r}")
    split = lambda s: tuple(p.strip() for p in (s or "").split(",") if p.strip())
    a = split(m.group("a"))
    if not a:
        raise ParseError(f"empty response set in {text!r}")
    return Independence(a, m.group("w").strip(), split(m.group("rest")))


def constraints_from_independence(
    statement: Independence | str, design: ModelDesign
) -> ZeroConstraintSet:
    """Zero constraints implied by ``Y_A _||_ W | rest`` in a log-mean regression.

    Every coefficient ``beta[D, t]`` with ``D`` a nonempty subset of ``A``
    and ``W`` in ``t`` is set to zero. Response subsets that are not
    contained in ``A`` are untouched.
    """
    if isinstance(statement, str):
        statement = parse_independence(statement)
    block = None
    for b in design.blocks:
        if set(statement.responses) <= set(b.responses) and statement.covariate in b.covariates:
            block = b
            break
    if block is None:
        known = set(design.structure.variables)
        unknown = [
            v for v in statement.responses + (statement.covariate,) + statement.given
            if v not in known
        ]
        if unknown:
            raise DomainError(f"unknown variable(s) {unknown} in {statement}")
        raise DomainError(
            f"{statement} does not match a block: responses and covariate must "
            "belong to the same regression"
        )
    for g in statement.given:
        if g not in block.covariates or g == statement.covariate:
            raise DomainError(
                f"conditioning variable {g!r} is not another covariate of block "
                f"{block.name}"
            )
    a = block.responses.mask(statement.responses)
    w = block.covariates.mask(statement.covariate)
    pairs = {
        (block.name, d, t)
        for d in block.subsets
        if d & ~a == 0
        for t in block.terms
        if t & w
    }
    return ZeroConstraintSet(frozenset(pairs))


# --- parameters -------------------------------------------------------------


@dataclass(frozen=True)
class LogMeanParams:
    """Coefficient vector of one block, laid out as ``design.pairs``."""

    design: BlockDesign
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.shape != (self.design.size,):
            raise DomainError(
                f"block {self.design.name} needs {self.design.size} coefficients, "
                f"got {v.shape}"
            )
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def from_dict(cls, design: BlockDesign, coefs: Mapping) -> "LogMeanParams":
        """Build from ``{(D names, term names): value}``; missing entries are 0."""
        v = np.zeros(design.size)
        for (d, t), value in coefs.items():
            v[design.index(*design.key(d, t))] = value
        return cls(design, v)

    def coef(self, responses, term=()) -> float:
        return float(self.values[self.design.index(*self.design.key(responses, term))])

    def alpha(self, responses) -> float:
        return self.coef(responses, ())

    def __getitem__(self, key) -> float:
        d, t = key
        if isinstance(d, int) and isinstance(t, int):
            return float(self.values[self.design.index(d, t)])
        return self.coef(d, t)

    def matrix(self) -> np.ndarray:
        """Coefficients as ``B[D, j]`` over (response subset, term index); row 0 is zero."""
        out = np.zeros((1 << self.design.responses.arity, len(self.design.terms)))
        out[1:] = self.values.reshape(-1, len(self.design.terms))
        return out

    def predictor(self) -> np.ndarray:
        """``eta[i, D] = log pi_{D|i}`` at every covariate configuration; eta[:, 0] = 0."""
        return self.design.indicator() @ self.matrix().T

    def margins(self) -> np.ndarray:
        """``pi[i, D]`` at every covariate configuration."""
        eta = self.predictor()
        eta[:, 0] = 0.0
        with np.errstate(over="ignore"):
            return np.exp(eta)

    def as_dict(self) -> dict[str, float]:
        return dict(zip(self.design.labels(), map(float, self.values)))


def conditional_cells(params: LogMeanParams, check: bool = True) -> np.ndarray:
    """Response cell probabilities ``p[i, c]`` at every covariate configuration.

    With ``check`` an :class:`IncoherentMarginsError` is raised if any
    configuration yields a negative cell (beyond 1e-10) or a margin above
    one. Without it the raw inclusion-exclusion result is returned.
    """
    pi = params.margins()
    with np.errstate(invalid="ignore"):
        cells = superset_sum(pi, -1)
    if check:
        bad = (~np.isfinite(cells)) | (cells < -COHERENCE_TOL)
        if np.any(bad):
            i, c = np.argwhere(bad)[0]
            d = params.design
            cfg = ", ".join(
                f"{n}={(i >> k) & 1}" for k, n in enumerate(d.covariates.names)
            )
            raise IncoherentMarginsError(
                f"block {d.name}: parameters imply P({d.responses.label(c)}=1, "
                f"rest=0 | {cfg}) = {cells[i, c]:.3g}"
            )
        cells = np.clip(cells, 0.0, None)
    return cells


def is_valid(params: LogMeanParams) -> bool:
    """True when every covariate configuration gets a proper distribution."""
    with np.errstate(invalid="ignore"):
        cells = superset_sum(params.margins(), -1)
    return bool(np.all(np.isfinite(cells)) and np.all(cells >= -COHERENCE_TOL))


def _config(design: BlockDesign, assignment) -> int:
    if isinstance(assignment, (int, np.integer)):
        i = int(assignment)
        if not 0 <= i < design.n_configs:
            raise DomainError(f"configuration {i} out of range")
        return i
    assignment = dict(assignment)
    missing = set(design.covariates) - set(assignment)
    if missing:
        raise DomainError(f"no value given for covariate(s) {sorted(missing)}")
    i = 0
    for name, value in assignment.items():
        if name not in design.covariates:
            continue
        if value not in (0, 1):
            raise DomainError(f"{name}={value!r} is not binary")
        i |= int(value) << design.covariates.index(name)
    return i


def params_to_conditional_cells(params: LogMeanParams, assignment) -> np.ndarray:
    """Distribution of the block responses at one covariate configuration.

    ``assignment`` is ``{covariate: 0/1}`` or a configuration bitmask. The
    result is indexed by response-cell bitmask.
    """
    i = _config(params.design, assignment)
    pi = params.margins()[i]
    cells = superset_sum(pi, -1)
    worst = int(np.argmin(cells))
    if not np.all(np.isfinite(cells)) or cells[worst] < -COHERENCE_TOL:
        d = params.design
        raise IncoherentMarginsError(
            f"block {d.name}: parameters imply probability {cells[worst]:.3g} "
            f"for cell {d.responses.label(worst)}=1, rest=0"
        )
    return np.clip(cells, 0.0, None)


def cells_to_params(cells, design: BlockDesign) -> LogMeanParams:
    """Coefficients of a saturated block from its conditional distributions.

    Parameters
    ----------
    cells : array, shape (2**|covariates|, 2**|responses|)
        Row ``i`` is the response distribution at covariate configuration ``i``.
    design : saturated BlockDesign

    Raises
    ------
    DomainError
        If the design is not saturated or a row is not a distribution.
    LogDomainError
        If some margin ``pi_{D|i}`` is zero.
    """
    if not design.saturated:
        raise DomainError(
            f"block {design.name} is not saturated; closed-form inversion needs "
            "every covariate term"
        )
    p = np.asarray(cells, dtype=float)
    if p.shape != (design.n_configs, 1 << design.responses.arity):
        raise DomainError(f"cells have shape {p.shape}, expected "
                          f"{(design.n_configs, 1 << design.responses.arity)}")
    if np.any(p < 0) or np.any(np.abs(p.sum(axis=1) - 1) > 1e-10):
        raise DomainError("each configuration must carry a probability distribution")
    pi = superset_sum(p, 1)
    if np.any(pi[:, 1:] <= 0):
        i, d = np.argwhere(pi[:, 1:] <= 0)[0]
        raise LogDomainError(
            f"block {design.name}: margin of {design.responses.label(d + 1)} is zero "
            f"at covariate configuration {i}; merge categories or smooth the counts"
        )
    eta = np.log(pi[:, 1:])
    # beta[t] = sum_{s subset of t} (-1)^{|t-s|} eta[s], per response subset
    beta = subset_sum(eta.T, -1)
    return LogMeanParams(design, beta.reshape(-1))


__all__ = [
    "BlockDesign",
    "BlockStructure",
    "Independence",
    "INTERMEDIATE_BLOCK",
    "LogMeanParams",
    "ModelDesign",
    "RESPONSE_BLOCK",
    "ZeroConstraintSet",
    "build_design",
    "cells_to_params",
    "conditional_cells",
    "constraints_from_independence",
    "is_valid",
    "params_to_conditional_cells",
    "parse_independence",
    "zero",
]
