"""Plain-text model specifications and parameter fixtures.

Grammar (one statement per line, ``#`` starts a comment)::

    responses     = Y1, Y2          # response block V (required)
    intermediates = Z1, Z2          # intermediate block U (optional)
    background    = X               # single background variable (required)
    interactions  = on | off        # response-block design; default on
    indep: {Y1} _||_ Z1 | {Z2, X}   # zero constraints implied by independence
    zero: theta[Y1,Y2|Z1,X]         # a single coefficient fixed at zero
    alpha[Y1] = -1.040              # parameter values (fixture files)
    theta[Y1|Z1] = 0.630
    expect: rr_marginal[Y1] = 1.870 # reference value to check a report against

Coefficient labels name the response subset ``D`` before the bar and the
covariate term after it, both comma separated. ``theta[D|]`` is the same
as ``alpha[D]``. The intermediate block always regresses on the
background variable alone, e.g. ``theta[Z1,Z2|X]``.

A file with parameter values is a *params fixture*: every free
coefficient of the design must be given; constrained ones may be left
out (they are zero) or given as 0.
"""

from __future__ import annotations

import os
import re
from dataclasses import dataclass, field
from importlib import resources

from .estimation import Candidate
from .exceptions import DomainError, ParseError
from .model import (
    BlockStructure,
    Independence,
    LogMeanParams,
    ModelDesign,
    ZeroConstraintSet,
    build_design,
    constraints_from_independence,
    parse_independence,
    zero,
)
from .subsets import popcount

EXPECT_QUANTITIES = ("rr_conditional", "deviation", "rr_marginal")

_LABEL_RE = re.compile(r"^(?P<kind>alpha|theta)\[(?P<d>[^|\]]+)(?:\|(?P<t>[^\]]*))?\]$")
_EXPECT_RE = re.compile(r"^(?P<q>\w+)\[(?P<d>[^\]]+)\]\s*=\s*(?P<v>\S+)$")


def _split(text: str) -> tuple[str, ...]:
    text = text.strip().strip("{}")
    return tuple(p.strip() for p in text.split(",") if p.strip())


def parse_label(text: str) -> tuple[tuple[str, ...], tuple[str, ...]]:
    """``'theta[R24,M24|R4]'`` -> ``(('R24', 'M24'), ('R4',))``."""
    m = _LABEL_RE.match(text.replace(" ", ""))
    if not m:
        raise ParseError(f"cannot parse coefficient label {text!r}")
    d = _split(m.group("d"))
    t = _split(m.group("t") or "")
    if m.group("kind") == "alpha" and t:
        raise ParseError(f"intercept label {text!r} cannot name a covariate term")
    return d, t


@dataclass(frozen=True)
class Expectation:
    quantity: str
    subset: tuple[str, ...]
    value: float


@dataclass
class ModelSpec:
    structure: BlockStructure
    interactions: bool = True
    independences: list[Independence] = field(default_factory=list)
    zeros: list[tuple[tuple[str, ...], tuple[str, ...]]] = field(default_factory=list)
    values: dict[tuple[tuple[str, ...], tuple[str, ...]], float] = field(default_factory=dict)
    expectations: list[Expectation] = field(default_factory=list)
    source: str = "<string>"

    def design(self) -> ModelDesign:
        return build_design(self.structure, self.interactions)

    def constraints(self, design: ModelDesign | None = None) -> ZeroConstraintSet:
        design = design or self.design()
        out = ZeroConstraintSet()
        for ind in self.independences:
            out = out | constraints_from_independence(ind, design)
        for d, t in self.zeros:
            out = out | zero(design, d, t)
        return out

    @property
    def has_values(self) -> bool:
        return bool(self.values)

    def params(self) -> dict[str, LogMeanParams]:
        """Parameter values of a fixture, one :class:`LogMeanParams` per block."""
        if not self.values:
            raise DomainError(f"{self.source} carries no parameter values")
        design = self.design()
        cons = self.constraints(design)
        by_block: dict[str, dict] = {b.name: {} for b in design.blocks}
        for (d, t), v in self.values.items():
            block = design.block_for(d)
            key = block.key(d, t)
            block.index(*key)
            if (block.name,) + key in cons and v != 0.0:
                raise DomainError(
                    f"{block.label(*key)} = {v} is fixed at zero by the model's constraints"
                )
            by_block[block.name][(d, t)] = v
        out = {}
        for b in design.blocks:
            given = {b.key(d, t) for d, t in by_block[b.name]}
            fixed = cons.for_block(b.name)
            missing = [b.label(d, t) for d, t in b.pairs if (d, t) not in given and (d, t) not in fixed]
            if missing:
                raise DomainError(f"{self.source}: no value for {', '.join(missing)}")
            out[b.name] = LogMeanParams.from_dict(b, by_block[b.name])
        return out


def parse_model_spec(text: str, source: str = "<string>") -> ModelSpec:
    """Parse the key/value model grammar described in the module docstring."""
    keys: dict[str, str] = {}
    independences, zeros, expectations = [], [], []
    values: dict = {}
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        try:
            if line.startswith("indep:"):
                independences.append(parse_independence(line[len("indep:"):]))
            elif line.startswith("zero:"):
                zeros.append(parse_label(line[len("zero:"):].strip()))
            elif line.startswith("expect:"):
                m = _EXPECT_RE.match(line[len("expect:"):].strip())
                if not m or m.group("q") not in EXPECT_QUANTITIES:
                    raise ParseError(
                        f"expected 'expect: <{'|'.join(EXPECT_QUANTITIES)}>[D] = value'"
                    )
                expectations.append(
                    Expectation(m.group("q"), _split(m.group("d")), float(m.group("v")))
                )
            elif "=" in line:
                key, value = (s.strip() for s in line.split("=", 1))
                if key.startswith(("alpha[", "theta[")):
                    label = parse_label(key)
                    if label in values:
                        raise ParseError(f"{key} given twice")
                    values[label] = float(value)
                elif key in ("responses", "intermediates", "background", "interactions"):
                    if key in keys:
                        raise ParseError(f"{key} given twice")
                    keys[key] = value
                else:
                    raise ParseError(f"unknown key {key!r}")
            else:
                raise ParseError(f"cannot parse {line!r}")
        except ParseError as exc:
            raise ParseError(f"{source}: {exc}", line_no) from None
        except ValueError as exc:
            raise ParseError(f"{source}: {exc}", line_no) from None
    for required in ("responses", "background"):
        if required not in keys:
            raise ParseError(f"{source}: missing '{required} = ...'")
    inter = keys.get("interactions", "on").lower()
    if inter not in ("on", "off"):
        raise ParseError(f"{source}: interactions must be 'on' or 'off', not {inter!r}")
    background = _split(keys["background"])
    if len(background) != 1:
        raise DomainError(f"{source}: exactly one background variable is supported")
    structure = BlockStructure(
        _split(keys["responses"]), _split(keys.get("intermediates", "")), background[0]
    )
    spec = ModelSpec(
        structure, inter == "on", independences, zeros, values, expectations, source
    )
    # surface unknown variables and bad labels at load time
    design = spec.design()
    spec.constraints(design)
    for d, t in values:
        design.block_for(d).index(*design.block_for(d).key(d, t))
    return spec


BUILTIN_PREFIX = "builtin:"


def resolve_path(path: str) -> str:
    """Map ``builtin:<name>`` to a file shipped in ``logmeanrr/data``."""
    if path.startswith(BUILTIN_PREFIX):
        name = path[len(BUILTIN_PREFIX):]
        ref = resources.files("logmeanrr") / "data" / name
        if not ref.is_file():
            available = sorted(p.name for p in (resources.files("logmeanrr") / "data").iterdir())
            raise FileNotFoundError(f"no built-in fixture {name!r}; available: {available}")
        return str(ref)
    return path


def load_model_spec(path: str | os.PathLike) -> ModelSpec:
    path = resolve_path(str(path))
    with open(path) as fh:
        return parse_model_spec(fh.read(), source=os.path.basename(path))


def parse_candidates(text: str, design: ModelDesign, source: str = "<string>"):
    """Stepwise candidates: one ``indep:`` or ``zero:`` statement per line."""
    out = []
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        try:
            if line.startswith("indep:"):
                stmt = line[len("indep:"):].strip()
                out.append(Candidate(stmt, constraints_from_independence(stmt, design)))
            elif line.startswith("zero:"):
                d, t = parse_label(line[len("zero:"):].strip())
                cons = zero(design, d, t)
                out.append(Candidate(cons.labels(design)[0], cons))
            else:
                raise ParseError(f"expected 'indep:' or 'zero:', got {line!r}")
        except ParseError as exc:
            raise ParseError(f"{source}: {exc}", line_no) from None
    return out


def interaction_candidates(design: ModelDesign):
    """Every interaction coefficient of every block, one candidate each."""
    out = []
    for b in design.blocks:
        for d, t in b.pairs:
            if popcount(t) > 1:
                out.append(Candidate(b.label(d, t), ZeroConstraintSet(frozenset({(b.name, d, t)}))))
    return out
