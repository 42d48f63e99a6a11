"""Bitmask subsets of a small ordered variable set, and the zeta/Moebius
transforms between cell probabilities and "all ones" margin probabilities.

Conventions
-----------
A subset ``B`` of a :class:`VarSet` with names ``(v0, v1, ...)`` is the
integer whose bit ``i`` is set when ``vi`` belongs to ``B``. A cell of the
cross-classification ``{0,1}^k`` is encoded the same way: bit ``i`` holds
the value of ``vi``. So the cell with ones exactly on ``B`` and zeros
elsewhere has index ``B``, and dense arrays of length ``2**k`` serve both
as cell distributions and as margin vectors.

For a cell distribution ``p`` the margin vector is

    pi[B] = P(all variables in B equal 1) = sum_{c superset of B} p[c]

and it is inverted by inclusion-exclusion,

    p[B] = sum_{D superset of B} (-1)^{|D \\ B|} pi[D].
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .exceptions import (
    CapacityError,
    DomainError,
    IncoherentMarginsError,
    InvalidDistributionError,
    SchemaError,
)

MAX_ARITY = 16
COHERENCE_TOL = 1e-10
SUM_TOL = 1e-12


def popcount(mask: int) -> int:
    return bin(mask).count("1")


def bits(mask: int) -> list[int]:
    """Positions of the set bits of ``mask``, ascending."""
    out = []
    i = 0
    while mask:
        if mask & 1:
            out.append(i)
        mask >>= 1
        i += 1
    return out


def submasks(mask: int) -> list[int]:
    """All submasks of ``mask`` in increasing numeric order."""
    out = []
    sub = mask
    while True:
        out.append(sub)
        if sub == 0:
            break
        sub = (sub - 1) & mask
    return out[::-1]


@dataclass(frozen=True)
class VarSet:
    """Ordered set of distinct binary variable names."""

    names: tuple[str, ...]

    def __init__(self, names: Iterable[str] = ()):
        names = tuple(str(n) for n in names)
        if len(set(names)) != len(names):
            dup = sorted({n for n in names if names.count(n) > 1})
            raise SchemaError(f"duplicate variable names: {dup}")
        if len(names) > MAX_ARITY:
            raise CapacityError(
                f"{len(names)} variables exceeds the limit of {MAX_ARITY}"
            )
        object.__setattr__(self, "names", names)

    @property
    def arity(self) -> int:
        return len(self.names)

    @property
    def full(self) -> int:
        """Bitmask of the whole set."""
        return (1 << self.arity) - 1

    def __len__(self) -> int:
        return len(self.names)

    def __iter__(self):
        return iter(self.names)

    def __contains__(self, name) -> bool:
        return name in self.names

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise DomainError(
                f"unknown variable {name!r}; expected one of {list(self.names)}"
            ) from None

    def mask(self, names: Iterable[str] | str | int) -> int:
        """Bitmask of ``names``. Integers are passed through after a range check."""
        if isinstance(names, (int, np.integer)):
            names = int(names)
            if names < 0 or names > self.full:
                raise DomainError(f"mask {names} out of range for {self.names}")
            return names
        if isinstance(names, str):
            names = [names]
        m = 0
        for n in names:
            m |= 1 << self.index(n)
        return m

    def subset_names(self, mask: int) -> tuple[str, ...]:
        return tuple(self.names[i] for i in bits(mask))

    def label(self, mask: int) -> str:
        """Human-readable label such as ``{R24,M24}``; the empty set is ``{}``."""
        return "{" + ",".join(self.subset_names(mask)) + "}"

    def sub(self, names: Iterable[str]) -> "VarSet":
        """The ordered sub-VarSet containing ``names`` (kept in this set's order)."""
        wanted = set(names)
        for n in wanted:
            self.index(n)
        return VarSet(n for n in self.names if n in wanted)


def enumerate_subsets(ground: VarSet | int) -> list[int]:
    """All ``2**arity`` subset bitmasks in increasing numeric order."""
    k = ground.arity if isinstance(ground, VarSet) else int(ground)
    if k > MAX_ARITY:
        raise CapacityError(f"{k} variables exceeds the limit of {MAX_ARITY}")
    return list(range(1 << k))


def _arity_of(n_entries: int) -> int:
    k = n_entries.bit_length() - 1
    if n_entries < 1 or (1 << k) != n_entries:
        raise DomainError(f"length {n_entries} is not a power of two")
    if k > MAX_ARITY:
        raise CapacityError(f"{k} variables exceeds the limit of {MAX_ARITY}")
    return k


def superset_sum(values, sign: int = 1) -> np.ndarray:
    """Fast transform ``out[B] = sum_{D >= B} sign^{|D \\ B|} values[D]``.

    Works on the last axis, so a 2-D array is transformed row by row.
    ``sign=1`` is the zeta transform, ``sign=-1`` its Moebius inverse.
    """
    out = np.array(values, dtype=float, copy=True)
    k = _arity_of(out.shape[-1])
    lead = out.shape[:-1]
    for i in range(k):
        view = out.reshape(lead + (-1, 2, 1 << i))
        view[..., 0, :] += sign * view[..., 1, :]
    return out


def subset_sum(values, sign: int = 1) -> np.ndarray:
    """Fast transform ``out[B] = sum_{D <= B} sign^{|B \\ D|} values[D]``."""
    out = np.array(values, dtype=float, copy=True)
    k = _arity_of(out.shape[-1])
    lead = out.shape[:-1]
    for i in range(k):
        view = out.reshape(lead + (-1, 2, 1 << i))
        view[..., 1, :] += sign * view[..., 0, :]
    return out


@dataclass(frozen=True)
class MarginVector:
    """Margin probabilities ``pi[B] = P(all of B equal 1)`` for every subset B.

    ``values`` is indexed by bitmask over ``ground``; ``values[0] == 1``.
    """

    ground: VarSet
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.shape != (1 << self.ground.arity,):
            raise DomainError(
                f"expected {1 << self.ground.arity} margins, got shape {v.shape}"
            )
        if abs(v[0] - 1.0) > COHERENCE_TOL:
            raise IncoherentMarginsError(f"margin of the empty set is {v[0]}, not 1")
        if np.any(~np.isfinite(v)) or np.any(v < -COHERENCE_TOL) or np.any(
            v > 1 + COHERENCE_TOL
        ):
            bad = int(np.flatnonzero((v < -COHERENCE_TOL) | (v > 1 + COHERENCE_TOL) | ~np.isfinite(v))[0])
            raise IncoherentMarginsError(
                f"margin {self.ground.label(bad)} = {v[bad]} lies outside [0, 1]"
            )
        v = np.clip(v, 0.0, 1.0)
        v[0] = 1.0
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def __getitem__(self, subset) -> float:
        return float(self.values[self.ground.mask(subset)])

    def as_dict(self) -> dict[tuple[str, ...], float]:
        return {
            self.ground.subset_names(m): float(self.values[m])
            for m in range(len(self.values))
        }


def _as_ground(ground, n_entries: int) -> VarSet:
    k = _arity_of(n_entries)
    if ground is None:
        return VarSet(f"v{i}" for i in range(k))
    if not isinstance(ground, VarSet):
        ground = VarSet(ground)
    if ground.arity != k:
        raise DomainError(f"{n_entries} cells do not match {ground.arity} variables")
    return ground


def zeta_transform(cells, ground: VarSet | Sequence[str] | None = None) -> MarginVector:
    """Margin vector of a cell distribution.

    Parameters
    ----------
    cells : array_like, length ``2**k``
        Cell probabilities indexed by bitmask.
    ground : VarSet, optional
        Variable names; defaults to ``v0, v1, ...``.

    Raises
    ------
    InvalidDistributionError
        If a cell is negative or the cells do not sum to one within 1e-12.
    """
    p = np.asarray(cells, dtype=float)
    if p.ndim != 1:
        raise DomainError("cells must be one-dimensional")
    ground = _as_ground(ground, p.size)
    if np.any(~np.isfinite(p)) or np.any(p < 0):
        raise InvalidDistributionError("cell probabilities must be nonnegative")
    total = p.sum()
    if abs(total - 1.0) > SUM_TOL:
        raise InvalidDistributionError(f"cell probabilities sum to {total!r}, not 1")
    pi = superset_sum(p, 1)
    pi[0] = 1.0
    return MarginVector(ground, pi)


def moebius_invert(margins: MarginVector | Sequence[float]) -> np.ndarray:
    """Cell probabilities from a margin vector, by inclusion-exclusion.

    Cells in ``(-1e-10, 0)`` are treated as rounding noise and clamped to
    zero. Anything more negative means the margins are not those of a
    distribution.

    Raises
    ------
    IncoherentMarginsError
    """
    if isinstance(margins, MarginVector):
        pi, ground = margins.values, margins.ground
    else:
        pi = np.asarray(margins, dtype=float)
        ground = _as_ground(None, pi.size)
        if abs(pi[0] - 1.0) > COHERENCE_TOL:
            raise IncoherentMarginsError(f"margin of the empty set is {pi[0]}, not 1")
    p = superset_sum(pi, -1)
    worst = int(np.argmin(p))
    if not np.all(np.isfinite(p)) or p[worst] < -COHERENCE_TOL:
        raise IncoherentMarginsError(
            f"margins imply probability {p[worst]:.3g} for cell "
            f"{ground.label(worst)}=1, rest=0"
        )
    return np.clip(p, 0.0, None)
