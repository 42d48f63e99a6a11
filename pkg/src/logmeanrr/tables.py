"""Binary contingency tables: loading, marginalizing, empirical proportions."""

from __future__ import annotations

import csv
import io
import os
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Mapping

import numpy as np

from .exceptions import DomainError, ParseError, SchemaError, ZeroBaseError
from .subsets import VarSet

COUNT_COLUMN = "count"


@dataclass(frozen=True)
class ContingencyTable:
    """Counts over the full 0/1 cross-classification of ``vars``.

    ``counts[c]`` is the number of observations in cell ``c``, where bit
    ``i`` of ``c`` is the value of ``vars.names[i]``.
    """

    vars: VarSet
    counts: np.ndarray = field(repr=False)

    def __post_init__(self):
        vars_ = self.vars if isinstance(self.vars, VarSet) else VarSet(self.vars)
        c = np.asarray(self.counts)
        if c.shape != (1 << vars_.arity,):
            raise DomainError(
                f"expected {1 << vars_.arity} cells for {vars_.arity} variables, "
                f"got shape {c.shape}"
            )
        if np.any(c < 0) or np.any(c != np.round(c)):
            raise DomainError("counts must be nonnegative integers")
        c = c.astype(np.int64)
        if c.sum() < 1:
            raise DomainError("table is empty (n must be at least 1)")
        c.setflags(write=False)
        object.__setattr__(self, "vars", vars_)
        object.__setattr__(self, "counts", c)

    @property
    def n(self) -> int:
        return int(self.counts.sum())

    def __getitem__(self, assignment: Mapping[str, int]) -> int:
        """Count of the cell given by a full assignment ``{name: 0/1}``."""
        if set(assignment) != set(self.vars.names):
            raise DomainError("a cell lookup needs a value for every variable")
        cell = 0
        for name, value in assignment.items():
            if value not in (0, 1):
                raise DomainError(f"{name}={value!r} is not binary")
            cell |= int(value) << self.vars.index(name)
        return int(self.counts[cell])

    def scaled(self, factor: int) -> "ContingencyTable":
        return ContingencyTable(self.vars, self.counts * int(factor))

    def rows(self) -> list[tuple[tuple[int, ...], int]]:
        """``(values, count)`` for every cell, in bitmask order."""
        k = self.vars.arity
        return [
            (tuple((c >> i) & 1 for i in range(k)), int(self.counts[c]))
            for c in range(1 << k)
        ]


@dataclass(frozen=True)
class EmpiricalConditional:
    """Observed proportion of ``event`` (all ones) within the stratum ``given``."""

    event: tuple[str, ...]
    given: tuple[tuple[str, int], ...]
    count: int
    base: int

    @property
    def rate(self) -> float:
        return self.count / self.base

    @property
    def fraction(self) -> Fraction:
        return Fraction(self.count, self.base)


def from_records(records, names: Iterable[str], weights=None) -> ContingencyTable:
    """Aggregate a 0/1 record matrix (rows = observations) into a table."""
    vars_ = VarSet(names)
    x = np.asarray(records)
    if x.ndim != 2 or x.shape[1] != vars_.arity:
        raise DomainError(
            f"records must be a 2-D array with {vars_.arity} columns, got {x.shape}"
        )
    if not np.all((x == 0) | (x == 1)):
        row = int(np.flatnonzero(~np.all((x == 0) | (x == 1), axis=1))[0])
        raise ParseError(f"record {row} contains a non-binary value")
    if weights is None:
        w = np.ones(x.shape[0], dtype=np.int64)
    else:
        w = np.asarray(weights)
        if w.shape != (x.shape[0],) or np.any(w < 0) or np.any(w != np.round(w)):
            raise DomainError("weights must be nonnegative integers, one per record")
    cell = (x.astype(np.int64) << np.arange(vars_.arity)).sum(axis=1)
    counts = np.bincount(cell, weights=w, minlength=1 << vars_.arity)
    return ContingencyTable(vars_, np.round(counts).astype(np.int64))


def _parse_int(text: str, line: int, column: str) -> int:
    try:
        value = int(text.strip())
    except ValueError:
        raise ParseError(f"column {column!r}: {text!r} is not an integer", line) from None
    return value


def load_records(
    source,
    columns: Iterable[str] | None = None,
    count_column: str | None = COUNT_COLUMN,
    delimiter: str = ",",
) -> ContingencyTable:
    """Read a delimited text table with a header row into a ContingencyTable.

    Each data row is either one observation, or, when a column named
    ``count_column`` is present, a cell with its frequency. Identical rows
    are aggregated. Lines starting with ``#`` and blank lines are skipped.

    Parameters
    ----------
    source : path or text stream
    columns : names of the variables to keep, in the order wanted; all
        non-count columns by default. Dropped columns are summed over.
    count_column : header name of the frequency column, or None.
    delimiter : field separator.

    Raises
    ------
    ParseError
        On a non-binary value (with its line number) or a malformed count.
    SchemaError
        When a requested column is missing from the header.
    DomainError
        When the data section is empty.
    """
    if isinstance(source, (str, os.PathLike)):
        with open(source, newline="") as fh:
            return load_records(fh, columns, count_column, delimiter)
    if isinstance(source, bytes):
        source = io.StringIO(source.decode())

    lines = (
        (i, line)
        for i, line in enumerate(source, start=1)
        if line.strip() and not line.lstrip().startswith("#")
    )
    try:
        header_line, header_text = next(lines)
    except StopIteration:
        raise ParseError("no header row") from None
    header = [h.strip() for h in next(csv.reader([header_text], delimiter=delimiter))]
    if len(set(header)) != len(header):
        raise SchemaError(f"duplicate column names in header: {header}")

    has_count = count_column is not None and count_column in header
    available = [h for h in header if not (has_count and h == count_column)]
    if columns is None:
        wanted = available
    else:
        wanted = list(columns)
        missing = [c for c in wanted if c not in available]
        if missing:
            raise SchemaError(f"unknown column(s) {missing}; header has {header}")
    vars_ = VarSet(wanted)
    pos = [header.index(c) for c in wanted]
    cpos = header.index(count_column) if has_count else None

    counts = np.zeros(1 << vars_.arity, dtype=np.int64)
    n_rows = 0
    for line_no, text in lines:
        row = [f.strip() for f in next(csv.reader([text], delimiter=delimiter))]
        if len(row) != len(header):
            raise ParseError(
                f"expected {len(header)} fields, found {len(row)}", line_no
            )
        for h, value in zip(header, row):
            if h == count_column and has_count:
                continue
            if value not in ("0", "1"):
                raise ParseError(f"column {h!r}: {value!r} is not 0 or 1", line_no)
        cell = 0
        for i, p in enumerate(pos):
            cell |= int(row[p]) << i
        weight = 1
        if cpos is not None:
            weight = _parse_int(row[cpos], line_no, count_column)
            if weight < 0:
                raise ParseError(f"negative count {weight}", line_no)
        counts[cell] += weight
        n_rows += 1
    if n_rows == 0 or counts.sum() == 0:
        raise DomainError("data section is empty (n must be at least 1)")
    return ContingencyTable(vars_, counts)


def write_records(table: ContingencyTable, stream, delimiter: str = ",") -> None:
    """Write ``table`` in count format (one row per cell)."""
    writer = csv.writer(stream, delimiter=delimiter, lineterminator="\n")
    writer.writerow(list(table.vars.names) + [COUNT_COLUMN])
    for values, count in table.rows():
        writer.writerow(list(values) + [count])


def marginal_table(table: ContingencyTable, keep: Iterable[str]) -> ContingencyTable:
    """Sum the counts of ``table`` over every variable not in ``keep``.

    The kept variables retain their order in ``table.vars``.
    """
    keep = [keep] if isinstance(keep, str) else list(keep)
    unknown = [k for k in keep if k not in table.vars]
    if unknown:
        raise DomainError(f"{unknown} not among table variables {list(table.vars)}")
    sub = table.vars.sub(keep)
    idx = [table.vars.index(n) for n in sub.names]
    cells = np.arange(1 << table.vars.arity)
    target = np.zeros_like(cells)
    for j, i in enumerate(idx):
        target |= ((cells >> i) & 1) << j
    counts = np.bincount(target, weights=table.counts, minlength=1 << sub.arity)
    return ContingencyTable(sub, np.round(counts).astype(np.int64))


def cross_counts(
    table: ContingencyTable, responses: VarSet, covariates: VarSet
) -> np.ndarray:
    """Counts arranged as ``out[i, c]``: covariate configuration ``i``
    (bitmask over ``covariates``) by response cell ``c`` (over ``responses``).

    Variables of ``table`` outside both sets are summed over.
    """
    both = list(responses.names) + list(covariates.names)
    for name in both:
        if name not in table.vars:
            raise SchemaError(f"variable {name!r} is not in the data {list(table.vars)}")
    cells = np.arange(1 << table.vars.arity)
    r = np.zeros_like(cells)
    for j, name in enumerate(responses.names):
        r |= ((cells >> table.vars.index(name)) & 1) << j
    z = np.zeros_like(cells)
    for j, name in enumerate(covariates.names):
        z |= ((cells >> table.vars.index(name)) & 1) << j
    out = np.zeros((1 << covariates.arity, 1 << responses.arity), dtype=np.int64)
    np.add.at(out, (z, r), table.counts)
    return out


def conditional_proportion(
    table: ContingencyTable,
    event: Iterable[str] | str,
    given: Mapping[str, int] | None = None,
) -> EmpiricalConditional:
    """Observed ``P(all of event = 1 | given)``.

    Raises
    ------
    ZeroBaseError
        When no observation falls in the conditioning stratum.
    """
    event = [event] if isinstance(event, str) else list(event)
    given = dict(given or {})
    ev_mask = table.vars.mask(event)
    g_mask = 0
    g_val = 0
    for name, value in given.items():
        if value not in (0, 1):
            raise DomainError(f"{name}={value!r} is not binary")
        b = 1 << table.vars.index(name)
        g_mask |= b
        if value:
            g_val |= b
    cells = np.arange(1 << table.vars.arity)
    in_stratum = (cells & g_mask) == g_val
    base = int(table.counts[in_stratum].sum())
    if base == 0:
        raise ZeroBaseError(f"no observations with {given}")
    hit = in_stratum & ((cells & ev_mask) == ev_mask)
    return EmpiricalConditional(
        event=tuple(table.vars.subset_names(ev_mask)),
        given=tuple(sorted(given.items())),
        count=int(table.counts[hit].sum()),
        base=base,
    )


__all__ = [
    "COUNT_COLUMN",
    "ContingencyTable",
    "EmpiricalConditional",
    "conditional_proportion",
    "cross_counts",
    "from_records",
    "load_records",
    "marginal_table",
    "write_records",
]
