"""Input checks for the estimator interface."""

from __future__ import annotations

from typing import Sequence

import numpy as np
from sklearn.utils.validation import check_array

from .exceptions import DomainError, SchemaError


def column_names(X) -> list[str] | None:
    """Column labels of a DataFrame-like object, else None."""
    cols = getattr(X, "columns", None)
    if cols is None:
        return None
    return [str(c) for c in cols]


def check_binary_data(X, names: Sequence[str]) -> np.ndarray:
    """Return the columns ``names`` of ``X`` as an int array of 0/1 values.

    A DataFrame is matched on column labels (extra columns are ignored).
    A plain array must have exactly ``len(names)`` columns, taken in the
    order of ``names``.
    """
    names = list(names)
    cols = column_names(X)
    if cols is not None:
        missing = [n for n in names if n not in cols]
        if missing:
            raise SchemaError(f"missing column(s) {missing}; data has {cols}")
        X = X[names]
    arr = check_array(X, dtype=None, ensure_all_finite=True)
    if arr.shape[1] != len(names):
        raise DomainError(
            f"expected {len(names)} columns ({', '.join(names)}), got {arr.shape[1]}"
        )
    ok = (arr == 0) | (arr == 1)
    if not np.all(ok):
        row, col = np.argwhere(~ok)[0]
        raise DomainError(f"row {row}, column {names[col]!r}: {arr[row, col]!r} is not 0 or 1")
    return arr.astype(np.int64)


def check_counts(sample_weight, n_samples: int) -> np.ndarray:
    """Nonnegative integer frequency weights, one per row."""
    if sample_weight is None:
        return np.ones(n_samples, dtype=np.int64)
    w = np.asarray(sample_weight, dtype=float)
    if w.shape != (n_samples,):
        raise DomainError(f"sample_weight must have shape ({n_samples},), got {w.shape}")
    if np.any(w < 0) or np.any(w != np.round(w)):
        raise DomainError("sample_weight must hold nonnegative integer frequencies")
    return w.astype(np.int64)
