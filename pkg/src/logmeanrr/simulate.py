"""Joint distributions implied by fitted blocks, and sampling from them."""

from __future__ import annotations

import numpy as np

from .model import (
    INTERMEDIATE_BLOCK,
    RESPONSE_BLOCK,
    BlockStructure,
    LogMeanParams,
    conditional_cells,
)
from .tables import ContingencyTable


def joint_cells(
    structure: BlockStructure,
    params: dict[str, LogMeanParams],
    p_background: float,
) -> np.ndarray:
    """``P(Y_V, Z_U, X)`` over the cells of ``structure.variables``.

    Cell bitmasks follow the order responses, intermediates, background.
    """
    if not 0.0 <= p_background <= 1.0:
        raise ValueError("p_background must lie in [0, 1]")
    nv = structure.responses.arity
    nu = structure.intermediates.arity
    py = conditional_cells(params[RESPONSE_BLOCK])
    if nu:
        pz = conditional_cells(params[INTERMEDIATE_BLOCK])
    else:
        pz = np.ones((2, 1))
    out = np.zeros(1 << (nv + nu + 1))
    for x in (0, 1):
        px = p_background if x else 1.0 - p_background
        for z in range(1 << nu):
            # response-block configuration bitmask: intermediates first, then X
            cfg = z | (x << nu)
            for y in range(1 << nv):
                cell = y | (z << nv) | (x << (nv + nu))
                out[cell] = px * pz[x, z] * py[cfg, y]
    return out


def sample_table(
    structure: BlockStructure,
    params: dict[str, LogMeanParams],
    p_background: float,
    n: int,
    rng: np.random.Generator | int | None = None,
) -> ContingencyTable:
    """Multinomial sample of size ``n`` from :func:`joint_cells`."""
    rng = np.random.default_rng(rng)
    p = joint_cells(structure, params, p_background)
    counts = rng.multinomial(n, p / p.sum())
    return ContingencyTable(structure.variables, counts)
