"""Input validation helpers used by the estimators and formula functions."""

from __future__ import annotations

import numpy as np

from .errors import DataError

ROW_SUM_TOL = 1e-12


def check_stochastic_matrix(matrix, name="matrix") -> np.ndarray:
    """Validate a square row-stochastic matrix and return it as float64.

    Rows must sum to 1 within ``ROW_SUM_TOL`` and every entry must lie in
    [0, 1].
    """
    m = np.asarray(matrix, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise DataError(f"{name} must be square, got shape {m.shape}")
    if np.any(m < -ROW_SUM_TOL) or np.any(m > 1 + ROW_SUM_TOL):
        raise DataError(f"{name} has entries outside [0, 1]")
    row_sums = m.sum(axis=1)
    bad = np.nonzero(np.abs(row_sums - 1.0) > ROW_SUM_TOL)[0]
    if bad.size:
        raise DataError(
            f"{name} row {bad[0]} sums to {row_sums[bad[0]]!r}, expected 1"
        )
    return np.clip(m, 0.0, 1.0)


def check_probability_vector(p, name="proportions") -> np.ndarray:
    p = np.asarray(p, dtype=float)
    if p.ndim != 1:
        raise DataError(f"{name} must be one-dimensional")
    if np.any(p < 0):
        raise DataError(f"{name} has negative entries")
    total = p.sum()
    if not np.isclose(total, 1.0, atol=1e-9):
        raise DataError(f"{name} sums to {total!r}, expected 1")
    return p


def check_inclusion_probability(pi, name="pi") -> float:
    pi = float(pi)
    if not (0.0 < pi <= 1.0):
        raise DataError(f"{name} must lie in (0, 1], got {pi!r}")
    return pi


def check_fraction(x, name="rate") -> float:
    x = float(x)
    if not (0.0 <= x <= 1.0):
        raise DataError(f"{name} must lie in [0, 1], got {x!r}")
    return x
