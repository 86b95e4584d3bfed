"""Information-loss measures over two-way tables, and the risk-utility map.

All three measures compare a perturbed two-way frequency table against the
original one produced from the same records:

* ``raad``: 100 * (average cell size - average absolute cell distance) /
  average cell size. Identical tables score 100; heavier distortion scores
  lower.
* ``rcv``: relative change, in percent, of Cramer's association measure
  ``sqrt(chi2 / min(R-1, C-1))``. Attenuated association gives negative
  values. The conventional 1/n inside the square root is deliberately
  omitted: both tables hold the same records, so the factor cancels in the
  ratio.
* ``bvr``: relative change, in percent, of the between-row variance of one
  column's within-row proportion (the spread an ANOVA-style comparison of
  group proportions would see).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .keyspace import MicrodataTable


@dataclass(frozen=True)
class TwoWayTable:
    """Dense R x C cross-tabulation of two key variables."""

    row_var: str
    col_var: str
    counts: np.ndarray
    row_labels: tuple
    col_labels: tuple

    @classmethod
    def from_table(cls, table: MicrodataTable, row_var, col_var) -> "TwoWayTable":
        ks = table.keyspace
        r = ks.variable_index(row_var)
        c = ks.variable_index(col_var)
        if r == c:
            raise DataError("row and column variable must differ")
        R = ks.variables[r].cardinality
        C = ks.variables[c].cardinality
        counts = np.zeros((R, C))
        np.add.at(counts, (table.codes[:, r], table.codes[:, c]), 1.0)
        return cls(
            ks.variables[r].name, ks.variables[c].name, counts,
            tuple(ks.variables[r].categories), tuple(ks.variables[c].categories),
        )

    def column_index(self, label) -> int:
        try:
            return self.col_labels.index(label)
        except ValueError:
            raise DataError(f"unknown column label {label!r}") from None

    @property
    def shape(self):
        return self.counts.shape


def _paired(orig: TwoWayTable, pert: TwoWayTable):
    a = np.asarray(orig.counts, dtype=float)
    b = np.asarray(pert.counts, dtype=float)
    if a.shape != b.shape:
        raise DataError(f"table shapes differ: {a.shape} vs {b.shape}")
    if np.any(a < 0) or np.any(b < 0):
        raise DataError("negative counts")
    return a, b


def raad(orig: TwoWayTable, pert: TwoWayTable) -> float:
    """Relative absolute average distance per cell, in percent of the
    original average cell size. 100 means no distortion."""
    a, b = _paired(orig, pert)
    d_avg = a.sum() / a.size
    if d_avg == 0:
        raise DataError("original table is empty")
    aad = np.abs(b - a).sum() / a.size
    return float(100.0 * (d_avg - aad) / d_avg)


def _chi2(t: np.ndarray) -> float:
    total = t.sum()
    expected = np.outer(t.sum(axis=1), t.sum(axis=0)) / total
    mask = expected > 0
    return float((((t - expected) ** 2)[mask] / expected[mask]).sum())


def cramers_v(t: np.ndarray) -> float:
    """Association measure sqrt(chi2 / min(R-1, C-1)) on raw counts."""
    r, c = t.shape
    return float(np.sqrt(_chi2(t) / min(r - 1, c - 1)))


def _drop_dead_lines(a, b, axis, what):
    """Drop lines that are zero in both tables; warn about one-sided zeros."""
    other = 1 - axis
    a_zero = a.sum(axis=other) == 0
    b_zero = b.sum(axis=other) == 0
    both = a_zero & b_zero
    if np.any(both):
        keep = ~both
        a = np.compress(keep, a, axis=axis)
        b = np.compress(keep, b, axis=axis)
        a_zero = a_zero[keep]
        b_zero = b_zero[keep]
    one_sided = a_zero ^ b_zero
    if np.any(one_sided):
        warnings.warn(
            f"{int(one_sided.sum())} {what}(s) are zero in only one table; "
            "the association comparison is fragile at small counts",
            stacklevel=3,
        )
    return a, b


def rcv(orig: TwoWayTable, pert: TwoWayTable) -> float:
    """Relative change of Cramer's association measure, in percent."""
    a, b = _paired(orig, pert)
    a, b = _drop_dead_lines(a, b, 0, "row")
    a, b = _drop_dead_lines(a, b, 1, "column")
    if min(a.shape) < 2:
        raise DataError("fewer than two non-empty rows or columns")
    cv_orig = cramers_v(a)
    if cv_orig == 0:
        raise DataError("original table is exactly independent; rcv undefined")
    return float(100.0 * (cramers_v(b) - cv_orig) / cv_orig)


def _between_row_variance(t: np.ndarray, col: int) -> float:
    row_totals = t.sum(axis=1)
    if np.any(row_totals <= 0):
        raise DataError("every row must have a positive total")
    shares = t[:, col] / row_totals
    overall = t[:, col].sum() / t.sum()
    return float(((shares - overall) ** 2).sum() / (t.shape[0] - 1))


def bvr(orig: TwoWayTable, pert: TwoWayTable, column) -> float:
    """Relative change of the between-row variance of a column proportion."""
    a, b = _paired(orig, pert)
    col = orig.column_index(column) if isinstance(column, str) else int(column)
    if not 0 <= col < a.shape[1]:
        raise DataError(f"column index {col} out of range")
    bv_orig = _between_row_variance(a, col)
    if bv_orig == 0:
        raise DataError("no between-row variation in the original table")
    return float(100.0 * (_between_row_variance(b, col) - bv_orig) / bv_orig)


# --------------------------------------------------------------------------
# Risk-utility map
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class RiskUtilityPoint:
    """One candidate release: its risk total and its information loss.

    ``loss`` is oriented so that larger means worse utility (100 - raad);
    the raw raad value is kept alongside.
    """

    label: str
    risk: float
    loss: float
    raad: float

    @classmethod
    def from_raad(cls, label: str, risk: float, raad_value: float):
        return cls(label, float(risk), 100.0 - float(raad_value), float(raad_value))


def risk_utility_map(points) -> tuple:
    """All candidate points plus the Pareto frontier.

    A point is on the frontier when no other point is at least as good on
    both axes (lower risk, lower loss) and strictly better on one.
    """
    points = list(points)
    if not points:
        raise DataError("the map needs at least one candidate release")
    labels = [p.label for p in points]
    if len(set(labels)) != len(labels):
        raise DataError("duplicate point labels")

    def dominates(p, q):
        return (p.risk <= q.risk and p.loss <= q.loss
                and (p.risk < q.risk or p.loss < q.loss))

    frontier = [
        p for p in points
        if not any(dominates(q, p) for q in points if q is not p)
    ]
    frontier.sort(key=lambda p: (p.loss, p.risk))
    return points, frontier
