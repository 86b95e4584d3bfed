"""Perturbative disclosure limitation mechanisms.

Two transformers operate on one designated key variable of a MicrodataTable:

* :class:`DataSwap` exchanges values between paired records, either across the
  whole file (random mode) or separately within target groups (targeted mode).
  Swapping conserves the sample marginal distribution of the swapped variable
  exactly and touches nothing else.
* :class:`Pram` re-draws each record's category from a row of an invariant
  transition matrix built from a base misclassification matrix and the sample
  proportions, so expected marginal frequencies are preserved and users of the
  released file need no unbiasing correction.

Both follow the scikit-learn estimator protocol: constructor parameters are
stored verbatim, ``fit`` learns data-dependent state (induced or invariant
matrices) into trailing-underscore attributes, and ``transform`` applies the
mechanism reproducibly for an integer ``random_state``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from ._validation import check_fraction, check_probability_vector, check_stochastic_matrix
from .errors import DataError, NumericalError
from .keyspace import MicrodataTable, MisclassSpec, draw_categories
from .rng import as_generator

INVARIANCE_TOL = 1e-10


# --------------------------------------------------------------------------
# Induced and invariant matrices
# --------------------------------------------------------------------------

def swap_misclass_matrix(category_counts, pool_fraction: float) -> np.ndarray:
    """Misclassification matrix induced by swapping a ``pool_fraction`` of
    records, with destinations proportional to the counts of the other
    categories.

    Row ``j`` keeps its value with probability ``1 - pool_fraction`` and
    moves to ``k`` with probability ``pool_fraction * n_k / sum_{l != j} n_l``.
    This summarizes the pairwise-exchange mechanism as if pool members were
    relocated independently; the exchange coupling itself is not representable
    as a product of independent per-record transitions.
    """
    counts = np.asarray(category_counts, dtype=float)
    if counts.ndim != 1 or len(counts) < 2:
        raise DataError("need counts for at least two categories")
    if np.any(counts < 0):
        raise DataError("category counts must be nonnegative")
    pool_fraction = check_fraction(pool_fraction, name="pool_fraction")
    total = counts.sum()
    size = len(counts)
    matrix = np.eye(size) * (1.0 - pool_fraction)
    if pool_fraction > 0:
        for j in range(size):
            others = total - counts[j]
            if others <= 0:
                raise DataError(
                    f"category {j + 1} has no off-diagonal mass to absorb a "
                    f"pool fraction of {pool_fraction}"
                )
            row = pool_fraction * counts / others
            row[j] = 1.0 - pool_fraction
            matrix[j] = row
    return check_stochastic_matrix(matrix, name="swap matrix")


def invariant_pram_matrix(base, proportions, alpha: float) -> np.ndarray:
    """Invariant transition matrix from a base matrix and sample proportions.

    The base matrix (row = original category) is Bayes-inverted against the
    proportions, composed with itself, and blended with the identity:
    transpose the base, scale column ``j`` by ``p_j``, normalize rows to get
    the posterior ``Q``; the product ``base @ Q`` leaves ``p`` invariant, and
    ``alpha`` controls how much of that perturbation is applied.

    Categories with zero proportion are left untouched (identity rows);
    categories with positive proportion that receive no probability mass from
    the support are rejected by name, since the inversion is undefined there.
    """
    m = check_stochastic_matrix(base, name="base matrix")
    p = np.asarray(proportions, dtype=float)
    if p.shape != (m.shape[0],):
        raise DataError("proportions length does not match the matrix")
    check_probability_vector(p)
    alpha = check_fraction(alpha, name="alpha")

    size = len(p)
    support = p > 0
    received = m.T @ p  # mass arriving at each category from the support
    dead = support & (received <= 0)
    if np.any(dead):
        raise DataError(
            "cannot invert base matrix: no probability mass reaches "
            f"category index {int(np.nonzero(dead)[0][0]) + 1} "
            "(zero-mass column)"
        )

    safe = np.where(received > 0, received, 1.0)
    posterior = (m.T * p[None, :]) / safe[:, None]
    posterior[received <= 0] = np.eye(size)[received <= 0]  # unreachable rows
    invariant = m @ posterior
    invariant[~support] = np.eye(size)[~support]
    blended = alpha * invariant + (1.0 - alpha) * np.eye(size)

    drift = np.max(np.abs(p @ blended - p))
    if drift > INVARIANCE_TOL:
        raise NumericalError(
            f"invariant construction drifted by {drift:g} (> {INVARIANCE_TOL:g})"
        )
    return blended


def uniform_offdiag_matrix(cardinality: int, diagonal: float) -> np.ndarray:
    """Matrix with a constant diagonal and equal off-diagonal entries."""
    if cardinality < 2:
        raise DataError("need at least two categories")
    diagonal = check_fraction(diagonal, name="diagonal")
    off = (1.0 - diagonal) / (cardinality - 1)
    return np.full((cardinality, cardinality), off) + np.eye(cardinality) * (diagonal - off)


# --------------------------------------------------------------------------
# Data swapping
# --------------------------------------------------------------------------

@dataclass
class SwapLog:
    """Audit trail of one swap run."""

    variable: str
    n_pool: int = 0
    n_flagged: int = 0
    n_unswapped: int = 0
    pairs: list = field(default_factory=list)  # dicts, one per exchanged pair

    @property
    def n_pairs(self) -> int:
        return len(self.pairs)

    @property
    def n_swapped_records(self) -> int:
        return 2 * len(self.pairs)

    def to_rows(self):
        header = ["flagged_id", "partner_id", "flagged_old", "partner_old", "group"]
        rows = [
            [p["flagged_id"], p["partner_id"], p["flagged_old"], p["partner_old"],
             p.get("group", "")]
            for p in self.pairs
        ]
        return header, rows


class DataSwap(BaseEstimator, TransformerMixin):
    """Swap one key variable's values between paired records.

    Parameters
    ----------
    variable : int or str
        Key variable whose values are exchanged (e.g. the geography).
    rate : float
        Fraction of records entering the swap pool in random mode. The pool is
        drawn separately within each category of the swap variable, half of
        each category's pool is flagged, and every flagged record exchanges
        values with an unflagged pool partner holding a different value, so
        (pairing permitting) the whole pool ends up swapped.
    mode : {"random", "targeted"}
        Targeted mode draws the pool within groups given by the table's
        ``target_group`` column instead, using ``group_rates``; records pair
        only within their own group.
    group_rates : dict, optional
        Pool fraction per target-group label (targeted mode). Groups not
        listed are left untouched.
    random_state : int, optional
        Seed; the same seed reproduces the identical swap, byte for byte.

    After ``fit``, ``misclass_matrices_`` holds the induced per-group
    misclassification matrix of the swap variable, computed from the fitted
    sample's category counts (key ``None`` in random mode).
    """

    def __init__(self, variable=0, rate=0.1, mode="random", group_rates=None,
                 random_state=None):
        self.variable = variable
        self.rate = rate
        self.mode = mode
        self.group_rates = group_rates
        self.random_state = random_state

    # -- fitting ------------------------------------------------------------

    def _group_membership(self, table: MicrodataTable):
        """(group label -> record indices, group -> pool fraction)."""
        if self.mode == "random":
            check_fraction(self.rate, name="rate")
            return {None: np.arange(table.n)}, {None: float(self.rate)}
        if self.mode != "targeted":
            raise DataError(f"unknown swap mode {self.mode!r}")
        if table.target_group is None:
            raise DataError("targeted swapping needs a target_group column")
        if not self.group_rates:
            raise DataError("targeted swapping needs group_rates")
        observed = set(table.target_group.tolist())
        members = {}
        rates = {}
        for group, rate in self.group_rates.items():
            if group not in observed:
                raise DataError(f"unknown target group label {group!r}")
            members[group] = np.nonzero(table.target_group == group)[0]
            rates[group] = check_fraction(rate, name=f"group_rates[{group}]")
        return members, rates

    def fit(self, table: MicrodataTable, y=None):
        var = table.keyspace.variable_index(self.variable)
        members, rates = self._group_membership(table)
        cardinality = table.keyspace.variables[var].cardinality
        self.variable_index_ = var
        self.misclass_matrices_ = {}
        for group, idx in members.items():
            counts = np.bincount(table.codes[idx, var], minlength=cardinality)
            if rates[group] == 0:
                self.misclass_matrices_[group] = np.eye(cardinality)
            else:
                self.misclass_matrices_[group] = swap_misclass_matrix(
                    counts, rates[group]
                )
        return self

    def induced_misclass(self, keyspace) -> MisclassSpec:
        """MisclassSpec for the swap variable (random mode only).

        Targeted designs induce a different matrix per group, which has no
        single factored representation over the key space; use
        ``misclass_matrices_`` per group instead.
        """
        if self.mode != "random":
            raise DataError(
                "targeted swaps have per-group matrices; no single spec exists"
            )
        return MisclassSpec(
            keyspace, {self.variable_index_: self.misclass_matrices_[None]}
        )

    # -- transform ----------------------------------------------------------

    def transform(self, table: MicrodataTable) -> MicrodataTable:
        if not hasattr(self, "variable_index_"):
            raise DataError("DataSwap.transform called before fit")
        rng = as_generator(self.random_state)
        var = self.variable_index_
        members, rates = self._group_membership(table)
        codes = np.array(table.codes, copy=True)
        values = codes[:, var]
        strata = table.control_stratum
        labels = np.asarray(table.keyspace.variables[var].categories, dtype=object)

        log = SwapLog(variable=table.keyspace.variables[var].name)
        for group in sorted(members, key=lambda g: (g is None, str(g))):
            idx = members[group]
            if rates[group] == 0 or len(idx) == 0:
                continue
            flagged, unflagged = self._draw_pool(idx, values, rates[group], rng)
            log.n_pool += len(flagged) + len(unflagged)
            log.n_flagged += len(flagged)
            pairs, failed = self._pair(flagged, unflagged, values, strata, rng)
            log.n_unswapped += failed
            for a, b in pairs:
                log.pairs.append({
                    "flagged_id": table.record_id[a],
                    "partner_id": table.record_id[b],
                    "flagged_old": labels[values[a]],
                    "partner_old": labels[values[b]],
                    "group": "" if group is None else group,
                })
                codes[a, var], codes[b, var] = codes[b, var], codes[a, var]
        self.swap_log_ = log
        return table.with_codes(codes)

    @staticmethod
    def _draw_pool(idx, values, rate, rng):
        """Per-category pool draw; half of each category's draw is flagged."""
        flagged, unflagged = [], []
        for value in np.unique(values[idx]):
            candidates = idx[values[idx] == value]
            size = int(np.floor(len(candidates) * rate + 0.5))
            if size == 0:
                continue
            chosen = rng.choice(candidates, size=size, replace=False)
            half = size // 2
            flagged.extend(chosen[:half].tolist())
            unflagged.extend(chosen[half:].tolist())
        return flagged, unflagged

    @staticmethod
    def _pair(flagged, unflagged, values, strata, rng):
        """Match flagged records to unflagged pool partners.

        Flagged records are processed in a random order; each draws a partner
        uniformly from the remaining unflagged pool members with a different
        swap value (and the same control stratum, when strata are present).
        A flagged record with no eligible partner left stays unswapped.
        """
        def stratum_of(r):
            return None if strata is None else strata[r]

        available = {}
        for r in unflagged:
            available.setdefault((stratum_of(r), int(values[r])), []).append(r)

        pairs, failed = [], 0
        order = [flagged[i] for i in rng.permutation(len(flagged))]
        for f in order:
            key_stratum = stratum_of(f)
            buckets = [
                (key, lst) for key, lst in sorted(
                    available.items(), key=lambda kv: (str(kv[0][0]), kv[0][1])
                )
                if key[0] == key_stratum and key[1] != values[f] and lst
            ]
            total = sum(len(lst) for _, lst in buckets)
            if total == 0:
                failed += 1
                continue
            pick = int(rng.integers(total))
            for _, lst in buckets:
                if pick < len(lst):
                    partner = lst[pick]
                    lst[pick] = lst[-1]
                    lst.pop()
                    break
                pick -= len(lst)
            pairs.append((f, partner))
        return pairs, failed


# --------------------------------------------------------------------------
# Post-randomization
# --------------------------------------------------------------------------

class Pram(BaseEstimator, TransformerMixin):
    """Invariant post-randomization of one key variable.

    ``fit`` estimates the variable's sample proportions (overall, or per
    target group when ``group_plans`` is given), builds the invariant blend of
    the base matrix for each group, and stores it in
    ``transition_matrices_``. ``transform`` re-draws every record's category
    from its row of the fitted matrix.

    Parameters
    ----------
    variable : int or str
    base_matrix : array-like
        Row-stochastic misclassification matrix (row = original category).
    alpha : float
        Share of the invariant perturbation applied; 0 releases the data
        unchanged, 1 applies the full invariant matrix.
    group_plans : dict, optional
        Per-target-group ``(base_matrix, alpha)`` overrides. Groups not listed
        are left untouched.
    random_state : int, optional
    """

    def __init__(self, variable=0, base_matrix=None, alpha=1.0, group_plans=None,
                 random_state=None):
        self.variable = variable
        self.base_matrix = base_matrix
        self.alpha = alpha
        self.group_plans = group_plans
        self.random_state = random_state

    def fit(self, table: MicrodataTable, y=None):
        var = table.keyspace.variable_index(self.variable)
        cardinality = table.keyspace.variables[var].cardinality
        self.variable_index_ = var
        self.transition_matrices_ = {}
        self.proportions_ = {}
        if self.group_plans:
            if table.target_group is None:
                raise DataError("group_plans needs a target_group column")
            observed = set(table.target_group.tolist())
            for group, (matrix, alpha) in self.group_plans.items():
                if group not in observed:
                    raise DataError(f"unknown target group label {group!r}")
                idx = table.target_group == group
                p = np.bincount(table.codes[idx, var], minlength=cardinality)
                p = p / p.sum()
                self.proportions_[group] = p
                self.transition_matrices_[group] = invariant_pram_matrix(
                    matrix, p, alpha
                )
        else:
            if self.base_matrix is None:
                raise DataError("base_matrix is required without group_plans")
            p = np.bincount(table.codes[:, var], minlength=cardinality)
            p = p / p.sum()
            self.proportions_[None] = p
            self.transition_matrices_[None] = invariant_pram_matrix(
                self.base_matrix, p, float(self.alpha)
            )
        return self

    def transform(self, table: MicrodataTable) -> MicrodataTable:
        if not hasattr(self, "variable_index_"):
            raise DataError("Pram.transform called before fit")
        rng = as_generator(self.random_state)
        var = self.variable_index_
        codes = np.array(table.codes, copy=True)
        if None in self.transition_matrices_:
            codes[:, var] = draw_categories(
                self.transition_matrices_[None], codes[:, var], rng
            )
        else:
            if table.target_group is None:
                raise DataError("fitted with group_plans; table lacks target_group")
            for group in sorted(self.transition_matrices_, key=str):
                idx = np.nonzero(table.target_group == group)[0]
                if idx.size:
                    codes[idx, var] = draw_categories(
                        self.transition_matrices_[group], codes[idx, var], rng
                    )
        return table.with_codes(codes)
