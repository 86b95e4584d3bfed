"""Data model for cross-classified categorical key variables.

A set of categorical key variables spans a key space of K cells (the product
of the variable cardinalities). Cells are numbered 1..K externally; all array
plumbing is 0-based internally. Frequency tables are sparse maps from cell to
count, so a key space with hundreds of thousands of cells costs nothing as
long as the observed support is small.

Misclassification is stored in factored form: one row-stochastic matrix per
perturbed variable (row = true category, column = released category),
unlisted variables acting as the identity. The full cross-classified
misclassification probability for a (released, true) cell pair is the product
of per-variable factors and is always computed on demand, never materialized
as a K x K matrix.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from ._validation import check_inclusion_probability, check_stochastic_matrix
from .errors import DataError
from .rng import as_generator

#: Recognised roles for a FrequencyTable.
ROLES = ("sample-true", "sample-perturbed", "population-true", "population-perturbed")


@dataclass(frozen=True)
class CategoricalVariable:
    """A named categorical variable with an ordered set of category labels."""

    name: str
    categories: tuple

    def __post_init__(self):
        object.__setattr__(self, "categories", tuple(self.categories))
        if len(self.categories) < 2:
            raise DataError(f"variable {self.name!r} needs >= 2 categories")
        if len(set(self.categories)) != len(self.categories):
            raise DataError(f"variable {self.name!r} has duplicate category labels")

    @property
    def cardinality(self) -> int:
        return len(self.categories)


class KeySpace:
    """Mixed-radix encoding of category tuples into cell indices 1..K."""

    def __init__(self, variables: Sequence[CategoricalVariable]):
        variables = tuple(variables)
        if not variables:
            raise DataError("a key space needs at least one variable")
        names = [v.name for v in variables]
        if len(set(names)) != len(names):
            raise DataError(f"duplicate variable names: {names}")
        self.variables = variables
        self.shape = tuple(v.cardinality for v in variables)
        self.K = int(np.prod([v.cardinality for v in variables], dtype=np.int64))
        self._name_index = {v.name: i for i, v in enumerate(variables)}
        self._label_codes = [
            {label: code for code, label in enumerate(v.categories)} for v in variables
        ]

    @property
    def n_variables(self) -> int:
        return len(self.variables)

    def variable_index(self, name_or_index) -> int:
        if isinstance(name_or_index, str):
            try:
                return self._name_index[name_or_index]
            except KeyError:
                raise DataError(f"unknown variable {name_or_index!r}") from None
        idx = int(name_or_index)
        if not 0 <= idx < self.n_variables:
            raise DataError(f"variable index {idx} out of range")
        return idx

    # -- 1-based public encoding -------------------------------------------

    def encode(self, levels: Sequence[int]) -> int:
        """Cell index (1-based) of a tuple of 1-based category positions."""
        codes = np.asarray(levels, dtype=np.int64) - 1
        if codes.shape != (self.n_variables,):
            raise DataError(f"expected {self.n_variables} levels, got {levels!r}")
        if np.any(codes < 0) or np.any(codes >= np.array(self.shape)):
            raise DataError(f"levels {levels!r} outside the key space")
        return int(np.ravel_multi_index(tuple(codes), self.shape)) + 1

    def decode(self, cell: int) -> tuple:
        """Tuple of 1-based category positions for a 1-based cell index."""
        self.check_cell(cell)
        codes = np.unravel_index(int(cell) - 1, self.shape)
        return tuple(int(c) + 1 for c in codes)

    def check_cell(self, cell: int) -> int:
        cell = int(cell)
        if not 1 <= cell <= self.K:
            raise DataError(f"cell {cell} outside 1..{self.K}")
        return cell

    def labels_for(self, cell: int) -> tuple:
        codes = self.codes_of_cells(np.array([cell]))[0]
        return tuple(
            v.categories[c] for v, c in zip(self.variables, codes)
        )

    # -- 0-based array plumbing --------------------------------------------

    def cells_of_codes(self, codes: np.ndarray) -> np.ndarray:
        """1-based cell indices for an (n, C) array of 0-based codes."""
        codes = np.asarray(codes)
        return np.ravel_multi_index(tuple(codes.T), self.shape).astype(np.int64) + 1

    def codes_of_cells(self, cells: np.ndarray) -> np.ndarray:
        """(n, C) array of 0-based codes for 1-based cell indices."""
        cells = np.asarray(cells, dtype=np.int64) - 1
        return np.stack(np.unravel_index(cells, self.shape), axis=-1)

    def codes_from_labels(self, var: int, labels: Iterable) -> np.ndarray:
        table = self._label_codes[var]
        labels = list(labels)
        out = np.empty(len(labels), dtype=np.int64)
        for i, lab in enumerate(labels):
            try:
                out[i] = table[lab]
            except KeyError:
                raise DataError(
                    f"label {lab!r} not a category of variable "
                    f"{self.variables[var].name!r}"
                ) from None
        return out

    def __repr__(self):
        dims = " x ".join(f"{v.name}({v.cardinality})" for v in self.variables)
        return f"KeySpace({dims}; K={self.K})"


def build_keyspace(variables: Sequence[CategoricalVariable]) -> KeySpace:
    """Construct the key space spanned by ``variables``."""
    return KeySpace(variables)


class MicrodataTable:
    """Record-level categorical data over a key space.

    ``codes`` is an (n, C) array of 0-based category codes. ``record_id`` is a
    stable per-record identifier (defaults to the row number), preserved by
    sampling and perturbation so records can be traced through a pipeline.
    ``target_group`` and ``control_stratum`` are optional per-record labels
    used by targeted perturbation and swap pairing.
    """

    def __init__(self, keyspace, codes, record_id=None, target_group=None,
                 control_stratum=None):
        codes = np.asarray(codes, dtype=np.int64)
        if codes.ndim != 2 or codes.shape[1] != keyspace.n_variables:
            raise DataError(
                f"codes must be (n, {keyspace.n_variables}), got {codes.shape}"
            )
        upper = np.array(keyspace.shape, dtype=np.int64)
        if codes.size and (codes.min() < 0 or np.any(codes >= upper[None, :])):
            raise DataError("record codes outside the key space")
        self.keyspace = keyspace
        self.codes = codes
        n = codes.shape[0]
        self.record_id = (
            np.arange(n, dtype=np.int64) if record_id is None
            else np.asarray(record_id)
        )
        if self.record_id.shape != (n,):
            raise DataError("record_id length mismatch")
        self.target_group = self._optional_column(target_group, n, "target_group")
        self.control_stratum = self._optional_column(
            control_stratum, n, "control_stratum"
        )

    @staticmethod
    def _optional_column(col, n, name):
        if col is None:
            return None
        col = np.asarray(col)
        if col.shape != (n,):
            raise DataError(f"{name} length mismatch")
        return col

    @classmethod
    def from_labels(cls, keyspace, rows, record_id=None, target_group=None,
                    control_stratum=None):
        """Build a table from per-record tuples of category labels."""
        rows = list(rows)
        codes = np.empty((len(rows), keyspace.n_variables), dtype=np.int64)
        for var in range(keyspace.n_variables):
            codes[:, var] = keyspace.codes_from_labels(var, [r[var] for r in rows])
        return cls(keyspace, codes, record_id, target_group, control_stratum)

    @property
    def n(self) -> int:
        return self.codes.shape[0]

    def cells(self) -> np.ndarray:
        """1-based cell index of every record."""
        return self.keyspace.cells_of_codes(self.codes)

    def labels(self, var) -> np.ndarray:
        idx = self.keyspace.variable_index(var)
        cats = np.asarray(self.keyspace.variables[idx].categories, dtype=object)
        return cats[self.codes[:, idx]]

    def subset(self, mask_or_index) -> "MicrodataTable":
        sel = np.asarray(mask_or_index)
        return MicrodataTable(
            self.keyspace,
            self.codes[sel],
            self.record_id[sel],
            None if self.target_group is None else self.target_group[sel],
            None if self.control_stratum is None else self.control_stratum[sel],
        )

    def with_codes(self, codes) -> "MicrodataTable":
        """Same records, replacement code matrix (perturbation output)."""
        return MicrodataTable(
            self.keyspace, codes, self.record_id, self.target_group,
            self.control_stratum,
        )

    def __len__(self):
        return self.n


class FrequencyTable:
    """Sparse cell -> count map; absent cells have count zero."""

    def __init__(self, counts: Mapping[int, int], role: str, total=None):
        if role not in ROLES:
            raise DataError(f"role {role!r} not one of {ROLES}")
        clean = {}
        for cell, count in counts.items():
            count = int(count)
            if count < 0:
                raise DataError(f"negative count at cell {cell}")
            if count:
                clean[int(cell)] = count
        self.counts = clean
        self.role = role
        self.total = sum(clean.values())
        if total is not None and total != self.total:
            raise DataError(f"total {total} != sum of counts {self.total}")

    @classmethod
    def from_cells(cls, cells: np.ndarray, role: str) -> "FrequencyTable":
        values, counts = np.unique(np.asarray(cells, dtype=np.int64), return_counts=True)
        return cls(dict(zip(values.tolist(), counts.tolist())), role)

    def get(self, cell: int) -> int:
        return self.counts.get(int(cell), 0)

    def support(self) -> np.ndarray:
        """Sorted 1-based cells with positive count."""
        return np.array(sorted(self.counts), dtype=np.int64)

    def counts_for(self, cells: np.ndarray) -> np.ndarray:
        return np.array([self.counts.get(int(c), 0) for c in cells], dtype=np.int64)

    def uniques(self) -> np.ndarray:
        """Sorted cells with count exactly one."""
        return np.array(sorted(c for c, v in self.counts.items() if v == 1),
                        dtype=np.int64)

    def __len__(self):
        return len(self.counts)

    def __repr__(self):
        return f"FrequencyTable(role={self.role!r}, cells={len(self)}, total={self.total})"


def tabulate(table: MicrodataTable, role: str) -> FrequencyTable:
    """Frequency table of the records' cells."""
    if table.n == 0:
        return FrequencyTable({}, role)
    return FrequencyTable.from_cells(table.cells(), role)


class SamplingDesign:
    """Bernoulli inclusion probabilities, global or per cell.

    The per-cell form keys probabilities by the cell of the released (possibly
    perturbed) record, which is the value an agency observes. A global
    probability applies uniformly either way.
    """

    def __init__(self, pi=None, per_cell: Mapping[int, float] | None = None):
        if (pi is None) == (per_cell is None):
            raise DataError("provide exactly one of pi or per_cell")
        if pi is not None:
            self.global_pi = check_inclusion_probability(pi)
            self.per_cell = None
        else:
            self.global_pi = None
            self.per_cell = {
                int(c): check_inclusion_probability(p, name=f"pi[{c}]")
                for c, p in per_cell.items()
            }

    def pi_for(self, cell: int) -> float:
        if self.global_pi is not None:
            return self.global_pi
        try:
            return self.per_cell[int(cell)]
        except KeyError:
            raise DataError(f"no inclusion probability for cell {cell}") from None

    def pi_for_cells(self, cells: np.ndarray) -> np.ndarray:
        if self.global_pi is not None:
            return np.full(len(cells), self.global_pi)
        return np.array([self.pi_for(c) for c in cells])


def bernoulli_sample(population: MicrodataTable, design: SamplingDesign,
                     random_state) -> MicrodataTable:
    """Keep each record independently with its design probability.

    Record-sequential by construction: a fixed seed gives an identical sample
    regardless of execution environment.
    """
    rng = as_generator(random_state)
    pi = design.pi_for_cells(population.cells())
    keep = rng.random(population.n) < pi
    return population.subset(keep)


class MisclassSpec:
    """Factored misclassification over a key space.

    ``per_variable`` maps a variable (index or name) to a row-stochastic
    matrix whose entry [true, released] is the probability that the true
    category is released as the column category. Variables not listed are
    never misclassified.
    """

    def __init__(self, keyspace: KeySpace, per_variable: Mapping | None = None):
        self.keyspace = keyspace
        factors = {}
        for var, matrix in (per_variable or {}).items():
            idx = keyspace.variable_index(var)
            m = check_stochastic_matrix(matrix, name=f"matrix[{keyspace.variables[idx].name}]")
            card = keyspace.variables[idx].cardinality
            if m.shape != (card, card):
                raise DataError(
                    f"matrix for {keyspace.variables[idx].name!r} has shape "
                    f"{m.shape}, expected ({card}, {card})"
                )
            factors[idx] = m
        self.factors = factors

    @classmethod
    def identity(cls, keyspace: KeySpace) -> "MisclassSpec":
        return cls(keyspace, {})

    @classmethod
    def binary_flip(cls, keyspace: KeySpace, theta1: float, theta2: float) -> "MisclassSpec":
        """All-binary key space where category 1 flips with probability
        ``theta1`` and category 2 with probability ``theta2``."""
        if any(card != 2 for card in keyspace.shape):
            raise DataError("binary_flip requires every variable to be binary")
        m = np.array([[1 - theta1, theta1], [theta2, 1 - theta2]])
        return cls(keyspace, {i: m for i in range(keyspace.n_variables)})

    def matrix_for(self, var) -> np.ndarray:
        idx = self.keyspace.variable_index(var)
        if idx in self.factors:
            return self.factors[idx]
        return np.eye(self.keyspace.variables[idx].cardinality)

    @property
    def is_identity(self) -> bool:
        return not self.factors

    # -- probabilities ------------------------------------------------------

    def entry(self, observed: int, true: int) -> float:
        """Probability that true cell ``true`` is released as ``observed``."""
        return float(self.entries_for_observed(observed, np.array([true]))[0])

    def diagonal_entry(self, cell: int) -> float:
        return self.entry(cell, cell)

    def entries_for_observed(self, observed: int, true_cells: np.ndarray,
                             true_codes: np.ndarray | None = None) -> np.ndarray:
        """Vector of release probabilities for one observed cell against many
        true cells. Cost is O(len(true_cells) * C); no dense matrix is built.
        Callers iterating many observed cells against one fixed support can
        pass the decoded ``true_codes`` to skip re-decoding.
        """
        obs_codes = self.keyspace.codes_of_cells(np.array([observed]))[0]
        if true_codes is None:
            true_codes = self.keyspace.codes_of_cells(np.asarray(true_cells))
        out = np.ones(len(true_cells))
        for var in range(self.keyspace.n_variables):
            if var in self.factors:
                out *= self.factors[var][true_codes[:, var], obs_codes[var]]
            else:
                out *= true_codes[:, var] == obs_codes[var]
        return out

    def diagonal_for_cells(self, cells: np.ndarray) -> np.ndarray:
        codes = self.keyspace.codes_of_cells(np.asarray(cells))
        out = np.ones(len(cells))
        for var, m in self.factors.items():
            out *= m[codes[:, var], codes[:, var]]
        return out

    def expected_released_counts(self, freq: FrequencyTable, cells: np.ndarray) -> np.ndarray:
        """Expected released-file counts at ``cells`` given true counts ``freq``."""
        support = freq.support()
        weights = freq.counts_for(support).astype(float)
        return np.array([
            float(self.entries_for_observed(j, support) @ weights) for j in cells
        ])

    # -- sampling -----------------------------------------------------------

    def perturb_codes(self, codes: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        """Draw released codes for each record, independently per variable."""
        out = np.array(codes, dtype=np.int64, copy=True)
        for var, matrix in sorted(self.factors.items()):
            out[:, var] = draw_categories(matrix, out[:, var], rng)
        return out


def draw_categories(matrix: np.ndarray, codes: np.ndarray,
                    rng: np.random.Generator) -> np.ndarray:
    """Redraw each code from its row of a row-stochastic transition matrix.

    One uniform draw per record, mapped through the row's cumulative
    distribution, grouped by current code so the work is vectorized.
    """
    cum = np.cumsum(matrix, axis=1)
    u = rng.random(len(codes))
    out = np.empty(len(codes), dtype=np.int64)
    for code in np.unique(codes):
        sel = codes == code
        out[sel] = np.searchsorted(cum[code], u[sel], side="right")
    np.clip(out, 0, matrix.shape[1] - 1, out=out)
    return out
