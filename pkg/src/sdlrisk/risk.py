"""Identification-risk measures for released categorical microdata.

The threat model: an intruder holds the true key value of a target unit and
observes that exactly one released record matches it. Each measure below is
the probability that this unique match is the target itself, under Bernoulli
sampling and independent per-record misclassification. Measures differ in
what they condition on and which population quantities they require:

``exact``
    Full expression; needs the true population counts, the complete
    misclassification spec and the sampling design.
``known-in-sample``
    The exact expression conditioned on the target being in the sample
    (inclusion probability forced to 1, sample counts in place of population
    counts).
``gouweleeuw``
    The classic per-value odds-style measure computed from true sample
    counts; very conservative because it assumes the intruder knows the
    target is sampled.
``simple``
    Diagonal probability divided by the perturbed population count. Needs
    only the diagonal of the misclassification spec.
``small-delta`` / ``small-delta-alt``
    Two expansions valid for small misclassification; both need true and
    perturbed population counts but only the diagonal of the spec.

Aggregates sum per-record measures over sample uniques of the released file
(the expected number of correct matches among them) and are also reported as
a proportion of the number of sample uniques.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, DegenerateDenominatorError
from .keyspace import (FrequencyTable, KeySpace, MicrodataTable, MisclassSpec,
                       SamplingDesign, tabulate)
from .rng import as_generator

logger = logging.getLogger(__name__)

#: Per-record formula identifiers.
PER_RECORD_FORMULAS = (
    "exact", "known-in-sample", "gouweleeuw", "simple",
    "small-delta", "small-delta-alt",
)
#: Aggregate-only identifiers.
AGGREGATE_FORMULAS = ("tau", "tau-star", "tau-cc")


class SupportIndex:
    """Support cells partitioned by the coordinates misclassification keeps.

    A factored spec can only release cell j from true cells that agree with j
    on every variable it never perturbs, so sums over the support reduce to
    the (usually tiny) group sharing those identity coordinates. With an
    all-identity spec the groups are single cells; when every variable is
    perturbed the index degenerates to the full support.
    """

    def __init__(self, misclass: MisclassSpec, support: np.ndarray,
                 codes: np.ndarray):
        self.misclass = misclass
        self.support = support
        self.codes = codes
        keyspace = misclass.keyspace
        self._ident_vars = [v for v in range(keyspace.n_variables)
                            if v not in misclass.factors]
        if not self._ident_vars:
            self._order = None
            return
        self._ident_shape = [keyspace.shape[v] for v in self._ident_vars]
        packed = np.ravel_multi_index(
            [codes[:, v] for v in self._ident_vars], self._ident_shape)
        self._order = np.argsort(packed, kind="stable")
        sorted_keys = packed[self._order]
        self._keys, starts = np.unique(sorted_keys, return_index=True)
        self._starts = np.append(starts, len(sorted_keys))

    def rows_for(self, observed_codes: np.ndarray) -> np.ndarray:
        """Indices into the support that can release the observed cell."""
        if self._order is None:
            return np.arange(len(self.support))
        key = np.ravel_multi_index(
            [observed_codes[v] for v in self._ident_vars], self._ident_shape)
        pos = np.searchsorted(self._keys, key)
        if pos == len(self._keys) or self._keys[pos] != key:
            return np.empty(0, dtype=np.int64)
        return self._order[self._starts[pos]:self._starts[pos + 1]]


class ExpectedCounts:
    """Expected released-population counts, derived from true counts.

    Stands in for a realized perturbed-population table when none exists
    (the usual case outside simulations): ``get(cell)`` returns the expected
    number of population units that would show the cell after perturbation,
    a float, computed lazily from the true counts and the misclassification
    spec.
    """

    role = "population-perturbed"

    def __init__(self, misclass: MisclassSpec, true_counts: FrequencyTable):
        self._misclass = misclass
        self._support = true_counts.support()
        self._weights = true_counts.counts_for(self._support).astype(float)
        self._codes = misclass.keyspace.codes_of_cells(self._support)
        self._index = SupportIndex(misclass, self._support, self._codes)
        self._cache: dict[int, float] = {}
        self.total = float(self._weights.sum())

    def get(self, cell: int) -> float:
        cell = int(cell)
        if cell not in self._cache:
            obs_codes = self._misclass.keyspace.codes_of_cells(
                np.array([cell]))[0]
            rows = self._index.rows_for(obs_codes)
            self._cache[cell] = float(
                self._misclass.entries_for_observed(
                    cell, self._support[rows], true_codes=self._codes[rows])
                @ self._weights[rows]
            )
        return self._cache[cell]


@dataclass
class RiskInputs:
    """Everything the risk formulas may need, with optional parts left None.

    Frequency tables may be passed directly or derived from record-level
    tables; the released (perturbed) sample counts are always required.
    ``F_tilde`` accepts either a realized perturbed-population table (from a
    simulation) or an :class:`ExpectedCounts` plug-in derived from the true
    counts. Record-level ``sample_true``/``sample_pert`` tables must be
    row-aligned and are needed only for the correctly-classified aggregate.
    """

    keyspace: KeySpace
    misclass: MisclassSpec
    design: SamplingDesign | None = None
    F: FrequencyTable | None = None
    F_tilde: FrequencyTable | ExpectedCounts | None = None
    f: FrequencyTable | None = None
    f_tilde: FrequencyTable | None = None
    sample_true: MicrodataTable | None = None
    sample_pert: MicrodataTable | None = None
    _F_cache: tuple = field(init=False, repr=False, default=None)
    _f_cache: tuple = field(init=False, repr=False, default=None)

    def __post_init__(self):
        if self.f is None and self.sample_true is not None:
            self.f = tabulate(self.sample_true, "sample-true")
        if self.f_tilde is None and self.sample_pert is not None:
            self.f_tilde = tabulate(self.sample_pert, "sample-perturbed")
        if self.f_tilde is None:
            raise DataError("released (perturbed) sample counts are required")
        if (self.sample_true is not None and self.sample_pert is not None
                and self.sample_true.n != self.sample_pert.n):
            raise DataError("sample_true and sample_pert must be row-aligned")

    def require(self, name, what):
        value = getattr(self, name)
        if value is None:
            raise DataError(f"{what} requires inputs.{name}")
        return value

    def _indexed_support(self, table):
        support = table.support()
        counts = table.counts_for(support).astype(float)
        codes = self.keyspace.codes_of_cells(support)
        return support, counts, codes, SupportIndex(self.misclass, support, codes)

    def population_support(self):
        if self._F_cache is None:
            F = self.require("F", "this measure")
            self._F_cache = self._indexed_support(F)
        return self._F_cache

    def sample_support(self):
        if self._f_cache is None:
            f = self.require("f", "this measure")
            self._f_cache = self._indexed_support(f)
        return self._f_cache

    def sample_uniques(self) -> np.ndarray:
        """Cells unique in the released sample, in ascending cell order."""
        return self.f_tilde.uniques()


# --------------------------------------------------------------------------
# Per-record measures
# --------------------------------------------------------------------------

def _stabilized_match_ratio(j, misclass, pi_j, support, counts, codes=None):
    """M_jj / sum_k N_k M_jk * (1 - pi M_jj) / (1 - pi M_jk).

    Algebraically identical to the ratio of M_jj/(1-pi M_jj) to
    sum_k N_k M_jk/(1-pi M_jk) but finite in the pi*M_jj -> 1 limit, where it
    correctly degenerates to 1/N_j.
    """
    m_jk = misclass.entries_for_observed(j, support, true_codes=codes)
    m_jj = misclass.diagonal_entry(j)
    denom_factors = 1.0 - pi_j * m_jk
    degenerate = (denom_factors <= 0) & (support != j) & (m_jk > 0) & (counts > 0)
    if np.any(degenerate):
        k = int(support[np.nonzero(degenerate)[0][0]])
        raise DegenerateDenominatorError(
            f"pi * M[{j},{k}] reaches 1; the match distribution is degenerate"
        )
    ratio = np.where(
        support == j, 1.0,
        np.divide(1.0 - pi_j * m_jj, denom_factors,
                  out=np.zeros_like(denom_factors), where=denom_factors > 0),
    )
    denominator = float(np.sum(counts * m_jk * ratio))
    if denominator <= 0:
        raise DegenerateDenominatorError(
            f"no probability mass maps into cell {j}"
        )
    return m_jj / denominator


def risk_exact(j: int, inputs: RiskInputs) -> float:
    """Probability a unique released match to cell ``j`` is the target.

    Requires true population counts; bounded above by 1/F_j, with equality
    exactly when there is no misclassification. A released cell that no
    population unit truly occupies (reachable only through perturbation)
    contributes zero: no target with that true value exists to be matched, so
    aggregates over released sample uniques stay defined and within [0, 1]
    per record.
    """
    j = inputs.keyspace.check_cell(j)
    support, counts, codes, index = inputs.population_support()
    design = inputs.require("design", "the exact measure")
    if inputs.F.get(j) == 0:
        return 0.0
    rows = index.rows_for(inputs.keyspace.codes_of_cells(np.array([j]))[0])
    return _stabilized_match_ratio(j, inputs.misclass, design.pi_for(j),
                                   support[rows], counts[rows], codes[rows])


def risk_known_in_sample(j: int, inputs: RiskInputs) -> float:
    """Exact measure conditioned on the target being sampled.

    Inclusion probability is forced to 1 and true sample counts replace
    population counts. A cell no sampled unit truly occupies contributes
    zero: conditioning on the target being in the sample with that value is
    then vacuous.
    """
    j = inputs.keyspace.check_cell(j)
    f = inputs.require("f", "the known-in-sample measure")
    if f.get(j) == 0:
        return 0.0
    support, counts, codes, index = inputs.sample_support()
    rows = index.rows_for(inputs.keyspace.codes_of_cells(np.array([j]))[0])
    return _stabilized_match_ratio(j, inputs.misclass, 1.0,
                                   support[rows], counts[rows], codes[rows])


def risk_gouweleeuw(j: int, inputs: RiskInputs) -> float:
    """Diagonal share of the sample mass mapping into cell ``j``."""
    j = inputs.keyspace.check_cell(j)
    f = inputs.require("f", "the gouweleeuw measure")
    support, counts, codes, index = inputs.sample_support()
    rows = index.rows_for(inputs.keyspace.codes_of_cells(np.array([j]))[0])
    m_jk = inputs.misclass.entries_for_observed(j, support[rows],
                                                true_codes=codes[rows])
    denominator = float(np.sum(counts[rows] * m_jk))
    if denominator <= 0:
        raise DegenerateDenominatorError(f"no sample mass maps into cell {j}")
    return inputs.misclass.diagonal_entry(j) * inputs.f.get(j) / denominator


def risk_simple(j: int, inputs: RiskInputs) -> float:
    """Diagonal probability over the perturbed population count.

    Realized counts are at least 1 wherever a released record exists; an
    expected-count plug-in below the diagonal probability signals a cell
    outside the approximation's regime, so the value is capped at 1.
    """
    j = inputs.keyspace.check_cell(j)
    F_tilde = inputs.require("F_tilde", "the simple measure")
    count = F_tilde.get(j)
    if count == 0:
        raise DataError(
            f"perturbed population count at cell {j} is zero; a released "
            "record with this value is inconsistent with the inputs"
        )
    value = inputs.misclass.diagonal_entry(j) / count
    if value > 1.0:
        logger.debug("simple measure at cell %d: raw value %r capped at 1", j, value)
    return min(value, 1.0)


def _small_delta_core(j, inputs):
    F = inputs.require("F", "the small-delta measures")
    F_tilde = inputs.require("F_tilde", "the small-delta measures")
    design = inputs.require("design", "the small-delta measures")
    return (float(F.get(j)), float(F_tilde.get(j)),
            inputs.misclass.diagonal_entry(j), design.pi_for(j))


def risk_small_delta(j: int, inputs: RiskInputs) -> float:
    """First small-misclassification expansion of the exact measure.

    Out of its validity range the raw value can leave [0, 1]; it is clipped
    and the raw value logged at DEBUG level.
    """
    j = inputs.keyspace.check_cell(j)
    F_j, Ft_j, m_jj, pi_j = _small_delta_core(j, inputs)
    if F_j * m_jj == 0:
        # outside the expansion's regime; the limit of the clipped value is 0
        logger.debug("small-delta at cell %d: F_j*M_jj is zero, value clipped to 0", j)
        return 0.0
    raw = (1.0 / F_j) * (1.0 - (Ft_j - F_j * m_jj) / (F_j * m_jj / (1.0 - pi_j * m_jj)))
    if not 0.0 <= raw <= 1.0:
        logger.debug("small-delta at cell %d: raw value %r clipped to [0, 1]", j, raw)
    return float(np.clip(raw, 0.0, 1.0))


def risk_small_delta_alt(j: int, inputs: RiskInputs) -> float:
    """Second small-misclassification expansion (ratio form).

    Evaluated in a stabilized form that stays finite when pi * M_jj reaches 1.
    """
    j = inputs.keyspace.check_cell(j)
    F_j, Ft_j, m_jj, pi_j = _small_delta_core(j, inputs)
    if F_j == 0:
        return 0.0  # no target with this true value exists
    denominator = F_j * pi_j * m_jj ** 2 + Ft_j * (1.0 - pi_j * m_jj)
    if denominator <= 0:
        raise DegenerateDenominatorError(f"degenerate denominator at cell {j}")
    raw = m_jj / denominator
    if not 0.0 <= raw <= 1.0:
        logger.debug("small-delta-alt at cell %d: raw value %r clipped to [0, 1]", j, raw)
    return float(np.clip(raw, 0.0, 1.0))


_PER_RECORD = {
    "exact": risk_exact,
    "known-in-sample": risk_known_in_sample,
    "gouweleeuw": risk_gouweleeuw,
    "simple": risk_simple,
    "small-delta": risk_small_delta,
    "small-delta-alt": risk_small_delta_alt,
}


def per_record_measure(formula: str):
    try:
        return _PER_RECORD[formula]
    except KeyError:
        raise DataError(
            f"unknown formula {formula!r}; choose from {sorted(_PER_RECORD)}"
        ) from None


# --------------------------------------------------------------------------
# Aggregates
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class AggregateResult:
    formula: str
    total: float
    proportion: float
    n_sample_uniques: int


def aggregate_tau(inputs: RiskInputs, formula: str = "exact") -> AggregateResult:
    """Sum a per-record measure over the released file's sample uniques.

    The total is interpretable as the expected number of correct matches among
    sample uniques; the proportion divides by their count. Summation runs in
    ascending cell order so totals are bit-stable.
    """
    measure = per_record_measure(formula)
    uniques = inputs.sample_uniques()
    total = 0.0
    for j in uniques:
        total += measure(int(j), inputs)
    proportion = total / len(uniques) if len(uniques) else 0.0
    return AggregateResult(formula, total, proportion, len(uniques))


def tau_star(inputs: RiskInputs) -> AggregateResult:
    """Sum of 1/F_j over cells unique in the unperturbed sample."""
    f = inputs.require("f", "tau-star")
    F = inputs.require("F", "tau-star")
    uniques = f.uniques()
    total = 0.0
    for j in uniques:
        count = F.get(int(j))
        if count < 1:
            raise DataError(f"sample cell {j} missing from population counts")
        total += 1.0 / count
    proportion = total / len(uniques) if len(uniques) else 0.0
    return AggregateResult("tau-star", total, proportion, len(uniques))


def correctly_classified_uniques(inputs: RiskInputs) -> dict:
    """For each released sample unique, whether its record kept its true value.

    Needs row-aligned true and released record tables.
    """
    true_table = inputs.require("sample_true", "correct-classification status")
    pert_table = inputs.require("sample_pert", "correct-classification status")
    true_cells = true_table.cells()
    pert_cells = pert_table.cells()
    status = {}
    for j in inputs.sample_uniques():
        rows = np.nonzero(pert_cells == j)[0]
        if len(rows) != 1:
            raise DataError(f"cell {j} is not unique in the released table")
        status[int(j)] = bool(true_cells[rows[0]] == j)
    return status


def tau_cc(inputs: RiskInputs) -> AggregateResult:
    """Sum of 1/F_j over released sample uniques whose value was unchanged."""
    F = inputs.require("F", "tau-cc")
    status = correctly_classified_uniques(inputs)
    uniques = inputs.sample_uniques()
    total = 0.0
    for j in uniques:
        if status[int(j)]:
            count = F.get(int(j))
            if count < 1:
                raise DataError(f"cell {j} missing from population counts")
            total += 1.0 / count
    proportion = total / len(uniques) if len(uniques) else 0.0
    return AggregateResult("tau-cc", total, proportion, len(uniques))


# --------------------------------------------------------------------------
# Report assembly
# --------------------------------------------------------------------------

@dataclass
class RiskRecord:
    cell: int
    measures: dict
    sample_unique: bool = True
    correctly_classified: bool | None = None


@dataclass
class RiskReport:
    per_record: list
    aggregates: dict
    n_sample_uniques: int

    def aggregate(self, formula: str) -> AggregateResult:
        return self.aggregates[formula]


def assess(inputs: RiskInputs, formulas=("exact",)) -> RiskReport:
    """Per-record values over sample uniques plus the requested aggregates.

    ``tau`` is the aggregate of ``exact``; ``tau-star`` and ``tau-cc`` are
    aggregate-only and need truth sidecars.
    """
    formulas = list(formulas)
    per_record_ids = [f for f in formulas if f in _PER_RECORD]
    uniques = inputs.sample_uniques()

    records = []
    truth_status = None
    if inputs.sample_true is not None and inputs.sample_pert is not None:
        truth_status = correctly_classified_uniques(inputs)
    for j in uniques:
        measures = {f: per_record_measure(f)(int(j), inputs) for f in per_record_ids}
        records.append(RiskRecord(
            cell=int(j),
            measures=measures,
            correctly_classified=None if truth_status is None else truth_status[int(j)],
        ))

    aggregates = {}
    for f in per_record_ids:
        total = sum(r.measures[f] for r in records)
        proportion = total / len(records) if records else 0.0
        aggregates[f] = AggregateResult(f, total, proportion, len(records))
    for f in formulas:
        if f == "tau":
            base = (aggregates["exact"] if "exact" in aggregates
                    else aggregate_tau(inputs, "exact"))
            aggregates["tau"] = AggregateResult(
                "tau", base.total, base.proportion, base.n_sample_uniques
            )
        elif f == "tau-star":
            aggregates["tau-star"] = tau_star(inputs)
        elif f == "tau-cc":
            aggregates["tau-cc"] = tau_cc(inputs)
        elif f not in _PER_RECORD:
            raise DataError(f"unknown formula {f!r}")
    return RiskReport(records, aggregates, len(uniques))


# --------------------------------------------------------------------------
# Monte Carlo oracle
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class MCRiskEstimate:
    estimate: float
    se: float
    n_qualifying: int
    n_correct: int


def mc_oracle_grid(population: MicrodataTable, misclass: MisclassSpec,
                   design: SamplingDesign, replicates: int, random_state,
                   cells=None, chunk: int = 2000) -> dict:
    """Brute-force simulation of the unique-match experiment, all cells at once.

    Per replicate: every population unit draws the key value it would show if
    released, each unit enters the sample with the design probability of that
    released value, and for every target cell the replicate qualifies when
    exactly one sampled unit shows the cell. The estimate is the fraction of
    qualifying replicates in which that one unit is the designated target (the
    first population unit holding the cell as its true value).

    The simulation touches only the generative mechanism (per-variable
    category redraws and Bernoulli inclusion); it shares no algebra with the
    closed-form measures it validates.
    """
    keyspace = population.keyspace
    if keyspace.K > 10 ** 6:
        raise DataError("the oracle is meant for small key spaces")
    rng = as_generator(random_state)
    true_cells = population.cells()
    if cells is None:
        cells = np.unique(true_cells)
    cells = np.asarray(sorted(int(c) for c in cells), dtype=np.int64)
    targets = {}
    for j in cells:
        rows = np.nonzero(true_cells == j)[0]
        if len(rows) == 0:
            raise DataError(f"no population unit has true cell {j}")
        targets[int(j)] = int(rows[0])
    target_rows = np.array([targets[int(j)] for j in cells])

    pi_lookup = np.empty(keyspace.K + 1)
    if design.global_pi is not None:
        pi_lookup[:] = design.global_pi
    else:
        pi_lookup[:] = np.nan
        for cell, value in design.per_cell.items():
            if 1 <= cell <= keyspace.K:
                pi_lookup[cell] = value

    n = population.n
    n_qual = np.zeros(len(cells), dtype=np.int64)
    n_corr = np.zeros(len(cells), dtype=np.int64)
    done = 0
    while done < replicates:
        size = min(chunk, replicates - done)
        tiled = np.tile(population.codes, (size, 1))
        released = keyspace.cells_of_codes(
            misclass.perturb_codes(tiled, rng)
        ).reshape(size, n)
        pi = pi_lookup[released]
        if np.any(np.isnan(pi)):
            raise DataError("design lacks a probability for a released cell")
        included = rng.random((size, n)) < pi

        # per-replicate counts of included released cells, for target cells only
        cell_pos = np.searchsorted(cells, released)
        np.clip(cell_pos, 0, len(cells) - 1, out=cell_pos)
        on_grid = included & (cells[cell_pos] == released)
        rep_idx = np.broadcast_to(np.arange(size)[:, None], (size, n))
        flat = rep_idx[on_grid] * len(cells) + cell_pos[on_grid]
        counts = np.bincount(flat, minlength=size * len(cells)).reshape(size, len(cells))

        target_released = released[:, target_rows]
        target_match = included[:, target_rows] & (target_released == cells[None, :])
        qualifying = counts == 1
        n_qual += qualifying.sum(axis=0)
        n_corr += (qualifying & target_match).sum(axis=0)
        done += size

    out = {}
    for pos, j in enumerate(cells):
        q, c = int(n_qual[pos]), int(n_corr[pos])
        if q == 0:
            out[int(j)] = MCRiskEstimate(np.nan, np.nan, 0, 0)
            continue
        est = c / q
        out[int(j)] = MCRiskEstimate(est, float(np.sqrt(est * (1 - est) / q)), q, c)
    return out


def risk_mc_oracle(j: int, population: MicrodataTable, misclass: MisclassSpec,
                   design: SamplingDesign, replicates: int = 100_000,
                   random_state=None) -> MCRiskEstimate:
    """Simulation estimate of the exact measure at one cell, with its SE."""
    result = mc_oracle_grid(population, misclass, design, replicates,
                            random_state, cells=[j])[int(j)]
    if result.n_qualifying == 0:
        raise DataError(f"no qualifying replicates for cell {j}")
    return result
