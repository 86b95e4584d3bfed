"""Simulation harnesses.

Two experiments validate the closed-form measures against direct simulation:

* The multivariate binary-key experiment: a population with C independent
  binary key variables is released through symmetric-marginal flips, and the
  diagonal-over-perturbed-count measure is summed over the sample uniques of
  a simple random sample. Sweeping C and the flip rate traces how risk first
  grows with the number of key variables and is eventually dominated by the
  misclassification.

* The exact-matching linkage experiment: an intruder draws one released
  record and one external target at random and links them when the released
  key equals the target's true key, in the style of probabilistic record
  linkage with agreement on the whole key. The fraction of links that are
  correct per key value is compared with the diagonal-over-perturbed-count
  prediction, and the agreement probabilities among true matches and
  non-matches are compared with their large-sample approximations.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError
from .keyspace import MicrodataTable, MisclassSpec, tabulate
from .rng import substream

# --------------------------------------------------------------------------
# Multivariate binary keys
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class BinaryExperimentConfig:
    """Population/sample sizes and the (C, flip-rate) grid to sweep.

    ``p`` is the probability of the second category of every variable. The
    reverse flip rate is tied to the forward one so the released variables
    keep the same marginal distribution, which requires
    ``theta <= p / (1 - p)``.
    """

    N: int = 100_000
    n: int = 2_000
    C_range: tuple = tuple(range(5, 31))
    p: float = 0.2
    theta_list: tuple = (0.0, 0.01, 0.02, 0.05, 0.10)
    replicates: int = 10
    seed: int = 0

    def __post_init__(self):
        if not (0 < self.p < 1):
            raise DataError("p must lie strictly between 0 and 1")
        if not (0 < self.n <= self.N):
            raise DataError("need 0 < n <= N")
        if not self.C_range or min(self.C_range) < 1 or max(self.C_range) > 62:
            raise DataError("C_range must lie within 1..62")
        if not self.theta_list:
            raise DataError("theta_list is empty")
        limit = self.p / (1.0 - self.p)
        for theta in self.theta_list:
            if not 0 <= theta <= limit:
                raise DataError(
                    f"theta={theta} violates the marginal-preservation bound "
                    f"theta <= p/(1-p) = {limit:.6g}"
                )
        if self.replicates < 1:
            raise DataError("need at least one replicate")

    def theta2(self, theta1: float) -> float:
        return (1.0 - self.p) * theta1 / self.p


def _full_width_keys(config: BinaryExperimentConfig, replicate: int, theta: float):
    """Packed true and released keys at the widest C, plus the sample rows.

    The population's true values are drawn once per replicate and shared
    across the grid; the released values reuse one set of flips per
    (replicate, theta). Variable c contributes bit c, so the keys for a
    smaller C are bit-masked prefixes of these, which makes the curves across
    C comparable within a replicate. The sample is a simple random subset;
    sampled records inherit the population's released values, making the
    released sample a subsample of the released population.
    """
    c_max = max(config.C_range)
    rng = substream(config.seed, f"binary-population-{replicate}")
    truth = rng.random((config.N, c_max)) < config.p
    sample_rows = np.sort(rng.choice(config.N, size=config.n, replace=False))

    if theta == 0:
        released = truth
    else:
        flip_rng = substream(config.seed, f"binary-flips-{replicate}-{theta:.10g}")
        flip_prob = np.where(truth, config.theta2(theta), theta)
        released = truth ^ (flip_rng.random((config.N, c_max)) < flip_prob)

    powers = np.int64(1) << np.arange(c_max, dtype=np.int64)
    return truth.astype(np.int64) @ powers, released.astype(np.int64) @ powers, sample_rows


def binary_replicate_data(config: BinaryExperimentConfig, replicate: int,
                          theta: float, C: int):
    """True and released keys for one replicate at one C, plus the sample rows.

    Keys are 1-based ints in 1..2**C.
    """
    if not 1 <= C <= max(config.C_range):
        raise DataError(f"C={C} outside the configured range")
    true_full, released_full, sample_rows = _full_width_keys(config, replicate, theta)
    mask = (np.int64(1) << np.int64(C)) - 1
    return (true_full & mask) + 1, (released_full & mask) + 1, sample_rows


@dataclass(frozen=True)
class BinaryCurvePoint:
    C: int
    theta: float
    risk_sum: float
    n_sample_uniques: float
    replicate_sd: float


@dataclass(frozen=True)
class BinaryExperimentResult:
    config: BinaryExperimentConfig
    points: list

    def curve(self, theta: float):
        return [p for p in self.points if p.theta == theta]


def _popcount(values: np.ndarray, width: int) -> np.ndarray:
    bits = (values[:, None] >> np.arange(width, dtype=np.int64)) & 1
    return bits.sum(axis=1)


def run_binary_experiment(config: BinaryExperimentConfig) -> BinaryExperimentResult:
    """Sweep the (C, theta) grid and sum the per-unique risk measure.

    For each grid point the measure is the diagonal release probability of
    each released-sample-unique key divided by its released population count,
    summed over the uniques; the diagonal probability of a key with m second
    categories among C variables is (1-theta1)^(C-m) * (1-theta2)^m.
    """
    sums = {(C, t): [] for C in config.C_range for t in config.theta_list}
    n_uniques = {key: [] for key in sums}
    for rep in range(config.replicates):
        for theta in config.theta_list:
            theta2 = config.theta2(theta)
            _, released_full, sample_rows = _full_width_keys(config, rep, theta)
            for C in config.C_range:
                mask = (np.int64(1) << np.int64(C)) - 1
                released_keys = released_full & mask
                pop_vals, pop_counts = np.unique(released_keys, return_counts=True)
                sample_keys = released_keys[sample_rows]
                vals, counts = np.unique(sample_keys, return_counts=True)
                uniques = vals[counts == 1]
                released_count = pop_counts[np.searchsorted(pop_vals, uniques)]
                m = _popcount(uniques, C)
                diag = (1.0 - theta) ** (C - m) * (1.0 - theta2) ** m
                sums[(C, theta)].append(float(np.sum(diag / released_count)))
                n_uniques[(C, theta)].append(len(uniques))

    points = []
    for theta in config.theta_list:
        for C in config.C_range:
            values = np.array(sums[(C, theta)])
            sd = float(values.std(ddof=1)) if len(values) > 1 else 0.0
            points.append(BinaryCurvePoint(
                C=C, theta=theta,
                risk_sum=float(values.mean()),
                n_sample_uniques=float(np.mean(n_uniques[(C, theta)])),
                replicate_sd=sd,
            ))
    return BinaryExperimentResult(config, points)


# --------------------------------------------------------------------------
# Exact-matching linkage
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class LinkageExperimentConfig:
    """One released sample per replicate, one randomly drawn candidate pair.

    ``n_star`` is the size of the external database the target is drawn
    from. Drawing the database uniformly at random and the target uniformly
    within it makes the target uniform over the population, so the database
    itself never needs to be materialized; ``target_weights`` replaces that
    uniform draw with a skewed one to probe the claim that the comparison is
    insensitive to how the external database arises.
    """

    population: MicrodataTable
    misclass: MisclassSpec
    pi: float
    n_star: int
    replicates: int
    seed: int = 0
    target_weights: np.ndarray | None = None

    def __post_init__(self):
        if not (0 < self.pi <= 1):
            raise DataError("pi must lie in (0, 1]")
        if not (1 <= self.n_star <= self.population.n):
            raise DataError("need 1 <= n_star <= population size")
        if self.replicates < 1:
            raise DataError("need at least one replicate")
        if self.target_weights is not None:
            w = np.asarray(self.target_weights, dtype=float)
            if w.shape != (self.population.n,) or np.any(w < 0) or w.sum() <= 0:
                raise DataError("target_weights must be nonnegative per unit")


@dataclass(frozen=True)
class LinkageKeyStats:
    cell: int
    links: int
    correct: int
    phi_hat: float
    se: float
    theory: float


@dataclass(frozen=True)
class LinkageResult:
    config: LinkageExperimentConfig
    rows: list
    missing_cells: list
    pairs: int
    matches: int
    p_hat: float
    p_se: float
    p_theory: float
    mean_sample_size: float
    empty_samples: int
    # raw per-cell tallies for the m/u decomposition
    match_gamma: dict = field(repr=False, default_factory=dict)
    nonmatch_gamma: dict = field(repr=False, default_factory=dict)


def run_linkage_experiment(config: LinkageExperimentConfig,
                           chunk: int = 2000) -> LinkageResult:
    """Estimate the per-key correct-link proportion against its prediction.

    Each replicate draws a Bernoulli sample, picks one sampled record and one
    external target, releases the record's key through the misclassification
    spec and links when the released key equals the target's true key. Only
    the drawn record's released value matters, so misclassification is drawn
    lazily for that record alone; the replicate is dropped (and counted) when
    the sample is empty.
    """
    population = config.population
    n = population.n
    rng = substream(config.seed, "linkage")
    true_cells = population.cells()

    if config.target_weights is None:
        cum_weights = None
    else:
        w = np.asarray(config.target_weights, dtype=float)
        cum_weights = np.cumsum(w / w.sum())

    K_cells = np.unique(true_cells)
    pos_of = {int(c): i for i, c in enumerate(K_cells)}
    links = np.zeros(len(K_cells), dtype=np.int64)
    correct = np.zeros(len(K_cells), dtype=np.int64)
    nonmatch_gamma = np.zeros(len(K_cells), dtype=np.int64)
    pairs = matches = empty = 0
    sample_size_sum = 0

    done = 0
    while done < config.replicates:
        size = min(chunk, config.replicates - done)
        included = rng.random((size, n)) < config.pi
        n_included = included.sum(axis=1)
        valid = n_included > 0
        empty += int((~valid).sum())

        # record i: uniform among the included units of each replicate
        ranks = np.floor(rng.random(size) * np.maximum(n_included, 1)).astype(np.int64)
        cumulative = included.cumsum(axis=1)
        i_rows = np.argmax(cumulative > ranks[:, None], axis=1)

        # target B: uniform over the population, or weight-skewed
        if cum_weights is None:
            b_rows = rng.integers(0, n, size=size)
        else:
            b_rows = np.searchsorted(cum_weights, rng.random(size), side="right")
            np.clip(b_rows, 0, n - 1, out=b_rows)

        released = population.keyspace.cells_of_codes(
            config.misclass.perturb_codes(population.codes[i_rows], rng)
        )
        target_cells = true_cells[b_rows]
        linked = valid & (released == target_cells)
        is_match = valid & (i_rows == b_rows)

        pairs += int(valid.sum())
        matches += int(is_match.sum())
        sample_size_sum += int(n_included[valid].sum())
        cell_pos = np.searchsorted(K_cells, target_cells)
        for sel, tally in ((linked, links),
                           (linked & is_match, correct),
                           (linked & ~is_match, nonmatch_gamma)):
            np.add.at(tally, cell_pos[sel], 1)
        done += size

    if pairs == 0:
        raise DataError("every replicate produced an empty sample")
    mean_n = sample_size_sum / pairs
    freq = tabulate(population, "population-true")
    expected_released = config.misclass.expected_released_counts(freq, K_cells)
    diagonal = config.misclass.diagonal_for_cells(K_cells)

    rows, missing = [], []
    match_gamma = {}
    nonmatch = {}
    for pos, cell in enumerate(K_cells):
        cell = int(cell)
        match_gamma[cell] = int(correct[pos])
        nonmatch[cell] = int(nonmatch_gamma[pos])
        if links[pos] == 0:
            missing.append(cell)
            continue
        phi = correct[pos] / links[pos]
        rows.append(LinkageKeyStats(
            cell=cell,
            links=int(links[pos]),
            correct=int(correct[pos]),
            phi_hat=float(phi),
            se=float(np.sqrt(phi * (1 - phi) / links[pos])),
            theory=float(diagonal[pos] / expected_released[pos]),
        ))

    p_hat = matches / pairs
    return LinkageResult(
        config=config,
        rows=rows,
        missing_cells=missing,
        pairs=pairs,
        matches=matches,
        p_hat=float(p_hat),
        p_se=float(np.sqrt(p_hat * (1 - p_hat) / pairs)),
        p_theory=float(config.pi / mean_n),
        mean_sample_size=float(mean_n),
        empty_samples=empty,
        match_gamma=match_gamma,
        nonmatch_gamma=nonmatch,
    )


@dataclass(frozen=True)
class MuKeyStats:
    cell: int
    m_hat: float
    m_se: float
    m_theory: float
    u_hat: float
    u_se: float
    u_theory: float


@dataclass(frozen=True)
class MuEstimates:
    rows: list
    p_hat: float
    p_se: float
    p_theory: float


def mu_estimates(result: LinkageResult) -> MuEstimates:
    """Empirical agreement probabilities among matches and non-matches.

    For each key value: the fraction of true-match pairs whose comparison
    agreed on that value, and the same fraction among non-match pairs,
    alongside their large-sample approximations (diagonal times the target
    share for matches; leakage mass over the non-match pair count otherwise).
    """
    config = result.config
    population = config.population
    N = population.n
    if result.matches == 0:
        raise DataError("no true-match pairs observed; increase replicates")
    freq = tabulate(population, "population-true")
    cells = np.array(sorted(result.match_gamma), dtype=np.int64)
    expected_released = config.misclass.expected_released_counts(freq, cells)
    diagonal = config.misclass.diagonal_for_cells(cells)

    if config.target_weights is None:
        share = freq.counts_for(cells) / N
    else:
        w = np.asarray(config.target_weights, dtype=float)
        w = w / w.sum()
        true_cells = population.cells()
        share = np.array([w[true_cells == c].sum() for c in cells])

    n_match = result.matches
    n_nonmatch = result.pairs - result.matches
    rows = []
    for pos, cell in enumerate(cells):
        cell = int(cell)
        m_hat = result.match_gamma[cell] / n_match
        u_hat = result.nonmatch_gamma[cell] / n_nonmatch
        rows.append(MuKeyStats(
            cell=cell,
            m_hat=float(m_hat),
            m_se=float(np.sqrt(m_hat * (1 - m_hat) / n_match)),
            m_theory=float(diagonal[pos] * share[pos]),
            u_hat=float(u_hat),
            u_se=float(np.sqrt(u_hat * (1 - u_hat) / n_nonmatch)),
            u_theory=float(share[pos] * (expected_released[pos] - diagonal[pos]) / (N - 1)),
        ))
    return MuEstimates(rows, result.p_hat, result.p_se, result.p_theory)
