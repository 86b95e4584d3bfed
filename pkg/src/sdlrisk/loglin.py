"""Poisson log-linear estimation of disclosure risk from sample data alone.

When population counts are unknown, the released sample counts are modeled as
independent Poisson draws whose cell means are the product of the inclusion
probability (an offset) and a log-linear rate over the key variables. Under
that model the population count behind a sample-unique cell is one plus a
Poisson remainder, which yields a closed-form estimate of the expected
reciprocal count. Multiplying by the diagonal misclassification probabilities
turns the no-perturbation estimate into one that accounts for the
perturbation.

The fitter is a scikit-learn-style estimator running iteratively reweighted
least squares on a sparse dummy-coded design over all cells of the key space;
step-halving keeps the deviance non-increasing from one iteration to the
next.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.special import xlogy
from sklearn.base import BaseEstimator

from .errors import ConvergenceError, DataError
from .keyspace import FrequencyTable, KeySpace, MisclassSpec, SamplingDesign

ETA_CAP = 100.0  # linear-predictor bound; exp() stays finite


def normalize_terms(terms, n_variables: int):
    """Sorted, deduplicated, hierarchically closed term list.

    Every term is a tuple of variable indices; main effects are always
    included, and any interaction implies all of its margins.
    """
    closed = {(v,) for v in range(n_variables)}
    for term in terms or ():
        term = tuple(sorted(set(int(v) for v in term)))
        if not term:
            continue
        if any(v < 0 or v >= n_variables for v in term):
            raise DataError(f"term {term} references an unknown variable")
        for size in range(1, len(term) + 1):
            for sub in itertools.combinations(term, size):
                closed.add(sub)
    return tuple(sorted(closed, key=lambda t: (len(t), t)))


def parse_terms(specs, keyspace: KeySpace):
    """Terms from strings like ``"AGE"`` or ``"AGE*SEX"``."""
    terms = []
    for spec in specs:
        parts = [p.strip() for p in str(spec).split("*")]
        terms.append(tuple(keyspace.variable_index(p) for p in parts))
    return normalize_terms(terms, keyspace.n_variables)


def term_label(term, keyspace: KeySpace) -> str:
    return "*".join(keyspace.variables[v].name for v in term)


def _design_matrix(keyspace: KeySpace, terms):
    """Sparse dummy-coded design over all K cells, first level as reference.

    Returns the CSR matrix and one (term, levels) label per column, with an
    intercept column first.
    """
    K = keyspace.K
    codes = keyspace.codes_of_cells(np.arange(1, K + 1))
    data_cols = [sp.csr_matrix(np.ones((K, 1)))]
    labels = [((), ())]
    for term in terms:
        level_ranges = [range(1, keyspace.variables[v].cardinality) for v in term]
        for levels in itertools.product(*level_ranges):
            mask = np.ones(K, dtype=bool)
            for v, lvl in zip(term, levels):
                mask &= codes[:, v] == lvl
            col = sp.csr_matrix(mask.astype(float).reshape(-1, 1))
            data_cols.append(col)
            labels.append((term, levels))
    return sp.hstack(data_cols, format="csr"), labels


def _deviance(y, mu):
    return float(2.0 * np.sum(xlogy(y, y / np.maximum(mu, 1e-300)) - (y - mu)))


class PoissonLogLinear(BaseEstimator):
    """Poisson log-linear model for sample counts over a key space.

    Parameters
    ----------
    terms : sequence of tuples, optional
        Variable-index tuples; closed hierarchically, main effects always
        included. ``None`` fits main effects only.
    tol : float
        Convergence threshold on the maximum relative change of the linear
        predictor between iterations.
    max_iter : int

    After ``fit``: ``coef_`` (dummy coefficients, intercept first),
    ``columns_`` (their (term, levels) labels), ``mu_`` (fitted sample-scale
    means per cell), ``deviance_``, ``deviance_path_``, ``df_residual_``,
    ``n_iter_``, ``converged_``.
    """

    def __init__(self, terms=None, tol=1e-8, max_iter=100):
        self.terms = terms
        self.tol = tol
        self.max_iter = max_iter

    def fit(self, counts: FrequencyTable, keyspace: KeySpace,
            design: SamplingDesign):
        K = keyspace.K
        terms = normalize_terms(self.terms, keyspace.n_variables)
        y = np.zeros(K)
        for cell, count in counts.counts.items():
            keyspace.check_cell(cell)
            y[cell - 1] = count
        offset = np.log(design.pi_for_cells(np.arange(1, K + 1)))

        X, labels = _design_matrix(keyspace, terms)
        P = X.shape[1]
        if P > K:
            raise DataError(f"model has {P} parameters for {K} cells")
        margins = X.T @ y
        if np.any(margins[1:] <= 0):
            bad = labels[1 + int(np.nonzero(margins[1:] <= 0)[0][0])]
            raise DataError(
                f"zero sample margin for term {term_label(bad[0], keyspace)!r} "
                f"at levels {bad[1]}; the likelihood is unbounded"
            )
        if y.sum() <= 0:
            raise DataError("all counts are zero")

        # start at the intercept-only fit so the line search always
        # interpolates between two realizable coefficient vectors
        beta = np.zeros(P)
        beta[0] = np.log(y.sum()) - np.log(np.exp(offset).sum())
        eta = np.clip(offset + X @ beta, -ETA_CAP, ETA_CAP)
        mu = np.exp(eta)
        deviance = _deviance(y, mu)
        path = [deviance]
        converged = False
        n_iter = 0
        for n_iter in range(1, self.max_iter + 1):
            w = mu
            z = (eta - offset) + (y - mu) / mu
            Xw = X.multiply(w[:, None]).tocsr()
            normal = (X.T @ Xw).toarray()
            rhs = X.T @ (w * z)
            try:
                beta_new = np.linalg.solve(normal, rhs)
            except np.linalg.LinAlgError:
                raise DataError(
                    "singular weighted design; the model is not identifiable "
                    "for these counts"
                ) from None

            step = 1.0
            for _ in range(40):
                candidate = beta + step * (beta_new - beta)
                eta_new = np.clip(offset + X @ candidate, -ETA_CAP, ETA_CAP)
                mu_new = np.exp(eta_new)
                dev_new = _deviance(y, mu_new)
                if dev_new <= deviance + 1e-10:
                    break
                step *= 0.5
            else:
                raise ConvergenceError(
                    "step-halving failed to decrease the deviance", path
                )

            shift = np.max(np.abs(eta_new - eta) / (1.0 + np.abs(eta)))
            beta, eta, mu, deviance = candidate, eta_new, mu_new, dev_new
            path.append(deviance)
            if shift <= self.tol:
                converged = True
                break
        if not converged:
            raise ConvergenceError(
                f"no convergence in {self.max_iter} iterations "
                f"(last deviance {deviance:.6g})", path
            )

        final_weighted = (X.T @ X.multiply(mu[:, None]).tocsr()).toarray()
        try:
            self.coef_covariance_ = np.linalg.inv(final_weighted)
        except np.linalg.LinAlgError:
            self.coef_covariance_ = np.full((P, P), np.nan)

        self.keyspace_ = keyspace
        self.terms_ = terms
        self.columns_ = labels
        self.coef_ = beta
        self.offset_ = offset
        self.mu_ = mu
        self.deviance_ = deviance
        self.deviance_path_ = path
        self.df_residual_ = K - P
        self.n_parameters_ = P
        self.n_iter_ = n_iter
        self.converged_ = converged
        return self

    # -- fitted quantities ---------------------------------------------------

    def sample_rate(self, cells) -> np.ndarray:
        """Fitted mean released-sample count at the given cells."""
        cells = np.asarray(cells, dtype=np.int64)
        return self.mu_[cells - 1]

    def population_rate(self, cells) -> np.ndarray:
        """Fitted population rate (sample rate over inclusion probability)."""
        cells = np.asarray(cells, dtype=np.int64)
        return self.mu_[cells - 1] / np.exp(self.offset_[cells - 1])

    def aic(self) -> float:
        return self.deviance_ + 2.0 * self.n_parameters_

    def bic(self) -> float:
        return self.deviance_ + np.log(self.keyspace_.K) * self.n_parameters_

    def describe(self) -> list:
        """(column label, coefficient) pairs with readable names."""
        out = []
        for (term, levels), value in zip(self.columns_, self.coef_):
            if not term:
                out.append(("intercept", float(value)))
            else:
                name = term_label(term, self.keyspace_)
                out.append((f"{name}@{','.join(map(str, levels))}", float(value)))
        return out


# --------------------------------------------------------------------------
# Model search
# --------------------------------------------------------------------------

def _criterion_fn(criterion):
    if callable(criterion):
        return criterion
    if criterion == "aic":
        return PoissonLogLinear.aic
    if criterion == "bic":
        return PoissonLogLinear.bic
    raise DataError(f"unknown criterion {criterion!r}")


def forward_search(counts: FrequencyTable, keyspace: KeySpace,
                   design: SamplingDesign, criterion="aic",
                   tol=1e-8, max_iter=100) -> PoissonLogLinear:
    """Greedy forward selection over two-way interactions.

    Starts from the all-main-effects model and repeatedly adds the two-way
    interaction that most improves the criterion (lower is better), stopping
    when no candidate improves it. Candidates whose fit fails (degenerate
    margins, non-convergence) are skipped. Ties break toward the
    lexicographically smallest term. The returned model carries the search
    history in ``search_trace_``.
    """
    score_of = _criterion_fn(criterion)

    def fit_terms(terms):
        model = PoissonLogLinear(terms=terms, tol=tol, max_iter=max_iter)
        return model.fit(counts, keyspace, design)

    selected = []
    best_model = fit_terms(selected)
    best_score = score_of(best_model)
    trace = [("<main effects>", best_score)]

    candidates = sorted(itertools.combinations(range(keyspace.n_variables), 2))
    remaining = list(candidates)
    while remaining:
        round_best = None
        for term in remaining:
            try:
                model = fit_terms(selected + [term])
            except (DataError, ConvergenceError):
                continue
            score = score_of(model)
            if round_best is None or score < round_best[1] - 1e-12:
                round_best = (term, score, model)
        if round_best is None or round_best[1] >= best_score - 1e-9:
            break
        term, best_score, best_model = round_best
        selected.append(term)
        remaining.remove(term)
        trace.append((term_label(term, keyspace), best_score))

    best_model.search_trace_ = trace
    return best_model


# --------------------------------------------------------------------------
# Risk estimation from the fitted model
# --------------------------------------------------------------------------

def estimate_unique_risk(model: PoissonLogLinear, design: SamplingDesign,
                         cell: int) -> float:
    """Estimated expected reciprocal population count behind a sample unique.

    Under the Poisson model the population count at a sample-unique cell is
    one plus a Poisson remainder with mean ``mu = (1 - pi) * rate``; the
    expectation of its reciprocal is ``(1 - exp(-mu)) / mu``, which tends to 1
    as ``mu`` vanishes (a population unique) and decreases in ``mu``.
    """
    pi = design.pi_for(cell)
    rate = float(model.population_rate(np.array([cell]))[0])
    mu = (1.0 - pi) * rate
    if mu <= 0:
        return 1.0
    return float(-np.expm1(-mu) / mu)


@dataclass(frozen=True)
class EstimatedRisk:
    naive: float
    adjusted: float
    per_record: dict  # cell -> (naive estimate, adjusted estimate)
    n_sample_uniques: int


def adjusted_aggregate(model: PoissonLogLinear, misclass: MisclassSpec,
                       design: SamplingDesign,
                       counts: FrequencyTable) -> EstimatedRisk:
    """Naive and misclassification-adjusted aggregate risk estimates.

    The naive total sums the unique-cell estimates over the released file's
    sample uniques; the adjusted total weights each one by the diagonal
    release probability of its cell. With an identity spec the two coincide.
    """
    uniques = counts.uniques()
    per_record = {}
    naive = 0.0
    adjusted = 0.0
    for j in uniques:
        estimate = estimate_unique_risk(model, design, int(j))
        weight = misclass.diagonal_entry(int(j))
        per_record[int(j)] = (estimate, weight * estimate)
        naive += estimate
        adjusted += weight * estimate
    return EstimatedRisk(naive, adjusted, per_record, len(uniques))
