import numpy as np
import pytest

import sdlrisk as sr
from sdlrisk.errors import ConvergenceError, DataError
from sdlrisk.loglin import (PoissonLogLinear, adjusted_aggregate,
                            estimate_unique_risk, forward_search, normalize_terms,
                            parse_terms)

from conftest import uniform_offdiag, variable


def freq_from_vector(y):
    return sr.FrequencyTable({i + 1: int(v) for i, v in enumerate(y) if v > 0},
                             "sample-perturbed")


class TestTerms:
    def test_main_effects_always_included(self):
        assert normalize_terms(None, 3) == ((0,), (1,), (2,))

    def test_hierarchical_closure(self):
        terms = normalize_terms([(0, 2)], 3)
        assert (0,) in terms and (2,) in terms and (0, 2) in terms

    def test_parse_strings(self):
        ks = sr.build_keyspace([variable("A", 2), variable("B", 2), variable("C", 2)])
        terms = parse_terms(["A", "B", "A*C"], ks)
        assert (0, 2) in terms and (2,) in terms

    def test_unknown_variable_rejected(self):
        with pytest.raises(DataError):
            normalize_terms([(5,)], 3)


class TestPoissonFit:
    def test_independence_table_fits_exactly(self):
        # [[10, 20], [30, 60]] factorizes exactly, so the main-effects model
        # reproduces the observed counts
        ks = sr.build_keyspace([variable("A", 2), variable("B", 2)])
        counts = freq_from_vector([10, 20, 30, 60])
        model = PoissonLogLinear().fit(counts, ks, sr.SamplingDesign(pi=0.5))
        assert np.allclose(model.mu_, [10, 20, 30, 60], rtol=1e-8)

    def test_saturated_model_reproduces_counts(self):
        ks = sr.build_keyspace([variable("A", 2), variable("B", 2)])
        counts = freq_from_vector([10, 17, 30, 61])
        model = PoissonLogLinear(terms=[(0, 1)]).fit(counts, ks,
                                                     sr.SamplingDesign(pi=0.25))
        assert np.allclose(model.mu_, [10, 17, 30, 61], rtol=1e-8)
        assert np.allclose(model.population_rate(np.arange(1, 5)),
                           np.array([10, 17, 30, 61]) / 0.25, rtol=1e-8)
        assert model.deviance_ == pytest.approx(0.0, abs=1e-8)

    def test_offset_scales_population_rate(self):
        ks = sr.build_keyspace([variable("A", 3)])
        counts = freq_from_vector([5, 10, 15])
        model = PoissonLogLinear().fit(counts, ks, sr.SamplingDesign(pi=0.1))
        assert np.allclose(model.population_rate(np.arange(1, 4)),
                           [50, 100, 150], rtol=1e-7)

    def test_deviance_path_non_increasing(self):
        rng = np.random.default_rng(3)
        ks = sr.build_keyspace([variable("A", 5), variable("B", 4), variable("C", 3)])
        y = rng.poisson(3.0, ks.K)
        model = PoissonLogLinear().fit(freq_from_vector(y), ks,
                                       sr.SamplingDesign(pi=0.3))
        path = model.deviance_path_
        assert all(later <= earlier + 1e-9
                   for earlier, later in zip(path, path[1:]))

    def test_generate_and_recover_coefficients(self):
        # draw counts from a known independence model; the fitted dummy
        # coefficients sit within three standard errors of the truth
        rng = np.random.default_rng(17)
        ks = sr.build_keyspace([variable("A", 3), variable("B", 4), variable("C", 2)])
        effects = {0: np.array([0.0, 0.5, -0.4]),
                   1: np.array([0.0, 0.3, -0.2, 0.6]),
                   2: np.array([0.0, -0.5])}
        codes = ks.codes_of_cells(np.arange(1, ks.K + 1))
        log_rate = 3.0 + sum(effects[v][codes[:, v]] for v in range(3))
        pi = 0.4
        y = rng.poisson(pi * np.exp(log_rate))
        model = PoissonLogLinear().fit(freq_from_vector(y), ks,
                                       sr.SamplingDesign(pi=pi))
        se = np.sqrt(np.diag(model.coef_covariance_))
        truth = {((0,), (1,)): 0.5, ((0,), (2,)): -0.4,
                 ((1,), (1,)): 0.3, ((1,), (2,)): -0.2, ((1,), (3,)): 0.6,
                 ((2,), (1,)): -0.5}
        for pos, (term, levels) in enumerate(model.columns_):
            if not term:
                continue
            expected = truth[(term, levels)]
            assert abs(model.coef_[pos] - expected) <= 3 * se[pos]

    def test_zero_margin_rejected_by_name(self):
        ks = sr.build_keyspace([variable("A", 3)])
        counts = freq_from_vector([5, 0, 3])
        with pytest.raises(DataError, match="zero sample margin"):
            PoissonLogLinear().fit(counts, ks, sr.SamplingDesign(pi=0.5))

    def test_non_convergence_reports_path(self):
        rng = np.random.default_rng(4)
        ks = sr.build_keyspace([variable("A", 6), variable("B", 5)])
        y = rng.poisson(4.0, ks.K)
        with pytest.raises(ConvergenceError) as err:
            PoissonLogLinear(max_iter=1).fit(freq_from_vector(y), ks,
                                             sr.SamplingDesign(pi=0.2))
        assert len(err.value.deviance_path) >= 1

    def test_overparameterized_rejected(self):
        ks = sr.build_keyspace([variable("A", 2)])
        counts = freq_from_vector([3, 4])
        model = PoissonLogLinear(terms=[(0,)])
        model.fit(counts, ks, sr.SamplingDesign(pi=1.0))  # saturated, P == K
        assert model.n_parameters_ == ks.K

    def test_permutation_equivariance(self):
        ks = sr.build_keyspace([variable("A", 3), variable("B", 2)])
        y = np.array([4, 9, 2, 7, 11, 3], dtype=float)
        design = sr.SamplingDesign(pi=0.5)
        model = PoissonLogLinear().fit(freq_from_vector(y), ks, design)

        perm = np.array([1, 2, 0])  # new position of each old A category
        ks_p = sr.build_keyspace([variable("A", 3), variable("B", 2)])
        codes = ks.codes_of_cells(np.arange(1, ks.K + 1))
        permuted_cells = ks_p.cells_of_codes(
            np.column_stack([perm[codes[:, 0]], codes[:, 1]]))
        y_p = np.empty_like(y)
        y_p[permuted_cells - 1] = y
        model_p = PoissonLogLinear().fit(freq_from_vector(y_p), ks_p, design)
        assert np.allclose(model.mu_, model_p.mu_[permuted_cells - 1], rtol=1e-6)

    def test_get_params_roundtrip(self):
        model = PoissonLogLinear(terms=[(0, 1)], tol=1e-6, max_iter=50)
        params = model.get_params()
        assert params == {"terms": [(0, 1)], "tol": 1e-6, "max_iter": 50}


class TestUniqueRiskEstimate:
    def make_model(self, pi=0.5):
        ks = sr.build_keyspace([variable("A", 2)])
        counts = freq_from_vector([8, 2])
        return PoissonLogLinear().fit(counts, ks, sr.SamplingDesign(pi=pi))

    def test_closed_form_at_one(self):
        # mean 1: (1 - 1/e) / 1, frozen against series summation
        model = self.make_model()
        design = sr.SamplingDesign(pi=0.5)
        rate = model.population_rate(np.array([1]))[0]
        expected_mu = (1 - 0.5) * rate
        value = estimate_unique_risk(model, design, 1)
        assert value == pytest.approx((1 - np.exp(-expected_mu)) / expected_mu,
                                      abs=1e-12)

    def test_limits_and_monotonicity(self):
        assert_mu = lambda mu: (1 - np.exp(-mu)) / mu if mu > 0 else 1.0
        assert assert_mu(1.0) == pytest.approx(0.6321205588285577, abs=1e-14)
        # estimate is 1 when the fitted rate vanishes and decreases in mu
        ks = sr.build_keyspace([variable("A", 2)])
        counts = freq_from_vector([8, 2])
        values = []
        for pi in (0.999999, 0.7, 0.4, 0.1, 0.01):
            model = PoissonLogLinear().fit(counts, ks, sr.SamplingDesign(pi=pi))
            values.append(estimate_unique_risk(model, sr.SamplingDesign(pi=pi), 2))
        assert values[0] == pytest.approx(1.0, abs=1e-4)
        assert all(b <= a + 1e-12 for a, b in zip(values, values[1:]))

    def test_estimate_in_unit_interval(self):
        model = self.make_model(pi=0.05)
        value = estimate_unique_risk(model, sr.SamplingDesign(pi=0.05), 1)
        assert 0.0 < value <= 1.0

    def test_matches_brute_force_conditional_mean(self):
        # simulate the generative story: Poisson population count, Bernoulli
        # thinning, keep draws with sample count one, average the reciprocal
        rng = np.random.default_rng(23)
        rate, pi = 3.0, 0.3
        population = rng.poisson(rate, size=1_000_000)
        sampled = rng.binomial(population, pi)
        hits = population[sampled == 1]
        brute = np.mean(1.0 / hits)
        se = np.std(1.0 / hits) / np.sqrt(len(hits))
        mu = (1 - pi) * rate
        closed = (1 - np.exp(-mu)) / mu
        assert abs(brute - closed) <= 3 * se


class TestAdjustedAggregate:
    def test_identity_spec_makes_adjusted_equal_naive(self):
        ks = sr.build_keyspace([variable("A", 4)])
        counts = freq_from_vector([1, 1, 3, 7])
        design = sr.SamplingDesign(pi=0.25)
        model = PoissonLogLinear().fit(counts, ks, design)
        result = adjusted_aggregate(model, sr.MisclassSpec.identity(ks),
                                    design, counts)
        assert result.adjusted == result.naive
        assert result.n_sample_uniques == 2

    def test_adjusted_dominated_by_naive(self):
        ks = sr.build_keyspace([variable("A", 4)])
        counts = freq_from_vector([1, 2, 1, 9])
        design = sr.SamplingDesign(pi=0.25)
        model = PoissonLogLinear().fit(counts, ks, design)
        spec = sr.MisclassSpec(ks, {0: uniform_offdiag(4, 0.8)})
        result = adjusted_aggregate(model, spec, design, counts)
        assert result.adjusted <= result.naive
        assert result.adjusted == pytest.approx(0.8 * result.naive, rel=1e-12)


class TestForwardSearch:
    def generate(self, rng, ks, interaction=None, scale=2.5):
        codes = ks.codes_of_cells(np.arange(1, ks.K + 1))
        log_rate = np.log(scale) + sum(
            rng.normal(0, 0.4, ks.shape[v])[codes[:, v]]
            for v in range(ks.n_variables))
        if interaction is not None:
            a, b = interaction
            bump = rng.normal(0, 1.2, (ks.shape[a], ks.shape[b]))
            log_rate = log_rate + bump[codes[:, a], codes[:, b]]
        return rng.poisson(np.exp(log_rate))

    def test_independence_recovers_main_effects(self):
        ks = sr.build_keyspace([variable("A", 3), variable("B", 3), variable("C", 2)])
        design = sr.SamplingDesign(pi=1.0)
        hits = 0
        for rep in range(20):
            rng = np.random.default_rng(1000 + rep)
            y = self.generate(rng, ks) + 1  # avoid zero margins
            model = forward_search(freq_from_vector(y), ks, design,
                                   criterion="bic")
            if model.terms_ == ((0,), (1,), (2,)):
                hits += 1
        assert hits >= 16

    def test_strong_interaction_selected(self):
        ks = sr.build_keyspace([variable("A", 3), variable("B", 3), variable("C", 2)])
        design = sr.SamplingDesign(pi=1.0)
        hits = 0
        for rep in range(10):
            rng = np.random.default_rng(2000 + rep)
            y = self.generate(rng, ks, interaction=(0, 1), scale=8.0) + 1
            model = forward_search(freq_from_vector(y), ks, design,
                                   criterion="bic")
            if (0, 1) in model.terms_:
                hits += 1
        assert hits >= 9

    def test_single_variable_trivial(self):
        ks = sr.build_keyspace([variable("A", 4)])
        model = forward_search(freq_from_vector([3, 5, 7, 9]), ks,
                               sr.SamplingDesign(pi=0.5))
        assert model.terms_ == ((0,),)

    def test_trace_recorded(self):
        ks = sr.build_keyspace([variable("A", 2), variable("B", 2)])
        model = forward_search(freq_from_vector([5, 6, 7, 8]), ks,
                               sr.SamplingDesign(pi=0.5))
        assert model.search_trace_[0][0] == "<main effects>"

    def test_custom_criterion_callable(self):
        ks = sr.build_keyspace([variable("A", 2), variable("B", 2)])
        calls = []
        def criterion(model):
            calls.append(model.n_parameters_)
            return model.deviance_ + 10.0 * model.n_parameters_
        forward_search(freq_from_vector([5, 6, 7, 8]), ks,
                       sr.SamplingDesign(pi=0.5), criterion=criterion)
        assert calls
