import numpy as np
import pytest

import sdlrisk as sr
from sdlrisk.errors import DataError, DegenerateDenominatorError
from sdlrisk.risk import ExpectedCounts, mc_oracle_grid

from conftest import population_from_counts, uniform_offdiag, variable


def identity_inputs(keyspace, F_counts, f_tilde_counts, pi=0.1, **kwargs):
    F = sr.FrequencyTable(F_counts, "population-true")
    return sr.RiskInputs(
        keyspace=keyspace,
        misclass=sr.MisclassSpec.identity(keyspace),
        design=sr.SamplingDesign(pi=pi),
        F=F,
        F_tilde=sr.FrequencyTable(F_counts, "population-perturbed"),
        f=sr.FrequencyTable(F_counts, "sample-true"),
        f_tilde=sr.FrequencyTable(f_tilde_counts, "sample-perturbed"),
        **kwargs,
    )


class TestPerRecordFormulas:
    """Frozen values for the (3, 2)-population toy instance.

    All expected numbers were computed by hand / direct arithmetic before the
    implementation existed; the exact value is additionally cross-checked
    against the simulation oracle below.
    """

    def test_exact_frozen(self, toy_risk_inputs):
        assert sr.risk_exact(1, toy_risk_inputs) == pytest.approx(
            0.2930232558139535, abs=1e-15)

    def test_exact_identity_is_reciprocal_count(self, binary_keyspace):
        inputs = identity_inputs(binary_keyspace, {1: 3, 2: 2}, {1: 1, 2: 1})
        assert sr.risk_exact(1, inputs) == 1.0 / 3.0  # bitwise
        assert sr.risk_exact(2, inputs) == 1.0 / 2.0

    def test_exact_upper_bound(self):
        rng = np.random.default_rng(14)
        ks = sr.build_keyspace([variable("A", 4), variable("B", 3)])
        for trial in range(20):
            counts = {int(j): int(c) for j, c in
                      enumerate(rng.integers(1, 30, ks.K), start=1)}
            spec = sr.MisclassSpec(ks, {0: uniform_offdiag(4, rng.uniform(0.5, 1.0)),
                                        1: uniform_offdiag(3, rng.uniform(0.5, 1.0))})
            inputs = sr.RiskInputs(
                ks, spec, sr.SamplingDesign(pi=float(rng.uniform(0.01, 0.9))),
                F=sr.FrequencyTable(counts, "population-true"),
                f_tilde=sr.FrequencyTable({1: 1}, "sample-perturbed"))
            for j in range(1, ks.K + 1):
                assert sr.risk_exact(j, inputs) <= 1.0 / counts[j] + 1e-12

    def test_exact_large_count_vanishes(self, binary_keyspace):
        spec = sr.MisclassSpec(binary_keyspace, {0: [[0.9, 0.1], [0.2, 0.8]]})
        inputs = sr.RiskInputs(
            binary_keyspace, spec, sr.SamplingDesign(pi=0.01),
            F=sr.FrequencyTable({1: 10 ** 6, 2: 10}, "population-true"),
            f_tilde=sr.FrequencyTable({1: 1}, "sample-perturbed"))
        value = sr.risk_exact(1, inputs)
        assert value == pytest.approx(0.9 / (10 ** 6 * 0.9 + 10 * 0.2), rel=1e-2)

    def test_exact_zero_population_cell_contributes_nothing(self, binary_keyspace):
        spec = sr.MisclassSpec(binary_keyspace, {0: [[0.9, 0.1], [0.2, 0.8]]})
        inputs = sr.RiskInputs(
            binary_keyspace, spec, sr.SamplingDesign(pi=0.1),
            F=sr.FrequencyTable({2: 5}, "population-true"),
            f_tilde=sr.FrequencyTable({1: 1}, "sample-perturbed"))
        assert sr.risk_exact(1, inputs) == 0.0

    def test_known_in_sample_frozen(self, toy_risk_inputs):
        assert sr.risk_known_in_sample(1, toy_risk_inputs) == pytest.approx(
            0.32727272727272727, abs=1e-15)

    def test_known_in_sample_exceeds_unconditional(self, toy_risk_inputs):
        # conditioning on sample membership can only raise the toy risk
        assert (sr.risk_known_in_sample(1, toy_risk_inputs)
                > sr.risk_exact(1, toy_risk_inputs))

    def test_known_in_sample_identity(self, binary_keyspace):
        inputs = identity_inputs(binary_keyspace, {1: 3, 2: 2}, {1: 1, 2: 1})
        assert sr.risk_known_in_sample(1, inputs) == 1.0 / 3.0

    def test_known_in_sample_near_unique(self, binary_keyspace):
        spec = sr.MisclassSpec(binary_keyspace, {0: [[0.999, 0.001],
                                                     [0.001, 0.999]]})
        inputs = sr.RiskInputs(
            binary_keyspace, spec, sr.SamplingDesign(pi=0.5),
            f=sr.FrequencyTable({1: 1, 2: 9}, "sample-true"),
            f_tilde=sr.FrequencyTable({1: 1, 2: 9}, "sample-perturbed"))
        assert sr.risk_known_in_sample(1, inputs) == pytest.approx(1.0, abs=0.02)

    def test_gouweleeuw_frozen(self, toy_risk_inputs):
        assert sr.risk_gouweleeuw(1, toy_risk_inputs) == pytest.approx(
            0.8709677419354839, abs=1e-15)

    def test_gouweleeuw_identity_is_one(self, binary_keyspace):
        inputs = identity_inputs(binary_keyspace, {1: 3, 2: 2}, {1: 1})
        assert sr.risk_gouweleeuw(1, inputs) == 1.0

    def test_gouweleeuw_unreachable_identity_coordinates(self):
        # the factored spec never changes B, so no sample mass can map into a
        # released cell whose B value is absent from the sample
        ks = sr.build_keyspace([variable("A", 2), variable("B", 2)])
        spec = sr.MisclassSpec(ks, {0: [[0.8, 0.2], [0.2, 0.8]]})
        inputs = sr.RiskInputs(
            ks, spec, sr.SamplingDesign(pi=0.5),
            f=sr.FrequencyTable({ks.encode((1, 1)): 3}, "sample-true"),
            f_tilde=sr.FrequencyTable({ks.encode((1, 2)): 1}, "sample-perturbed"))
        with pytest.raises(DegenerateDenominatorError):
            sr.risk_gouweleeuw(ks.encode((1, 2)), inputs)
        assert sr.risk_known_in_sample(ks.encode((1, 2)), inputs) == 0.0

    def test_gouweleeuw_zero_denominator(self, binary_keyspace):
        spec = sr.MisclassSpec(binary_keyspace, {0: [[0.0, 1.0], [0.0, 1.0]]})
        inputs = sr.RiskInputs(
            binary_keyspace, spec, sr.SamplingDesign(pi=0.5),
            f=sr.FrequencyTable({1: 2}, "sample-true"),
            f_tilde=sr.FrequencyTable({2: 1}, "sample-perturbed"))
        with pytest.raises(DegenerateDenominatorError):
            sr.risk_gouweleeuw(1, inputs)

    def test_simple_arithmetic(self, binary_keyspace):
        spec = sr.MisclassSpec(binary_keyspace, {0: [[0.8, 0.2], [0.2, 0.8]]})
        inputs = sr.RiskInputs(
            binary_keyspace, spec, sr.SamplingDesign(pi=0.1),
            F_tilde=sr.FrequencyTable({1: 4, 2: 1}, "population-perturbed"),
            f_tilde=sr.FrequencyTable({1: 1}, "sample-perturbed"))
        assert sr.risk_simple(1, inputs) == pytest.approx(0.2)

    def test_simple_identity(self, binary_keyspace):
        inputs = identity_inputs(binary_keyspace, {1: 3, 2: 2}, {1: 1})
        assert sr.risk_simple(1, inputs) == pytest.approx(1.0 / 3.0)

    def test_simple_empty_perturbed_cell(self, binary_keyspace):
        inputs = identity_inputs(binary_keyspace, {2: 2}, {1: 1})
        with pytest.raises(DataError):
            sr.risk_simple(1, inputs)

    def test_small_delta_frozen(self, toy_risk_inputs):
        assert sr.risk_small_delta(1, toy_risk_inputs) == pytest.approx(
            0.29962962962962963, abs=1e-15)
        assert sr.risk_small_delta_alt(1, toy_risk_inputs) == pytest.approx(
            0.3027245206861756, abs=1e-15)

    def test_small_delta_identity_reduces_exactly(self, binary_keyspace):
        inputs = identity_inputs(binary_keyspace, {1: 3, 2: 2}, {1: 1, 2: 1},
                                 pi=0.3)
        assert sr.risk_small_delta(1, inputs) == pytest.approx(1 / 3, abs=1e-15)
        assert sr.risk_small_delta_alt(1, inputs) == pytest.approx(1 / 3, abs=1e-15)

    def test_small_delta_clipped_outside_regime(self, binary_keyspace):
        # heavy perturbation inflates the released count far beyond the
        # diagonal mass; the raw expansion goes negative and is clipped
        spec = sr.MisclassSpec(binary_keyspace, {0: [[0.5, 0.5], [0.5, 0.5]]})
        inputs = sr.RiskInputs(
            binary_keyspace, spec, sr.SamplingDesign(pi=0.1),
            F=sr.FrequencyTable({1: 2, 2: 50}, "population-true"),
            F_tilde=sr.FrequencyTable({1: 26, 2: 26}, "population-perturbed"),
            f_tilde=sr.FrequencyTable({1: 1}, "sample-perturbed"))
        assert sr.risk_small_delta(1, inputs) == 0.0

    def test_small_delta_alt_close_to_exact_for_light_noise(self, binary_keyspace):
        spec = sr.MisclassSpec(binary_keyspace, {0: [[0.9, 0.1], [0.2, 0.8]]})
        F = sr.FrequencyTable({1: 30, 2: 20}, "population-true")
        inputs = sr.RiskInputs(
            binary_keyspace, spec, sr.SamplingDesign(pi=0.01), F=F,
            F_tilde=ExpectedCounts(spec, F),
            f_tilde=sr.FrequencyTable({1: 1}, "sample-perturbed"))
        exact = sr.risk_exact(1, inputs)
        assert sr.risk_small_delta_alt(1, inputs) == pytest.approx(exact, rel=0.01)

    def test_permutation_equivariance(self):
        # relabeling the categories of every input permutes nothing material
        ks = sr.build_keyspace([variable("A", 3)])
        m = np.array([[0.8, 0.15, 0.05], [0.1, 0.85, 0.05], [0.2, 0.1, 0.7]])
        F_counts = np.array([5, 3, 2])
        perm = np.array([2, 0, 1])  # new index of each old category
        inputs = sr.RiskInputs(
            ks, sr.MisclassSpec(ks, {0: m}), sr.SamplingDesign(pi=0.2),
            F=sr.FrequencyTable({i + 1: int(c) for i, c in enumerate(F_counts)},
                                "population-true"),
            f_tilde=sr.FrequencyTable({1: 1}, "sample-perturbed"))
        m_p = np.empty_like(m)
        m_p[perm[:, None], perm[None, :]] = m
        F_p = np.empty_like(F_counts)
        F_p[perm] = F_counts
        inputs_p = sr.RiskInputs(
            ks, sr.MisclassSpec(ks, {0: m_p}), sr.SamplingDesign(pi=0.2),
            F=sr.FrequencyTable({i + 1: int(c) for i, c in enumerate(F_p)},
                                "population-true"),
            f_tilde=sr.FrequencyTable({1: 1}, "sample-perturbed"))
        for old in range(3):
            assert sr.risk_exact(old + 1, inputs) == pytest.approx(
                sr.risk_exact(int(perm[old]) + 1, inputs_p), abs=1e-14)

    def test_degenerate_denominator_raises(self, binary_keyspace):
        spec = sr.MisclassSpec(binary_keyspace, {0: [[0.0, 1.0], [0.0, 1.0]]})
        inputs = sr.RiskInputs(
            binary_keyspace, spec, sr.SamplingDesign(pi=1.0),
            F=sr.FrequencyTable({1: 1, 2: 3}, "population-true"),
            f_tilde=sr.FrequencyTable({2: 1}, "sample-perturbed"))
        with pytest.raises(DegenerateDenominatorError):
            sr.risk_exact(2, inputs)

    def test_known_in_sample_zero_count_cell_contributes_nothing(self, binary_keyspace):
        # a released cell no sampled unit truly occupies cannot belong to a
        # sampled target; the conditional measure is vacuous, not > 1
        spec = sr.MisclassSpec(binary_keyspace, {0: [[0.9, 0.1], [0.2, 0.8]]})
        inputs = sr.RiskInputs(
            binary_keyspace, spec, sr.SamplingDesign(pi=1.0),
            f=sr.FrequencyTable({2: 10}, "sample-true"),
            f_tilde=sr.FrequencyTable({1: 1, 2: 9}, "sample-perturbed"))
        assert sr.risk_known_in_sample(1, inputs) == 0.0

    def test_denominators_differ_only_by_retention_corrections(self, binary_keyspace):
        # with sample counts in place of population counts and certain
        # inclusion, each conditional-measure denominator term equals the
        # gouweleeuw term divided by its own (1 - M_jk) retention factor
        spec = sr.MisclassSpec(binary_keyspace, {0: [[0.9, 0.1], [0.2, 0.8]]})
        f = np.array([3.0, 2.0])
        j = 1
        m_jk = np.array([spec.entry(j, 1), spec.entry(j, 2)])
        gouweleeuw_terms = f * m_jk
        conditional_terms = f * m_jk / (1.0 - m_jk)
        assert np.allclose(conditional_terms, gouweleeuw_terms / (1.0 - m_jk))
        inputs = sr.RiskInputs(
            binary_keyspace, spec, sr.SamplingDesign(pi=1.0),
            f=sr.FrequencyTable({1: 3, 2: 2}, "sample-true"),
            f_tilde=sr.FrequencyTable({1: 1}, "sample-perturbed"))
        expected = (spec.entry(j, j) / (1 - spec.entry(j, j))) / conditional_terms.sum()
        assert sr.risk_known_in_sample(j, inputs) == pytest.approx(expected, abs=1e-14)

    def test_missing_inputs_reported(self, binary_keyspace):
        inputs = sr.RiskInputs(
            binary_keyspace, sr.MisclassSpec.identity(binary_keyspace),
            f_tilde=sr.FrequencyTable({1: 1}, "sample-perturbed"))
        with pytest.raises(DataError, match="inputs.F"):
            sr.risk_exact(1, inputs)
        with pytest.raises(DataError, match="inputs.f"):
            sr.risk_gouweleeuw(1, inputs)


class TestAggregates:
    def test_no_sample_uniques(self, binary_keyspace):
        inputs = identity_inputs(binary_keyspace, {1: 3, 2: 2}, {1: 2, 2: 3})
        agg = sr.aggregate_tau(inputs, "exact")
        assert agg.total == 0.0 and agg.proportion == 0.0
        assert agg.n_sample_uniques == 0

    def test_unperturbed_tau_equals_tau_star(self):
        ks = sr.build_keyspace([variable("A", 4)])
        F = {1: 1, 2: 2, 3: 5, 4: 9}
        f_counts = {1: 1, 2: 1, 3: 2, 4: 1}
        inputs = identity_inputs(ks, F, f_counts, pi=0.2,
                                 )
        inputs.f = sr.FrequencyTable(f_counts, "sample-true")
        tau = sr.aggregate_tau(inputs, "exact")
        star = sr.tau_star(inputs)
        assert tau.total == star.total == 1.0 / 1 + 1.0 / 2 + 1.0 / 9

    def test_aggregate_is_sum_of_records(self, toy_risk_inputs):
        agg = sr.aggregate_tau(toy_risk_inputs, "gouweleeuw")
        by_hand = (sr.risk_gouweleeuw(1, toy_risk_inputs)
                   + sr.risk_gouweleeuw(2, toy_risk_inputs))
        assert agg.total == pytest.approx(by_hand, abs=1e-15)
        assert agg.proportion == pytest.approx(by_hand / 2, abs=1e-15)

    def test_tau_cc_without_perturbation_equals_tau_star(self):
        ks = sr.build_keyspace([variable("A", 3)])
        codes = np.array([[0], [0], [1], [2]])
        sample = sr.MicrodataTable(ks, codes)
        inputs = sr.RiskInputs(
            ks, sr.MisclassSpec.identity(ks), sr.SamplingDesign(pi=0.5),
            F=sr.FrequencyTable({1: 4, 2: 3, 3: 2}, "population-true"),
            sample_true=sample, sample_pert=sample)
        assert sr.tau_cc(inputs).total == sr.tau_star(inputs).total

    def test_tau_cc_counts_only_unchanged_uniques(self):
        ks = sr.build_keyspace([variable("A", 3)])
        true_t = sr.MicrodataTable(ks, np.array([[0], [1], [1]]))
        pert_t = sr.MicrodataTable(ks, np.array([[2], [1], [1]]))  # unique moved
        inputs = sr.RiskInputs(
            ks, sr.MisclassSpec.identity(ks), sr.SamplingDesign(pi=0.5),
            F=sr.FrequencyTable({1: 4, 2: 3, 3: 2}, "population-true"),
            sample_true=true_t, sample_pert=pert_t)
        # released unique is cell 3, but its true value is cell 1
        assert sr.tau_cc(inputs).total == 0.0

    def test_unknown_formula(self, toy_risk_inputs):
        with pytest.raises(DataError):
            sr.aggregate_tau(toy_risk_inputs, "nope")

    def test_assess_report_structure(self, toy_risk_inputs):
        report = sr.assess(toy_risk_inputs,
                           ("exact", "simple", "tau", "tau-star"))
        assert report.n_sample_uniques == 2
        assert {r.cell for r in report.per_record} == {1, 2}
        assert report.aggregates["tau"].total == report.aggregates["exact"].total
        assert report.aggregates["tau"].formula == "tau"
        total = sum(r.measures["exact"] for r in report.per_record)
        assert report.aggregates["exact"].total == pytest.approx(total, abs=1e-15)


class TestMonteCarloOracle:
    def test_toy_agreement(self, binary_keyspace, toy_risk_inputs):
        population = population_from_counts(binary_keyspace, {1: 3, 2: 2})
        spec = sr.MisclassSpec(binary_keyspace, {0: [[0.9, 0.1], [0.2, 0.8]]})
        estimate = sr.risk_mc_oracle(1, population, spec,
                                     sr.SamplingDesign(pi=0.1),
                                     replicates=150_000, random_state=42)
        exact = sr.risk_exact(1, toy_risk_inputs)
        assert abs(estimate.estimate - exact) <= 3 * estimate.se

    def test_population_unique_no_noise(self, binary_keyspace):
        population = population_from_counts(binary_keyspace, {1: 1, 2: 6})
        estimate = sr.risk_mc_oracle(1, population,
                                     sr.MisclassSpec.identity(binary_keyspace),
                                     sr.SamplingDesign(pi=0.3),
                                     replicates=20_000, random_state=1)
        assert estimate.estimate == 1.0

    def test_high_inclusion_identity(self, binary_keyspace):
        # with pi near 1 and exact data, a unique match at a cell of count 2
        # is correct half the time
        population = population_from_counts(binary_keyspace, {1: 2, 2: 2})
        estimate = sr.risk_mc_oracle(1, population,
                                     sr.MisclassSpec.identity(binary_keyspace),
                                     sr.SamplingDesign(pi=0.6),
                                     replicates=60_000, random_state=2)
        assert abs(estimate.estimate - 0.5) <= 3 * estimate.se

    def test_no_qualifying_replicates(self, binary_keyspace):
        population = population_from_counts(binary_keyspace, {1: 2, 2: 2})
        spec = sr.MisclassSpec(binary_keyspace, {0: [[0.0, 1.0], [0.0, 1.0]]})
        with pytest.raises(DataError, match="no qualifying"):
            sr.risk_mc_oracle(1, population, spec, sr.SamplingDesign(pi=0.5),
                              replicates=5_000, random_state=3)

    def test_grid_covers_population_cells(self, binary_keyspace):
        population = population_from_counts(binary_keyspace, {1: 3, 2: 2})
        grid = mc_oracle_grid(population, sr.MisclassSpec.identity(binary_keyspace),
                              sr.SamplingDesign(pi=0.2), 10_000, 0)
        assert set(grid) == {1, 2}


class TestLimitConsistency:
    def test_small_pi_matches_simple_measure(self):
        # tiny inclusion probability and the expected released counts:
        # the exact measure and the simple ratio agree within one percent
        rng = np.random.default_rng(31)
        ks = sr.build_keyspace([variable("A", 5), variable("B", 4)])
        counts = {int(j): int(c) for j, c in
                  enumerate(rng.integers(3, 60, ks.K), start=1)}
        spec = sr.MisclassSpec(ks, {0: uniform_offdiag(5, 0.9)})
        F = sr.FrequencyTable(counts, "population-true")
        inputs = sr.RiskInputs(
            ks, spec, sr.SamplingDesign(pi=0.01), F=F,
            F_tilde=ExpectedCounts(spec, F),
            f_tilde=sr.FrequencyTable({1: 1}, "sample-perturbed"))
        for j in range(1, ks.K + 1):
            exact = sr.risk_exact(j, inputs)
            simple = sr.risk_simple(j, inputs)
            assert abs(simple - exact) / exact <= 0.01
