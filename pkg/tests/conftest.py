import numpy as np
import pytest

import sdlrisk as sr


def variable(name, cardinality):
    return sr.CategoricalVariable(name, tuple(f"{name}{i}" for i in range(cardinality)))


def uniform_offdiag(cardinality, diagonal):
    m = np.full((cardinality, cardinality), (1 - diagonal) / (cardinality - 1))
    np.fill_diagonal(m, diagonal)
    return m


def population_from_counts(keyspace, counts):
    """MicrodataTable with the given cell -> count multiset, in cell order."""
    cells, reps = zip(*sorted(counts.items()))
    return sr.MicrodataTable(keyspace, keyspace.codes_of_cells(np.repeat(cells, reps)))


@pytest.fixture
def binary_keyspace():
    return sr.build_keyspace([variable("X", 2)])


@pytest.fixture
def toy_risk_inputs(binary_keyspace):
    """One binary key variable, population counts (3, 2), pi = 0.1.

    The misclassification keeps value 1 with probability 0.9 and value 2 with
    probability 0.8 (rows are true categories). Both population tables are
    set to the same counts so every formula is exercised.
    """
    ks = binary_keyspace
    mis = sr.MisclassSpec(ks, {0: [[0.9, 0.1], [0.2, 0.8]]})
    return sr.RiskInputs(
        keyspace=ks,
        misclass=mis,
        design=sr.SamplingDesign(pi=0.1),
        F=sr.FrequencyTable({1: 3, 2: 2}, "population-true"),
        F_tilde=sr.FrequencyTable({1: 3, 2: 2}, "population-perturbed"),
        f=sr.FrequencyTable({1: 3, 2: 2}, "sample-true"),
        f_tilde=sr.FrequencyTable({1: 1, 2: 1}, "sample-perturbed"),
    )


@pytest.fixture
def lad_sex_keyspace():
    return sr.build_keyspace([
        sr.CategoricalVariable("LAD", ("L1", "L2")),
        sr.CategoricalVariable("SEX", ("m", "f")),
    ])
