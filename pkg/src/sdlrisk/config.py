"""Run configuration: one structured YAML file drives every command.

Schema overview (all sections optional unless a command needs them)::

    seed: 20240801            # root seed; CLI --seed overrides
    delimiter: ","
    keyspace:
      variables:
        - {name: LAD, categories: [L01, L02, ...]}
        - {name: SEX, categories: [m, f]}
    input: sample.csv          # microdata the command operates on
    perturbed: perturbed.csv   # released file (assess / utility)
    sample_true: sample.csv    # truth sidecar for assess
    population: population.csv
    population_perturbed: population_tilde.csv
    sampling: {pi: 0.01}       # or {per_cell: {"7": 0.02, ...}}
    misclass:                  # explicit matrices ...
      variables:
        - {variable: LAD, matrix: [[...], ...]}
    # ... or a preset:
    #   {preset: swap, variable: LAD, rate: 0.1}
    #   {preset: pram-invariant, variable: LAD, diagonal: 0.9, alpha: 0.55}
    #   {preset: binary-theta, theta1: 0.05, theta2: 0.2}
    perturb:
      method: swap             # or pram
      variable: LAD
      rate: 0.1
      mode: random             # or targeted (+ group_rates)
      group_rates: {Other: 1.0, WhiteBritish: 0.07}
      # pram: base via {diagonal: 0.9} or {base_matrix: [[...]]}, alpha: 0.55,
      #       optional group_plans: {Other: {diagonal: 0.0, alpha: 1.0}}
    risk: {formulas: [exact, simple, tau-star]}
    estimate: {terms: [LAD, SEX, LAD*SEX], criterion: aic}   # terms: search
    utility:
      tables: [[LAD, ETH]]
      bvr: [{table: [LAD, ETH], column: WhiteBritish}]
    map:
      points: [{label: R10S, risk: 321.6, raad: 98.5}, ...]
    simulate: {N: 100000, n: 2000, p: 0.2, C_range: [5, 30],
               thetas: [0.0, 0.05], replicates: 10}
    linkage: {pi: 0.3, n_star: 100, replicates: 200000}

CLI flags override individual fields; the precedence is flag > config file >
built-in default.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
import yaml

from .errors import ConfigError, DataError
from .keyspace import (CategoricalVariable, KeySpace, MicrodataTable,
                       MisclassSpec, SamplingDesign)
from .linksim import BinaryExperimentConfig, LinkageExperimentConfig
from .perturb import (DataSwap, Pram, invariant_pram_matrix,
                      swap_misclass_matrix, uniform_offdiag_matrix)


def load_config(path) -> tuple[dict, str]:
    """Parsed configuration plus the raw text (hashed into provenance)."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        cfg = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError(f"config {path} must be a mapping")
    return cfg, text


def require_section(cfg: dict, name: str) -> dict:
    section = cfg.get(name)
    if section is None:
        raise ConfigError(f"config is missing the {name!r} section")
    return section


def build_keyspace(cfg: dict) -> KeySpace:
    section = require_section(cfg, "keyspace")
    entries = section.get("variables")
    if not entries:
        raise ConfigError("keyspace.variables is empty")
    variables = []
    for entry in entries:
        try:
            variables.append(CategoricalVariable(
                str(entry["name"]), tuple(str(c) for c in entry["categories"])
            ))
        except (KeyError, TypeError, DataError) as exc:
            raise ConfigError(f"bad keyspace variable entry {entry!r}: {exc}") from exc
    try:
        return KeySpace(variables)
    except DataError as exc:
        raise ConfigError(str(exc)) from exc


def build_design(cfg: dict) -> SamplingDesign:
    section = require_section(cfg, "sampling")
    try:
        if "pi" in section:
            return SamplingDesign(pi=float(section["pi"]))
        if "per_cell" in section:
            return SamplingDesign(per_cell={
                int(cell): float(p) for cell, p in section["per_cell"].items()
            })
    except (TypeError, ValueError, DataError) as exc:
        raise ConfigError(f"bad sampling section: {exc}") from exc
    raise ConfigError("sampling needs pi or per_cell")


def build_misclass(cfg: dict, keyspace: KeySpace,
                   table: MicrodataTable | None = None) -> MisclassSpec:
    """Misclassification spec from explicit matrices or a named preset.

    The ``swap`` and ``pram-invariant`` presets derive their matrices from
    the observed sample (category counts, respectively proportions), so they
    need the microdata ``table``.
    """
    section = cfg.get("misclass")
    if section is None:
        return MisclassSpec.identity(keyspace)
    try:
        if "variables" in section:
            per_variable = {}
            for entry in section["variables"]:
                per_variable[entry["variable"]] = np.asarray(entry["matrix"], float)
            return MisclassSpec(keyspace, per_variable)
        preset = section.get("preset")
        if preset == "binary-theta":
            theta1 = float(section["theta1"])
            theta2 = float(section["theta2"])
            return MisclassSpec.binary_flip(keyspace, theta1, theta2)
        if preset in ("swap", "pram-invariant"):
            if table is None:
                raise ConfigError(f"preset {preset!r} needs microdata to derive counts")
            var = keyspace.variable_index(section["variable"])
            cardinality = keyspace.variables[var].cardinality
            counts = np.bincount(table.codes[:, var], minlength=cardinality)
            if preset == "swap":
                matrix = swap_misclass_matrix(counts, float(section["rate"]))
            else:
                base = uniform_offdiag_matrix(cardinality, float(section["diagonal"]))
                matrix = invariant_pram_matrix(
                    base, counts / counts.sum(), float(section["alpha"])
                )
            return MisclassSpec(keyspace, {var: matrix})
        raise ConfigError(f"unknown misclass preset {preset!r}")
    except ConfigError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad misclass section: {exc}") from exc
    except DataError as exc:
        raise ConfigError(f"bad misclass section: {exc}") from exc


def _pram_base(entry: dict, cardinality: int) -> np.ndarray:
    if "base_matrix" in entry:
        return np.asarray(entry["base_matrix"], float)
    if "diagonal" in entry:
        return uniform_offdiag_matrix(cardinality, float(entry["diagonal"]))
    raise ConfigError("pram needs base_matrix or diagonal")


def build_perturber(cfg: dict, keyspace: KeySpace, seed):
    section = require_section(cfg, "perturb")
    method = section.get("method")
    variable = section.get("variable")
    if variable is None:
        raise ConfigError("perturb.variable is required")
    try:
        var = keyspace.variable_index(variable)
    except DataError as exc:
        raise ConfigError(f"perturb.variable: {exc}") from exc
    cardinality = keyspace.variables[var].cardinality
    if method == "swap":
        return DataSwap(
            variable=var,
            rate=float(section.get("rate", 0.0)),
            mode=section.get("mode", "random"),
            group_rates=section.get("group_rates"),
            random_state=seed,
        )
    if method == "pram":
        group_plans = None
        if "group_plans" in section:
            group_plans = {}
            for group, entry in section["group_plans"].items():
                group_plans[group] = (
                    _pram_base(entry, cardinality), float(entry.get("alpha", 1.0))
                )
        base = None if group_plans else _pram_base(section, cardinality)
        return Pram(
            variable=var,
            base_matrix=base,
            alpha=float(section.get("alpha", 1.0)),
            group_plans=group_plans,
            random_state=seed,
        )
    raise ConfigError(f"unknown perturb method {method!r}")


def build_binary_config(cfg: dict, seed) -> BinaryExperimentConfig:
    section = require_section(cfg, "simulate")
    try:
        c_range = section.get("C_range", [5, 30])
        if len(c_range) == 2 and c_range[0] <= c_range[1]:
            c_values = tuple(range(int(c_range[0]), int(c_range[1]) + 1))
        else:
            c_values = tuple(int(c) for c in c_range)
        return BinaryExperimentConfig(
            N=int(section.get("N", 100_000)),
            n=int(section.get("n", 2_000)),
            C_range=c_values,
            p=float(section.get("p", 0.2)),
            theta_list=tuple(float(t) for t in
                             section.get("thetas", (0.0, 0.01, 0.02, 0.05, 0.10))),
            replicates=int(section.get("replicates", 10)),
            seed=seed,
        )
    except DataError as exc:
        raise ConfigError(f"bad simulate section: {exc}") from exc
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad simulate section: {exc}") from exc


def build_linkage_config(cfg: dict, population: MicrodataTable,
                         misclass: MisclassSpec, seed) -> LinkageExperimentConfig:
    section = require_section(cfg, "linkage")
    try:
        return LinkageExperimentConfig(
            population=population,
            misclass=misclass,
            pi=float(section["pi"]),
            n_star=int(section["n_star"]),
            replicates=int(section.get("replicates", 10_000)),
            seed=seed,
        )
    except DataError as exc:
        raise ConfigError(f"bad linkage section: {exc}") from exc
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad linkage section: {exc}") from exc
