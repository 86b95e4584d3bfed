"""Command-line frontend.

Commands wire the library modules together: ``perturb`` applies a swap or
PRAM plan, ``assess`` computes risk measures from frequency inputs,
``estimate`` fits the Poisson log-linear estimator to the released sample,
``utility`` and ``map`` cover information loss and the risk-utility map, and
``simulate-multikey`` / ``linkage-sim`` run the simulation harnesses.

Every command takes ``--config`` (one YAML file, see ``config.py`` for the
schema) plus ``--seed/--out/--format/--digits`` overrides, writes files that
start with a provenance comment line, and exits 0 on success, 2 on a
configuration error, 3 on a data error and 4 on a numerical failure.
"""

from __future__ import annotations

import sys
from pathlib import Path

import click

from . import config as cfgmod
from .errors import (ConfigError, DataError, NumericalError, SdlRiskError)
from .io import (config_digest, delimiter_for, provenance_line, read_microdata,
                 write_dsv, write_microdata)
from .keyspace import tabulate
from .linksim import mu_estimates, run_binary_experiment, run_linkage_experiment
from .loglin import (PoissonLogLinear, adjusted_aggregate, forward_search,
                     parse_terms, term_label)
from .perturb import DataSwap, Pram
from .risk import (AGGREGATE_FORMULAS, ExpectedCounts, PER_RECORD_FORMULAS,
                   RiskInputs, assess as risk_assess)
from .utility import RiskUtilityPoint, TwoWayTable, bvr, raad, rcv, risk_utility_map

_EXIT_CODES = ((ConfigError, 2), (NumericalError, 4), (DataError, 3),
               (SdlRiskError, 3))


class Runner:
    """Shared command state: parsed config, provenance, output conventions."""

    def __init__(self, config_path, seed, out, fmt, digits, need_seed=False):
        self.cfg, raw = cfgmod.load_config(config_path)
        self.seed = seed if seed is not None else self.cfg.get("seed")
        if need_seed and self.seed is None:
            raise ConfigError("a seed is required (config `seed:` or --seed)")
        self.out = Path(out if out is not None else self.cfg.get("out", "."))
        self.delimiter = delimiter_for(fmt) if fmt else delimiter_for(
            self.cfg.get("format", "csv"))
        self.digits = int(digits if digits is not None else self.cfg.get("digits", 6))
        self.provenance = provenance_line(config_digest(raw), self.seed)
        self.input_delim = str(self.cfg.get("delimiter", ","))

    def keyspace(self):
        return cfgmod.build_keyspace(self.cfg)

    def read_table(self, key, keyspace, required=True):
        path = self.cfg.get(key)
        if path is None:
            if required:
                raise ConfigError(f"config is missing the {key!r} file path")
            return None
        return read_microdata(path, keyspace, delimiter=self.input_delim)

    def write(self, name, header, rows):
        path = self.out / name
        write_dsv(path, header, rows, provenance=self.provenance,
                  delimiter=self.delimiter, digits=self.digits)
        return path


def _common_options(fn):
    fn = click.option("--digits", type=int, default=None,
                      help="Significant digits for serialized numbers.")(fn)
    fn = click.option("--format", "fmt", type=click.Choice(["csv", "tsv"]),
                      default=None, help="Output delimiter convention.")(fn)
    fn = click.option("--out", type=click.Path(), default=None,
                      help="Output directory.")(fn)
    fn = click.option("--seed", type=int, default=None,
                      help="Root seed override.")(fn)
    fn = click.option("--config", "config_path", required=True,
                      type=click.Path(exists=True, dir_okay=False),
                      help="Run configuration file.")(fn)
    return fn


def _run(body):
    try:
        body()
    except SdlRiskError as exc:
        for kind, code in _EXIT_CODES:
            if isinstance(exc, kind):
                click.echo(f"error: {exc}", err=True)
                sys.exit(code)
        raise
    sys.exit(0)


@click.group()
def main():
    """Perturbative disclosure limitation and identification-risk assessment."""


# ---------------------------------------------------------------- perturb

@main.command()
@click.option("--rate", type=float, default=None,
              help="Override the swap plan's pool fraction.")
@click.option("--alpha", type=float, default=None,
              help="Override the PRAM plan's blend parameter.")
@_common_options
def perturb(config_path, seed, out, fmt, digits, rate, alpha):
    """Apply the configured swap or PRAM plan to the input microdata."""

    def body():
        runner = Runner(config_path, seed, out, fmt, digits, need_seed=True)
        keyspace = runner.keyspace()
        table = runner.read_table("input", keyspace)
        plan = runner.cfg.get("perturb")
        if plan is not None:
            if rate is not None:
                plan = {**plan, "rate": rate}
            if alpha is not None:
                plan = {**plan, "alpha": alpha}
            runner.cfg["perturb"] = plan
        transformer = cfgmod.build_perturber(runner.cfg, keyspace, runner.seed)
        released = transformer.fit(table).transform(table)
        write_microdata(released, runner.out / "perturbed.csv",
                        provenance=runner.provenance, delimiter=runner.delimiter)
        if isinstance(transformer, DataSwap):
            header, rows = transformer.swap_log_.to_rows()
            runner.write("swap_log.csv", header, rows)
            matrix_rows = _matrix_rows(transformer.misclass_matrices_, keyspace,
                                       transformer.variable_index_)
            runner.write("swap_matrices.csv",
                         ["group", "from", "to", "probability"], matrix_rows)
        elif isinstance(transformer, Pram):
            matrix_rows = _matrix_rows(transformer.transition_matrices_, keyspace,
                                       transformer.variable_index_)
            runner.write("pram_matrices.csv",
                         ["group", "from", "to", "probability"], matrix_rows)
        click.echo(f"wrote {runner.out / 'perturbed.csv'}")

    _run(body)


def _matrix_rows(matrices, keyspace, var):
    labels = keyspace.variables[var].categories
    rows = []
    for group in sorted(matrices, key=lambda g: (g is None, str(g))):
        name = "" if group is None else group
        matrix = matrices[group]
        for a, from_label in enumerate(labels):
            for b, to_label in enumerate(labels):
                rows.append([name, from_label, to_label, float(matrix[a, b])])
    return rows


# ---------------------------------------------------------------- assess

def _frequency(table, role):
    return None if table is None else tabulate(table, role)


@main.command()
@_common_options
def assess(config_path, seed, out, fmt, digits):
    """Risk measures for a released file, with whatever truth is configured."""

    def body():
        runner = Runner(config_path, seed, out, fmt, digits)
        keyspace = runner.keyspace()
        released = runner.read_table("perturbed", keyspace, required=False)
        if released is None:
            released = runner.read_table("input", keyspace)
        sample_true = runner.read_table("sample_true", keyspace, required=False)
        population = runner.read_table("population", keyspace, required=False)
        design = cfgmod.build_design(runner.cfg)
        misclass = cfgmod.build_misclass(
            runner.cfg, keyspace,
            table=sample_true if sample_true is not None else released,
        )
        # `population_perturbed: expected` derives the released-population
        # counts from the true counts instead of reading a realized file
        pert_source = runner.cfg.get("population_perturbed")
        if pert_source == "expected":
            if population is None:
                raise ConfigError(
                    "population_perturbed: expected needs a population file"
                )
            population_pert = None
            expected_tilde = ExpectedCounts(
                misclass, tabulate(population, "population-true")
            )
        else:
            population_pert = runner.read_table("population_perturbed", keyspace,
                                                required=False)
            expected_tilde = None

        formulas = tuple(runner.cfg.get("risk", {}).get("formulas", ("simple",)))
        known = set(PER_RECORD_FORMULAS) | set(AGGREGATE_FORMULAS)
        unknown = [f for f in formulas if f not in known]
        if unknown:
            raise ConfigError(f"unknown risk formula(s) {unknown}; "
                              f"choose from {sorted(known)}")
        needs_population = {"exact", "small-delta", "small-delta-alt",
                            "tau", "tau-star", "tau-cc"}
        if population is None and needs_population.intersection(formulas):
            raise DataError(
                "population counts are required for "
                f"{sorted(needs_population.intersection(formulas))}; provide a "
                "`population:` file or use the `estimate` command, which works "
                "from the released sample alone"
            )
        if sample_true is None and {"gouweleeuw", "known-in-sample",
                                    "tau-cc"}.intersection(formulas):
            raise DataError(
                "a `sample_true:` truth sidecar is required for "
                f"{sorted({'gouweleeuw', 'known-in-sample', 'tau-cc'}.intersection(formulas))}"
            )

        inputs = RiskInputs(
            keyspace=keyspace, misclass=misclass, design=design,
            F=_frequency(population, "population-true"),
            F_tilde=(expected_tilde if expected_tilde is not None
                     else _frequency(population_pert, "population-perturbed")),
            sample_true=sample_true, sample_pert=released,
        )
        report = risk_assess(inputs, formulas)

        per_record_ids = [f for f in formulas if f in PER_RECORD_FORMULAS]
        header = (["cell"] + [v.name for v in keyspace.variables]
                  + list(per_record_ids) + ["correctly_classified"])
        rows = []
        for record in report.per_record:
            labels = keyspace.labels_for(record.cell)
            rows.append(
                [record.cell, *labels]
                + [record.measures[f] for f in per_record_ids]
                + ["" if record.correctly_classified is None
                   else record.correctly_classified]
            )
        runner.write("risk_records.csv", header, rows)
        summary_rows = [
            [agg.formula, agg.total, agg.proportion, agg.n_sample_uniques]
            for agg in (report.aggregates[f] for f in sorted(report.aggregates))
        ]
        runner.write("risk_summary.csv",
                     ["formula", "total", "proportion", "n_sample_uniques"],
                     summary_rows)
        click.echo(f"wrote {runner.out / 'risk_summary.csv'}")

    _run(body)


# ---------------------------------------------------------------- estimate

@main.command()
@_common_options
def estimate(config_path, seed, out, fmt, digits):
    """Naive and misclassification-adjusted risk estimates from sample data."""

    def body():
        runner = Runner(config_path, seed, out, fmt, digits)
        keyspace = runner.keyspace()
        released = runner.read_table("perturbed", keyspace, required=False)
        if released is None:
            released = runner.read_table("input", keyspace)
        design = cfgmod.build_design(runner.cfg)
        misclass = cfgmod.build_misclass(runner.cfg, keyspace, table=released)
        counts = tabulate(released, "sample-perturbed")

        section = runner.cfg.get("estimate", {})
        terms_cfg = section.get("terms", "search")
        criterion = section.get("criterion", "aic")
        if terms_cfg == "search":
            model = forward_search(counts, keyspace, design, criterion=criterion)
        else:
            try:
                terms = parse_terms(terms_cfg, keyspace)
            except DataError as exc:
                raise ConfigError(f"bad estimate.terms: {exc}") from exc
            model = PoissonLogLinear(terms=terms)
            model.fit(counts, keyspace, design)
        result = adjusted_aggregate(model, misclass, design, counts)

        runner.write("model_report.csv", ["column", "coefficient"],
                     model.describe())
        summary = [
            ["naive", result.naive],
            ["adjusted", result.adjusted],
            ["n_sample_uniques", result.n_sample_uniques],
            ["deviance", model.deviance_],
            ["df_residual", model.df_residual_],
            ["terms", " + ".join(term_label(t, keyspace) for t in model.terms_)],
        ]
        runner.write("estimate_summary.csv", ["quantity", "value"], summary)
        record_rows = [
            [cell, estimate, adjusted]
            for cell, (estimate, adjusted) in sorted(result.per_record.items())
        ]
        runner.write("estimate_records.csv",
                     ["cell", "naive_estimate", "adjusted_estimate"], record_rows)
        click.echo(f"wrote {runner.out / 'estimate_summary.csv'}")

    _run(body)


# ---------------------------------------------------------------- utility

@main.command()
@_common_options
def utility(config_path, seed, out, fmt, digits):
    """Information-loss measures between the original and released files."""

    def body():
        runner = Runner(config_path, seed, out, fmt, digits)
        keyspace = runner.keyspace()
        original = runner.read_table("input", keyspace)
        released = runner.read_table("perturbed", keyspace)
        section = runner.cfg.get("utility", {})
        rows = []
        for pair in section.get("tables", ()):
            row_var, col_var = pair
            orig = TwoWayTable.from_table(original, row_var, col_var)
            pert = TwoWayTable.from_table(released, row_var, col_var)
            label = f"{orig.row_var}x{orig.col_var}"
            rows.append(["raad", label, "", raad(orig, pert)])
            rows.append(["rcv", label, "", rcv(orig, pert)])
        for entry in section.get("bvr", ()):
            row_var, col_var = entry["table"]
            orig = TwoWayTable.from_table(original, row_var, col_var)
            pert = TwoWayTable.from_table(released, row_var, col_var)
            label = f"{orig.row_var}x{orig.col_var}"
            rows.append(["bvr", label, entry["column"],
                         bvr(orig, pert, entry["column"])])
        if not rows:
            raise ConfigError("utility section configures no tables")
        runner.write("utility.csv", ["measure", "table", "column", "value"], rows)
        click.echo(f"wrote {runner.out / 'utility.csv'}")

    _run(body)


# ---------------------------------------------------------------- map

@main.command(name="map")
@_common_options
def map_command(config_path, seed, out, fmt, digits):
    """Risk-utility map points and their Pareto frontier."""

    def body():
        runner = Runner(config_path, seed, out, fmt, digits)
        section = runner.cfg.get("map", {})
        entries = section.get("points")
        if not entries:
            raise ConfigError("map.points is empty")
        try:
            points = [
                RiskUtilityPoint.from_raad(str(e["label"]), float(e["risk"]),
                                           float(e["raad"]))
                for e in entries
            ]
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"bad map.points entry: {exc}") from exc
        points, frontier = risk_utility_map(points)
        on_frontier = {p.label for p in frontier}
        extras = {str(e["label"]): e for e in entries}
        rows = [
            [p.label, p.risk, p.raad,
             extras[p.label].get("rcv", ""), extras[p.label].get("bvr", ""),
             p.loss, p.label in on_frontier]
            for p in points
        ]
        runner.write("map.csv",
                     ["label", "risk", "raad", "rcv", "bvr", "loss",
                      "on_frontier"],
                     rows)
        click.echo(f"wrote {runner.out / 'map.csv'}")

    _run(body)


# ---------------------------------------------------------------- simulations

@main.command(name="simulate-multikey")
@_common_options
def simulate_multikey(config_path, seed, out, fmt, digits):
    """Risk against the number of binary key variables and flip rates."""

    def body():
        runner = Runner(config_path, seed, out, fmt, digits, need_seed=True)
        config = cfgmod.build_binary_config(runner.cfg, runner.seed)
        result = run_binary_experiment(config)
        rows = [
            [p.C, p.theta, p.risk_sum, p.n_sample_uniques, p.replicate_sd]
            for p in result.points
        ]
        runner.write("multikey_curve.csv",
                     ["C", "theta", "risk_sum", "n_sample_uniques", "replicate_sd"],
                     rows)
        click.echo(f"wrote {runner.out / 'multikey_curve.csv'}")

    _run(body)


@main.command(name="linkage-sim")
@_common_options
def linkage_sim(config_path, seed, out, fmt, digits):
    """Exact-matching linkage experiment against the closed-form prediction."""

    def body():
        runner = Runner(config_path, seed, out, fmt, digits, need_seed=True)
        keyspace = runner.keyspace()
        population = runner.read_table("population", keyspace)
        misclass = cfgmod.build_misclass(runner.cfg, keyspace, table=population)
        config = cfgmod.build_linkage_config(runner.cfg, population, misclass,
                                             runner.seed)
        result = run_linkage_experiment(config)
        runner.write(
            "linkage_keys.csv",
            ["key", "links", "correct", "phi_hat", "se", "theory"],
            [[r.cell, r.links, r.correct, r.phi_hat, r.se, r.theory]
             for r in result.rows],
        )
        mu = mu_estimates(result)
        runner.write(
            "linkage_mu.csv",
            ["key", "m_hat", "m_se", "m_theory", "u_hat", "u_se", "u_theory"],
            [[r.cell, r.m_hat, r.m_se, r.m_theory, r.u_hat, r.u_se, r.u_theory]
             for r in mu.rows],
        )
        runner.write(
            "linkage_summary.csv", ["quantity", "value"],
            [["pairs", result.pairs], ["matches", result.matches],
             ["p_hat", result.p_hat], ["p_se", result.p_se],
             ["p_theory", result.p_theory],
             ["mean_sample_size", result.mean_sample_size],
             ["empty_samples", result.empty_samples],
             ["missing_keys", ";".join(map(str, result.missing_cells))]],
        )
        click.echo(f"wrote {runner.out / 'linkage_keys.csv'}")

    _run(body)


if __name__ == "__main__":
    main()
