"""Delimiter-separated file input and output.

Every file written by the package starts with one provenance comment line
(tool version, config hash, seed) followed by a header row. Numbers are
serialized with a fixed number of significant digits and a locale-independent
decimal point, so identical runs produce byte-identical files everywhere.
"""

from __future__ import annotations

import hashlib
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__
from .errors import DataError
from .keyspace import KeySpace, MicrodataTable

_DELIMITERS = {"csv": ",", "tsv": "\t"}


def delimiter_for(fmt: str) -> str:
    try:
        return _DELIMITERS[fmt]
    except KeyError:
        raise DataError(f"unknown format {fmt!r}; choose csv or tsv") from None


def config_digest(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:12]


def provenance_line(config_hash: str, seed) -> str:
    return f"# sdlrisk {__version__} config={config_hash} seed={seed}"


def format_value(value, digits: int = 6) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        if np.isnan(value):
            return "nan"
        return f"{value:.{digits}g}"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return str(value)


def write_dsv(path, header, rows, provenance: str | None = None,
              delimiter: str = ",", digits: int = 6) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = []
    if provenance:
        lines.append(provenance)
    lines.append(delimiter.join(str(h) for h in header))
    for row in rows:
        lines.append(delimiter.join(format_value(v, digits) for v in row))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")


def read_microdata(path, keyspace: KeySpace, delimiter: str = ",") -> MicrodataTable:
    """Read a labeled microdata file over the key space.

    The file needs one column per key variable holding category labels;
    ``record_id``, ``target_group`` and ``control_stratum`` columns are picked
    up when present. Comment lines starting with ``#`` are ignored.
    """
    try:
        frame = pd.read_csv(path, sep=delimiter, comment="#", dtype=str,
                            keep_default_na=False)
    except OSError as exc:
        raise DataError(f"cannot read microdata file {path}: {exc}") from exc
    except (pd.errors.ParserError, pd.errors.EmptyDataError, ValueError) as exc:
        raise DataError(f"cannot parse microdata file {path}: {exc}") from exc
    missing = [v.name for v in keyspace.variables if v.name not in frame.columns]
    if missing:
        raise DataError(f"{path}: missing key variable column(s) {missing}")
    rows = list(zip(*[frame[v.name].tolist() for v in keyspace.variables]))
    return MicrodataTable.from_labels(
        keyspace, rows,
        record_id=frame["record_id"].to_numpy() if "record_id" in frame else None,
        target_group=frame["target_group"].to_numpy() if "target_group" in frame else None,
        control_stratum=(
            frame["control_stratum"].to_numpy() if "control_stratum" in frame else None
        ),
    )


def write_microdata(table: MicrodataTable, path, provenance: str | None = None,
                    delimiter: str = ",") -> None:
    keyspace = table.keyspace
    header = [v.name for v in keyspace.variables] + ["record_id"]
    columns = [table.labels(v.name) for v in keyspace.variables]
    columns.append(table.record_id)
    if table.target_group is not None:
        header.append("target_group")
        columns.append(table.target_group)
    if table.control_stratum is not None:
        header.append("control_stratum")
        columns.append(table.control_stratum)
    rows = zip(*columns)
    write_dsv(path, header, rows, provenance=provenance, delimiter=delimiter)
