"""Embedded datasets and schema-checked CSV ingestion.

Small datasets ship with the package. Pima and swiss are read from the
directory named by ``CARLO_DATA_DIR``.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import IngestionError, MissingDataError

DATA_DIR_ENV = "CARLO_DATA_DIR"

BASEBALL = np.array([
    0.395, 0.375, 0.355, 0.334, 0.313, 0.313, 0.291, 0.269, 0.247,
    0.247, 0.224, 0.224, 0.224, 0.224, 0.224, 0.200, 0.175, 0.148,
])
CENSORED_SAMPLE = np.array([
    3.64, 2.78, 2.91, 2.85, 2.54, 2.62, 3.16, 2.21, 4.05, 2.19,
    2.97, 4.32, 3.56, 3.39, 3.59, 4.13, 4.21, 1.68, 3.88, 4.33,
])
CENSORED_TOTAL = 30
CENSORING_POINT = 3.5
BLOOD_COUNTS = (186, 38, 13, 284)
LINKAGE_COUNTS = (58, 12, 9, 13)
EXP_MIXTURE_SAMPLE = np.array([0.12, 0.17, 0.32, 0.56, 0.98, 1.03, 1.10, 1.18, 1.23, 1.67, 1.68, 2.33])
TRUNCATED_POISSON = {"sum_uncensored": 313, "n_obs": 360, "n_censored": 13}


@dataclass(frozen=True)
class Schema:
    """Required columns and their types; ``aliases`` maps alternative headers to required names."""

    name: str
    columns: tuple
    types: tuple
    aliases: tuple = ()
    n_columns: int | None = None


SCHEMAS = {
    "challenger": Schema("challenger", ("failures", "temperature"), ("binary", "float"),
                         (("oring", "failures"), ("temp", "temperature")), 2),
    "pima": Schema("pima", ("ped", "type"), ("float", "yesno")),
    "swiss": Schema("swiss", ("Fertility", "Agriculture", "Examination", "Education", "Catholic", "Infant.Mortality"),
                    ("float",) * 6, (), 6),
    "xy_generic": Schema("xy_generic", ("x", "y"), ("float", "float"), (("speed", "x"), ("dist", "y")), 2),
}

_NA = {"", "na", "nan", "null"}


@dataclass
class Dataset:
    """Typed columns read from a CSV file."""

    schema: str
    columns: dict
    source: str

    @property
    def n_rows(self) -> int:
        return len(next(iter(self.columns.values())))

    @property
    def n_cols(self) -> int:
        return len(self.columns)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.columns[name]


def _convert(value: str, kind: str, line: int, col: str):
    v = value.strip()
    if v.lower() in _NA:
        raise IngestionError(f"line {line}: missing value in column {col!r}")
    try:
        if kind == "yesno":
            if v not in ("Yes", "No"):
                raise ValueError
            return 1.0 if v == "Yes" else 0.0
        x = float(v)
        if kind == "binary" and x not in (0.0, 1.0):
            raise ValueError
        return x
    except ValueError:
        raise IngestionError(f"line {line}: cannot read {value!r} as {kind} in column {col!r}") from None


def ingest_csv(path, schema: str) -> Dataset:
    """Read ``path`` and check it against ``schema``.

    A first column with an empty header (row names written by R) is
    dropped. Required columns are typed; any other column is kept as float
    when every entry parses and is dropped otherwise. Missing values are
    rejected.

    Raises
    ------
    MissingDataError
        If the file does not exist.
    IngestionError
        If the header lacks a required column or a row is malformed; the
        message names the offending line.
    """
    if schema not in SCHEMAS:
        raise IngestionError(f"unknown schema {schema!r}; choose from {sorted(SCHEMAS)}")
    sc = SCHEMAS[schema]
    p = Path(path)
    if not p.is_file():
        raise MissingDataError(f"data file not found: {p}")
    with p.open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise IngestionError("line 1: empty file")
    header = [h.strip() for h in rows[0]]
    drop_first = header[0] == ""
    if drop_first:
        header = header[1:]
    alias = dict(sc.aliases)
    header = [alias.get(h, h) for h in header]
    missing = [c for c in sc.columns if c not in header]
    if missing:
        raise IngestionError(f"line 1: header lacks required columns {missing}")
    if sc.n_columns is not None and len(header) != sc.n_columns:
        raise IngestionError(f"line 1: expected {sc.n_columns} columns, found {len(header)}")
    kinds = dict(zip(sc.columns, sc.types))
    cols: dict[str, list] = {h: [] for h in header}
    extra_ok = {h: True for h in header if h not in kinds}
    for i, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if drop_first:
            row = row[1:]
        if len(row) != len(header):
            raise IngestionError(f"line {i}: expected {len(header)} fields, found {len(row)}")
        for h, v in zip(header, row):
            if h in kinds:
                cols[h].append(_convert(v, kinds[h], i, h))
            elif extra_ok[h]:
                try:
                    cols[h].append(float(v))
                except ValueError:
                    extra_ok[h] = False
    if not cols[sc.columns[0]]:
        raise IngestionError("line 2: no data rows")
    out = {h: np.asarray(v, dtype=float) for h, v in cols.items() if h in kinds or extra_ok[h]}
    return Dataset(schema, out, str(p))


def embedded_path(name: str) -> Path:
    """Path of a CSV shipped with the package (``challenger`` or ``cars``)."""
    return Path(str(resources.files("carlo") / "data" / f"{name}.csv"))


def challenger() -> Dataset:
    """The 23 pre-accident shuttle flights: O-ring failure indicator and launch temperature."""
    return ingest_csv(embedded_path("challenger"), "challenger")


def cars() -> Dataset:
    """The 50-car stopping-distance data (speed in mph, distance in ft)."""
    return ingest_csv(embedded_path("cars"), "xy_generic")


# Schema and file name of each external dataset.
EXTERNAL = {"pima": ("pima", "Pima.tr.csv"), "swiss": ("swiss", "swiss.csv")}


def external(tag: str) -> Dataset:
    """Load an external dataset from ``$CARLO_DATA_DIR``.

    Raises
    ------
    MissingDataError
        If the variable is unset or the file is absent.
    """
    schema, fname = EXTERNAL[tag]
    root = os.environ.get(DATA_DIR_ENV)
    if not root:
        raise MissingDataError(f"dataset {tag!r} needs {DATA_DIR_ENV} pointing at a directory holding {fname}")
    return ingest_csv(Path(root) / fname, schema)


def available(tag: str) -> bool:
    """Whether dataset ``tag`` can be loaded."""
    if tag not in EXTERNAL:
        return True
    root = os.environ.get(DATA_DIR_ENV)
    return bool(root) and (Path(root) / EXTERNAL[tag][1]).is_file()
