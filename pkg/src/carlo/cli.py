"""Command-line entry point: ``carlo list | run | diag | ingest``.

Exit codes: 0 success, 1 invalid arguments, 2 missing data, 3 unknown
experiment id, 4 invalid diagnostics request.
"""

from __future__ import annotations

import csv
import json
import math
import sys
import time
from importlib import resources
from pathlib import Path

import click
import jsonschema
import numpy as np

from . import diagnostics as dg
from . import experiments as ex
from .datasets import SCHEMAS, ingest_csv
from .errors import CarloError, ConfigurationError, IngestionError, MissingDataError

EXIT_OK, EXIT_USAGE, EXIT_MISSING_DATA, EXIT_UNKNOWN_ID, EXIT_BAD_DIAG = 0, 1, 2, 3, 4


def _fail(message: str, code: int):
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def summary_schema() -> dict:
    return json.loads((resources.files("carlo") / "data" / "summary.schema.json").read_text())


def _clean(obj):
    """Turn numpy values into JSON types; non-finite floats become null."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def write_trace(path: Path, names, chains) -> None:
    """Write ``iter,chain,<names>`` rows with 17 significant digits."""
    with path.open("w", newline="") as fh:
        fh.write(",".join(("iter", "chain", *names)) + "\n")
        for c, states in enumerate(chains):
            states = np.asarray(states, dtype=float).reshape(len(states), -1)
            idx = np.arange(states.shape[0])
            block = np.column_stack([idx, np.full(idx.size, c), states])
            np.savetxt(fh, block, fmt=["%d", "%d"] + ["%.17g"] * states.shape[1], delimiter=",")


def write_plotdata(directory: Path, plotdata: dict) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    for name, (header, rows) in plotdata.items():
        with (directory / f"{name}.tsv").open("w", newline="") as fh:
            fh.write("\t".join(header) + "\n")
            np.savetxt(fh, np.asarray(rows, dtype=float), fmt="%.10g", delimiter="\t")


def read_traces(paths) -> tuple[tuple, list]:
    """Read trace files and return the parameter names and one array per chain."""
    names, chains = None, []
    for p in paths:
        with open(p, newline="") as fh:
            header = next(csv.reader(fh))
        if header[:2] != ["iter", "chain"]:
            raise IngestionError(f"{p}: line 1: header must start with iter,chain")
        data = np.loadtxt(p, delimiter=",", skiprows=1, ndmin=2)
        if names is None:
            names = tuple(header[2:])
        elif tuple(header[2:]) != names:
            raise IngestionError(f"{p}: parameter columns differ from {names}")
        ids = data[:, 1].astype(int)
        for c in np.unique(ids):
            chains.append(data[ids == c, 2:])
    return names, chains


@click.group()
def main():
    """Monte Carlo experiments, samplers and convergence diagnostics."""


@main.command("list")
def list_cmd():
    """List registered experiments."""
    for id_, chapter, desc, data in ex.list_experiments():
        tags = ",".join(data) if data else "-"
        click.echo(f"{id_}\t{chapter}\t{tags}\t{desc}")


@main.command("run")
@click.argument("experiment_id")
@click.option("--seed", type=int, default=1, show_default=True)
@click.option("--n", "n", type=int, default=None, help="Sample size or chain length.")
@click.option("--reps", type=int, default=None, help="Number of replications.")
@click.option("--param", "params", multiple=True, help="Parameter override k=v (repeatable).")
@click.option("--out", "out_dir", type=click.Path(file_okay=False), default=None, help="Output directory.")
@click.option("--threads", type=int, default=None, help="Worker threads (default $CARLO_THREADS or CPU count).")
def run_cmd(experiment_id, seed, n, reps, params, out_dir, threads):
    """Run an experiment and write trace.csv, summary.json and plotdata/."""
    overrides = {}
    for kv in params:
        if "=" not in kv:
            _fail(f"--param expects k=v, got {kv!r}", EXIT_USAGE)
        k, v = kv.split("=", 1)
        overrides[k.strip()] = v.strip()
    out = Path(out_dir or f"out/{experiment_id}")
    spec = ex.ExperimentSpec(experiment_id, seed, n, reps, overrides, str(out), threads)
    try:
        ctx = spec.resolve()
        t0 = time.perf_counter()
        result = ex.run(spec)
        wall = time.perf_counter() - t0
    except ex.UnknownExperimentError:
        _fail(f"unknown experiment id {experiment_id!r}; see `carlo list`", EXIT_UNKNOWN_ID)
    except MissingDataError as e:
        _fail(str(e), EXIT_MISSING_DATA)
    except IngestionError as e:
        _fail(str(e), EXIT_MISSING_DATA)
    except CarloError as e:
        _fail(str(e), EXIT_USAGE)
    out.mkdir(parents=True, exist_ok=True)
    write_trace(out / "trace.csv", result.param_names, result.chains)
    write_plotdata(out / "plotdata", result.plotdata)
    summary = _clean({
        "id": experiment_id, "seed": seed, "n": ctx.n, "replications": ctx.reps, "params": ctx.params,
        "estimates": result.estimates, "standard_errors": result.ses, "acceptance_rates": result.acceptance,
        "diagnostics": result.diagnostics, "extra": result.extra, "wall_time_seconds": wall, "threads": ctx.workers,
    })
    jsonschema.validate(summary, summary_schema())
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    for k, v in result.estimates.items():
        click.echo(f"{k}\t{v:.6g}")
    click.echo(f"wrote {out}")


@main.command("diag")
@click.argument("traces", nargs=-1, required=True, type=click.Path(dir_okay=False))
@click.option("--ess", is_flag=True, help="Effective sample size (summed over chains).")
@click.option("--geweke", is_flag=True, help="Geweke z of each chain.")
@click.option("--gelman", is_flag=True, help="Potential scale reduction factor (needs two or more chains).")
@click.option("--ks", is_flag=True, help="Final half-versus-half KS p-value of each chain.")
@click.option("--column", default=None, help="Parameter column (default: the first).")
@click.option("--json", "json_path", type=click.Path(dir_okay=False), default=None, help="Also write the results as JSON.")
def diag_cmd(traces, ess, geweke, gelman, ks, column, json_path):
    """Run diagnostics on one or more trace files."""
    try:
        names, chains = read_traces(traces)
    except FileNotFoundError as e:
        _fail(str(e), EXIT_MISSING_DATA)
    except (IngestionError, ValueError) as e:
        _fail(str(e), EXIT_BAD_DIAG)
    col = column or names[0]
    if col not in names:
        _fail(f"no column {col!r} in {names}", EXIT_BAD_DIAG)
    j = names.index(col)
    xs = [c[:, j] for c in chains]
    if gelman and len(xs) < 2:
        _fail("--gelman needs at least two chains", EXIT_BAD_DIAG)
    if not (ess or geweke or gelman or ks):
        ess = geweke = True
        gelman = len(xs) > 1
    report = {"column": col, "chains": len(xs), "n": [int(x.size) for x in xs]}
    try:
        if ess:
            report["ess"] = float(sum(dg.ess_autocorr(x) for x in xs))
            click.echo(f"{'ess':<8}{report['ess']:12.1f}   n={sum(report['n'])}")
        if geweke:
            report["geweke_z"] = [dg.geweke_z(x) for x in xs]
            for i, z in enumerate(report["geweke_z"]):
                click.echo(f"{'geweke':<8}{z:12.3f}   chain={i}")
        if gelman:
            report["psrf"] = dg.gelman_rubin_psrf(xs)
            click.echo(f"{'psrf':<8}{report['psrf']:12.3f}")
        if ks:
            report["ks_p"] = [float(dg.ks_half_trajectory(x, checkpoints=1)[-1, 1]) for x in xs]
            for i, p in enumerate(report["ks_p"]):
                click.echo(f"{'ks_p':<8}{p:12.4f}   chain={i}")
    except CarloError as e:
        _fail(str(e), EXIT_BAD_DIAG)
    if json_path:
        Path(json_path).write_text(json.dumps(_clean(report), indent=2, sort_keys=True) + "\n")


@main.command("ingest")
@click.argument("path", type=click.Path(dir_okay=False))
@click.option("--schema", type=click.Choice(sorted(SCHEMAS)), required=True)
def ingest_cmd(path, schema):
    """Check a CSV file against a schema and report its shape."""
    try:
        d = ingest_csv(path, schema)
    except MissingDataError as e:
        _fail(str(e), EXIT_MISSING_DATA)
    except IngestionError as e:
        _fail(str(e), EXIT_USAGE)
    click.echo(f"{schema}: {d.n_rows} rows, {d.n_cols} columns")
    for name, col in d.columns.items():
        click.echo(f"  {name}\tmean={col.mean():.6g}")


if __name__ == "__main__":
    main()
