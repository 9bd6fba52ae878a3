import json
import re

import jsonschema
import numpy as np
import pytest
from click.testing import CliRunner

from carlo import cli
from carlo.rng import RngStream

from conftest import DATA_DIR, require_data


@pytest.fixture
def runner():
    return CliRunner()


def write_chains(path, chains):
    cli.write_trace(path, ("x",), [np.asarray(c)[:, None] for c in chains])
    return path


class TestList:
    def test_lists_registry(self, runner):
        res = runner.invoke(cli.main, ["list"])
        assert res.exit_code == 0
        lines = res.output.strip().splitlines()
        assert len(lines) >= 45
        assert any(line.startswith("ch6.challenger\t6\tchallenger\t") for line in lines)


class TestRun:
    def test_writes_outputs(self, runner, tmp_path):
        out = tmp_path / "o"
        res = runner.invoke(cli.main, ["run", "ch3.tail-chisq-25", "--out", str(out)])
        assert res.exit_code == 0, res.output
        summary = json.loads((out / "summary.json").read_text())
        jsonschema.validate(summary, cli.summary_schema())
        (est,) = summary["estimates"].values()
        assert est == pytest.approx(1.544050e-05, abs=2e-7)
        assert (out / "trace.csv").read_text().splitlines()[0].startswith("iter,chain,")
        assert list((out / "plotdata").glob("*.tsv"))

    def test_trace_precision(self, runner, tmp_path):
        out = tmp_path / "o"
        runner.invoke(cli.main, ["run", "ch6.ar1", "--n", "200", "--out", str(out)])
        rows = (out / "trace.csv").read_text().splitlines()
        assert rows[0] == "iter,chain,x"
        assert rows[1].startswith("0,0,")
        value = rows[5].split(",")[2]
        assert len(re.sub(r"[-.]|e.*", "", value).lstrip("0")) >= 15

    def test_rerun_is_byte_identical(self, runner, tmp_path):
        for d in ("a", "b"):
            runner.invoke(cli.main, ["run", "ch7.blood-groups", "--out", str(tmp_path / d), "--threads", "1" if d == "a" else "4"])
        assert (tmp_path / "a" / "trace.csv").read_bytes() == (tmp_path / "b" / "trace.csv").read_bytes()

    def test_param_override(self, runner, tmp_path):
        res = runner.invoke(cli.main, ["run", "ch6.ar1", "--n", "500", "--param", "rho=0.5", "--out", str(tmp_path)])
        assert res.exit_code == 0
        assert json.loads((tmp_path / "summary.json").read_text())["params"]["rho"] == 0.5

    def test_unknown_id(self, runner, tmp_path):
        res = runner.invoke(cli.main, ["run", "ch9.nothing", "--out", str(tmp_path)])
        assert res.exit_code == cli.EXIT_UNKNOWN_ID

    def test_missing_data(self, runner, tmp_path, monkeypatch):
        monkeypatch.delenv("CARLO_DATA_DIR", raising=False)
        res = runner.invoke(cli.main, ["run", "ch3.swiss-evidence", "--out", str(tmp_path)])
        assert res.exit_code == cli.EXIT_MISSING_DATA
        assert "CARLO_DATA_DIR" in res.output

    def test_bad_param(self, runner, tmp_path):
        res = runner.invoke(cli.main, ["run", "ch6.ar1", "--param", "nope=1", "--out", str(tmp_path)])
        assert res.exit_code == cli.EXIT_USAGE
        res = runner.invoke(cli.main, ["run", "ch6.ar1", "--param", "rho", "--out", str(tmp_path)])
        assert res.exit_code == cli.EXIT_USAGE

    def test_beta_kernel_ess(self, runner, tmp_path):
        runner.invoke(cli.main, ["run", "ch8.beta-kernel", "--n", "10000", "--out", str(tmp_path)])
        res = runner.invoke(cli.main, ["diag", str(tmp_path / "trace.csv"), "--ess"])
        assert res.exit_code == 0
        ess = float(res.output.split()[1])
        assert ess < 1000


class TestDiag:
    def test_iid_fixture(self, runner, tmp_path):
        # A fixed fixture; about one iid chain in twenty has |z| > 2, see the calibration test.
        p = write_chains(tmp_path / "t.csv", [RngStream(2, 0).normal(10000)])
        res = runner.invoke(cli.main, ["diag", str(p), "--ess", "--geweke", "--json", str(tmp_path / "d.json")])
        assert res.exit_code == 0
        rep = json.loads((tmp_path / "d.json").read_text())
        assert rep["ess"] == pytest.approx(10000, rel=0.2)
        assert abs(rep["geweke_z"][0]) < 2

    def test_psrf_three_decimals(self, runner, tmp_path):
        p = write_chains(tmp_path / "t.csv", [RngStream(1, c).normal(2000) for c in range(5)])
        res = runner.invoke(cli.main, ["diag", str(p), "--gelman"])
        assert res.exit_code == 0
        assert re.fullmatch(r"psrf\s+\d+\.\d{3}", res.output.strip())

    def test_chains_across_files(self, runner, tmp_path):
        a = write_chains(tmp_path / "a.csv", [RngStream(1, 0).normal(500)])
        b = write_chains(tmp_path / "b.csv", [RngStream(1, 1).normal(500)])
        res = runner.invoke(cli.main, ["diag", str(a), str(b), "--gelman"])
        assert res.exit_code == 0

    def test_single_chain_gelman(self, runner, tmp_path):
        p = write_chains(tmp_path / "t.csv", [RngStream(1, 0).normal(500)])
        res = runner.invoke(cli.main, ["diag", str(p), "--gelman"])
        assert res.exit_code == cli.EXIT_BAD_DIAG

    def test_bad_column_and_header(self, runner, tmp_path):
        p = write_chains(tmp_path / "t.csv", [RngStream(1, 0).normal(500)])
        assert runner.invoke(cli.main, ["diag", str(p), "--column", "y"]).exit_code == cli.EXIT_BAD_DIAG
        q = tmp_path / "q.csv"
        q.write_text("a,b\n1,2\n")
        assert runner.invoke(cli.main, ["diag", str(q)]).exit_code == cli.EXIT_BAD_DIAG

    def test_missing_file(self, runner, tmp_path):
        res = runner.invoke(cli.main, ["diag", str(tmp_path / "none.csv")])
        assert res.exit_code == cli.EXIT_MISSING_DATA


class TestIngest:
    def test_embedded_challenger(self, runner):
        from carlo.datasets import embedded_path

        res = runner.invoke(cli.main, ["ingest", str(embedded_path("challenger")), "--schema", "challenger"])
        assert res.exit_code == 0
        assert "23 rows, 2 columns" in res.output

    @require_data("swiss.csv")
    def test_swiss(self, runner):
        res = runner.invoke(cli.main, ["ingest", str(DATA_DIR / "swiss.csv"), "--schema", "swiss"])
        assert "47 rows, 6 columns" in res.output

    def test_bad_row(self, runner, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("x,y\n1,2\n3,x\n")
        res = runner.invoke(cli.main, ["ingest", str(p), "--schema", "xy_generic"])
        assert res.exit_code == cli.EXIT_USAGE
        assert "line 3" in res.output

    def test_missing(self, runner, tmp_path):
        res = runner.invoke(cli.main, ["ingest", str(tmp_path / "no.csv"), "--schema", "swiss"])
        assert res.exit_code == cli.EXIT_MISSING_DATA


class TestClean:
    def test_non_finite_to_null(self):
        assert cli._clean({"a": np.float64("nan"), "b": [np.int64(2), np.inf]}) == {"a": None, "b": [2, None]}
