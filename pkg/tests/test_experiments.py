import hashlib

import numpy as np
import pytest

from carlo import experiments as ex
from carlo.cli import write_trace
from carlo.errors import ConfigurationError, MissingDataError


def trace_digest(tmp_path, spec):
    res = ex.run(spec)
    p = tmp_path / f"{spec.id}-{spec.workers}.csv"
    write_trace(p, res.param_names, res.chains)
    return hashlib.sha256(p.read_bytes()).hexdigest()


class TestRegistry:
    def test_coverage(self):
        assert len(ex.list_experiments()) >= 45

    def test_stable_ordering(self):
        assert ex.list_experiments() == ex.list_experiments()

    def test_dataset_tags(self):
        table = {row[0]: row for row in ex.list_experiments()}
        assert "challenger" in table["ch6.challenger"][3]
        assert table["ch8.baseball"][3] == ()
        assert "pima" in table["ch8.pima-probit"][3]

    def test_ids_name_their_chapter(self):
        for id_, chapter, desc, _ in ex.list_experiments():
            assert id_.startswith(f"ch{chapter}.")
            assert desc


class TestSpec:
    def test_unknown_id(self):
        with pytest.raises(ex.UnknownExperimentError):
            ex.ExperimentSpec("ch9.nothing").resolve()

    def test_unknown_param(self):
        with pytest.raises(ConfigurationError):
            ex.ExperimentSpec("ch6.ar1", params={"bogus": 1}).resolve()

    def test_string_params_coerced(self):
        ctx = ex.ExperimentSpec("ch6.ar1", params={"rho": "0.5"}).resolve()
        assert ctx.params["rho"] == 0.5

    def test_threads_from_environment(self, monkeypatch):
        monkeypatch.setenv("CARLO_THREADS", "3")
        assert ex.ExperimentSpec("ch6.ar1").resolve().workers == 3

    def test_missing_dataset(self, monkeypatch):
        monkeypatch.delenv("CARLO_DATA_DIR", raising=False)
        with pytest.raises(MissingDataError):
            ex.run(ex.ExperimentSpec("ch8.pima-probit"))


class TestDeterminism:
    @pytest.mark.parametrize("id_", ["ch4.rb-poisson-gamma", "ch5.sg-mixture", "ch8.psrf-iid", "ch3.tail-chisq-25"])
    def test_thread_count_invariant(self, tmp_path, id_):
        digests = {trace_digest(tmp_path, ex.ExperimentSpec(id_, workers=w)) for w in (1, 4, 1)}
        assert len(digests) == 1

    def test_seed_changes_output(self, tmp_path):
        a = trace_digest(tmp_path, ex.ExperimentSpec("ch6.ar1", seed=1))
        b = trace_digest(tmp_path, ex.ExperimentSpec("ch6.ar1", seed=2))
        assert a != b


class TestResults:
    def test_tail_chisq(self):
        res = ex.run(ex.ExperimentSpec("ch3.tail-chisq-25"))
        (v,) = res.estimates.values()
        assert v == pytest.approx(1.544050e-05, abs=2e-7)

    def test_challenger_predictions(self):
        res = ex.run(ex.ExperimentSpec("ch6.challenger"))
        p = [res.estimates[f"failure_prob[{t}]"] for t in (50, 60, 70)]
        np.testing.assert_allclose(p, [0.690, 0.489, 0.266], atol=0.08)

    def test_chain_result_layout(self):
        res = ex.run(ex.ExperimentSpec("ch7.blood-groups", n=1000))
        assert res.param_names == ("pA", "pB", "pO")
        assert {"running_mean", "histogram"} <= set(res.plotdata)
        header, rows = res.plotdata["histogram"]
        assert header[0] == "bin" and np.asarray(rows).shape[1] == 2

    def test_sa_reports_each_schedule(self):
        res = ex.run(ex.ExperimentSpec("ch5.sa-mixture", replications=4))
        assert sum(k.startswith("main_mode_pct[") for k in res.estimates) >= 2
