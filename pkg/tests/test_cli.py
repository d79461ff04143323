"""Command-line interface: exit codes, report schema and reproducibility.

The CLI is exercised in-process through ``rmtif.cli.main`` so the tests stay
fast; byte-level determinism is asserted on the emitted files.
"""

import csv
import json

import numpy as np
import pytest

from rmtif import simulate as sm
from rmtif.cli import EXIT_ESTIMATION, EXIT_INPUT, EXIT_OK, main


@pytest.fixture(scope="module")
def wide_csv(tmp_path_factory):
    ds = sm.simulate_irt(sm.IrtScenario(n=250), seed=7)
    path = tmp_path_factory.mktemp("cli") / "irt.csv"
    Z = ds.covariate_matrix(("z1", "z2", "z1z2"))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "arm", "time_1", "time_2", "time_3",
                    "status_1", "status_2", "status_3", "z1", "z2", "z1z2"])
        for i in range(len(ds)):
            w.writerow([i, int(ds.arm[i])]
                       + [repr(float(t)) for t in ds.times[i]]
                       + [int(v) for v in ds.indicators[i]]
                       + [repr(float(v)) for v in Z[i]])
    return str(path)


def drop_column(src, dst, name):
    with open(src) as fh:
        rows = list(csv.reader(fh))
    i = rows[0].index(name)
    with open(dst, "w", newline="") as fh:
        w = csv.writer(fh)
        for row in rows:
            w.writerow(row[:i] + row[i + 1:])
    return str(dst)


class TestEstimate:
    def run(self, wide_csv, out, *extra):
        args = ["estimate", "--input", wide_csv, "--stages", "3",
                "--covariates", "z1,z2,z1z2", "--tau", "1,1.5",
                "--out", str(out)] + list(extra)
        return main(args)

    def test_report_schema(self, wide_csv, tmp_path):
        out = tmp_path / "report.json"
        code = self.run(wide_csv, out, "--k", "15", "--seed", "2")
        assert code == EXIT_OK
        report = json.loads(out.read_text())
        assert report["tool"]["name"] == "rmtif"
        assert report["command"] == "estimate"
        assert report["config"]["taus"] == [1.0, 1.5]
        assert report["config"]["jackknife"]["K"] == 15
        assert report["n_subjects"] == 250
        blocks = report["levels"]["irt"]
        assert [b["tau"] for b in blocks] == [1.0, 1.5]
        for b in blocks:
            assert b["delta"] == pytest.approx(b["xi1"] - b["xi0"],
                                               abs=1e-10)
            assert b["delta"] == pytest.approx(sum(b["stage_deltas"]),
                                               abs=1e-10)
            lo, hi = b["ci"]
            assert lo <= b["delta"] <= hi
            assert b["df"] == 14
        counts = report["flags"]["irt"]["truncation_counts"]
        assert set(counts) == {"censoring_weight", "outcome_denominator",
                               "hazard_atom"}

    def test_byte_deterministic(self, wide_csv, tmp_path):
        out1 = tmp_path / "r1.json"
        out2 = tmp_path / "r2.json"
        assert self.run(wide_csv, out1, "--k", "10", "--seed", "5") == EXIT_OK
        assert self.run(wide_csv, out2, "--k", "10", "--seed", "5") == EXIT_OK
        assert out1.read_bytes() == out2.read_bytes()

    def test_no_jackknife_omits_inference(self, wide_csv, tmp_path):
        out = tmp_path / "r.json"
        assert self.run(wide_csv, out, "--no-jackknife") == EXIT_OK
        report = json.loads(out.read_text())
        assert report["config"]["jackknife"] is None
        assert "se" not in report["levels"]["irt"][0]

    def test_km_comparator_runs(self, wide_csv, tmp_path):
        out = tmp_path / "r.json"
        assert self.run(wide_csv, out, "--estimator", "km",
                        "--no-jackknife") == EXIT_OK

    def test_bouquet_file(self, wide_csv, tmp_path):
        out = tmp_path / "r.json"
        bq = tmp_path / "bouquet.csv"
        assert self.run(wide_csv, out, "--no-jackknife",
                        "--bouquet", str(bq)) == EXIT_OK
        rows = list(csv.reader(open(bq)))
        assert rows[0] == ["tau", "xi1", "xi0", "delta",
                           "delta_q1", "delta_q2", "delta_q3"]
        assert len(rows) == 3

    def test_missing_status_column_names_it(self, wide_csv, tmp_path,
                                            capsys):
        bad = drop_column(wide_csv, tmp_path / "bad.csv", "status_2")
        assert self.run(bad, tmp_path / "r.json") == EXIT_INPUT
        assert "status_2" in capsys.readouterr().err

    def test_tau_beyond_followup(self, wide_csv, tmp_path):
        code = main(["estimate", "--input", wide_csv, "--stages", "3",
                     "--covariates", "z1,z2,z1z2", "--tau", "500",
                     "--out", str(tmp_path / "r.json")])
        assert code == EXIT_INPUT

    def test_malformed_tau_list(self, wide_csv, tmp_path):
        code = main(["estimate", "--input", wide_csv, "--stages", "3",
                     "--covariates", "z1,z2,z1z2", "--tau", "1;2",
                     "--out", str(tmp_path / "r.json")])
        assert code == EXIT_INPUT

    def test_design_mismatch(self, wide_csv, tmp_path):
        code = main(["estimate", "--input", wide_csv, "--stages", "3",
                     "--covariates", "z1,z2,z1z2", "--tau", "1",
                     "--design", "crt", "--out", str(tmp_path / "r.json")])
        assert code == EXIT_INPUT

    def test_config_file_overrides_flags(self, wide_csv, tmp_path):
        out_cfg = tmp_path / "cfg.json"
        out_cfg.write_text(json.dumps({"tau": "1", "no_jackknife": True}))
        out = tmp_path / "r.json"
        code = self.run(wide_csv, out, "--config", str(out_cfg))
        assert code == EXIT_OK
        report = json.loads(out.read_text())
        assert report["config"]["taus"] == [1.0]
        assert report["config"]["jackknife"] is None

    def test_unknown_config_key(self, wide_csv, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"bogus_key": 1}))
        assert self.run(wide_csv, tmp_path / "r.json",
                        "--config", str(cfg)) == EXIT_INPUT


class TestSimulate:
    def run(self, out, *extra):
        args = ["simulate", "--methods", "rmtif", "--reps", "2",
                "--tau", "1", "--truth-mc", "5000", "--seed", "4",
                "--no-jackknife", "--out", str(out)] + list(extra)
        return main(args)

    def test_smoke_and_determinism(self, tmp_path):
        scen = tmp_path / "scen.json"
        scen.write_text(json.dumps({"n": 120}))
        out1 = tmp_path / "m1.csv"
        out2 = tmp_path / "m2.csv"
        assert self.run(out1, "--scenario", str(scen)) == EXIT_OK
        assert self.run(out2, "--scenario", str(scen)) == EXIT_OK
        assert out1.read_bytes() == out2.read_bytes()
        rows = list(csv.reader(open(out1)))
        assert rows[0][:3] == ["method", "level", "t"]
        assert rows[1][0] == "rmtif"

    def test_unknown_method_is_input_error(self, tmp_path, capsys):
        code = main(["simulate", "--methods", "nope", "--reps", "2",
                     "--out", str(tmp_path / "m.csv")])
        assert code == EXIT_INPUT
        assert "valid" in capsys.readouterr().err

    def test_unknown_scenario_field(self, tmp_path):
        scen = tmp_path / "scen.json"
        scen.write_text(json.dumps({"sample_size": 10}))
        assert self.run(tmp_path / "m.csv",
                        "--scenario", str(scen)) == EXIT_INPUT


class TestTruth:
    def test_writes_versioned_table(self, tmp_path):
        out = tmp_path / "truth.csv"
        code = main(["truth", "--mc", "5000", "--tau", "1,2",
                     "--seed", "6", "--out", str(out)])
        assert code == EXIT_OK
        text = out.read_text()
        assert text.startswith("# mc_size=5000 seed=6")
        assert "np.float64" not in text

    def test_deterministic(self, tmp_path):
        a = tmp_path / "a.csv"
        b = tmp_path / "b.csv"
        for out in (a, b):
            main(["truth", "--mc", "4000", "--tau", "1", "--seed", "1",
                  "--out", str(out)])
        assert a.read_bytes() == b.read_bytes()
