import json
import subprocess
import sys

import numpy as np
import pytest

from grassrisk.cli import main

FAST = ["--no-threshold", "--restarts", "4"]


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


class TestAnalyze:
    def test_five_dims(self, capsys):
        code, out, _ = run(capsys, "analyze", "--eigenvalues", "3,2,1,0.5,0.25", "-k", "2", *FAST)
        assert code == 0
        rep = json.loads(out)
        assert rep["law"]["mean_h_sq"] == pytest.approx(5.3251, abs=1e-4)
        assert rep["law"]["tau_sq"] == pytest.approx(2.0)
        assert rep["nonasymptotic_bound"]["bound"] == pytest.approx(0.3994, abs=1e-4)
        assert rep["variance_params"]["v_big"] == pytest.approx(rep["variance_params"]["closed_form"]["v_big"])
        assert rep["command"] == "analyze" and rep["seed"] == 0 and "timestamp" in rep

    def test_byte_identical_without_timestamp(self, capsys):
        argv = ["analyze", "--eigenvalues", "2,1", "-k", "1", "--no-timestamp", *FAST]
        assert run(capsys, *argv)[1] == run(capsys, *argv)[1]

    def test_no_gap(self, capsys):
        code, out, err = run(capsys, "analyze", "--eigenvalues", "1,1,0.5", "-k", "1", *FAST)
        assert code == 2 and out == ""
        assert "NoEigengap" in err

    def test_missing_model(self, capsys):
        assert run(capsys, "analyze", "-k", "1")[0] == 2

    def test_config_and_out_file(self, capsys, tmp_path):
        (tmp_path / "m.json").write_text(json.dumps({"kind": "gaussian", "eigenvalues": [2, 1]}))
        code, out, _ = run(capsys, "analyze", "--config", str(tmp_path / "m.json"), "-k", "1",
                           "--out", str(tmp_path / "r.json"), *FAST)
        assert code == 0 and out == ""
        assert json.loads((tmp_path / "r.json").read_text())["law"]["mean_h_sq"] == pytest.approx(2.0)

    def test_dataset(self, capsys, tmp_path):
        X = np.random.default_rng(0).standard_normal((300, 3)) * [2.0, 1.0, 0.5]
        np.savetxt(tmp_path / "x.csv", X, delimiter=",")
        code, out, _ = run(capsys, "analyze", "--data", str(tmp_path / "x.csv"), "-k", "1", *FAST)
        assert code == 0
        assert json.loads(out)["model"]["tensor_source"] == "empirical"

    def test_bad_file(self, capsys, tmp_path):
        (tmp_path / "r.csv").write_text("1,2\n3\n")
        assert run(capsys, "analyze", "--data", str(tmp_path / "r.csv"), "-k", "1", *FAST)[0] == 2

    def test_csv_format(self, capsys):
        code, out, _ = run(capsys, "analyze", "--eigenvalues", "2,1", "-k", "1", "--format", "csv", *FAST)
        lines = out.strip().splitlines()
        assert code == 0 and lines[0] == "key,value"
        assert any(l.startswith("law.mean_h_sq,") for l in lines)


class TestSimulate:
    def test_summary(self, capsys):
        code, out, _ = run(capsys, "simulate", "--eigenvalues", "2,1", "-k", "1", "--n", "500",
                           "--trials", "150", "--seed", "4", "--jobs", "1")
        assert code == 0
        sim = json.loads(out)["simulation"]
        assert sim["trials"] == 150 and sim["clt"]["n_used"] == 150
        assert len(sim["quantiles"]) == 4

    def test_csv_rows(self, capsys):
        code, out, _ = run(capsys, "simulate", "--eigenvalues", "2,1", "-k", "1", "--n", "50",
                           "--trials", "7", "--format", "csv", "--jobs", "1")
        lines = out.strip().splitlines()
        assert code == 0 and len(lines) == 8
        assert lines[0] == "trial,dist,excess,max_angle,projector_p2_sq"

    def test_jobs_and_env_seed(self, capsys, monkeypatch):
        base = ["simulate", "--eigenvalues", "2,1", "-k", "1", "--n", "80", "--trials", "20", "--no-timestamp"]
        monkeypatch.setenv("GRASSRISK_SEED", "11")
        a = json.loads(run(capsys, *base, "--jobs", "1")[1])
        b = json.loads(run(capsys, *base, "--jobs", "3")[1])
        c = json.loads(run(capsys, *base, "--jobs", "1", "--seed", "11")[1])
        assert a["seed"] == 11
        assert a["simulation"] == b["simulation"] == c["simulation"]

    @pytest.mark.parametrize("flag", [["--trials", "0"], ["--n", "0"]])
    def test_invalid_counts(self, capsys, flag):
        assert run(capsys, "simulate", "--eigenvalues", "2,1", "-k", "1", *flag)[0] == 2


class TestUsage:
    def test_unknown_flag(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["analyze", "--eigenvalues", "2,1", "-k", "1", "--frobnicate"])
        assert exc.value.code == 2

    def test_tol_outside_verify(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["analyze", "--eigenvalues", "2,1", "-k", "1", "--tol", "margin=1"])
        assert exc.value.code == 2

    def test_unknown_tolerance(self, capsys):
        assert run(capsys, "verify", "--trials", "2", "--tol", "nonsense=1")[0] == 2

    def test_module_entry_point(self):
        res = subprocess.run([sys.executable, "-m", "grassrisk", "--version"], capture_output=True, text=True)
        assert res.returncode == 0 and res.stdout.startswith("grassrisk ")


class TestVerify:
    def test_small_run(self, capsys):
        code, out, _ = run(capsys, "verify", "--trials", "20", "--no-timestamp")
        rep = json.loads(out)
        assert code == 0 and rep["passed"]
        assert [s["suite"] for s in rep["suites"]] == ["geometry", "concordance"]

    def test_impossible_tolerance_exits_nonzero(self, capsys):
        code, out, _ = run(capsys, "verify", "--trials", "5", "--tol", "third_bound=-1e9")
        assert code == 3 and not json.loads(out)["passed"]


class TestSpikedAndGraph:
    def test_spiked(self, capsys):
        code, out, _ = run(capsys, "spiked", "--eta", "4,2", "--sigma", "1", "--d", "6", *FAST)
        rep = json.loads(out)
        assert code == 0
        assert rep["reference_formulas"]["g_variance"] == pytest.approx([1.0625, 1.25])
        assert rep["law"]["mean_h_sq"] == pytest.approx(4 * (5 / 4 + 3 / 2))

    def test_spiked_invalid(self, capsys):
        assert run(capsys, "spiked", "--eta", "2,4", "--sigma", "1", "--d", "6", *FAST)[0] == 2

    def test_graph(self, capsys, tmp_path):
        W = [[0, 3, 1, 0], [3, 0, 2, 1], [1, 2, 0, 4], [0, 1, 4, 0]]
        (tmp_path / "w.json").write_text(json.dumps(W))
        code, out, _ = run(capsys, "graph", "--weights", str(tmp_path / "w.json"), "-k", "1",
                           "--trials", "10", "--n", "1000", "--jobs", "1", *FAST)
        rep = json.loads(out)
        assert code == 0 and rep["variance_params"] is None
        assert rep["simulation"]["trials"] == 10

    def test_graph_invalid(self, capsys, tmp_path):
        (tmp_path / "w.json").write_text(json.dumps([[0, 1], [2, 0]]))
        assert run(capsys, "graph", "--weights", str(tmp_path / "w.json"), "-k", "1", *FAST)[0] == 2
