"""Command-line surface: exit codes, output files, reproducibility."""

import json

import pytest

from cclab.cli import EXIT_CONFIG, EXIT_IO, EXIT_OK, EXIT_VIOLATION, main


def write_config(tmp_path, name, doc):
    p = tmp_path / name
    p.write_text(json.dumps(doc))
    return str(p)


SMALL_TRAIN = {
    "tasks": 2,
    "points_per_class": 6,
    "epochs": 3,
    "probe_epochs": 5,
}


class TestVerify:
    def test_passes_and_writes_report(self, tmp_path):
        cfg = write_config(tmp_path, "v.json", {"trials": 10, "grad_seeds": 1})
        code = main(["verify", "--config", cfg, "--out", str(tmp_path / "out")])
        assert code == EXIT_OK
        report = json.loads((tmp_path / "out" / "verify_report.json").read_text())
        assert report["failures"] == []
        assert set(report["constants"]) == {"1", "2", "5"}

    def test_sabotaged_constants_fail(self, tmp_path, capsys):
        cfg = write_config(
            tmp_path, "v.json",
            {"trials": 10, "grad_seeds": 1, "ks": [1], "alpha_corruption": -2.0},
        )
        code = main(["verify", "--config", cfg, "--out", str(tmp_path / "out")])
        assert code == EXIT_VIOLATION
        assert "FAIL" in capsys.readouterr().out


class TestConfigHandling:
    def test_unknown_key_is_config_error(self, tmp_path):
        cfg = write_config(tmp_path, "bad.json", {"no_such_option": 1})
        assert main(["train", "--config", cfg, "--out", str(tmp_path / "o")]) == EXIT_CONFIG

    def test_missing_config_is_io_error(self, tmp_path):
        code = main(["train", "--config", str(tmp_path / "nope.json"),
                     "--out", str(tmp_path / "o")])
        assert code == EXIT_IO

    def test_bad_grid_is_config_error(self, tmp_path):
        code = main(["bounds", "--out", str(tmp_path / "o"), "--grid", "oops"])
        assert code == EXIT_CONFIG

    def test_manifest_written(self, tmp_path):
        out = tmp_path / "o"
        main(["bounds", "--out", str(out), "--grid", "0.5:2:4"])
        doc = json.loads((out / "manifest.json").read_text())
        assert doc["command"] == "bounds"
        assert "config" in doc and "version" in doc


class TestTrain:
    def test_outputs(self, tmp_path):
        cfg = write_config(tmp_path, "t.json", SMALL_TRAIN)
        out = tmp_path / "out"
        assert main(["train", "--config", cfg, "--out", str(out)]) == EXIT_OK
        trace = json.loads((out / "trace.json").read_text())
        assert len(trace["records"]) == 2
        assert trace["probe"]["average_accuracy"] >= 0.0
        csv = (out / "epochs.csv").read_text().splitlines()
        assert csv[0] == "task,epoch,l_con,l_dis,lambda"
        assert len(csv) == 1 + 2 * SMALL_TRAIN["epochs"]
        assert (out / "final.ckpt").exists()
        assert (out / "final.ckpt.json").exists()

    def test_repeat_runs_bit_identical(self, tmp_path):
        cfg = write_config(tmp_path, "t.json", SMALL_TRAIN)
        a, b = tmp_path / "a", tmp_path / "b"
        main(["train", "--config", cfg, "--out", str(a)])
        main(["train", "--config", cfg, "--out", str(b)])
        assert (a / "trace.json").read_bytes() == (b / "trace.json").read_bytes()
        assert (a / "final.ckpt").read_bytes() == (b / "final.ckpt").read_bytes()

    def test_seed_flag_overrides(self, tmp_path):
        cfg = write_config(tmp_path, "t.json", SMALL_TRAIN)
        a, b = tmp_path / "a", tmp_path / "b"
        main(["train", "--config", cfg, "--out", str(a), "--seed", "1"])
        main(["train", "--config", cfg, "--out", str(b), "--seed", "2"])
        assert (a / "trace.json").read_bytes() != (b / "trace.json").read_bytes()


class TestProbe:
    def test_runs_and_reports(self, tmp_path):
        cfg = write_config(tmp_path, "p.json", SMALL_TRAIN)
        out = tmp_path / "out"
        assert main(["probe", "--config", cfg, "--out", str(out)]) == EXIT_OK
        doc = json.loads((out / "probe.json").read_text())
        assert 0.0 <= doc["average_accuracy"] <= 1.0
        lines = (out / "probe.csv").read_text().splitlines()
        assert lines[0] == "task,accuracy"
        assert len(lines) == 3

    def test_probe_from_checkpoint(self, tmp_path):
        cfg = write_config(tmp_path, "t.json", SMALL_TRAIN)
        train_out = tmp_path / "t"
        main(["train", "--config", cfg, "--out", str(train_out)])
        pcfg = write_config(
            tmp_path, "p.json",
            dict(SMALL_TRAIN, checkpoint=str(train_out / "final.ckpt")),
        )
        out = tmp_path / "p"
        assert main(["probe", "--config", pcfg, "--out", str(out)]) == EXIT_OK


class TestBounds:
    def test_outputs_and_monotone(self, tmp_path):
        out = tmp_path / "out"
        code = main(["bounds", "--out", str(out), "--grid", "0.1:5:30"])
        assert code == EXIT_OK
        lines = (out / "bounds.csv").read_text().splitlines()
        assert lines[0] == "lambda,upper,lower"
        uppers = [float(l.split(",")[1]) for l in lines[1:]]
        assert all(b <= a + 1e-9 for a, b in zip(uppers, uppers[1:]))
        tp = json.loads((out / "turning_point.json").read_text())
        assert tp["lambda_star"] == pytest.approx(1.0)

    def test_scenario_selection(self, tmp_path):
        cfg = write_config(tmp_path, "b.json", {"scenario": "example3", "T": 4})
        out = tmp_path / "out"
        assert main(["bounds", "--config", cfg, "--out", str(out),
                     "--grid", "0.5:12:24"]) == EXIT_OK
        tp = json.loads((out / "turning_point.json").read_text())
        assert tp["lambda_star"] == pytest.approx(10.0)


class TestSweep:
    def test_mode_sweep(self, tmp_path, monkeypatch):
        monkeypatch.setenv("CCL_THREADS", "2")
        cfg = write_config(
            tmp_path, "s.json",
            dict(SMALL_TRAIN, vary="mode", values=["fixed", "max"], seeds=[0]),
        )
        out = tmp_path / "out"
        assert main(["sweep", "--config", cfg, "--out", str(out)]) == EXIT_OK
        lines = (out / "sweep.csv").read_text().splitlines()
        assert lines[0] == "value,mean_accuracy,std_accuracy,n_seeds"
        assert len(lines) == 3
        assert not (out / "sweep_errors.json").exists()

    def test_invalid_vary_key(self, tmp_path):
        cfg = write_config(
            tmp_path, "s.json", dict(SMALL_TRAIN, vary="epochs")
        )
        assert main(["sweep", "--config", cfg,
                     "--out", str(tmp_path / "o")]) == EXIT_CONFIG
