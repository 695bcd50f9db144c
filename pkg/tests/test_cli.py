"""End-to-end command-line interface tests (in-process and subprocess)."""

import json
import subprocess
import sys

import numpy as np
import pytest

from odcast.cli import main
from odcast.data import load_demand

CFG = """head = zinb
t_window = 4
k_horizon = 2
diffusion_order = 2
hidden_widths = 6,6
batch_size = 16
learning_rate = 0.01
max_epochs = 3
patience = 2
seed = 7
"""


@pytest.fixture(scope="module")
def artifacts(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    paths = {
        "data": root / "demand.odt",
        "cfg": root / "run.cfg",
        "gauss_cfg": root / "gauss.cfg",
        "model": root / "model.stz",
        "gauss_model": root / "gauss.stz",
    }
    paths["cfg"].write_text(CFG)
    paths["gauss_cfg"].write_text(CFG.replace("head = zinb",
                                              "head = gaussian"))
    assert main(["synth", "--zones", "2", "--timesteps", "150",
                 "--seed", "3", "--out", str(paths["data"])]) == 0
    assert main(["train", "--config", str(paths["cfg"]),
                 "--data", str(paths["data"]),
                 "--out", str(paths["model"])]) == 0
    assert main(["train", "--config", str(paths["gauss_cfg"]),
                 "--data", str(paths["data"]),
                 "--out", str(paths["gauss_model"])]) == 0
    return paths


class TestUsage:

    def test_no_subcommand(self, capfd):
        assert main([]) == 1
        out, err = capfd.readouterr()
        assert out == ""
        assert "subcommand" in err

    def test_unknown_flag(self, capfd):
        assert main(["synth", "--frobnicate"]) == 1
        assert capfd.readouterr().out == ""

    def test_missing_required_flag(self, capfd):
        assert main(["synth"]) == 1
        assert "--out" in capfd.readouterr().err

    def test_missing_config_named(self, tmp_path, capfd):
        missing = tmp_path / "absent.cfg"
        rc = main(["synth", "--config", str(missing),
                   "--out", str(tmp_path / "x.odt")])
        assert rc == 1
        assert "absent.cfg" in capfd.readouterr().err

    def test_help_exits_zero(self):
        with pytest.raises(SystemExit) as exc:
            main(["--help"])
        assert exc.value.code == 0


class TestSynthCommand:

    def test_writes_container_and_summary(self, tmp_path, capfd):
        out = tmp_path / "d.odt"
        rc = main(["synth", "--zones", "2", "--timesteps", "30",
                   "--out", str(out)])
        assert rc == 0
        stdout = capfd.readouterr().out
        assert "zero rate" in stdout
        tensor, graph = load_demand(out)
        assert tensor.values.shape == (4, 30)
        assert graph.num_nodes == 4

    def test_seeded_runs_are_bit_identical(self, tmp_path):
        a, b = tmp_path / "a.odt", tmp_path / "b.odt"
        for out in (a, b):
            assert main(["synth", "--zones", "2", "--timesteps", "40",
                         "--seed", "12", "--out", str(out)]) == 0
        assert a.read_bytes() == b.read_bytes()
        assert (tmp_path / "a.odt.json").read_bytes() == \
            (tmp_path / "b.odt.json").read_bytes()

    def test_seed_changes_draws(self, tmp_path):
        a, b = tmp_path / "a.odt", tmp_path / "b.odt"
        main(["synth", "--timesteps", "40", "--seed", "1", "--out", str(a)])
        main(["synth", "--timesteps", "40", "--seed", "2", "--out", str(b)])
        va = load_demand(a)[0].values
        vb = load_demand(b)[0].values
        assert np.any(va != vb)

    def test_histogram_artifact(self, tmp_path):
        out = tmp_path / "d.odt"
        hist = tmp_path / "hist.csv"
        assert main(["synth", "--timesteps", "30", "--out", str(out),
                     "--histogram", str(hist)]) == 0
        lines = hist.read_text().splitlines()
        assert lines[0] == "demand,count"
        assert len(lines) > 1

    def test_bad_seasonality_is_usage_error(self, tmp_path, capfd):
        rc = main(["synth", "--out", str(tmp_path / "d.odt"),
                   "--seasonality", "1.0,huge"])
        assert rc == 1
        assert capfd.readouterr().out == ""

    def test_out_of_domain_parameter_is_numeric_failure(self, tmp_path,
                                                        capfd):
        rc = main(["synth", "--pi", "1.5", "--out", str(tmp_path / "d.odt")])
        assert rc == 3
        out, err = capfd.readouterr()
        assert out == "" and err != ""


class TestIngestCommand:

    def fixture_files(self, tmp_path):
        zones = tmp_path / "zones.csv"
        zones.write_text("zone_id,lat,lng\na,0.0,0.0\nb,0.01,0.0\n")
        trips = tmp_path / "trips.csv"
        trips.write_text("timestamp,origin_zone,dest_zone\n"
                         "2024-01-01T00:01:00Z,a,b\n"
                         "2024-01-01T00:05:00Z,a,b\n"
                         "2024-01-01T00:20:00Z,b,a\n")
        return trips, zones

    def test_roundtrip(self, tmp_path, capfd):
        trips, zones = self.fixture_files(tmp_path)
        out = tmp_path / "d.odt"
        rc = main(["ingest", "--trips", str(trips), "--zones", str(zones),
                   "--resolution", "15", "--out", str(out)])
        assert rc == 0
        assert "3 trips" in capfd.readouterr().out
        tensor, graph = load_demand(out)
        assert tensor.values.sum() == 3
        assert tensor.values[graph.pair_index("a", "b"), 0] == 2

    def test_unknown_zone_exits_two(self, tmp_path, capfd):
        trips, zones = self.fixture_files(tmp_path)
        trips.write_text("timestamp,origin_zone,dest_zone\n"
                         "2024-01-01T00:00:00Z,a,mystery\n")
        rc = main(["ingest", "--trips", str(trips), "--zones", str(zones),
                   "--out", str(tmp_path / "d.odt")])
        assert rc == 2
        out, err = capfd.readouterr()
        assert out == ""
        assert "mystery" in err


class TestTrainCommand:

    def test_training_artifacts(self, artifacts, tmp_path, capfd):
        model = tmp_path / "m.stz"
        rc = main(["train", "--config", str(artifacts["cfg"]),
                   "--data", str(artifacts["data"]), "--out", str(model)])
        assert rc == 0
        stdout = capfd.readouterr().out
        assert "epoch 1 train" in stdout
        assert "best val" in stdout
        assert model.read_bytes()[:4] == b"STZ1"

    def test_same_config_same_bytes(self, artifacts, tmp_path):
        model = tmp_path / "again.stz"
        assert main(["train", "--config", str(artifacts["cfg"]),
                     "--data", str(artifacts["data"]),
                     "--out", str(model)]) == 0
        assert model.read_bytes() == artifacts["model"].read_bytes()

    def test_missing_data_exits_two(self, artifacts, tmp_path, capfd):
        rc = main(["train", "--config", str(artifacts["cfg"]),
                   "--data", str(tmp_path / "ghost.odt"),
                   "--out", str(tmp_path / "m.stz")])
        assert rc == 2
        assert capfd.readouterr().out == ""

    def test_bad_config_value_exits_three(self, artifacts, tmp_path, capfd):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("learning_rate = -1.0\n")
        rc = main(["train", "--config", str(cfg),
                   "--data", str(artifacts["data"]),
                   "--out", str(tmp_path / "m.stz")])
        assert rc == 3
        assert capfd.readouterr().out == ""


class TestEvaluateCommand:

    def test_table_and_artifacts(self, artifacts, tmp_path, capfd):
        report = tmp_path / "report.json"
        per_node = tmp_path / "nodes.csv"
        rc = main(["evaluate", "--data", str(artifacts["data"]),
                   "--model", str(artifacts["model"]),
                   "--report", str(report), "--per-node", str(per_node)])
        assert rc == 0
        stdout = capfd.readouterr().out
        assert "mae_mean" in stdout and "f1_median" in stdout

        payload = json.loads(report.read_text())
        assert set(payload) == {"mae_mean", "mae_median", "mpiw", "kl_mean",
                                "kl_median", "true_zero_rate_mean",
                                "true_zero_rate_median", "f1_mean",
                                "f1_median"}
        assert payload["mpiw"] >= 0.0

        lines = per_node.read_text().splitlines()
        assert lines[0] == "node_id,mean_demand,mpiw"
        assert len(lines) == 1 + 4
        first = lines[1].split(",")
        assert first[0] == "0"
        float(first[1]), float(first[2])

    def test_report_rendering_roundtrip(self, artifacts, tmp_path, capfd):
        report = tmp_path / "report.json"
        main(["evaluate", "--data", str(artifacts["data"]),
              "--model", str(artifacts["model"]), "--report", str(report)])
        capfd.readouterr()
        assert main(["report", "--json", str(report)]) == 0
        stdout = capfd.readouterr().out
        assert "true_zero_rate_median" in stdout

    def test_report_rejects_foreign_json(self, tmp_path, capfd):
        path = tmp_path / "other.json"
        path.write_text("{\"accuracy\": 1.0}")
        assert main(["report", "--json", str(path)]) == 2
        assert capfd.readouterr().out == ""

    def test_report_rejects_invalid_json(self, tmp_path, capfd):
        path = tmp_path / "broken.json"
        path.write_text("{not json")
        assert main(["report", "--json", str(path)]) == 2
        assert capfd.readouterr().out == ""


class TestPredictCommand:

    def test_forecast_and_pi_map(self, artifacts, tmp_path, capfd):
        forecast = tmp_path / "forecast.csv"
        pi_map = tmp_path / "pi.csv"
        rc = main(["predict", "--data", str(artifacts["data"]),
                   "--model", str(artifacts["model"]),
                   "--out", str(forecast), "--emit-pi", str(pi_map)])
        assert rc == 0
        assert "horizon 2" in capfd.readouterr().out

        lines = pi_map.read_text().splitlines()
        assert lines[0] == "node_id,origin_zone,dest_zone,step,pi"
        assert len(lines) == 1 + 4 * 2
        node, origin, dest, step, pi = lines[1].split(",")
        assert (node, origin, dest, step) == ("0", "z0", "z0", "1")
        assert 0.0 < float(pi) < 1.0

        rows = forecast.read_text().splitlines()
        assert rows[0] == ("node_id,origin_zone,dest_zone,step,"
                           "mean,median,lower,upper")
        assert len(rows) == 1 + 4 * 2
        cells = rows[1].split(",")
        assert float(cells[6]) <= float(cells[5]) <= float(cells[7])

    def test_emit_pi_needs_zero_inflated_head(self, artifacts, tmp_path,
                                              capfd):
        rc = main(["predict", "--data", str(artifacts["data"]),
                   "--model", str(artifacts["gauss_model"]),
                   "--emit-pi", str(tmp_path / "pi.csv")])
        assert rc == 2
        out, err = capfd.readouterr()
        assert out == ""
        assert "gaussian" in err


class TestInstalledEntryPoint:

    def test_subprocess_smoke(self, tmp_path):
        out = tmp_path / "d.odt"
        proc = subprocess.run(
            [sys.executable, "-m", "odcast.cli", "synth", "--zones", "2",
             "--timesteps", "20", "--out", str(out)],
            capture_output=True, text=True)
        assert proc.returncode == 0
        assert proc.stderr == ""
        assert "zero rate" in proc.stdout
        assert out.exists()
