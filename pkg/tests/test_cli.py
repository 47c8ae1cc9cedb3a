import json

import pytest

from lagrangian_lwr.cli import EXIT_ERROR, EXIT_INCOMPATIBLE, EXIT_OK, field_from_manifest, main
from lagrangian_lwr.conditions import InternalCondition, build_initial, build_upstream, dump_manifest
from lagrangian_lwr.solver import read_grid_csv


@pytest.fixture(scope="module")
def synth_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("synth")
    assert main(["synth", "--scenario", "free-flow", "--out", str(out), "--nt", "11", "--nn", "21", "--evaluate"]) == EXIT_OK
    return out


@pytest.fixture(scope="module")
def estimate_dir(synth_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("est")
    argv = [
        "estimate",
        "--config", str(synth_dir / "config.yaml"),
        "--probes", str(synth_dir / "probes.csv"),
        "--detector", str(synth_dir / "detector.csv"),
        "--out", str(out),
        "--strict",
    ]
    assert main(argv) == EXIT_OK
    return out


class TestSynth:
    def test_outputs(self, synth_dir):
        for name in ("probes.csv", "detector.csv", "config.yaml", "truth_conditions.json", "truth_grid.csv", "manifest.json"):
            assert (synth_dir / name).exists()
        rep = json.loads((synth_dir / "holdout_report.json").read_text())
        assert rep["pass_fraction"] == 1.0
        man = json.loads((synth_dir / "manifest.json").read_text())
        assert man["command"] == "synth" and len(man["config_hash"]) == 64

    def test_unknown_scenario(self, tmp_path):
        assert main(["synth", "--scenario", "nope", "--out", str(tmp_path)]) == EXIT_ERROR


class TestEstimate:
    def test_outputs(self, estimate_dir):
        man = json.loads((estimate_dir / "manifest.json").read_text())
        assert set(man["outputs"]) == {"grid", "conditions", "labels", "trajectories", "velocity", "audit"}
        assert all(len(v["sha256"]) == 64 for v in man["inputs"].values())
        t, n, X = read_grid_csv(estimate_dir / "grid.csv")
        assert X.shape == (len(t), len(n))
        assert json.loads((estimate_dir / "audit.json").read_text())["compatible"]

    def test_missing_input(self, synth_dir, tmp_path):
        argv = ["estimate", "--config", str(synth_dir / "config.yaml"), "--probes", str(tmp_path / "none.csv"),
                "--detector", str(synth_dir / "detector.csv"), "--out", str(tmp_path)]
        assert main(argv) == EXIT_ERROR

    def test_bad_config(self, synth_dir, tmp_path):
        (tmp_path / "c.yaml").write_text("domain: {T: 10}\n")
        argv = ["estimate", "--config", str(tmp_path / "c.yaml"), "--probes", str(synth_dir / "probes.csv"),
                "--detector", str(synth_dir / "detector.csv"), "--out", str(tmp_path)]
        assert main(argv) == EXIT_ERROR


class TestFieldCommands:
    def test_travel_time(self, estimate_dir, tmp_path, capsys):
        out = tmp_path / "tt.json"
        argv = ["travel-time", "--field", str(estimate_dir / "conditions.json"), "--label", "0",
                "--x-from", "0", "--x-to", "1575", "--out", str(out)]
        assert main(argv) == EXIT_OK
        assert json.loads(out.read_text())["travel_time_s"] == pytest.approx(50.0, abs=1e-6)

    def test_travel_time_unreached(self, estimate_dir):
        argv = ["travel-time", "--field", str(estimate_dir / "conditions.json"), "--label", "0",
                "--x-from", "0", "--x-to", "1e6"]
        assert main(argv) == EXIT_ERROR

    def test_validate_compatible(self, estimate_dir):
        assert main(["validate", "--field", str(estimate_dir / "conditions.json"), "--strict"]) == EXIT_OK

    def test_validate_incompatible(self, diagram, tmp_path):
        conds = [
            build_upstream(0, 0, [0, 100], [10]),
            build_initial(0, 0, [0, 50], [10]),
            InternalCondition(beta=-200, alpha=31.0, t_min=0, t_max=60, n_min=20),
        ]
        path = tmp_path / "m.json"
        dump_manifest(conds, path, diagram=diagram.to_dict(), domain={"T": 100, "N1": 0, "N2": 50})
        assert field_from_manifest(path).T == 100
        assert main(["validate", "--field", str(path)]) == EXIT_OK
        assert main(["validate", "--field", str(path), "--strict", "--out", str(tmp_path / "a.json")]) == EXIT_INCOMPATIBLE
        assert json.loads((tmp_path / "a.json").read_text())["incompatible_conditions"] == [2]

    def test_manifest_without_domain(self, tmp_path):
        path = tmp_path / "m.json"
        dump_manifest([build_initial(0, 0, [0, 5], [10])], path)
        assert main(["validate", "--field", str(path)]) == EXIT_ERROR


class TestOracleDiff:
    def test_single_scenario(self, tmp_path):
        out = tmp_path / "od.json"
        argv = ["oracle-diff", "--scenario", "riemann-contact", "--dn", "2", "1", "--out", str(out), "--out-dir", str(tmp_path)]
        assert main(argv) == EXIT_OK
        rep = json.loads(out.read_text())["riemann-contact"]
        assert rep["min_order"] >= 0.8
        assert (tmp_path / "riemann-contact_upwind.csv").exists()

    def test_unknown(self):
        assert main(["oracle-diff", "--scenario", "nope"]) == EXIT_ERROR


def test_version(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--version"])
    assert exc.value.code == 0
    assert "0.1.0" in capsys.readouterr().out
