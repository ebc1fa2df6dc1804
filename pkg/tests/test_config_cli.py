import json

import numpy as np
import pytest

from liquidpendulum import artifacts, experiment
from liquidpendulum.cli import main
from liquidpendulum.config import ConfigError, ExperimentConfig, resolve, scenario_names, schema_text
from liquidpendulum.model import state_from_phi

SMALL = """
[scenario]
name = small
mode = nonlinear
[physics]
mu = 0.1
c_body = 0.1
[cavity]
nx = 12
ny = 12
[initial]
velocity = vortex
velocity_amplitude = 0.05
omega = 0.1
[time]
dt = 0.02
horizon = 2.0
stride = 2
snapshot_stride = 25
[analysis]
spectrum_k = 10
"""


@pytest.fixture
def small_cfg(tmp_path):
    p = tmp_path / "small.ini"
    p.write_text(SMALL)
    return p


def test_defaults_and_round_trip():
    cfg = ExperimentConfig()
    assert cfg.get("physics.rho") == 1.0 and cfg["cavity"]["nx"] == 32
    again = ExperimentConfig.loads(cfg.dumps())
    assert again.values == cfg.values and again.hash == cfg.hash


def test_float_round_trip_is_exact():
    cfg = ExperimentConfig().with_value("initial.omega", 0.1 + 0.2)
    assert ExperimentConfig.loads(cfg.dumps()).get("initial.omega") == 0.1 + 0.2


def test_hash_changes_with_values():
    a = ExperimentConfig()
    assert a.hash != a.with_value("physics.mu", "0.5").hash
    assert len(a.hash) == 16


@pytest.mark.parametrize(
    "text",
    [
        "[physics]\nrho = abc\n",
        "[physics]\nviscosity = 1\n",
        "[nowhere]\nx = 1\n",
        "[scenario]\nxi = 2\n",
        "[scenario]\nmode = implicit\n",
        "[time]\ndt = -1\n",
        "[analysis]\nalpha = 2\n",
        "not an ini file",
    ],
)
def test_invalid_configs(text):
    with pytest.raises(ConfigError):
        ExperimentConfig.loads(text)


def test_shipped_scenarios_load():
    names = scenario_names()
    for required in ("xi_plus_default", "xi_minus_default", "xi_plus_smalldata", "toy_cubic3", "sweep_t0"):
        assert required in names
    for n in names:
        assert resolve(n).get("scenario.name") == n
    with pytest.raises(ConfigError):
        resolve("no_such_scenario")
    assert "[physics]" in schema_text()


def test_energy_level_scaling():
    cfg = ExperimentConfig.loads("[cavity]\nnx = 8\nny = 8\n[initial]\nomega = 1.0\nenergy_level = 0.25\n")
    s = experiment.build_system(cfg)
    st = experiment.build_initial(cfg, s)
    assert experiment.excess_energy_of(st, s) == pytest.approx(0.25, rel=1e-12)


def test_parameter_errors_become_config_errors():
    with pytest.raises(ConfigError):
        experiment.build_system(ExperimentConfig.loads("[physics]\nrho = -1\n"))


def test_csv_round_trip(tmp_path):
    recs = {"t": np.array([0.0, 0.1]), "x": np.array([1 / 3, np.nan])}
    p = tmp_path / "a.csv"
    artifacts.atomic_write(p, artifacts.csv_text(recs, ("t", "x"), "abc", "test"))
    tags, cols = artifacts.read_csv(p)
    assert tags == {"config_hash": "abc", "artifact": "test"}
    assert cols["x"][0] == 1 / 3 and np.isnan(cols["x"][1])
    bad = tmp_path / "b.csv"
    bad.write_text("t,x\n0,1\n")
    with pytest.raises(artifacts.SchemaError):
        artifacts.read_csv(bad)


def test_snapshot_round_trip(tmp_path):
    states = [state_from_phi(np.arange(5.0) * k, 0.1 * k, 0.2 * k, 1, time=k) for k in range(3)]
    p = tmp_path / "s.bin"
    artifacts.atomic_write(p, artifacts.snapshot_bytes(states, "h"))
    header, data = artifacts.read_snapshots(p)
    assert header["count"] == 3 and header["n_faces"] == 5 and header["config_hash"] == "h"
    for k, s in enumerate(states):
        assert np.array_equal(data[k], np.concatenate([[s.time, s.omega, s.phi, *s.gamma], s.v]))
    (tmp_path / "junk.bin").write_bytes(b"XXXXXXXXXXXX")
    with pytest.raises(artifacts.SchemaError):
        artifacts.read_snapshots(tmp_path / "junk.bin")


def test_simulate_writes_artifacts(tmp_path, small_cfg, capsys):
    out = tmp_path / "run"
    assert main(["simulate", "--config", str(small_cfg), "--out", str(out)]) == 0
    names = {p.name for p in out.iterdir()}
    assert {"trajectory.csv", "energy.csv", "spectrum.json", "decay.json", "manifest.json", "snapshots.bin"} <= names
    assert not any(n.endswith(".tmp") for n in names)
    man = json.loads((out / "manifest.json").read_text())
    h = ExperimentConfig.load(small_cfg).hash
    assert man["config_hash"] == h
    for f in man["files"].values():
        assert artifacts.sha256_file(out / f["name"]) == f["sha256"]
    tags, cols = artifacts.read_csv(out / "trajectory.csv")
    assert tags["config_hash"] == h and len(cols["t"]) == 51
    header, data = artifacts.read_snapshots(out / "snapshots.bin")
    assert header["count"] == data.shape[0] == 5
    capsys.readouterr()
    assert main(["audit", "--run", str(out)]) == 0
    assert json.loads(capsys.readouterr().out)["passed"]
    assert main(["compare", str(out), str(out)]) == 0
    assert json.loads(capsys.readouterr().out)["max_deviation"] == 0.0


def test_rerun_is_byte_identical(tmp_path, small_cfg):
    for d in ("a", "b"):
        assert main(["simulate", "--config", str(small_cfg), "--out", str(tmp_path / d)]) == 0
    for f in ("trajectory.csv", "energy.csv", "snapshots.bin", "spectrum.json", "decay.json"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_load_run_restores_records(tmp_path, small_cfg):
    cfg = ExperimentConfig.load(small_cfg)
    res = experiment.run_simulate(cfg, tmp_path / "r")
    tr = artifacts.load_run(tmp_path / "r")
    for c in ("omega", "kinetic", "v_alpha"):
        assert np.array_equal(tr.records[c], res.trajectory.records[c])
    assert tr.meta["dt"] == 0.02 and tr.meta["mode"] == "nonlinear"


def test_exit_codes(tmp_path, small_cfg, capsys):
    assert main(["simulate", "--config", "no_such_scenario", "--out", str(tmp_path / "x")]) == 2
    bad = tmp_path / "bad.ini"
    bad.write_text("[physics]\nrho = -1\n")
    assert main(["spectrum", "--config", str(bad), "--out", str(tmp_path / "y")]) == 2
    assert main(["audit", "--run", str(tmp_path / "missing")]) == 2
    assert main(["simulate", "--config", str(small_cfg), "--out", str(tmp_path / "z"), "--threads", "0"]) == 2
    assert main(["toy", "--config", "toy_jordan2", "--out", str(tmp_path / "j")]) == 4
    assert main(["scenarios"]) == 0
    assert "xi_plus_default" in capsys.readouterr().out


def test_solver_failure_exit_code(tmp_path):
    cfg = tmp_path / "cfl.ini"
    cfg.write_text(SMALL.replace("velocity_amplitude = 0.05", "velocity_amplitude = 50.0").replace("dt = 0.02", "dt = 0.1"))
    out = tmp_path / "cfl"
    assert main(["simulate", "--config", str(cfg), "--out", str(out)]) == 3
    # partial artifacts survive the failure
    assert json.loads((out / "manifest.json").read_text())["status"] == "failed"


def test_seed_override(tmp_path, small_cfg):
    text = SMALL.replace("velocity = vortex", "velocity = random")
    p = tmp_path / "r.ini"
    p.write_text(text)
    main(["simulate", "--config", str(p), "--out", str(tmp_path / "s1"), "--seed", "1"])
    main(["simulate", "--config", str(p), "--out", str(tmp_path / "s2"), "--seed", "2"])
    assert (tmp_path / "s1" / "trajectory.csv").read_bytes() != (tmp_path / "s2" / "trajectory.csv").read_bytes()


def test_spectrum_subcommand_minus(tmp_path, capsys):
    cfg = tmp_path / "m.ini"
    cfg.write_text("[scenario]\nxi = -1\n[cavity]\nnx = 12\nny = 12\n")
    assert main(["spectrum", "--config", str(cfg), "--out", str(tmp_path / "m")]) == 0
    assert json.loads(capsys.readouterr().out)["unstable_count"] >= 1


def test_toy_subcommand(tmp_path, capsys):
    assert main(["toy", "--config", "toy_cubic3", "--out", str(tmp_path / "t")]) == 0
    assert json.loads(capsys.readouterr().out)["passed"]
    rep = json.loads((tmp_path / "t" / "toy.json").read_text())
    assert rep["theorem1"]["classification"] == "stable"


def test_sweep_runs_in_parallel(tmp_path):
    cfg = ExperimentConfig.loads(SMALL + "\n[sweep]\nparameter = initial.omega\nvalues = 0.05 0.1\n")
    rows = experiment.sweep(cfg, tmp_path / "sw", threads=2)
    assert [r["value"] for r in rows] == [0.05, 0.1]
    assert rows[0]["excess_energy"] < rows[1]["excess_energy"]
    assert (tmp_path / "sw" / "sweep.csv").exists()


@pytest.mark.slow
def test_shipped_smalldata_scenario(tmp_path):
    out = tmp_path / "sd"
    assert main(["simulate", "--config", "xi_plus_smalldata", "--out", str(out)]) == 0
    assert {p.name for p in out.iterdir()} == {"trajectory.csv", "energy.csv", "spectrum.json", "decay.json", "manifest.json"}
