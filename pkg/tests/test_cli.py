"""Configuration parsing, presets, manifests, exit codes and output files."""
import csv
import json

import pytest
import tomli

from spsemi.cli import main
from spsemi.config import (
    ConfigError,
    RunConfig,
    build_scenario,
    dump_manifest,
    load_config,
    load_preset,
    parse_config,
    preset_names,
)
from spsemi.spectral import read_field_dump

SMALL_1D = """
seed = 3
[scenario]
name = "small"
dim = 1
n = 16
doping = [{mode = [1], re = 0.1}, {mode = [-1], re = 0.1}]
a0 = [{mode = [0], re = 1.0}, {mode = [1], re = 0.05}, {mode = [-1], re = 0.05}]
phi0 = [{mode = [1], im = -0.05}, {mode = [-1], im = 0.05}]

[solver]
eps_list = [0.4, 0.2, 0.1, 0.05]
T = 0.5
dt = 0.01
output_stride = 10
"""

SHOCK_1D = """
[scenario]
dim = 1
n = 16
q = 0.0
a0 = [{mode = [0], re = 1.0}]
phi0 = [{mode = [1], im = -2.0}, {mode = [-1], im = 2.0}]

[solver]
eps = 0.0
T = 2.0
dt = 0.01
ceiling = 100.0
"""


def write(tmp_path, text, name="run.toml"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def read_csv(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


class TestConfig:
    def test_defaults(self):
        cfg = parse_config({})
        assert cfg == RunConfig()
        assert cfg.scenario.dim == 3 and cfg.seed == 0

    def test_unknown_keys_rejected(self):
        with pytest.raises(ConfigError, match="unknown key solver.tt"):
            parse_config({"solver": {"tt": 1.0}})
        with pytest.raises(ConfigError, match="unknown key"):
            parse_config({"extra": {}})
        with pytest.raises(ConfigError, match="unknown key scenario.a0"):
            parse_config({"scenario": {"a0": [{"mode": [0, 0, 0], "amp": 1}]}})

    def test_type_errors(self):
        with pytest.raises(ConfigError):
            parse_config({"solver": {"T": "long"}})
        with pytest.raises(ConfigError):
            parse_config({"solver": {"output_stride": 1.5}})
        with pytest.raises(ConfigError):
            parse_config({"scenario": {"n": 12}})
        with pytest.raises(ConfigError):
            parse_config({"seed": True})

    def test_every_preset_loads_and_builds(self):
        names = preset_names()
        for required in ("smooth", "stationary", "harmonic", "ghost", "quadratic", "corrector", "h-sweep", "momentum", "conservation", "linear-field"):
            assert required in names
        for name in names:
            cfg = load_preset(name)
            assert cfg.scenario.preset == name
            sc = build_scenario(cfg)
            assert sc.grid.n == cfg.scenario.n

    def test_unknown_preset(self):
        with pytest.raises(ConfigError, match="unknown preset"):
            load_preset("nope")

    def test_preset_override(self):
        cfg = parse_config({"scenario": {"preset": "smooth", "n": 8}, "solver": {"T": 0.25}})
        base = load_preset("smooth")
        assert cfg.scenario.n == 8 and cfg.solver.T == 0.25
        assert cfg.scenario.doping == base.scenario.doping

    @pytest.mark.parametrize("name", ["smooth", "quadratic", "linear-field", "h-sweep"])
    def test_manifest_round_trip(self, name):
        cfg = load_preset(name)
        assert parse_config(tomli.loads(dump_manifest(cfg))) == cfg

    def test_json_config(self, tmp_path):
        raw = {"scenario": {"dim": 2, "n": 8}, "solver": {"T": 0.1}}
        cfg = load_config(write(tmp_path, json.dumps(raw), "run.json"))
        assert cfg.scenario.dim == 2 and cfg.solver.T == 0.1

    def test_unreadable_config(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(tmp_path / "missing.toml")
        with pytest.raises(ConfigError):
            load_config(write(tmp_path, "[scenario\n"))

    def test_modes_out_of_range(self):
        cfg = parse_config({"scenario": {"dim": 1, "n": 8, "a0": [{"mode": [4], "re": 1.0}]}})
        with pytest.raises((ConfigError, ValueError)):
            build_scenario(cfg)

    def test_noise_depends_on_seed(self):
        raw = {"scenario": {"dim": 1, "n": 16, "a0_noise": 0.01}}
        a = build_scenario(parse_config({**raw, "seed": 1})).a0.values
        b = build_scenario(parse_config({**raw, "seed": 1})).a0.values
        c = build_scenario(parse_config({**raw, "seed": 2})).a0.values
        assert (a == b).all() and not (a == c).all()


class TestCommands:
    def test_stationary_wkb_outputs(self, tmp_path):
        out = tmp_path / "st"
        assert main(["wkb", "--preset", "stationary", "--out", str(out)]) == 0
        rows = read_csv(out / "diagnostics.csv")
        assert len(rows) == 101
        for row in rows:
            for col in ("density_dev_L2", "velocity_Xs", "curl", "poisson_residual"):
                assert float(row[col]) <= 1e-10
        with open(out / "snapshots.bin", "rb") as fh:
            header, field = read_field_dump(fh)
        assert header["name"] == "a" and header["time"] == 0.0
        assert parse_config(tomli.loads((out / "manifest.toml").read_text())).scenario.preset == "stationary"

    def test_converge_slope_assertion(self, tmp_path):
        cfg = write(tmp_path, SMALL_1D)
        assert main(["converge", "--config", cfg, "--out", str(tmp_path / "a")]) == 0
        summary = json.loads((tmp_path / "a" / "ratefit.json").read_text())
        assert summary["passed"] and summary["slopes"]["density_L2"] >= 0.9
        assert main(["converge", "--config", cfg, "--out", str(tmp_path / "b"), "--min-slope", "2.0"]) == 1
        assert not json.loads((tmp_path / "b" / "ratefit.json").read_text())["passed"]

    def test_blowup_exit_code(self, tmp_path, capsys):
        cfg = write(tmp_path, SHOCK_1D)
        assert main(["wkb", "--config", cfg, "--out", str(tmp_path / "w")]) == 3
        assert "norm blow-up at t=" in capsys.readouterr().err
        rows = read_csv(tmp_path / "w" / "diagnostics.csv")
        assert 0 < float(rows[-1]["t"]) < 2.0

    def test_converge_blowup_exit_code(self, tmp_path, capsys):
        cfg = write(tmp_path, SHOCK_1D + "eps_list = [0.4, 0.2, 0.1]\n")
        assert main(["converge", "--config", cfg, "--out", str(tmp_path / "c")]) == 3
        assert "eps=0" in capsys.readouterr().err

    def test_config_error_exit_code(self, tmp_path, capsys):
        cfg = write(tmp_path, "[solver]\nbogus = 1\n")
        assert main(["wkb", "--config", cfg, "--out", str(tmp_path / "x")]) == 2
        assert "unknown key solver.bogus" in capsys.readouterr().err
        assert not (tmp_path / "x").exists()
        assert main(["wkb", "--preset", "missing", "--out", str(tmp_path / "x")]) == 2

    def test_eikonal_outputs(self, tmp_path):
        out = tmp_path / "e"
        assert main(["eikonal", "--preset", "ghost", "--out", str(out)]) == 0
        report = json.loads((out / "residual.json").read_text())
        assert report["status"] == "ok" and report["hj_residual_max"] <= 1e-6
        rows = read_csv(out / "phase.csv")
        assert float(rows[-1]["t"]) == 1.0

    def test_eikonal_blowup(self, tmp_path):
        cfg = write(tmp_path, "[scenario]\ndim = 1\nQ = 0.5\n[solver]\nghost = false\nT = 2.0\ndt = 0.001\n")
        assert main(["eikonal", "--config", cfg, "--out", str(tmp_path / "e")]) == 3

    def test_schrodinger_outputs(self, tmp_path):
        cfg = write(tmp_path, SMALL_1D + "eps = 0.1\n")
        out = tmp_path / "s"
        assert main(["schrodinger", "--config", cfg, "--out", str(out)]) == 0
        rows = read_csv(out / "diagnostics.csv")
        assert rows[0].keys() == {"t", "mass", "poisson_residual", "energy"}
        summary = json.loads((out / "summary.json").read_text())
        assert summary["gauge"] == "plain" and summary["mass_drift"] <= 1e-10

    def test_check_ops(self, tmp_path, capsys):
        cfg = write(tmp_path, "[scenario]\ndim = 2\nn = 16\n[solver]\nsamples = 10\n")
        assert main(["check-ops", "--config", cfg, "--out", str(tmp_path / "o"), "--seed", "7"]) == 0
        assert "passed=True" in capsys.readouterr().out
        assert json.loads((tmp_path / "o" / "check_ops.json").read_text())["seed"] == 7

    def test_format_selection(self, tmp_path):
        cfg = write(tmp_path, SMALL_1D + 'eps = 0.1\n[output]\nformats = ["csv"]\n')
        out = tmp_path / "f"
        assert main(["wkb", "--config", cfg, "--out", str(out)]) == 0
        assert sorted(p.name for p in out.iterdir()) == ["diagnostics.csv", "manifest.toml"]

    def test_reproducible_bytes(self, tmp_path):
        cfg = write(tmp_path, SMALL_1D + "eps = 0.1\n")
        first, second = tmp_path / "r1", tmp_path / "r2"
        assert main(["wkb", "--config", cfg, "--out", str(first)]) == 0
        assert main(["wkb", "--config", cfg, "--out", str(second)]) == 0
        for name in ("diagnostics.csv", "snapshots.bin", "summary.json"):
            assert (first / name).read_bytes() == (second / name).read_bytes()
