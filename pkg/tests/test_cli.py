import json
import os

import pytest

from qmemlab import cli


def run_cli(args):
    try:
        return cli.main(args)
    except SystemExit as exc:
        return exc.code


def write_config(path, text):
    path.write_text(text)
    return str(path)


BATH_AUDIT = """
seed = 1
[bath]
kind = "flat_kms"
amplitude = 1.0
cutoff = 10.0
beta = 1.0
[tail]
t_min = 20.0
t_max = 80.0
[gate]
epsilon = 0.1
"""


class TestBathAudit:
    def test_stable_json_fields(self, tmp_path):
        cfg = write_config(tmp_path / "c.toml", BATH_AUDIT)
        out = tmp_path / "out"
        assert run_cli(["bath-audit", "--config", cfg, "--out", str(out)]) == 0
        report = json.loads((out / "bath_audit.json").read_text())
        assert {"kms_max_violation", "r2_constant", "tail_exponent",
                "tail_amplitude", "tau_max"} <= set(report)
        assert 1.8 <= report["tail_exponent"] <= 2.2
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["seed"] == 1
        assert "bath_audit.json" in manifest["outputs"]

    def test_byte_identical_reruns(self, tmp_path):
        cfg = write_config(tmp_path / "c.toml", BATH_AUDIT)
        out1, out2 = tmp_path / "a", tmp_path / "b"
        assert run_cli(["bath-audit", "--config", cfg, "--out", str(out1)]) == 0
        assert run_cli(["bath-audit", "--config", cfg, "--out", str(out2)]) == 0
        for name in ("bath_audit.json", "correlation.csv",
                     "gate_error_floor.dat"):
            assert (out1 / name).read_bytes() == (out2 / name).read_bytes()

    def test_negative_beta_names_key(self, tmp_path, capsys):
        cfg = write_config(tmp_path / "c.toml",
                           BATH_AUDIT.replace("beta = 1.0", "beta = -1.0"))
        code = run_cli(["bath-audit", "--config", cfg,
                        "--out", str(tmp_path / "o")])
        assert code == 2
        assert "beta" in capsys.readouterr().err

    def test_unknown_key_rejected(self, tmp_path, capsys):
        cfg = write_config(tmp_path / "c.toml",
                           BATH_AUDIT + "\n[typo_section]\nx = 1\n")
        code = run_cli(["bath-audit", "--config", cfg,
                        "--out", str(tmp_path / "o")])
        assert code == 2
        assert "typo_section" in capsys.readouterr().err

    def test_outputs_stay_in_out_dir(self, tmp_path, monkeypatch):
        workdir = tmp_path / "cwd"
        workdir.mkdir()
        monkeypatch.chdir(workdir)
        cfg = write_config(tmp_path / "c.toml", BATH_AUDIT)
        out = tmp_path / "out"
        assert run_cli(["bath-audit", "--config", cfg, "--out", str(out)]) == 0
        assert os.listdir(workdir) == []


class TestKitaevGap:
    def test_small_run(self, tmp_path):
        cfg = write_config(tmp_path / "c.toml", """
seed = 1
[bath]
amplitude = 1.0
cutoff = 10.0
beta = 1.0
[study]
sizes = [2]
beta = 1.0
""")
        out = tmp_path / "out"
        assert run_cli(["kitaev-gap", "--config", cfg, "--out", str(out)]) == 0
        report = json.loads((out / "kitaev_gap.json").read_text())
        assert report["gaps"][0]["L"] == 2
        assert report["gaps"][0]["gap"] > 0


class TestDaviesProperties:
    def test_small_run(self, tmp_path):
        cfg = write_config(tmp_path / "c.toml", """
seed = 1
[bath]
amplitude = 1.0
cutoff = 10.0
[systems]
ising_sizes = [3, 4]
kitaev_sizes = [2]
betas = [0.5]
relaxation_initials = 5
""")
        out = tmp_path / "out"
        assert run_cli(["davies-properties", "--config", cfg,
                        "--out", str(out)]) == 0
        rows = json.loads((out / "davies_properties.json").read_text())["rows"]
        assert len(rows) == 3
        for row in rows:
            assert row["stationarity"] < 1e-10
            assert row["db_residual"] < 1e-10
            assert row["relaxation_tv"] < 1e-3


class TestLifetime:
    CONFIG = """
seed = 7
[bath]
amplitude = 1.0
cutoff = 10.0
[[cells]]
size = 4
beta = 0.2
observable = "dressed"
n_trajectories = 20
t_max = 250.0
sample_interval = 0.25
"""

    def test_ising_run_and_header(self, tmp_path):
        cfg = write_config(tmp_path / "c.toml", self.CONFIG)
        out = tmp_path / "out"
        assert run_cli(["ising-lifetime", "--config", cfg,
                        "--out", str(out)]) == 0
        lines = (out / "ising_lifetime.csv").read_text().splitlines()
        assert lines[0] == "model,N_or_L,beta,observable,decoder,gamma,stderr,mode"
        assert len(lines) == 2
        assert "majority-vote" in lines[1]

    def test_seed_override(self, tmp_path):
        cfg = write_config(tmp_path / "c.toml", self.CONFIG)
        out = tmp_path / "out"
        assert run_cli(["ising-lifetime", "--config", cfg, "--out", str(out),
                        "--seed", "123"]) == 0
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["seed"] == 123

    def test_missing_cells_rejected(self, tmp_path, capsys):
        cfg = write_config(tmp_path / "c.toml", "seed = 1\n[bath]\namplitude = 1.0\n")
        code = run_cli(["ising-lifetime", "--config", cfg,
                        "--out", str(tmp_path / "o")])
        assert code == 2
        assert "cells" in capsys.readouterr().err


class TestErrormapAudit:
    def test_synthetic_bath_run(self, tmp_path):
        cfg = write_config(tmp_path / "c.toml", """
seed = 1
[chain]
n_qubits = 6
coupling = 1.0
field = 1.0
site = 2
operator_kind = "x"
[audit]
t_start = 0.2
t_stop = 1.6
n_times = 15
tau_scale = 10.0
[bath]
exponential_rate = 0.7
""")
        out = tmp_path / "out"
        assert run_cli(["errormap-audit", "--config", cfg,
                        "--out", str(out)]) == 0
        report = json.loads((out / "errormap_audit.json").read_text())
        assert report["bath"]["kind"] == "synthetic-exponential"
        assert {"accepted", "error_per_gate", "r_squared"} \
            <= set(report["verdict"])
        spectra_lines = (out / "support_spectra.csv").read_text().splitlines()
        assert spectra_lines[0].startswith("t,w_1")
