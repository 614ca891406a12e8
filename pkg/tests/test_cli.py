import csv
import math

import pytest

from sbdkit.cli import config_hash, load_config, main, ConfigError


def read_csv(path):
    with open(path) as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    return list(csv.DictReader(lines))


def write_cfg(tmp_path, text, name="run.ini"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def run(tmp_path, *args):
    return main([*args, "--out", str(tmp_path / "out")])


class TestConfig:
    def test_defaults_load(self):
        cfg = load_config(None, [])
        assert cfg["model"]["m"] == 1.0 and cfg["kernel.a_plus"]["family"] == "tophat"

    def test_unknown_key_reports_line(self, tmp_path):
        path = write_cfg(tmp_path, "[model]\nm = 2\nmortality = 3\n")
        with pytest.raises(ConfigError, match=r"run.ini:3:"):
            load_config(path, [])

    def test_inline_comments(self, tmp_path):
        cfg = load_config(write_cfg(tmp_path, "[model]\nmechanism = fecundity   ; or establishment\n"), [])
        assert cfg["model"]["mechanism"] == "fecundity"

    def test_unknown_section(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(write_cfg(tmp_path, "[modle]\nm = 2\n"), [])

    def test_override(self):
        assert load_config(None, ["model.kappa=0.25"])["model"]["kappa"] == 0.25
        assert load_config(None, ["kernel.phi.height=0.3"])["kernel.phi"]["height"] == 0.3

    def test_hash_stable(self):
        a, b = load_config(None, []), load_config(None, [])
        assert config_hash(a) == config_hash(b) and len(config_hash(a)) == 16
        assert config_hash(load_config(None, ["model.m=3"])) != config_hash(a)


class TestExitCodes:
    def test_version(self, capsys):
        assert main(["--version"]) == 0
        assert "sbdkit" in capsys.readouterr().out

    def test_usage_error(self):
        assert main(["frobnicate"]) == 2

    def test_zero_mortality(self, tmp_path, capsys):
        assert run(tmp_path, "check", "--set", "model.m=0") == 2
        assert "mortality" in capsys.readouterr().err

    def test_unknown_key_exit(self, tmp_path, capsys):
        path = write_cfg(tmp_path, "[model]\nm = 2\nbogus = 1\n")
        assert run(tmp_path, "check", "--config", path) == 2
        assert "bogus" in capsys.readouterr().err

    def test_check_satisfied(self, tmp_path, capsys):
        assert run(tmp_path, "check", "--set", "model.m=50", "--set", "kernel.phi.height=0.5") == 0
        out = capsys.readouterr().out
        assert out.startswith("EstablishmentThm,satisfied=true")
        rows = read_csv(tmp_path / "out" / "checks.csv")
        assert rows[0]["verdict"] == "satisfied"

    def test_check_violated(self, tmp_path, capsys):
        assert run(tmp_path, "check", "--set", "model.m=1", "--set", "kernel.phi.height=0.5") == 1
        assert "satisfied=false" in capsys.readouterr().out

    def test_check_boundary_is_failure(self, tmp_path, capsys):
        # density-independent establishment: threshold m* = 2 (1/e + 1) kappa e^{c_phi C}
        h = 0.5
        c_phi = 2 * (1 - math.exp(-h))
        m_star = 2 * (1 / math.e + 1) * math.exp(c_phi)
        code = run(tmp_path, "check", "--set", f"model.m={m_star!r}", "--set", f"kernel.phi.height={h}",
                   "--set", "checks.C=1")
        out = capsys.readouterr().out
        assert code == 1 and ("verdict=boundary" in out or "verdict=violated" in out)

    def test_picard_needs_radius(self, tmp_path):
        assert run(tmp_path, "check", "--set", "checks.theorems=picard") == 2

    def test_picard_with_alpha(self, tmp_path, capsys):
        code = run(tmp_path, "check", "--set", "checks.theorems=picard", "--set", "checks.alpha=2",
                   "--set", "model.m=5", "--set", "kernel.phi.height=0.5", "--set", "model.kappa=0.5")
        assert code == 0 and "PicardExistence,satisfied=true" in capsys.readouterr().out


SIM = ["--set", "ibm.replicas=3", "--set", "ibm.t_end=1", "--set", "ibm.initial=count",
       "--set", "ibm.initial_count=30", "--set", "ibm.snapshot_times=0.5"]


class TestSimulate:
    def test_byte_identical(self, tmp_path):
        out = tmp_path / "out"
        assert run(tmp_path, "simulate", *SIM, "--seed", "4") == 0
        first = {p.name: p.read_bytes() for p in out.iterdir()}
        assert run(tmp_path, "simulate", *SIM, "--seed", "4") == 0
        second = {p.name: p.read_bytes() for p in out.iterdir()}
        assert first == second
        assert {"trajectory_000.csv", "snapshots_000.csv", "manifest.csv", "summary.csv"} <= set(first)

    def test_seed_changes_output(self, tmp_path):
        run(tmp_path, "simulate", *SIM, "--seed", "4")
        a = (tmp_path / "out" / "trajectory_000.csv").read_text()
        run(tmp_path, "simulate", *SIM, "--seed", "5")
        assert a != (tmp_path / "out" / "trajectory_000.csv").read_text()

    def test_header_provenance(self, tmp_path):
        run(tmp_path, "simulate", *SIM)
        head = (tmp_path / "out" / "trajectory_000.csv").read_text().splitlines()[:6]
        assert any("config_sha256" in h for h in head) and any("replica_seed: 0,0" in h for h in head)

    def test_extinct_flag(self, tmp_path):
        assert run(tmp_path, "simulate", "--set", "model.m=8", "--set", "model.kappa=0.1",
                   "--set", "ibm.initial=count", "--set", "ibm.initial_count=3",
                   "--set", "ibm.t_end=5", "--set", "ibm.replicas=2") == 0
        rows = read_csv(tmp_path / "out" / "trajectory_000.csv")
        assert rows[-1]["flag"] == "extinct" and rows[-1]["N"] == "0"
        manifest = read_csv(tmp_path / "out" / "manifest.csv")
        assert all(r["extinct"] == "true" for r in manifest)

    def test_small_box_is_config_error(self, tmp_path):
        assert run(tmp_path, "simulate", "--set", "domain.length=5") == 2


class TestSolve:
    def test_constant_reaches_equilibrium(self, tmp_path):
        code = run(tmp_path, "solve", "--set", "model.kappa=2", "--set", "kernel.phi.height=0.5",
                   "--set", "kinetics.rho0_level=0.5", "--set", "kinetics.t_end=25",
                   "--set", "kinetics.dt=0.05", "--set", "domain.grid=64", "--set", "kinetics.record_every=100")
        assert code == 0
        row = read_csv(tmp_path / "out" / "solve_summary.csv")[0]
        assert float(row["equilibrium"]) == pytest.approx(math.log(2), abs=1e-10)
        assert float(row["distance_to_equilibrium"]) < 1e-4
        assert row["equilibrium_stability"] == "stable"

    def test_both_mechanisms_and_picard(self, tmp_path):
        code = run(tmp_path, "solve", "--set", "kinetics.mechanisms=establishment,fecundity",
                   "--set", "kinetics.rho0=two-bump", "--set", "kinetics.rho0_level=0.2",
                   "--set", "kinetics.rho0_amplitude=1.5", "--set", "kinetics.rho0_width=0.5",
                   "--set", "model.dispersal=dependent", "--set", "kernel.b_plus.family=tophat",
                   "--set", "kernel.b_plus.height=0.1", "--set", "kernel.b_plus.radius=0.8",
                   "--set", "kernel.phi.height=0.5", "--set", "model.m=2", "--set", "model.kappa=0.5",
                   "--set", "kinetics.picard=true", "--set", "checks.c=3", "--set", "domain.grid=64",
                   "--set", "kinetics.t_end=1", "--set", "output.formats=csv,dat")
        assert code == 0
        out = tmp_path / "out"
        rows = read_csv(out / "solve_summary.csv")
        assert {r["mechanism"] for r in rows} == {"establishment", "fecundity"}
        assert all(float(r["picard_vs_timestep"]) < 1e-4 for r in rows)
        assert float(rows[0]["mechanism_difference"]) > 0
        diff = read_csv(out / "mechanism_difference.csv")
        assert float(diff[0]["sup_difference"]) == 0.0
        assert (out / "density_fecundity.dat").exists() and (out / "picard_establishment.csv").exists()

    def test_cutoff_too_large(self, tmp_path):
        assert run(tmp_path, "solve", "--set", "domain.length=1.5", "--set", "domain.grid=32") == 2


class TestVerifyAndLimit:
    def test_verify_vacuous(self, tmp_path, capsys):
        assert run(tmp_path, "verify", "--set", "verify.instances=0") == 0
        assert "vacuous" in capsys.readouterr().out

    def test_verify_corrupt(self, tmp_path):
        assert run(tmp_path, "verify", "--set", "verify.instances=2", "--set", "verify.mc_samples=2000",
                   "--corrupt", "kexp") == 1
        rows = {r["family"]: r for r in read_csv(tmp_path / "out" / "verify.csv")}
        assert rows["kexp"]["passed"] == "false" and rows["minlos"]["passed"] == "true"

    def test_limit_study_table(self, tmp_path, capsys):
        code = run(tmp_path, "limit-study", "--set", "ibm.replicas=5", "--set", "ibm.eps=1,0.5",
                   "--set", "ibm.times=0.5", "--set", "domain.grid=64", "--set", "kinetics.rho0_level=1")
        assert code in (0, 1)
        rows = read_csv(tmp_path / "out" / "limit_study.csv")
        assert {float(r["eps"]) for r in rows} == {1.0, 0.5}
        assert "decreasing" in capsys.readouterr().out

    def test_limit_study_rejects_fecundity(self, tmp_path):
        assert run(tmp_path, "limit-study", "--set", "model.mechanism=fecundity") == 2
