import json
import os

import numpy as np
import pytest

from gasflow import io as gio
from gasflow.cli import run_cli
from gasflow.core import total_momentum

GOLDEN = os.path.join(os.path.dirname(__file__), "data", "golden")


def write(path, text):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)
    return str(path)


class TestConfig:
    def test_minimal_config_defaults(self, tmp_path):
        path = write(tmp_path / "c.cfg",
                     "initial = symmetric-collision\ntau = 0.5\nt_end = 1.0\n")
        cfg = gio.load_config(path)
        assert cfg.law.mode == "pressureless"
        assert cfg.seed == 0
        assert cfg.frames_every == 1
        assert cfg.solver_tol == 1e-10

    def test_polytropic_needs_gamma_above_one(self, tmp_path):
        path = write(tmp_path / "c.cfg",
                     "initial = uniform-block\ntau = 0.1\nt_end = 1.0\n"
                     "mode = polytropic\ngamma = 1.0\n")
        with pytest.raises(gio.ConfigError, match="gamma"):
            gio.load_config(path)

    def test_tau_exceeding_horizon_rejected(self, tmp_path):
        path = write(tmp_path / "c.cfg",
                     "initial = symmetric-collision\ntau = 2.0\nt_end = 1.0\n")
        with pytest.raises(gio.ConfigError, match="t_end"):
            gio.load_config(path)

    def test_unknown_key_with_line_number(self, tmp_path):
        path = write(tmp_path / "c.cfg",
                     "initial = symmetric-collision\ntau = 0.5\nt_end = 1.0\n"
                     "bogus = 3\n")
        with pytest.raises(gio.ConfigError, match="line 4"):
            gio.load_config(path)

    def test_bad_value_with_line_number(self, tmp_path):
        path = write(tmp_path / "c.cfg",
                     "initial = x\ntau = fast\nt_end = 1.0\n")
        with pytest.raises(gio.ConfigError, match="line 2"):
            gio.load_config(path)

    def test_missing_required_key(self, tmp_path):
        path = write(tmp_path / "c.cfg", "tau = 0.5\nt_end = 1.0\n")
        with pytest.raises(gio.ConfigError, match="initial"):
            gio.load_config(path)

    def test_comments_and_blank_lines_ignored(self, tmp_path):
        path = write(tmp_path / "c.cfg",
                     "# a comment\n\ninitial = symmetric-collision # inline\n"
                     "tau = 0.5\nt_end = 1.0\n")
        cfg = gio.load_config(path)
        assert cfg.tau == 0.5


class TestIngest:
    def test_paper_cluster_structure(self):
        state, warnings = gio.ingest_initial("paper-cluster", n=1000)
        assert state.n == 1001
        heavy = int(np.argmax(state.masses))
        assert state.masses[heavy] == pytest.approx(0.5)
        assert state.positions[heavy, 0] == 0.0
        assert state.velocities[heavy, 0] == 1.0
        others = np.ones(state.n, dtype=bool)
        others[heavy] = False
        assert np.allclose(state.masses[others], 0.5 / 1000)
        assert np.all(np.abs(state.positions[others, 0]) < 1.0)
        assert np.allclose(state.velocities[others, 0], 0.0)
        assert any("momentum" in w for w in warnings)

    def test_csv_renormalization_warns(self, tmp_path):
        path = write(tmp_path / "p.csv",
                     "m,x,u,S\n1.0,0.0,0.0,0.0\n1.0,1.0,0.0,0.0\n")
        state, warnings = gio.ingest_initial(path)
        assert np.allclose(state.masses, [0.5, 0.5])
        assert any("renormalized" in w for w in warnings)

    def test_empty_file_rejected(self, tmp_path):
        path = write(tmp_path / "p.csv", "")
        with pytest.raises(gio.IngestError, match="empty"):
            gio.ingest_initial(path)

    def test_negative_mass_rejected(self, tmp_path):
        path = write(tmp_path / "p.csv", "m,x,u,S\n-1.0,0.0,0.0,0.0\n")
        with pytest.raises(gio.IngestError, match="negative"):
            gio.ingest_initial(path)

    def test_dimension_mismatch_rejected(self, tmp_path):
        path = write(tmp_path / "p.json", json.dumps(
            {"m": [1.0], "x": [[0.0, 1.0]], "u": [[0.0]], "S": [0.0]}))
        with pytest.raises(gio.IngestError):
            gio.ingest_initial(path)

    def test_zero_momentum_shift(self, tmp_path):
        path = write(tmp_path / "p.csv",
                     "m,x,u,S\n0.5,0.0,1.0,0.0\n0.5,1.0,0.0,0.0\n")
        state, warnings = gio.ingest_initial(path, zero_momentum=True)
        assert np.max(np.abs(total_momentum(state))) <= 1e-15
        assert any("shifted" in w for w in warnings)

    def test_json_columnar_2d(self, tmp_path):
        path = write(tmp_path / "p.json", json.dumps(
            {"m": [0.5, 0.5], "x": [[0.0, 0.0], [1.0, 1.0]],
             "u": [[0.0, 0.0], [0.0, 0.0]], "S": [0.0, 0.0]}))
        state, _ = gio.ingest_initial(path)
        assert state.dim == 2

    def test_unknown_builtin_rejected(self):
        with pytest.raises(gio.IngestError):
            gio.ingest_initial("no-such-scenario")

    def test_riemann_masses_uniform(self):
        state, _ = gio.ingest_initial("riemann-1d", n=128)
        assert np.allclose(state.masses, 1.0 / 128)
        assert np.all(np.diff(state.positions[:, 0]) > 0)


class TestRoundTrip:
    def test_frames_reserialize_bit_identical(self):
        with open(os.path.join(GOLDEN, "frames.jsonl"), encoding="utf-8") as fh:
            original = fh.read()
        lines = [json.loads(l) for l in original.splitlines()]
        rebuilt = ""
        for d in lines:
            frame = gio.frame_from_dict(d)
            law = __import__("gasflow").GasLaw(mode="pressureless")
            rebuilt += json.dumps(gio.frame_to_dict(frame, law),
                                  separators=(",", ":")) + "\n"
        assert rebuilt == original

    def test_golden_schema_frozen(self):
        dicts = gio.read_frame_dicts(os.path.join(GOLDEN, "frames.jsonl"))
        for d in dicts:
            assert set(d) == {"t", "particles", "energies", "report"}
            assert set(d["particles"]) == {"m", "x", "u", "S"}
            assert set(d["energies"]) == {"kinetic", "internal", "total"}
        reports = [d["report"] for d in dicts if d["report"] is not None]
        assert reports, "golden dump must carry step reports"
        assert set(reports[0]) == {
            "acc_cost_sq", "stress_trace", "kinetic_before", "kinetic_after",
            "internal_before", "internal_after", "dissipation",
            "momentum_after", "el_residual", "solver_iterations"}

    def test_golden_dump_validates(self):
        violations = gio.validate_dump(os.path.join(GOLDEN, "frames.jsonl"),
                                       os.path.join(GOLDEN, "manifest.json"))
        assert violations == []


class TestCli:
    def cfg(self, tmp_path, extra=""):
        return write(tmp_path / "run.cfg",
                     "initial = symmetric-collision\ntau = 0.25\n"
                     "t_end = 1.0\n" + extra)

    def test_simulate_writes_dump(self, tmp_path, capsys):
        out = tmp_path / "out"
        code = run_cli(["simulate", "--config", self.cfg(tmp_path),
                        "--out", str(out)])
        assert code == 0
        assert (out / "frames.jsonl").exists()
        assert (out / "manifest.json").exists()
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["format_version"] == gio.FORMAT_VERSION
        assert manifest["n_steps"] == 4

    def test_validate_fresh_dump_passes(self, tmp_path):
        out = tmp_path / "out"
        run_cli(["simulate", "--config", self.cfg(tmp_path), "--out", str(out)])
        assert run_cli(["validate", "--dump", str(out)]) == 0

    def test_validate_tampered_dump_fails(self, tmp_path, capsys):
        out = tmp_path / "out"
        run_cli(["simulate", "--config", self.cfg(tmp_path), "--out", str(out)])
        lines = (out / "frames.jsonl").read_text().splitlines()
        tampered = json.loads(lines[-1])
        tampered["energies"]["total"] += 1.0  # inject energy
        lines[-1] = json.dumps(tampered, separators=(",", ":"))
        (out / "frames.jsonl").write_text("\n".join(lines) + "\n")
        capsys.readouterr()  # drain the simulate output
        code = run_cli(["validate", "--dump", str(out)])
        assert code == 1
        payload = json.loads(capsys.readouterr().out)
        assert payload["error"] == "invariant-violation"
        assert payload["invariant"] == "energy"

    def test_step_prints_report(self, tmp_path, capsys):
        code = run_cli(["step", "--config", self.cfg(tmp_path)])
        assert code == 0
        payload = json.loads(capsys.readouterr().out)
        assert payload["kinetic_before"] == pytest.approx(0.5)

    def test_project_monotone_input_unchanged(self, tmp_path, capsys):
        path = write(tmp_path / "targets.csv",
                     "m,x,y\n0.5,0.0,0.1\n0.5,1.0,0.9\n")
        code = run_cli(["project", "--input", path])
        assert code == 0
        payload = json.loads(capsys.readouterr().out)
        assert np.allclose(np.array(payload["projected"])[:, 0], [0.1, 0.9])
        assert payload["max_violation"] == 0.0

    def test_report_writes_tables(self, tmp_path):
        out = tmp_path / "out"
        rep = tmp_path / "rep"
        run_cli(["simulate", "--config", self.cfg(tmp_path), "--out", str(out)])
        assert run_cli(["report", "--dump", str(out), "--out", str(rep)]) == 0
        for name in ("energy.csv", "steps.csv", "w2.csv"):
            assert (rep / name).exists()

    def test_report_refine_shows_cauchy_decay(self, tmp_path):
        cfgp = write(tmp_path / "r.cfg",
                     "initial = paper-cluster\nn = 200\ntau = 0.2\nt_end = 0.8\n")
        rep = tmp_path / "rep"
        code = run_cli(["report", "--refine", "--config", cfgp,
                        "--out", str(rep), "--levels", "3"])
        assert code == 0
        rows = (rep / "refine.csv").read_text().splitlines()[1:]
        sups = [float(r.split(",")[2]) for r in rows]
        assert len(sups) == 3
        assert sups[-1] <= sups[0]  # distances shrink as tau halves

    def test_report_cluster_scan(self, tmp_path):
        rep = tmp_path / "rep"
        code = run_cli(["report", "--cluster-scan", "100,400", "--tau", "0.25",
                        "--out", str(rep)])
        assert code == 0
        rows = (rep / "cluster.csv").read_text().splitlines()
        assert rows[0].startswith("n,")
        assert len(rows) == 3

    def test_config_error_is_machine_readable(self, tmp_path, capsys):
        bad = write(tmp_path / "bad.cfg", "initial = x\ntau = -1\n")
        code = run_cli(["simulate", "--config", bad, "--out", str(tmp_path / "o")])
        assert code == 1
        err = json.loads(capsys.readouterr().err.splitlines()[-1])
        assert err["error"] in ("config", "ingest")

    def test_mode_override(self, tmp_path, capsys):
        cfgp = write(tmp_path / "run.cfg",
                     "initial = uniform-block\nn = 32\ntau = 0.1\n"
                     "t_end = 0.2\nmode = polytropic\ngamma = 2.0\n")
        out = tmp_path / "o"
        code = run_cli(["simulate", "--config", cfgp, "--out", str(out),
                        "--mode-override", "pressureless"])
        assert code == 0
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["config"]["mode"] == "pressureless"

    def test_polytropic_step_report(self, tmp_path, capsys):
        cfgp = write(tmp_path / "run.cfg",
                     "initial = uniform-block\nn = 32\ntau = 0.1\n"
                     "t_end = 0.2\nmode = polytropic\ngamma = 2.0\n")
        code = run_cli(["step", "--config", cfgp])
        assert code == 0
        payload = json.loads(capsys.readouterr().out)
        assert payload["internal_before"] > payload["internal_after"] > 0

    def test_polytropic_simulate_and_validate(self, tmp_path):
        cfgp = write(tmp_path / "run.cfg",
                     "initial = uniform-block\nn = 48\ntau = 0.05\n"
                     "t_end = 0.5\nmode = polytropic\ngamma = 1.4\nkappa = 1.0\n")
        out = tmp_path / "o"
        assert run_cli(["simulate", "--config", cfgp, "--out", str(out)]) == 0
        assert run_cli(["validate", "--dump", str(out)]) == 0
