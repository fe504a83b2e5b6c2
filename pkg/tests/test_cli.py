"""CLI exit codes, certificate schema, determinism, and audit round-trip."""

import json
import subprocess
import sys

import numpy as np
import pytest

from paretocert.certificate import recompute_overall_verdict
from paretocert.cli import main
from paretocert.problem import builtin
from paretocert.trajectory import Grid, integrate_state


def run_cli(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


def load_cert(out):
    cert = json.loads(out)
    assert cert["schema"] == "cert/1"
    return cert


@pytest.fixture
def findim_fixture_file(tmp_path):
    doc = {"nz": 2, "m": 2, "f": ["z1^2 + z2^2", "(z1 - 1)^2 + z2^2"],
           "G": ["z1 + z2 - 1"]}
    path = tmp_path / "convex_pair.json"
    path.write_text(json.dumps(doc))
    return str(path)


class TestCheckKkt:
    def test_builtin_zero_trajectory_passes(self, capsys):
        code, out, _ = run_cli(capsys, "check-kkt", "builtin:example_6_1",
                               "--lambda", "0.7071,0.7071", "--grid", "200")
        assert code == 0
        cert = load_cert(out)
        assert cert["overall_verdict"] == "kkt-pass"
        assert cert["fragments"]["kkt"]["passed"] is True

    def test_perturbed_trajectory_fails(self, capsys, tmp_path):
        p = builtin("example_6_1")
        grid = Grid(100)
        traj = integrate_state(p, np.zeros((101, 2)), grid)
        x = traj.x.copy()
        x[50, 0] += 0.5  # breaks the state equation
        doc = {"grid_n": 100, "x": x.tolist(), "u": traj.u.tolist()}
        path = tmp_path / "bad_traj.json"
        path.write_text(json.dumps(doc))
        code, out, _ = run_cli(capsys, "check-kkt", "builtin:example_6_1",
                               "--lambda", "0.7071,0.7071", "--traj", str(path))
        assert code == 2
        cert = load_cert(out)
        assert cert["overall_verdict"] == "fail"
        assert cert["fragments"]["feasibility"]["state_residual"] >= 0.4

    def test_missing_file_is_usage_error(self, capsys):
        code, _, err = run_cli(capsys, "check-kkt", "/nonexistent/problem.json",
                               "--lambda", "0.5,0.5")
        assert code == 1
        assert "error" in err

    def test_bad_lambda_is_usage_error(self, capsys):
        code, _, err = run_cli(capsys, "check-kkt", "builtin:example_6_1",
                               "--lambda", "banana,1")
        assert code == 1

    def test_unknown_builtin(self, capsys):
        code, _, err = run_cli(capsys, "check-kkt", "builtin:nope",
                               "--lambda", "0.5,0.5")
        assert code == 1
        assert "example_6_1" in err


class TestCheckSocn:
    def test_indefinite_example_direction_file(self, capsys, tmp_path):
        t = Grid(300).nodes
        doc = {"grid_n": 300, "x": np.stack([t, t], axis=1).tolist(),
               "u": np.ones((301, 2)).tolist()}
        path = tmp_path / "ramp.json"
        path.write_text(json.dumps(doc))
        code, out, _ = run_cli(capsys, "check-socn", "builtin:example_6_2",
                               "--grid", "300", "--directions", str(path))
        assert code == 2
        cert = load_cert(out)
        assert cert["overall_verdict"] == "socn-violated"
        entry = cert["fragments"]["socn"]["results"][0]
        assert "direction" in entry
        qs = [row["q_value"] for row in entry["q_by_weight"]]
        assert all(q < 0 for q in qs)

    def test_quadratic_example_probes_pass(self, capsys):
        code, out, _ = run_cli(capsys, "check-socn", "builtin:example_6_1",
                               "--grid", "120", "--probes", "10")
        assert code == 0
        cert = load_cert(out)
        assert cert["overall_verdict"] == "socn-pass"
        assert cert["fragments"]["socn"]["tested"] == 10

    def test_non_critical_direction_skipped(self, capsys, tmp_path):
        doc = {"grid_n": 100, "x": np.ones((101, 2)).tolist(),
               "u": np.zeros((101, 2)).tolist()}
        path = tmp_path / "bad_dir.json"
        path.write_text(json.dumps(doc))
        code, out, _ = run_cli(capsys, "check-socn", "builtin:example_6_1",
                               "--grid", "100", "--directions", str(path))
        assert code == 0
        cert = load_cert(out)
        frag = cert["fragments"]["socn"]
        assert frag["verdict"] == "vacuous"
        assert frag["skipped"][0]["reason"] == "not critical"


class TestCheckSocs:
    def test_quadratic_example_passes(self, capsys):
        code, out, _ = run_cli(capsys, "check-socs", "builtin:example_6_1",
                               "--lambda", "0.5,0.5", "--gamma0", "1",
                               "--grid", "150", "--probes", "6")
        assert code == 0
        cert = load_cert(out)
        assert cert["overall_verdict"] == "socs-pass"
        assert "caveat" in cert["fragments"]["socs"]

    def test_indefinite_example_fails_coercivity(self, capsys):
        code, out, _ = run_cli(capsys, "check-socs", "builtin:example_6_2",
                               "--lambda", "0.5,0.5", "--gamma0", "0.1",
                               "--grid", "100", "--probes", "4")
        assert code == 2
        cert = load_cert(out)
        assert cert["fragments"]["socs"]["failed_stage"] == "coercivity"

    def test_nonpositive_gamma0_usage_error(self, capsys):
        code, _, err = run_cli(capsys, "check-socs", "builtin:example_6_1",
                               "--lambda", "0.5,0.5", "--gamma0", "0")
        assert code == 1


class TestFindim:
    def test_convex_fixture_passes(self, capsys, findim_fixture_file):
        code, out, _ = run_cli(capsys, "findim", findim_fixture_file,
                               "--zbar", "0,0", "--dir", "0,1", "--radius", "0.4")
        assert code == 0
        cert = load_cert(out)
        assert cert["overall_verdict"] == "findim-pass"
        assert cert["fragments"]["oracle"]["weak_pareto"] is True
        assert cert["fragments"]["consistency"]["agrees_with_oracle"] is True

    def test_indefinite_fixture_fails_consistently(self, capsys, tmp_path):
        doc = {"nz": 2, "m": 2, "f": ["z1^2 - z2^2", "z1^2 - z2^2"],
               "G": ["z1 + z2 - 1"]}
        path = tmp_path / "shared_indefinite.json"
        path.write_text(json.dumps(doc))
        code, out, _ = run_cli(capsys, "findim", str(path),
                               "--zbar", "0,0", "--dir", "0,1")
        assert code == 2
        cert = load_cert(out)
        assert cert["fragments"]["directions"][0]["verdict"] is False
        assert cert["fragments"]["oracle"]["weak_pareto"] is False
        assert cert["fragments"]["consistency"]["agrees_with_oracle"] is True

    def test_cq_failure_gates_pipeline(self, capsys, tmp_path):
        doc = {"nz": 2, "m": 1, "f": ["z1^2 + z2^2"], "G": ["z1", "-z1"]}
        path = tmp_path / "cq_fail.json"
        path.write_text(json.dumps(doc))
        code, out, _ = run_cli(capsys, "findim", str(path), "--zbar", "0,0.5")
        assert code == 2
        cert = load_cert(out)
        assert cert["fragments"]["robinson"]["passed"] is False
        assert cert["fragments"]["multipliers"]["count"] == 0

    def test_non_critical_direction_noted(self, capsys, findim_fixture_file):
        # negative leading entries need the = form, as usual with argparse
        code, out, _ = run_cli(capsys, "findim", findim_fixture_file,
                               "--zbar", "0,0", "--dir=-1,0")
        assert code == 0  # direction skipped; oracle still decides
        cert = load_cert(out)
        entry = cert["fragments"]["directions"][0]
        assert entry["critical"] is False
        assert "note" in entry

    def test_oracle_dimension_guard_is_clean_error(self, capsys, tmp_path):
        doc = {"nz": 5, "m": 1, "f": ["z1"],
               "G": ["z1 + z2 + z3 + z4 + z5 - 1"]}
        path = tmp_path / "big.json"
        path.write_text(json.dumps(doc))
        code, _, err = run_cli(capsys, "findim", str(path), "--zbar", "0,0,0,0,0")
        assert code == 1
        assert "nz <= 4" in err


class TestOtherCommands:
    def test_integrate_outputs_trajectory(self, capsys, tmp_path):
        control = {"grid_n": 50, "u": np.ones((51, 2)).tolist()}
        path = tmp_path / "control.json"
        path.write_text(json.dumps(control))
        code, out, _ = run_cli(capsys, "integrate", "builtin:example_6_1",
                               "--control", str(path))
        assert code == 0
        data = json.loads(out)
        assert data["grid_n"] == 50
        assert data["x"][-1][0] == pytest.approx(1.0, abs=1e-10)
        assert data["state_residual"] <= 1e-12

    def test_integrate_default_zero_control(self, capsys):
        code, out, _ = run_cli(capsys, "integrate", "builtin:damped_pendulum",
                               "--grid", "40")
        assert code == 0
        data = json.loads(out)
        assert data["u"] == [[0.0]] * 41
        assert data["x"][0] == [0.5, 0.0]

    def test_show_builtin_round_trips(self, capsys):
        code, out, _ = run_cli(capsys, "show-builtin", "example_6_2")
        assert code == 0
        doc = json.loads(out)
        assert doc["L"] == ["x1^2 - u1^2", "x2^2 - u2^2"]

    def test_show_builtin_unknown(self, capsys):
        code, _, err = run_cli(capsys, "show-builtin", "nope")
        assert code == 1

    def test_out_flag_writes_file(self, capsys, tmp_path):
        path = tmp_path / "cert.json"
        code, out, _ = run_cli(capsys, "check-kkt", "builtin:example_6_1",
                               "--lambda", "0.5,0.5", "--grid", "60",
                               "--out", str(path))
        assert code == 0
        assert out == ""
        load_cert(path.read_text())


class TestCertificateProperties:
    def test_deterministic_modulo_wall_time(self, capsys):
        outs = []
        for _ in range(2):
            code, out, _ = run_cli(capsys, "check-socn", "builtin:example_6_1",
                                   "--grid", "80", "--probes", "5", "--seed", "7")
            assert code == 0
            outs.append(json.loads(out))
        for cert in outs:
            cert.pop("wall_time_s")
        assert json.dumps(outs[0], sort_keys=True) == json.dumps(outs[1], sort_keys=True)

    def test_verdict_recomputable_from_fragments(self, capsys, findim_fixture_file):
        runs = [
            ("check-kkt", "builtin:example_6_1", "--lambda", "0.5,0.5",
             "--grid", "60"),
            ("check-socs", "builtin:example_6_2", "--lambda", "0.5,0.5",
             "--gamma0", "0.1", "--grid", "60", "--probes", "2"),
            ("findim", findim_fixture_file, "--zbar", "0,0", "--dir", "0,1"),
        ]
        for argv in runs:
            _, out, _ = run_cli(capsys, *argv)
            cert = load_cert(out)
            assert recompute_overall_verdict(cert) == cert["overall_verdict"]

    def test_seed_recorded(self, capsys):
        _, out, _ = run_cli(capsys, "check-kkt", "builtin:example_6_1",
                            "--lambda", "0.5,0.5", "--grid", "60", "--seed", "99")
        assert load_cert(out)["seed"] == 99


class TestSubprocessEntry:
    def test_module_invocation(self, tmp_path):
        proc = subprocess.run(
            [sys.executable, "-m", "paretocert", "check-kkt", "builtin:example_6_1",
             "--lambda", "0.7071,0.7071", "--grid", "80"],
            capture_output=True, text=True, timeout=120,
        )
        assert proc.returncode == 0, proc.stderr
        cert = json.loads(proc.stdout)
        assert cert["overall_verdict"] == "kkt-pass"

    def test_usage_error_exit_code(self):
        proc = subprocess.run(
            [sys.executable, "-m", "paretocert", "check-kkt"],
            capture_output=True, text=True, timeout=60,
        )
        assert proc.returncode == 1
