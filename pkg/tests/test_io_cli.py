import json

import numpy as np
import pytest

from helpers import random_problem

from dlqg import io
from dlqg.cli import main
from dlqg.controller import GainSchedule


@pytest.fixture
def sec4_file(tmp_path, bench):
    path = tmp_path / "sec4.json"
    path.write_text(io.dump_problem(bench))
    return path


def write_variant(tmp_path, bench, name, **changes):
    d = io.problem_to_dict(bench)
    d.update(changes)
    path = tmp_path / name
    path.write_text(json.dumps(d, indent=2))
    return path


def test_dump_parse_round_trip():
    pr = random_problem(5, 3, 2, 1, 2, 1)
    again = io.parse_problem(io.dump_problem(pr))
    for key, val in pr.matrices().items():
        assert np.array_equal(getattr(again, key), val)
    assert again.dims == pr.dims


def test_cli_dump_config_round_trip(tmp_path, bench, capsys):
    out = tmp_path / "c.json"
    assert main(["dump-config", "-o", str(out)]) == 0
    assert io.load_problem(out).matrices().keys() == bench.matrices().keys()
    assert main(["dump-config", str(out)]) == 0
    assert json.loads(capsys.readouterr().out) == json.loads(out.read_text())


def test_unknown_key_rejected_with_line(tmp_path, bench):
    path = write_variant(tmp_path, bench, "bad.json", extra=1)
    with pytest.raises(io.ConfigError) as info:
        io.load_problem(path)
    assert "unknown key 'extra'" in str(info.value)
    lines = path.read_text().splitlines()
    assert '"extra"' in lines[info.value.line - 1]


def test_scalar_must_be_nested(tmp_path, bench):
    path = write_variant(tmp_path, bench, "s.json", A=2.7)
    with pytest.raises(io.ConfigError, match="list of rows"):
        io.load_problem(path)


def test_invalid_json_line(tmp_path):
    path = tmp_path / "x.json"
    path.write_text('{\n  "dims": {\n  "m": 1,,\n}')
    with pytest.raises(io.ConfigError) as info:
        io.load_problem(path)
    assert info.value.line == 3


def test_shape_error_points_at_key(tmp_path, bench):
    path = write_variant(tmp_path, bench, "shape.json", B1=[[1.0, 2.0]])
    with pytest.raises(io.ConfigError) as info:
        io.load_problem(path)
    assert "B1 has shape (1, 2)" in str(info.value)
    assert '"B1"' in path.read_text().splitlines()[info.value.line - 1]


def test_invariant_violation_is_config_error(tmp_path, bench):
    path = write_variant(tmp_path, bench, "qv.json", Qv2=[[0.0]])
    with pytest.raises(io.ConfigError, match="Qv2 not positive definite"):
        io.load_problem(path)
    assert main(["verify", str(path)]) == 1


def test_gains_round_trip(tmp_path, bench_n20, bench):
    _, g = bench_n20
    path = io.write_gains(tmp_path / "g.csv", g)
    back = io.read_gains(path, bench)
    assert np.array_equal(back.K, g.K) and np.array_equal(back.Gamma, g.Gamma)
    assert back.mode == g.mode


def test_gains_shape_mismatch(tmp_path, bench):
    path = io.write_gains(tmp_path / "g.csv", GainSchedule(np.zeros((2, 3, 2)), np.zeros((2, 1, 2))))
    with pytest.raises(io.ConfigError, match="does not match"):
        io.read_gains(path, bench)


def test_csv_full_precision(tmp_path):
    path = io.write_csv(tmp_path / "x.csv", ["k", "v"], [[0, 0.1 + 0.2]])
    value = path.read_text().splitlines()[1].split(",")[1]
    assert float(value) == 0.1 + 0.2


def test_solve_command(tmp_path, sec4_file):
    out = tmp_path / "solve"
    assert main(["solve", str(sec4_file), "--seed-p", "3", "--out-dir", str(out)]) == 0
    rows = (out / "riccati_trace.csv").read_text().splitlines()
    assert rows[0].startswith("k,P_0_0,S_0_0")
    assert float(rows[2].split(",")[1]) == pytest.approx(3.4436, abs=1e-3)
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["status"] == "converged"
    assert set(manifest["outputs"]) == {"riccati_trace.csv", "steady_state.csv", "gains.csv"}
    for name, digest in manifest["outputs"].items():
        assert io.sha256(out / name) == digest


def test_solve_null_objective_zero_gains(tmp_path, bench):
    path = write_variant(tmp_path, bench, "null.json", Q=[[0.0]], Theta=[[0.0]])
    out = tmp_path / "null"
    # a zero seed stays at the zero fixed point; a positive seed would reach the
    # minimum-energy stabilizing solution, which is nonzero for an unstable plant
    assert main(["solve", str(path), "--seed-p", "0", "--out-dir", str(out)]) == 0
    g = io.read_gains(out / "gains.csv", bench)
    assert not g.K.any() and not g.Gamma.any()


def test_solve_forced_non_convergence(tmp_path, sec4_file, capsys):
    out = tmp_path / "nc"
    assert main(["solve", str(sec4_file), "--max-iter", "1", "--out-dir", str(out)]) == 2
    assert (out / "riccati_trace.csv").exists()
    assert "residuals:" in capsys.readouterr().out
    assert json.loads((out / "manifest.json").read_text())["status"] == "max_iter"


def test_simulate_full_single(tmp_path, sec4_file):
    out = tmp_path / "sim"
    assert main(["simulate", str(sec4_file), "--reps", "1", "--record", "full", "--horizon", "5",
                 "--out-dir", str(out)]) == 0
    files = list((out / "trajectories").iterdir())
    assert len(files) == 1
    header = files[0].read_text().splitlines()[0]
    assert header == "k,x_0,y_0,y_1,y2_0,u1_0,u2_0,xhat1_0,xhat2_0,stage_cost"
    summary = (out / "summary.csv").read_text().splitlines()
    assert summary[0].startswith("# cost_mean=") and "rho=" in summary[0]
    assert summary[1] == "k,Exx_0_0,Sig1_emp_0_0,Sig2_emp_0_0"


def test_simulate_deterministic_manifests(tmp_path, sec4_file):
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        assert main(["simulate", str(sec4_file), "--reps", "300", "--seed", "9", "--out-dir", str(out)]) == 0
    assert (a / "manifest.json").read_text() == (b / "manifest.json").read_text()


def test_simulate_gains_file_too_short(tmp_path, sec4_file, bench_n20):
    _, g = bench_n20
    path = io.write_gains(tmp_path / "g.csv", GainSchedule(g.K[:3], g.Gamma[:3]))
    assert main(["simulate", str(sec4_file), "--gains", str(path), "--horizon", "5",
                 "--out-dir", str(tmp_path / "o")]) == 1


def test_verify_benchmark_passes(tmp_path, sec4_file):
    out = tmp_path / "v"
    assert main(["verify", str(sec4_file), "--out-dir", str(out)]) == 0
    checks = json.loads((out / "verify.json").read_text())
    assert all(c["pass"] for c in checks.values())
    assert {"spectral_radius", "monte_carlo_cost", "finite_gap_psd", "are_residual_P"} <= set(checks)


def test_verify_zero_gains_fails_spectral_radius(tmp_path, sec4_file):
    path = tmp_path / "zero.csv"
    io.write_gains(path, GainSchedule(np.zeros((1, 2, 1)), np.zeros((1, 1, 1))))
    out = tmp_path / "v"
    assert main(["verify", str(sec4_file), "--gains", str(path), "--out-dir", str(out)]) == 3
    checks = json.loads((out / "verify.json").read_text())
    assert not checks["spectral_radius"]["pass"]
    assert checks["spectral_radius"]["value"] == pytest.approx(2.7)


def test_verify_heavy_input_weights_still_stabilizes(tmp_path, bench):
    """R1 = R2 = 1e6 does not make the gains vanish on an unstable plant.

    The optimal law with expensive inputs reflects the unstable pole to 1/2.7,
    so the closed loop stays stable and verify passes.
    """
    path = write_variant(tmp_path, bench, "heavy.json", R1=[[1e6]], R2=[[1e6]])
    out = tmp_path / "v"
    assert main(["verify", str(path), "--out-dir", str(out)]) == 0
    rho = json.loads((out / "verify.json").read_text())["spectral_radius"]["value"]
    assert rho == pytest.approx(1 / 2.7, abs=1e-3)


def test_verify_identity_trivial_config(tmp_path, bench):
    path = write_variant(tmp_path, bench, "triv.json", A=[[0.0]], Qw=[[0.0]], Sigma0=[[0.0]])
    assert main(["verify", str(path)]) == 0


def test_example_sec4(tmp_path, capsys):
    out = tmp_path / "ex"
    assert main(["example-sec4", "--out-dir", str(out), "--reps", "2000", "--horizon", "60"]) == 0
    trace = (out / "riccati_trace.csv").read_text().splitlines()
    assert float(trace[2].split(",")[1]) == pytest.approx(3.4436, abs=1e-3)
    rows = [line.split(",") for line in (out / "second_moment.csv").read_text().splitlines()[1:]]
    assert float(rows[10][2]) >= 10 * float(rows[10][1])
    gaps = [float(line.split(",")[-1]) for line in (out / "error_covariance.csv").read_text().splitlines()[1:]]
    assert min(gaps) >= 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert {"sample_path.csv", "verify.json"} <= set(manifest["outputs"])
