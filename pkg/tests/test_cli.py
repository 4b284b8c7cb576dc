import csv
import hashlib
import io
import json
import math
from pathlib import Path

import pytest

from cli import run
from specfun import gamma_fn

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def rows_of(text):
    return list(csv.reader(io.StringIO(text)))


def test_specfun_eval(capsys):
    assert run(["specfun", "eval", "--fn", "mlf", "--args", "1,1,1"]) == 0
    header, row = rows_of(capsys.readouterr().out)
    assert header == ["fn", "alpha", "beta", "z", "value", "est_err"]
    assert row[0] == "mlf"
    assert float(row[4]) == pytest.approx(math.e, rel=1e-12)


def test_specfun_leading_minus_and_arity(capsys):
    assert run(["specfun", "eval", "--fn", "gamma", "--args=-0.5"]) == 0
    _, row = rows_of(capsys.readouterr().out)
    assert float(row[2]) == pytest.approx(-2.0 * math.sqrt(math.pi))
    assert run(["specfun", "eval", "--fn", "wright", "--args", "0.5"]) == 1
    assert run(["specfun", "eval", "--fn", "gamma", "--args", "0"]) != 0


def test_solve_linear_problem(capsys):
    assert run(["solve", "--config", str(CONFIGS / "linear.json"), "--grid", "64"]) == 0
    header, *rows = rows_of(capsys.readouterr().out)
    assert header == ["segment", "t", "weighted_value", "value"]
    assert len(rows) == 65
    gamma = 0.6 + 0.5 * 0.4
    for label, t, weighted, value in rows[1:]:
        assert label == "evolution0"
        assert float(weighted) == pytest.approx(1.0 / gamma_fn(gamma), rel=1e-12)
        assert float(value) == pytest.approx(float(t) ** (gamma - 1.0) / gamma_fn(gamma), rel=1e-10)


def test_solve_on_graded_grid(capsys):
    assert run(["solve", "--config", str(CONFIGS / "linear.json"), "--grid", "32", "--grading", "2"]) == 0
    _, *rows = rows_of(capsys.readouterr().out)
    times = [float(row[1]) for row in rows]
    assert times[1] == pytest.approx(1.0 / 32**2)
    assert times[-1] == 1.0
    gamma = 0.6 + 0.5 * 0.4
    assert all(float(row[2]) == pytest.approx(1.0 / gamma_fn(gamma), rel=1e-12) for row in rows[1:])


def test_solve_rejects_zero_iteration_budget(capsys):
    assert run(["solve", "--config", str(CONFIGS / "linear.json"), "--grid", "16", "--max-iter", "0"]) == 1
    assert "max_iter" in capsys.readouterr().err


def test_solve_system_has_component_columns(capsys):
    assert run(["solve", "--config", str(CONFIGS / "system.json"), "--grid", "32"]) == 0
    header = rows_of(capsys.readouterr().out)[0]
    assert header == ["segment", "t", "weighted_value_1", "weighted_value_2", "value_1", "value_2"]


def test_solve_reports_non_convergence(capsys):
    code = run(["solve", "--config", str(CONFIGS / "impulsive.json"), "--grid", "32", "--max-iter", "1"])
    assert code == 3
    assert "[ERROR]" in capsys.readouterr().err


def test_invalid_problem_exits_with_violations(capsys):
    assert run(["solve", "--config", str(CONFIGS / "bad_mesh.json")]) == 2
    err = capsys.readouterr().err
    assert "violated: mesh-ordering" in err


def test_bound_sweep(capsys):
    assert run(["bound", "verify", "--seed", "7", "--instances", "5", "--grid", "256"]) == 0
    header, *rows = rows_of(capsys.readouterr().out)
    assert header == ["t", "u_tilde", "bound", "margin"]
    assert len(rows) == 5
    assert all(float(row[3]) <= 1e-9 * max(1.0, float(row[2])) for row in rows)


def test_bound_sweep_needs_seed(capsys):
    assert run(["bound", "verify", "--instances", "5"]) == 1
    assert "--seed" in capsys.readouterr().err


def test_bound_config_single_time(capsys):
    assert run(["bound", "--config", str(CONFIGS / "bound.json"), "--grid", "512", "--t", "0.8"]) == 0
    header, row = rows_of(capsys.readouterr().out)
    assert float(row[0]) == 0.8
    assert float(row[1]) <= float(row[2]) * (1.0 + 1e-9)


def test_ops_integral(capsys):
    assert run(["ops", "--config", str(CONFIGS / "ops_integral.json")]) == 0
    _, *rows = rows_of(capsys.readouterr().out)
    assert len(rows) == 257
    t, value = map(float, rows[-1])
    assert t == 1.0
    # I^{1/2} t^2 = Γ(3)/Γ(3.5) t^{2.5}
    assert value == pytest.approx(2.0 / gamma_fn(3.5), rel=1e-4)


def test_ops_hilfer_annihilates_weight(capsys):
    assert run(["ops", "--config", str(CONFIGS / "ops_hilfer.json")]) == 0
    _, *rows = rows_of(capsys.readouterr().out)
    interior = [abs(float(value)) for _, value in rows[1:-1]]
    assert max(interior) <= 1e-3


def test_ops_rejects_unknown_operation(tmp_path, capsys):
    path = tmp_path / "ops.json"
    path.write_text(json.dumps({"op": "laplace", "alpha": 0.5, "f": "t"}))
    assert run(["ops", "--config", str(path)]) == 2
    assert "violated: config-schema" in capsys.readouterr().err


@pytest.mark.parametrize(
    "data",
    [
        {"op": "integral", "alpha": "half", "f": "t"},
        {"op": "integral", "alpha": 0.5, "f": "t", "b": 0.0},
        {"op": "hilfer", "alpha": 0.5, "beta": 0.5, "f": "t", "grid": "many"},
        {"op": "integral", "f": "t"},
    ],
)
def test_ops_malformed_config_is_schema_violation(tmp_path, capsys, data):
    path = tmp_path / "ops.json"
    path.write_text(json.dumps(data))
    assert run(["ops", "--config", str(path)]) == 2
    err = capsys.readouterr().err
    assert "violated: config-schema" in err
    assert "Traceback" not in err


def test_stability_certificate(capsys):
    argv = ["stability", "--config", str(CONFIGS / "impulsive.json"), "--grid", "128", "--perturb", "eps=0.01,phi=exp,impulse=0.001"]
    assert run(argv) == 0
    lines = rows_of(capsys.readouterr().out)
    assert lines[0] == ["t", "observed_delta", "bound", "margin"]
    footer = lines[-1]
    assert footer[0] == "C" and footer[2] == "verdict" and footer[3] == "true"
    assert float(footer[1]) > 0.0


def test_stability_perturb_syntax():
    config = str(CONFIGS / "impulsive.json")
    assert run(["stability", "--config", config, "--perturb", "phi=1"]) == 1
    assert run(["stability", "--config", config, "--perturb", "eps=0.01,shape=1"]) == 1
    assert run(["stability", "--config", config, "--perturb", "eps=abc"]) == 1


def test_unknown_flag_is_usage_error(capsys):
    assert run(["solve", "--config", str(CONFIGS / "linear.json"), "--bogus"]) == 1
    assert "usage" in capsys.readouterr().err.lower()


def test_output_is_deterministic_with_manifest(tmp_path):
    outputs = []
    for name in ("first.csv", "second.csv"):
        out = tmp_path / name
        assert run(["bound", "verify", "--seed", "3", "--instances", "3", "--grid", "128", "--out", str(out)]) == 0
        outputs.append(out)
    assert outputs[0].read_bytes() == outputs[1].read_bytes()
    assert b"\r\n" not in outputs[0].read_bytes()
    manifest = json.loads(Path(f"{outputs[0]}.manifest.json").read_text())
    assert set(manifest) == {"command", "config_hash", "seed", "tool_version", "outputs"}
    assert manifest["seed"] == 3
    assert manifest["outputs"] == ["first.csv"]


def test_manifest_hashes_config(tmp_path):
    out = tmp_path / "solve.csv"
    assert run(["solve", "--config", str(CONFIGS / "linear.json"), "--grid", "16", "--out", str(out)]) == 0
    manifest = json.loads(Path(f"{out}.manifest.json").read_text())
    assert manifest["config_hash"] == hashlib.sha256((CONFIGS / "linear.json").read_bytes()).hexdigest()
