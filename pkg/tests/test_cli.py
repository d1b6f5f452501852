import json

from swirlshock.cli import main


def test_background(tmp_path, capsys):
    assert main(["background", "--out-dir", str(tmp_path), "--points", "11"]) == 0
    assert "r_b=1.50048295244" in capsys.readouterr().out
    assert (tmp_path / "background.csv").exists()
    assert json.loads((tmp_path / "background.json").read_text())["m"] == 2


def test_solve_and_verify(tmp_path, capsys):
    args = ["--out-dir", str(tmp_path), "--grid", "16x16", "--epsilon", "1e-3"]
    assert main(["solve", *args]) == 0
    for f in ("shock.csv", "lagrangian.csv", "fields.csv", "iterations.csv", "report.json",
              "convergence.jsonl", "timings.json"):
        assert (tmp_path / f).exists(), f
    assert main(["verify", "--out-dir", str(tmp_path), "--from-dir", str(tmp_path)]) == 0
    assert "all checks passed" in capsys.readouterr().out


def test_invalid_config_exit_code(tmp_path):
    cfg = tmp_path / "bad.toml"
    cfg.write_text("[geometry]\ntheta0 = 2.0\n")
    assert main(["background", "--config", str(cfg), "--out-dir", str(tmp_path)]) == 2


def test_bad_grid_exit_code(tmp_path):
    assert main(["solve", "--out-dir", str(tmp_path), "--grid", "16by16"]) == 2


def test_solver_failure_exit_code(tmp_path):
    assert main(["solve", "--out-dir", str(tmp_path), "--grid", "16x16", "--max-iter", "1"]) == 3
