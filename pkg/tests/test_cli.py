import json

import pytest

from chaos_cli import build_parser, main


def _write_config(tmp_path, **overrides):
    data = {
        "integrands": {
            "unit": {"type": "cellwise", "order": 1, "grid": [[0, 1]], "coeffs": [{"idx": [1], "val": 1}]},
        },
        "n_grid": [100, 10000],
        "replicates": 50,
        "output_dir": str(tmp_path / "out"),
        "checks": [
            {"id": "schedule", "type": "validate"},
            {"id": "sweep", "type": "flimits", "f": "unit", "g": "unit"},
        ],
    }
    data.update(overrides)
    path = tmp_path / "config.json"
    path.write_text(json.dumps(data), encoding="utf-8")
    return path


def test_parser_lists_every_check_type():
    parser = build_parser()
    for command in ("validate", "moments", "mean", "diagram-check", "flimits", "converge", "gaussianity", "all"):
        args = parser.parse_args([command, "config.json"])
        assert args.command == command
    with pytest.raises(SystemExit):
        parser.parse_args(["bogus", "config.json"])


def test_validate_passes(tmp_path, capsys):
    path = _write_config(tmp_path)
    assert main(["validate", str(path)]) == 0
    out = capsys.readouterr().out
    assert "✅" in out
    assert (tmp_path / "out" / "results" / "validate.csv").exists()
    assert not (tmp_path / "out" / "results" / "flimits.csv").exists()


def test_all_runs_every_check(tmp_path):
    path = _write_config(tmp_path)
    assert main(["all", str(path)]) == 0
    summary = json.loads((tmp_path / "out" / "summary.json").read_text(encoding="utf-8"))
    assert summary["schedule"]["pass"] and summary["sweep"]["pass"]


def test_out_dir_and_seed_overrides(tmp_path):
    path = _write_config(tmp_path)
    target = tmp_path / "elsewhere"
    assert main(["flimits", str(path), "--out-dir", str(target), "--seed", "42"]) == 0
    summary = json.loads((target / "summary.json").read_text(encoding="utf-8"))
    assert summary["_run"]["master_seed"] == 42


def test_config_error_exit_code(tmp_path, capsys):
    path = _write_config(tmp_path, replicates="many")
    assert main(["all", str(path)]) == 2
    assert "配置错误" in capsys.readouterr().err


def test_bad_replicates_override(tmp_path):
    path = _write_config(tmp_path)
    assert main(["all", str(path), "--replicates", "1"]) == 2


def test_missing_check_type_exit_code(tmp_path, capsys):
    path = _write_config(tmp_path)
    assert main(["converge", str(path)]) == 2
    assert "converge" in capsys.readouterr().err


def test_failing_check_exit_code(tmp_path, capsys):
    path = _write_config(tmp_path, schedule={"window": {"rule": "power", "alpha": 2.0}})
    assert main(["validate", str(path)]) == 1
    assert "❌" in capsys.readouterr().out


def test_precondition_failure_exit_code(tmp_path, capsys):
    path = _write_config(
        tmp_path,
        integrands={
            "wide": {"type": "chaos", "components": [None, {"type": "cellwise", "order": 1, "grid": [[0, 50]], "coeffs": [{"idx": [1], "val": 1}]}]},
        },
        checks=[{"id": "c", "type": "converge", "h": "wide", "replicates": 10}],
    )
    assert main(["converge", str(path)]) == 2
    assert "wide" in capsys.readouterr().err
