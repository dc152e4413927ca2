import hashlib
import json
import subprocess
import sys

import pytest

from invlab.cli import (
    EXIT_CONFIG,
    EXIT_IO,
    EXIT_NUMERIC,
    EXIT_OK,
    ConfigError,
    main,
    resolve_config,
)


def _run(tmp_path, command, config=None, *extra):
    out = tmp_path / "out"
    argv = [command, "--out", str(out), *extra]
    if config is not None:
        tmp_path.mkdir(parents=True, exist_ok=True)
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps(config))
        argv += ["--config", str(cfg)]
    return main(argv), out


def _hashes(out):
    return {p.name: hashlib.sha256(p.read_bytes()).hexdigest() for p in sorted(out.iterdir()) if p.name != "manifest.json"}


def test_degree_command_prints_table(tmp_path, capsys):
    code, out = _run(tmp_path, "degree", {"map": "angle-doubling", "refinement": 6, "points": [[0.1, 0.0], [3.0, 0.0]]})
    assert code == EXIT_OK
    lines = (out / "degree.csv").read_text().splitlines()
    assert lines[0] == "y1,y2,degree"
    assert lines[1].endswith(",2") and lines[2].endswith(",0")
    assert "degree" in capsys.readouterr().out


def test_manifest_lists_hashes(tmp_path):
    code, out = _run(tmp_path, "degree")
    man = json.loads((out / "manifest.json").read_text())
    assert code == EXIT_OK and man["config"]["command"] == "degree"
    for entry in man["outputs"]:
        assert hashlib.sha256((out / entry["file"]).read_bytes()).hexdigest() == entry["sha256"]


def test_unknown_key_exits_with_config_error_and_writes_nothing(tmp_path):
    code, out = _run(tmp_path, "degree", {"bogus": 1})
    assert code == EXIT_CONFIG and not out.exists()


def test_unknown_tolerance_is_rejected(tmp_path):
    code, out = _run(tmp_path, "cap-solve", None, "--tol", "nope=1")
    assert code == EXIT_CONFIG and not out.exists()


def test_malformed_json_is_a_config_error(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["degree", "--out", str(tmp_path / "o"), "--config", str(bad)]) == EXIT_CONFIG


def test_missing_config_file_is_io_error(tmp_path):
    assert main(["degree", "--config", str(tmp_path / "missing.json")]) == EXIT_IO


def test_bad_subcommand_is_a_config_error():
    assert main(["nonsense"]) == EXIT_CONFIG


def test_numeric_failure_exit_code(tmp_path):
    code, out = _run(tmp_path, "cap-solve", {"angle": 2.5})
    assert code == EXIT_NUMERIC and not out.exists()


def test_structured_config_and_seed(tmp_path):
    cfg = resolve_config("inv-check", {"params": {"samples": 10}, "seed": 5, "tolerances": {"skip_cells": 1.0}}, 0, "o", [], 1)
    assert cfg.seed == 5 and cfg.params["samples"] == 10 and cfg.tolerances["skip_cells"] == 1.0
    with pytest.raises(ConfigError):
        resolve_config("inv-check", {"params": {}, "extra": 1}, 0, "o", [], 1)
    with pytest.raises(ConfigError):
        resolve_config("inv-check", {}, -1, "o", [], 1)
    with pytest.raises(ConfigError):
        resolve_config("minimize", {"options": {"bogus": 1}}, 0, "o", [], 1)


def test_inv_check_finds_bubble(tmp_path, capsys):
    code, out = _run(tmp_path, "inv-check", {"map": "bubble-escape", "center": [0.5, 0.5], "radii": [0.3], "samples": 2000})
    assert code == EXIT_OK
    rep = json.loads((out / "inv_report.json").read_text())
    assert rep["reports"][0]["inside_violations"] >= 1
    assert len((out / "violations.csv").read_text().splitlines()) > 1
    assert "violations" in capsys.readouterr().out


def test_minimize_is_reproducible(tmp_path):
    cfg = {"resolution": 3, "options": {"inv_balls": 1, "inv_samples": 100}}
    code1, out1 = _run(tmp_path / "a", "minimize", cfg, "--seed", "4")
    code2, out2 = _run(tmp_path / "b", "minimize", cfg, "--seed", "4")
    assert code1 == code2 == EXIT_OK
    assert _hashes(out1) == _hashes(out2)
    assert {"energy_trace.csv", "final_mesh.txt", "final_values.txt", "minimize.json"} <= set(_hashes(out1))


def test_rerun_replaces_outputs(tmp_path):
    _run(tmp_path, "energy", {"map": "identity", "resolution": 1})
    code, out = _run(tmp_path, "energy", {"map": "identity", "resolution": 2})
    assert code == EXIT_OK
    assert json.loads((out / "manifest.json").read_text())["config"]["params"]["resolution"] == 2


def test_energy_of_infeasible_map_is_reported(tmp_path):
    # the bubble map folds simplices over
    code, out = _run(tmp_path, "energy", {"map": "bubble-escape", "n": 2, "resolution": 8})
    assert code == EXIT_OK
    assert json.loads((out / "energy.json").read_text())["total"] == "infinite"


def test_cap_solve_and_lsc(tmp_path):
    code, out = _run(tmp_path / "c", "cap-solve", {"refinement": 2, "layers": 3})
    assert code == EXIT_OK and json.loads((out / "cap_summary.json").read_text())["oscillation_ok"]
    code, out = _run(tmp_path / "l", "lsc", {"n": 2, "K": 3, "m_list": [1, 2], "resolution": 32})
    assert code == EXIT_OK and json.loads((out / "lsc.json").read_text())["gap"] > 0


def test_module_entry_point(tmp_path):
    r = subprocess.run(
        [sys.executable, "-m", "invlab", "degree", "--out", str(tmp_path / "o")],
        capture_output=True, text=True, check=False,
    )
    assert r.returncode == 0 and "degree" in r.stdout
