import json
import math

import numpy as np
import pytest

from lagspec import cli, scenarios
from lagspec.errors import IntegratorError, StructureError


def _run(argv, capsys):
    code = cli.main(argv)
    return code, capsys.readouterr()


def test_list(capsys):
    code, out = _run(["list"], capsys)
    assert code == 0
    names = [line.split("\t")[0] for line in out.out.splitlines()]
    assert names == sorted(scenarios.BUILTINS)
    assert {"zero", "figure1", "fold-family", "torus-cliffwall"} <= set(names)


def test_run_zero_writes_report(tmp_path, capsys):
    code, out = _run(["run", "zero", "--out-dir", str(tmp_path)], capsys)
    assert code == 0 and "zero: PASS" in out.out
    rep = json.loads((tmp_path / "zero" / "report.json").read_text())
    assert rep["pass"] is True and rep["scenario"] == "zero"
    assert rep["schema_version"] == scenarios.REPORT_SCHEMA_VERSION
    assert list(tmp_path.joinpath("zero").glob("*.svg"))


def test_outputs_are_deterministic(tmp_path, capsys):
    for d in ("a", "b"):
        assert _run(["run", "base-lift", "--out-dir", str(tmp_path / d)], capsys)[0] == 0
    files = sorted(p.name for p in (tmp_path / "a" / "base-lift").iterdir())
    assert "report.json" in files and any(f.endswith(".csv") for f in files)
    assert any(f.endswith(".svg") for f in files)
    for f in files:
        assert (tmp_path / "a" / "base-lift" / f).read_bytes() == (tmp_path / "b" / "base-lift" / f).read_bytes(), f


def test_plot_writes_figures_only(tmp_path, capsys):
    code, _ = _run(["plot", "constant", "--out-dir", str(tmp_path)], capsys)
    assert code == 0
    files = {p.suffix for p in (tmp_path / "constant").iterdir()}
    assert files == {".svg"}


def test_scenario_file_and_schema_errors(tmp_path, capsys):
    good = tmp_path / "mine.json"
    good.write_text(json.dumps({"name": "mine", "kind": "curve",
                                "hamiltonian": {"kind": "zero", "dimension": 1}, "checks": ["spectral"]}))
    code, out = _run(["run", str(good), "--out-dir", str(tmp_path / "o"), "--no-plots"], capsys)
    assert code == 0 and "mine: PASS" in out.out
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"name": "bad", "kind": "curve", "colour": "red"}))
    code, out = _run(["run", str(bad), "--out-dir", str(tmp_path / "o")], capsys)
    assert code == 2 and "schema" in out.err
    code, _ = _run(["run", str(tmp_path / "missing.json")], capsys)
    assert code == 2


def test_bad_resolution_is_usage_error(capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main(["run", "zero", "--resolution", "q=3"])
    assert exc.value.code == 2


def test_parse_resolution():
    assert cli.parse_resolution("1024") == {"n": 1024}
    assert cli.parse_resolution("n=512,grid=64,steps=32") == {"n": 512, "grid": 64, "steps": 32}


def test_load_scenario_rejects_bad_input():
    with pytest.raises(StructureError):
        scenarios.load_scenario({"name": "x", "kind": "curve"})
    with pytest.raises(StructureError):
        scenarios.load_scenario({"name": "x", "kind": "curve", "hamiltonian": {"kind": "no-such"}})
    with pytest.raises(StructureError):
        scenarios.load_scenario({"name": "x", "kind": "torus", "resolution": {"grid": 4}})
    sc = scenarios.load_scenario("figure1")
    sc["name"] = "changed"
    assert scenarios.BUILTINS["figure1"]["name"] == "figure1"


def test_numerical_failure_exit_code(tmp_path, capsys, monkeypatch):
    def boom(sc, res, tol_scale=1.0):
        raise IntegratorError("step size collapsed")

    monkeypatch.setitem(scenarios.RUNNERS, "curve", boom)
    code, out = _run(["run", "zero", "--out-dir", str(tmp_path), "--no-plots"], capsys)
    assert code == 3 and "zero: FAIL" in out.out
    rep = json.loads((tmp_path / "zero" / "report.json").read_text())
    assert rep["numerical_failure"] is True and rep["error"] == "IntegratorError"


def test_verify_runs_all_checks(tmp_path, capsys):
    code, _ = _run(["verify", "constant", "--out-dir", str(tmp_path), "--no-plots"], capsys)
    assert code == 0
    rep = json.loads((tmp_path / "constant" / "report.json").read_text())
    assert rep["checks_requested"] == cli.ALL_CHECKS["curve"]


def test_clean_makes_json_safe():
    x = scenarios._clean({1: np.float64(0.5), "a": (np.int64(2), np.bool_(True)), "b": np.arange(2),
                          "c": math.nan})
    assert x == {"1": 0.5, "a": [2, True], "b": [0, 1], "c": None}
    json.dumps(x, allow_nan=False)
