import json
import subprocess
import sys
from pathlib import Path

import pytest

from clustersched.cli import main

SCEN = Path(__file__).resolve().parents[1] / "src" / "clustersched" / "scenarios"
FIXTURE = Path(__file__).resolve().parents[1] / "src" / "clustersched" / "data" / "trace_fixture.csv"

SMALL = {
    "name": "tiny",
    "policies": ["bf-js", "vqs"],
    "servers": 2,
    "alpha": 0.5,
    "sizes": {"kind": "uniform", "a": "0.1", "b": "0.9"},
    "mu": 0.05,
    "horizon": 3000,
    "sample_every": 20,
    "seed": 11,
    "replications": 2,
    "sweep": {"param": "alpha", "values": [0.5, 0.8]},
}


def write(tmp_path, doc, name="tiny.json"):
    p = tmp_path / name
    p.write_text(json.dumps(doc, indent=2) + "\n")
    return p


def files(d: Path) -> dict[str, bytes]:
    return {p.name: p.read_bytes() for p in sorted(d.iterdir()) if p.is_file()}


def test_simulate_writes_outputs(tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["simulate", str(write(tmp_path, SMALL)), "--out", str(out)]) == 0
    names = set(files(out))
    assert {"tiny_bf-js_rep0.csv", "tiny_vqs_rep1.json", "tiny_summary.csv", "tiny_run.meta.json"} <= names
    summary = json.loads((out / "tiny_summary.json").read_text())
    assert len(summary) == 4
    assert "verdict" in capsys.readouterr().out


def test_simulate_rerun_is_byte_identical(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    f = write(tmp_path, SMALL)
    assert main(["simulate", str(f), "--out", str(a)]) == 0
    assert main(["--out", str(b), "simulate", str(f)]) == 0
    fa, fb = files(a), files(b)
    fa.pop("tiny_run.meta.json"), fb.pop("tiny_run.meta.json")
    assert fa == fb


def test_seed_override_changes_results(tmp_path):
    f = write(tmp_path, {**SMALL, "replications": 1})
    assert main(["simulate", str(f), "--out", str(tmp_path / "a")]) == 0
    assert main(["simulate", str(f), "--seed", "99", "--out", str(tmp_path / "b")]) == 0
    assert (tmp_path / "a" / "tiny_vqs.csv").read_bytes() != (tmp_path / "b" / "tiny_vqs.csv").read_bytes()


def test_sweep_is_deterministic_and_complete(tmp_path):
    f = write(tmp_path, SMALL)
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["sweep", str(f), "--out", str(a)]) == 0
    assert main(["sweep", str(f), "--out", str(b), "--workers", "2"]) == 0
    fa, fb = files(a), files(b)
    for d in (fa, fb):
        d.pop("tiny_sweep.meta.json")
    assert fa == fb
    long = (a / "tiny_sweep_long.csv").read_text().splitlines()
    assert len(long) == 1 + 2 * 2 * 2  # grid x policies x replications
    wide = (a / "tiny_sweep_wide.csv").read_text().splitlines()
    assert wide[0].split(",")[1:] == ["bf-js", "vqs"] and len(wide) == 3


def test_sweep_marks_failed_cells(tmp_path):
    doc = {**SMALL, "replications": 1, "sweep": {"param": "alpha", "values": [0.5, 1e9]}}
    doc["horizon"] = 50
    out = tmp_path / "o"
    rc = main(["sweep", str(write(tmp_path, doc)), "--out", str(out)])
    lines = (out / "tiny_sweep_long.csv").read_text().splitlines()
    assert rc == 0
    assert len(lines) == 1 + 2 * 2
    assert sum("failed: ValueError: expected" in l for l in lines) == 2


def test_empty_grid_is_an_error(tmp_path, capsys):
    doc = {**SMALL, "sweep": {"param": "alpha", "values": []}}
    out = tmp_path / "o"
    assert main(["sweep", str(write(tmp_path, doc)), "--out", str(out)]) == 2
    assert "grid is empty" in capsys.readouterr().err
    assert not out.exists()


def test_malformed_file_reports_line_and_writes_nothing(tmp_path, capsys):
    doc = {**SMALL, "mu": 3.0}
    f = write(tmp_path, doc)
    out = tmp_path / "o"
    assert main(["simulate", str(f), "--out", str(out)]) != 0
    err = capsys.readouterr().err
    line = next(i for i, l in enumerate(f.read_text().splitlines(), 1) if '"mu"' in l)
    assert f"{f}:{line}:" in err
    assert not out.exists()


def test_invalid_json_reports_line(tmp_path, capsys):
    f = tmp_path / "bad.json"
    f.write_text('{\n  "policy": "vqs",\n  "servers": 1,,\n}\n')
    assert main(["simulate", str(f), "--out", str(tmp_path / "o")]) == 2
    assert f"{f}:3:" in capsys.readouterr().err


def test_unknown_key(tmp_path, capsys):
    f = write(tmp_path, {**SMALL, "colour": "red"})
    assert main(["simulate", str(f)]) == 2
    assert "colour" in capsys.readouterr().err


def test_alpha_example_rate(tmp_path, capsys):
    doc = {"name": "a", "policy": "bf-js", "servers": 5, "alpha": 0.9, "mu": 0.01,
           "sizes": {"kind": "uniform", "a": "0.1", "b": "0.9"}, "horizon": 200, "sample_every": 10}
    out = tmp_path / "o"
    assert main(["simulate", str(write(tmp_path, doc, "a.json")), "--out", str(out)]) == 0
    assert json.loads((out / "a_bf-js.json").read_text())["arrival_rate"] == pytest.approx(0.09)


def test_oracle_command(capsys):
    assert main(["--format", "json", "oracle", "--sizes", "0.4", "0.6", "--kred", "2", "--mu", "0.01"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["rho_star"] == "2" and out["rho_kred"] == "4/3"
    assert out["lambda_star"] == pytest.approx(0.02)


def test_oracle_restrict(capsys):
    assert main(["oracle", "--sizes", "0.4", "0.6", "--restrict", "2,0", "0,1", "--format", "json"]) == 0
    assert json.loads(capsys.readouterr().out)["rho_restricted"] == "4/3"


def test_oracle_capacity(capsys):
    assert main(["oracle", "--sizes", "2", "5", "--probs", "2/3", "1/3", "--capacity", "10", "--format", "json"]) == 0
    assert json.loads(capsys.readouterr().out)["rho_star"]


def test_kred_command(capsys):
    assert main(["kred", "--J", "3"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0] == "index,counts" and len(lines) == 1 + 8


def test_prop1_command(capsys, tmp_path):
    assert main(["prop1", "--J", "2", "--trials", "10", "--seed", "1", "--format", "json", "--out", str(tmp_path)]) == 0
    assert json.loads(capsys.readouterr().out)["passed"] is True
    assert (tmp_path / "prop1_J2.json").exists()


def test_bounds_command(capsys):
    assert main(["bounds", "--law", "unit-uniform", "--n", "0", "1", "--J", "2", "--format", "json"]) == 0
    rows = json.loads(capsys.readouterr().out)
    assert [r["partition"] for r in rows] == ["quantile", "quantile", "universal"]
    assert [r["types"] for r in rows] == [2, 4, 4]
    assert (rows[0]["upper_rounded"], rows[0]["lower_rounded"]) == ("4/3", "4")
    assert main(["bounds"]) == 2


def test_trace_prep_command(tmp_path, capsys):
    assert main(["trace-prep", str(FIXTURE), "--scaling", "1.6", "--out", str(tmp_path)]) == 0
    golden = Path(__file__).parent / "fixtures" / "trace_fixture_scale1.6.csv"
    assert (tmp_path / "trace_fixture_prepared.csv").read_bytes() == golden.read_bytes()
    assert "kept 97 of 100" in capsys.readouterr().err
    assert main(["trace-prep", str(tmp_path / "missing.csv")]) == 2


@pytest.mark.parametrize("name", sorted(p.name for p in SCEN.glob("*.json")))
def test_shipped_scenarios_validate(name):
    from clustersched.cli import load_scenario_file

    opts, scenarios, _ = load_scenario_file(SCEN / name)
    assert scenarios


def test_quick_scenario_runs(tmp_path):
    assert main(["simulate", str(SCEN / "quick.json"), "--out", str(tmp_path)]) == 0


def test_console_script_entry_point():
    res = subprocess.run([sys.executable, "-m", "clustersched.cli", "--version"], capture_output=True, text=True)
    assert res.returncode == 0 and res.stdout.startswith("clustersched")
