import csv
import json
import os

import numpy as np
import pytest

from mfgchar import report
from mfgchar.cli import main
from mfgchar.errors import ConfigError, InvalidInputError
from mfgchar.measure import EmpiricalMeasure
from mfgchar.scenarios import CATALOG, STANDARD, Scenario


def read_csv(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def manifest(out):
    with open(os.path.join(out, "manifest.json")) as fh:
        return json.load(fh)


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


TRIVIAL_INI = """
[scenario]
name = mine
d = 1

[hamiltonian]
kind = quadratic

[running_cost]
kind = zero

[initial_cost]
kind = constant
value = 0.5

[measure]
kind = explicit
particles = 0.1; 0.4; 0.8

[solver]
T = 0.1
s = 0.1
K = 20
grid = 8
"""


def test_catalog_scenarios_load():
    for name in CATALOG:
        sc = Scenario.load(name)
        assert sc.name == name
        assert sc.measure().n >= 1
        assert sc.config().K >= 2
    assert "diverge" not in STANDARD


def test_ini_and_json_round_trip(tmp_path):
    sc = Scenario.from_file(write(tmp_path, "a.ini", TRIVIAL_INI))
    assert sc.measure().n == 3 and sc.d == 1
    again = Scenario.from_file(write(tmp_path, "b.ini", sc.to_ini()))
    assert again.echo() == sc.echo()
    as_json = Scenario.from_file(write(tmp_path, "c.json", json.dumps(sc.echo())))
    assert as_json.echo() == sc.echo()
    conv = Scenario.load("conv2d")
    rt = Scenario.from_file(write(tmp_path, "d.ini", conv.to_ini()))
    assert rt.echo() == conv.echo()


def test_config_errors(tmp_path):
    with pytest.raises(ConfigError):
        Scenario.from_file(write(tmp_path, "x.ini", TRIVIAL_INI + "bogus = 1\n"))
    with pytest.raises(ConfigError):
        Scenario.from_file(write(tmp_path, "y.ini", TRIVIAL_INI + "[extra]\na = 1\n"))
    with pytest.raises(ConfigError):
        Scenario.load("no-such-scenario")
    with pytest.raises(InvalidInputError):
        Scenario.from_file(write(tmp_path, "z.ini", TRIVIAL_INI.replace("s = 0.1", "s = 0.3")))
    data = Scenario.load("conv1d").data
    with pytest.raises(InvalidInputError):
        Scenario(dict(data, solver=dict(data["solver"], theta=1.0)))


def test_uniform_sampling_uses_pcg64():
    sc = Scenario.load("conv2d")
    expected = np.random.Generator(np.random.PCG64(1)).random((6, 2))
    assert sc.measure() == EmpiricalMeasure(expected)
    assert sc.with_overrides(seed=2).measure() != sc.measure()


def test_sweep_levels():
    assert Scenario.load("conv1d").sweep_levels() == [(40, 16, 4), (80, 32, 8), (160, 64, 16)]
    assert Scenario.load("trivial").sweep_levels() == [(40, 16, None)]


def test_solve_trivial(tmp_path):
    out = str(tmp_path / "o")
    assert main(["solve", "--scenario", "trivial", "--out", out]) == 0
    m = manifest(out)
    assert m["status"] == "ok" and m["iterations"] <= 2
    assert m["wall_time_s"] is None
    rows = read_csv(os.path.join(out, "field.csv"))
    assert rows and set(rows[0]) == {"k", "t", "point_id", "kind", "sigma1_0", "sigma2_0"}
    assert all(float(r["sigma2_0"]) == 0.0 for r in rows)
    sol = read_csv(os.path.join(out, "solution.csv"))
    assert all(float(r["U"]) == 0.7 for r in sol)


def test_solve_oracle_contracts(tmp_path):
    out = str(tmp_path / "o")
    assert main(["solve", "--scenario", "oracle1d", "--out", out, "--K", "40",
                 "--grid", "16"]) == 0
    assert all(r < 1 for r in manifest(out)["ratios"])


def test_solve_diverge_exit_code(tmp_path):
    out = str(tmp_path / "o")
    assert main(["solve", "--scenario", "diverge", "--out", out]) == 2
    m = manifest(out)
    assert m["status"] == "no_convergence"
    assert max(m["ratios"]) >= 1


def test_invalid_config_exit_code(tmp_path):
    bad = write(tmp_path, "bad.ini", TRIVIAL_INI.replace("kind = zero", "kind = nope"))
    out = str(tmp_path / "o")
    assert main(["solve", "--scenario", bad, "--out", out]) == 3
    assert manifest(out)["status"] == "invalid_config"
    assert main(["verify", "--scenario", "trivial", "--out", out, "--s", "0.0123"]) == 3


def test_check_failure_exit_code(tmp_path):
    text = TRIVIAL_INI + "\n[checks]\nhjb = -1\n"
    out = str(tmp_path / "o")
    assert main(["verify", "--scenario", write(tmp_path, "c.ini", text), "--out", out]) == 4
    assert manifest(out)["status"] == "check_failed"


def test_verify_trivial_and_conv2d(tmp_path):
    out = str(tmp_path / "t")
    assert main(["verify", "--scenario", "trivial", "--out", out]) == 0
    rows = read_csv(os.path.join(out, "residuals.csv"))
    names = [r["check_name"] for r in rows]
    assert len(names) == len(set(names))
    for r in rows:
        if r["check_name"] not in ("fixed_point", "initial_condition", "contraction",
                                   "jacobian_det"):
            assert float(r["value"]) <= 1e-8
    assert [c["name"] for c in manifest(out)["checks"]] == names

    out2 = str(tmp_path / "c")
    assert main(["verify", "--scenario", "conv2d", "--out", out2, "--K", "8",
                 "--grid", "8"]) in (0, 4)
    sym = [r for r in read_csv(os.path.join(out2, "residuals.csv"))
           if r["check_name"] == "symmetry"]
    assert len(sym) == 1


def test_master_trivial(tmp_path):
    out = str(tmp_path / "m")
    assert main(["master", "--scenario", "trivial", "--out", out]) == 0
    rows = read_csv(os.path.join(out, "master.csv"))
    assert len(rows) == 2
    assert all(abs(float(r["residual"])) <= 1e-8 for r in rows)
    assert "upsilon_rel_error" in rows[0]
    assert manifest(out)["resolves"]


def test_convergence_single_level(tmp_path):
    out = str(tmp_path / "c")
    assert main(["convergence", "--scenario", "trivial", "--out", out]) == 0
    rows = read_csv(os.path.join(out, "convergence.csv"))
    assert rows and all(r["ratio"] == "" for r in rows)
    for f in manifest(out)["files"]:
        assert os.path.exists(os.path.join(out, f))
    svg = open(os.path.join(out, "convergence_iterations.svg")).read()
    assert svg.startswith("<svg") and svg.rstrip().endswith("</svg>")


def test_byte_identical_reruns(tmp_path):
    outs = []
    for i in range(2):
        out = str(tmp_path / f"r{i}")
        assert main(["solve", "--scenario", "conv2d", "--out", out, "--K", "4",
                     "--grid", "4", "--seed", "7"]) == 0
        outs.append(out)
    for f in ("field.csv", "solution.csv", "manifest.json"):
        a = open(os.path.join(outs[0], f), "rb").read()
        b = open(os.path.join(outs[1], f), "rb").read()
        assert a == b


def test_timing_flag_records_wall_time(tmp_path):
    out = str(tmp_path / "t")
    assert main(["solve", "--scenario", "trivial", "--out", out, "--timing"]) == 0
    assert manifest(out)["wall_time_s"] >= 0


def test_report_writers(tmp_path):
    assert report.fmt(0.1) == "0.1" and report.fmt(None) == "" and report.fmt(True) == "true"
    p = str(tmp_path / "x.json")
    report.write_json(p, {"b": np.float64(np.inf), "a": np.arange(2)})
    assert json.load(open(p)) == {"a": [0, 1], "b": "inf"}
    svg = str(tmp_path / "x.svg")
    report.svg_line_chart(svg, "t<1>", [0, 1, 2], [1e-2, 1e-3, 0.0])
    text = open(svg).read()
    assert "polyline" in text and "t&lt;1&gt;" in text
