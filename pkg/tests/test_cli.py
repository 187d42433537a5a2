import csv
import json
import subprocess
import sys

import pytest

from meanfield.cli import main


def _run(tmp_path, *argv):
    return main([*argv, "--output", str(tmp_path)])


def _table(path):
    with open(path) as fh:
        lines = fh.read().splitlines()
    return lines[0], list(csv.reader(lines[1:]))


def test_critpoints_finds_three(tmp_path):
    assert _run(tmp_path, "critpoints", "--preset", "rect-torus-n2", "--grid", "128") == 0
    first, rows = _table(tmp_path / "critpoints" / "critpoints.csv")
    assert first.startswith("# meanfield")
    assert len(rows) == 1 + 3
    assert all("[" in col for col in rows[0])
    assert json.loads((tmp_path / "critpoints" / "summary.json").read_text())["count"] == 3


def test_output_is_deterministic(tmp_path):
    for d in ("a", "b"):
        assert _run(tmp_path / d, "landscape", "--preset", "rect-torus-n2", "--points", "0.5,0.75;0.5,0") == 0
    a = (tmp_path / "a" / "landscape" / "landscape.csv").read_text().splitlines()
    b = (tmp_path / "b" / "landscape" / "landscape.csv").read_text().splitlines()
    assert a[1:] == b[1:]


def test_green_checks_on_the_sphere(tmp_path):
    assert _run(tmp_path, "green", "--surface", "sphere", "--check", "all") == 0


@pytest.mark.parametrize("argv", [
    ("landscape", "--preset", "rect-torus-n2", "--points", "0,0"),
    ("solve", "--preset", "rect-torus-n2", "--lam", "window+"),
])
def test_configuration_errors_exit_2(tmp_path, argv, capsys):
    assert _run(tmp_path, *argv) == 2
    assert capsys.readouterr().err.startswith("error:")


def test_unknown_key_in_file(tmp_path):
    p = tmp_path / "bad.yaml"
    p.write_text("surface: {kind: sphere}\ncolour: red\n")
    assert _run(tmp_path, "landscape", "--config", str(p)) == 2


def test_dump_config_round_trips(tmp_path, capsys):
    assert main(["landscape", "--preset", "sphere-antipodal", "--grid", "64", "--dump-config"]) == 0
    d = json.loads(capsys.readouterr().out)
    assert d["grid"] == 64 and d["surface"] == {"kind": "sphere"}


def test_console_entry_point():
    r = subprocess.run([sys.executable, "-m", "meanfield.cli", "--version"], capture_output=True, text=True)
    assert r.returncode == 0 and r.stdout.strip()
