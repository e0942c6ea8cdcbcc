import csv
import json
import subprocess
import sys

import pytest

from cachenet.cli import build_parser, main
from cachenet.netmodel import read_instance, write_instance


@pytest.fixture
def diamond_file(diamond, tmp_path):
    f = tmp_path / "diamond.txt"
    write_instance(diamond, str(f))
    return str(f)


def test_parser_subcommands():
    ap = build_parser()
    for cmd in ("gen", "solve", "simulate", "bench"):
        assert cmd in ap._subparsers._group_actions[0].choices


def test_gen_round_trip(tmp_path):
    out = tmp_path / "a.txt"
    assert main(["gen", "--kind", "abilene", "--seed", "2", "--n-classes", "20", "--out", str(out)]) == 0
    p = read_instance(str(out))
    assert p.n_nodes == 9 and p.n_classes == 20


def test_gen_stdout(capsys):
    assert main(["gen", "--kind", "cycle", "--n-items", "3", "--n-classes", "6", "--n-sources", "3"]) == 0
    assert read_instance(capsys.readouterr().out).n_nodes == 30


def test_solve_json(diamond_file, tmp_path, capsys):
    lp = tmp_path / "d.lp"
    assert main(["solve", "--instance", diamond_file, "--report", "json", "--emit-lp", str(lp)]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep["gain"] >= (1 - 1 / 2.718281828459045) * 43
    assert lp.read_text().startswith("\\") or "Maximize" in lp.read_text()


def test_solve_text(diamond_file, capsys):
    assert main(["solve", "--instance", diamond_file]) == 0
    assert "certified ratio" in capsys.readouterr().out


@pytest.mark.parametrize("routing", ["d", "s", "u", "hh"])
def test_simulate_pga(diamond_file, tmp_path, routing):
    out = tmp_path / "t.csv"
    assert main(["simulate", "--instance", diamond_file, "--routing", routing, "--slots", "10",
                 "--slot-T", "10", "--out", str(out)]) == 0
    rows = list(csv.DictReader(out.open()))
    assert len(rows) == 10 and float(rows[-1]["time"]) == 100.0


def test_simulate_baseline(diamond_file, capsys):
    assert main(["simulate", "--instance", diamond_file, "--policy", "lru", "--routing", "s",
                 "--slots", "4", "--slot-T", "10"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "time,cost" and len(lines) > 5


def test_bench(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"instance": {"topology": "abilene"}, "policies": ["lru", "pga"],
                               "routings": ["s"], "total_time": 300, "warmup": 50, "seeds": [0]}))
    out = tmp_path / "r.csv"
    assert main(["bench", "--config", str(cfg), "--out", str(out)]) == 0
    rows = list(csv.DictReader(out.open()))
    assert [r["policy"] for r in rows] == ["lru", "pga", "lru", "pga"]


def test_bad_instance(tmp_path, capsys):
    f = tmp_path / "bad.txt"
    f.write_text("nodes 2 items 1\nedge 0 1\n")
    assert main(["solve", "--instance", str(f)]) == 1
    assert "line 2" in capsys.readouterr().err
    assert main(["solve", "--instance", str(tmp_path / "missing.txt")]) == 1


def test_console_module(diamond_file):
    r = subprocess.run([sys.executable, "-m", "cachenet.cli", "solve", "--instance", diamond_file],
                       capture_output=True, text=True)
    assert r.returncode == 0 and "gain" in r.stdout
