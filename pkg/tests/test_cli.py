import csv
import json
import subprocess
import sys

import pytest

from mbs import zoo
from mbs.cli import main
from mbs.stats import uniform_stats


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture
def r20(tmp_path):
    model = tmp_path / "r20.json"
    assert run("zoo", "emit", "--family", "resnet-cifar", "--depth", 20, "--out", model) == 0
    return model


def test_pipeline_smoke(tmp_path, r20, capsys):
    stats, plan, out = tmp_path / "s.json", tmp_path / "p.json", tmp_path / "r.csv"
    assert run("stats", "simulate", "--model", r20, "--images", 2, "--seed", 3, "--out", stats) == 0
    assert run("plan", "--model", r20, "--stats", stats, "--z-factor", 1.0, "--out", plan) == 0
    assert run("report", "--model", r20, "--plan", plan, "--alpha", 0.7, "--format", "csv", "--out", out) == 0
    with open(out, newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert [r["variant"] for r in rows] == ["mbs", "alpha=0.7"]
    assert run("apply", "--model", r20, "--plan", plan, "--out", tmp_path / "compact.json") == 0
    compact = json.loads((tmp_path / "compact.json").read_text())
    assert compact["version"] == "mbs-ir/1"
    capsys.readouterr()
    assert run("analyze", "--model", r20, "--z", 32) == 0
    assert "boundary" in capsys.readouterr().out
    assert run("tradeoff", "--model", r20, "--stats", stats, "--format", "json") == 0
    assert len(json.loads(capsys.readouterr().out)) == 5


def test_fingerprint_mismatch(tmp_path, r20, capsys):
    other = tmp_path / "r32.json"
    run("zoo", "emit", "--family", "resnet-cifar", "--depth", 32, "--out", other)
    stats = tmp_path / "s.json"
    run("stats", "simulate", "--model", r20, "--images", 1, "--out", stats)
    assert run("plan", "--model", other, "--stats", stats) == 3
    err = capsys.readouterr().err.strip()
    assert err.startswith("error[fingerprint]:")
    assert len(err.splitlines()) == 1


def test_unknown_subcommand(capsys):
    with pytest.raises(SystemExit) as exc:
        run("frobnicate")
    assert exc.value.code != 0
    assert "usage:" in capsys.readouterr().err


def test_no_silent_overwrite(tmp_path, r20, capsys):
    before = r20.read_text()
    assert run("zoo", "emit", "--family", "resnet-cifar", "--depth", 32, "--out", r20) == 2
    assert "error[io]" in capsys.readouterr().err
    assert r20.read_text() == before
    assert run("zoo", "emit", "--family", "resnet-cifar", "--depth", 32, "--out", r20, "--force") == 0
    assert r20.read_text() != before


def test_missing_file_is_io(tmp_path, capsys):
    assert run("analyze", "--model", tmp_path / "nope.json") == 2
    assert capsys.readouterr().err.startswith("error[io]")


def test_invalid_model_is_validation(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{"version": "mbs-ir/1", "name": "x"}')
    assert run("analyze", "--model", bad) == 3
    assert capsys.readouterr().err.startswith("error[validation]")


def test_strict_degenerate(tmp_path, r20, capsys, caplog):
    g = zoo.resnet_cifar(20)
    stats = tmp_path / "zero.json"
    stats.write_text(uniform_stats(g, 0.0).serialize())
    assert run("plan", "--model", r20, "--stats", stats, "--strict") == 4
    assert capsys.readouterr().err.startswith("error[degenerate]")
    assert run("plan", "--model", r20, "--stats", stats) == 0
    assert "zero effective flops" in caplog.text


def test_z_and_factor_exclusive(r20):
    with pytest.raises(SystemExit):
        run("analyze", "--model", r20, "--z", 10, "--z-factor", 1)


def test_console_script_module():
    proc = subprocess.run([sys.executable, "-m", "mbs.cli", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0 and "tradeoff" in proc.stdout
