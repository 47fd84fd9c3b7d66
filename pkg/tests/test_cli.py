import json
import os

import pytest

from vrh import atomic
from vrh.cli import build_parser, main
from vrh.config import ConfigError, parse_config


def summary_line(capsys):
    out = capsys.readouterr().out.strip().splitlines()
    assert len(out) == 1
    return json.loads(out[0])


def test_defaults_and_types():
    cfg = parse_config("mott", ["beta_grid=5, 10,20"])
    assert cfg["beta_grid"] == [5.0, 10.0, 20.0]
    assert cfg["method"] == "corrector" and cfg["d"] == 2 and cfg["seed"] == 0
    cfg = parse_config("walk", ["beta=2.5"])
    assert cfg["beta"] == 2.5 and cfg["method"] == "kmc"


@pytest.mark.parametrize(
    "sub,items,text,needle",
    [
        ("mott", [], None, "beta_grid"),
        ("walk", ["d=1"], None, "d >= 2"),
        ("walk", ["beta=1", "beta=2"], None, "duplicate key 'beta'"),
        ("walk", [], "beta = 1\nbeta = 2\n", "duplicate key 'beta'"),
        ("walk", ["bogus=3"], None, "unknown key 'bogus'"),
        ("walk", ["E_c=0.5"], None, "does not apply to walk"),
        ("network", ["E_c=1.5"], None, "E_c"),
        ("walk", ["beta=hot"], None, "beta"),
        ("walk", ["beta"], None, "key = value"),
        ("percolation", ["p=1.2"], None, "p: value"),
    ],
)
def test_config_errors_name_the_key(sub, items, text, needle):
    with pytest.raises(ConfigError, match=needle):
        parse_config(sub, items, text)


def test_file_then_command_line_override():
    cfg = parse_config("walk", ["beta=3"], "# comment\nbeta = 2  # inline\nn_env=4\n")
    assert cfg["beta"] == 3.0 and cfg["n_env"] == 4


def test_help_lists_keys():
    text = build_parser().format_help()
    for k in ("beta_grid", "jump_budget", "N_grid", "selftest"):
        assert k in text


def test_selftest(capsys):
    assert main(["selftest"]) == 0
    s = summary_line(capsys)
    assert s["status"] == "ok" and s["passed"] == s["total"] == 6


def test_config_error_exit_code(capsys):
    assert main(["mott"]) == 2
    assert "beta_grid" in capsys.readouterr().err


def _run_twice(tmp_path, capsys, args):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(args + [f"out={a}"]) == 0
    capsys.readouterr()
    assert main(args + [f"out={b}"]) == 0
    capsys.readouterr()
    names = sorted(os.listdir(a))
    assert names == sorted(os.listdir(b))
    for n in names:
        if n != "config.json":
            assert (a / n).read_bytes() == (b / n).read_bytes(), n
    return a, names


def test_walk_deterministic_with_figure(tmp_path, capsys):
    a, names = _run_twice(tmp_path, capsys, ["walk", "box=24", "r_max=4", "horizon=4", "n_env=2", "n_traj=10"])
    assert {"walk_records.jsonl", "walk_summary.json", "walk.png", "config.json"} <= set(names)
    recs = [json.loads(l) for l in (a / "walk_records.jsonl").read_text().splitlines()]
    assert len(recs) == 20 and all("seed" in r for r in recs)


def test_gen_env_network_percolation_mott_outputs(tmp_path, capsys):
    a, names = _run_twice(tmp_path / "g", capsys, ["gen-env", "box=12"])
    assert "points.txt" in names and "points.png" in names
    a, names = _run_twice(tmp_path / "n", capsys, ["network", "N=4,6", "r_c=1.5", "n_samples=2"])
    assert {"network.csv", "graph.txt", "network.png", "network_records.jsonl"} <= set(names)
    assert (a / "network.csv").read_text().startswith("N,D_N,SE\n4,")
    a, names = _run_twice(tmp_path / "p", capsys, ["percolation", "N_grid=2,4", "n_samples=5", "calibration_samples=20"])
    assert {"scaling.csv", "field.rle", "crossings.jsonl", "scaling.png", "field.png"} <= set(names)
    a, names = _run_twice(tmp_path / "m", capsys, ["mott", "beta_grid=5,10", "box=20", "n_env=2", "network_N=4", "network_samples=2"])
    assert {"mott.csv", "mott.json", "mott.png"} <= set(names)


def test_strict_flags_exhausted_budget(tmp_path, capsys):
    args = ["walk", f"out={tmp_path}", "box=24", "r_max=4", "horizon=1000", "n_env=1", "n_traj=2", "jump_budget=10"]
    assert main(args) == 0
    s = summary_line(capsys)
    assert s["status"] == "flagged" and s["n_truncated"] == 2 and s["D"] == [None, None]
    assert main(["--strict"] + args) == 3


def test_no_partial_file_survives_a_crash(tmp_path, monkeypatch):
    target = tmp_path / "result.txt"
    target.write_text("old\n")

    class Boom(RuntimeError):
        pass

    def crash(_fd):
        raise Boom

    monkeypatch.setattr(atomic.os, "fsync", crash)
    with pytest.raises(Boom):
        atomic.atomic_write_text(target, "new content that must not appear\n")
    assert target.read_text() == "old\n"
    assert os.listdir(tmp_path) == ["result.txt"]
    monkeypatch.undo()
    atomic.atomic_write_text(target, "new\n")
    assert target.read_text() == "new\n"
