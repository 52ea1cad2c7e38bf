"""Command line verbs, exit codes and scenario loading."""

import argparse
import json

import pytest

from ghostsim.cli import EXIT_BAD_INPUT, EXIT_MISMATCH, EXIT_OK, main, parse_seeds
from ghostsim.errors import ValidationError
from ghostsim.scenario import parse_scenario, parse_scenario_text

MINIMAL = """
name = "pair"
sim_end = 5.0
[topology]
nodes = [[0, 0.0, 0.0], [1, 20.0, 0.0]]
"""


@pytest.mark.parametrize("text,want", [("7", [7]), ("1-5", [1, 2, 3, 4, 5]), ("1,4,9", [1, 4, 9]),
                                       ("1-2,8", [1, 2, 8])])
def test_parse_seeds(text, want):
    assert parse_seeds(text) == want


@pytest.mark.parametrize("bad", ["", "5-1", "x"])
def test_parse_seeds_rejects(bad):
    with pytest.raises((argparse.ArgumentTypeError, ValueError)):
        parse_seeds(bad)


def test_validate_shipped_and_file(tmp_path, capsys):
    assert main(["validate", "sec6_dos38"]) == EXIT_OK
    assert "sec6_dos38: ok" in capsys.readouterr().out
    f = tmp_path / "pair.toml"
    f.write_text(MINIMAL)
    assert main(["validate", str(f)]) == EXIT_OK


def test_validate_bad_inputs(tmp_path, capsys):
    f = tmp_path / "bad.toml"
    f.write_text(MINIMAL.replace("[[0, 0.0, 0.0], ", "[") + "[node_defaults]\nduty_tau = 0.5\n")
    assert main(["validate", str(f)]) == EXIT_BAD_INPUT
    f.write_text("name = [unclosed")
    assert main(["validate", str(f)]) == EXIT_BAD_INPUT
    assert main(["validate", str(tmp_path / "missing.toml")]) == EXIT_BAD_INPUT
    assert "invalid scenario" in capsys.readouterr().err


def test_dos38_layout():
    sc = parse_scenario("sec6_dos38")
    assert len(sc.nodes) == 39
    assert sc.topology.positions[sc.topology.gateway] == (50.0, 50.0)


def test_missing_gateway_rejected():
    with pytest.raises(ValidationError):
        parse_scenario_text(MINIMAL.replace("[topology]", "[topology]\ngateway = 9"))


def test_duty_tau_above_period_rejected():
    with pytest.raises(ValidationError):
        parse_scenario_text(MINIMAL + "[node_defaults]\nduty_tau = 0.2\nduty_period = 0.1\n")


def test_run_writes_to_env_default(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("GHOSTSIM_OUT", str(tmp_path))
    assert main(["run", "analytic_sweep", "--scenario", "fig1_chain"]) == EXIT_OK
    out = tmp_path / "analytic_sweep-fig1_chain"
    meta = json.loads((out / "manifest.json").read_text())
    assert meta["kind"] == "analytic_sweep" and "analytic.csv" in meta["files"]
    assert "case 1" in capsys.readouterr().out


def test_run_dump_frames(tmp_path):
    assert main(["run", "nonce_reuse_demo", "--scenario", "replay_demo", "--out", str(tmp_path),
                 "--dump-frames"]) == EXIT_OK
    lines = (tmp_path / "frames.txt").read_text().splitlines()
    assert lines and all(line.startswith("seed=1|") for line in lines)
    assert "|ctr=" in lines[0] and "malformed" not in lines[0]


def _without_timestamp(path):
    meta = json.loads(path.read_text())
    meta.pop("created")
    return meta


def test_same_seed_same_bytes(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for d in (a, b):
        assert main(["run", "nonce_reuse_demo", "--scenario", "replay_demo", "--seed", "3", "--out", str(d)]) == 0
    files = sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file())
    assert files == sorted(p.relative_to(b) for p in b.rglob("*") if p.is_file())
    for rel in files:
        if rel.name == "manifest.json":
            assert _without_timestamp(a / rel) == _without_timestamp(b / rel)
        else:
            assert (a / rel).read_bytes() == (b / rel).read_bytes(), rel


def test_compare_identical_and_mismatched(tmp_path, capsys):
    a = tmp_path / "a"
    main(["run", "nonce_reuse_demo", "--scenario", "replay_demo", "--out", str(a)])
    assert main(["compare", str(a), str(a), "--out", str(tmp_path / "cmp")]) == EXIT_OK
    rows = (tmp_path / "cmp" / "compare.csv").read_text().splitlines()[1:]
    assert rows
    for row in rows:
        cells = row.split(",")
        assert float(cells[3]) == 0.0
        assert cells[6] == "" if cells[0] == "0" else float(cells[6]) == 0.0  # mains gateway has no drain

    b = tmp_path / "b"
    main(["run", "nonce_reuse_demo", "--scenario", "replay_demo", "--out", str(b)])
    (b / "seed1" / "summary.csv").write_text(
        (b / "seed1" / "summary.csv").read_text().rsplit("\n", 2)[0] + "\n")  # drop the last node
    capsys.readouterr()
    assert main(["compare", str(a), str(b)]) == EXIT_MISMATCH


def test_run_without_attacker_is_bad_input(tmp_path, capsys):
    f = tmp_path / "pair.toml"
    f.write_text(MINIMAL)
    assert main(["run", "replay_demo", "--scenario", str(f), "--out", str(tmp_path / "o")]) == EXIT_BAD_INPUT
    assert "needs an [[attacker]]" in capsys.readouterr().err
