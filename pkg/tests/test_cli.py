from __future__ import annotations

import csv
import json
import subprocess
import sys

import pytest

from starfish.cli import main, opcount_csv


def read(path):
    return path.read_bytes()


def test_trace_bundled_walkthrough(tmp_path, capsys):
    assert main(["trace", "fig2", "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert "M        active" in out and "escrow=32 A=17 B=9 C=6" in out
    final = json.loads((tmp_path / "final.json").read_text())
    assert final["merges"]["M"]["capacities"] == {"A": 17, "B": 9, "C": 6}
    events = [json.loads(x) for x in (tmp_path / "events.jsonl").read_text().splitlines()]
    assert events[0] == {"event": "round", "payload": {}, "round": 0, "source": "world"}
    assert any(e["event"] == "closedM" and e["source"] == "contract:M" for e in events)


def test_trace_empty_schedule_logs_only_round_ticks(tmp_path):
    sc = tmp_path / "empty.json"
    sc.write_text('{"parties": ["A"], "funding": {"A": 1}, "schedule": []}')
    assert main(["trace", str(sc), "--out", str(tmp_path / "o")]) == 0
    events = [json.loads(x) for x in (tmp_path / "o" / "events.jsonl").read_text().splitlines()]
    assert events and all(e["event"] == "round" for e in events)


def test_trace_stale_close_pays_latest(tmp_path):
    assert main(["trace", "--config", "stale-close", "--out", str(tmp_path)]) == 0
    final = json.loads((tmp_path / "final.json").read_text())
    assert final["ledger"] == {"A": 14, "H": 26}


def test_trace_schema_errors_exit_2(tmp_path, caplog):
    sc = tmp_path / "bad.json"
    sc.write_text('{"parties": ["A"], "schedule": [{"round": 0, "party": "A", "op": "fly"}]}')
    assert main(["trace", str(sc), "--out", str(tmp_path / "o")]) == 2
    assert "schedule[0]: unknown op 'fly'" in caplog.text
    broken = tmp_path / "broken.json"
    broken.write_text('{"parties": ["A"],\n "schedule": [}')
    assert main(["trace", str(broken), "--out", str(tmp_path / "o2")]) == 2
    assert "line 2" in caplog.text
    assert main(["trace", "no-such-bundle", "--out", str(tmp_path / "o3")]) == 2


def test_trace_refuses_to_overwrite(tmp_path):
    assert main(["trace", "stale-close", "--out", str(tmp_path)]) == 0
    first = read(tmp_path / "events.jsonl")
    assert main(["trace", "stale-close", "--out", str(tmp_path)]) == 2
    assert main(["trace", "stale-close", "--out", str(tmp_path), "--force"]) == 0
    assert read(tmp_path / "events.jsonl") == first


def test_trace_seed_changes_signatures_not_outcome(tmp_path):
    assert main(["trace", "stale-close", "--out", str(tmp_path / "a"), "--seed", "1"]) == 0
    assert main(["trace", "stale-close", "--out", str(tmp_path / "b"), "--seed", "2"]) == 0
    assert read(tmp_path / "a" / "final.json") == read(tmp_path / "b" / "final.json")


def test_opcount_table(tmp_path, capsys):
    assert main(["opcount", "--max-n", "10", "--out", str(tmp_path)]) == 0
    rows = list(csv.DictReader((tmp_path / "opcount.csv").read_text().splitlines()))
    assert rows[0] == {"N": "2", "Starfish": "2", "ShadufHL": "2", "ShadufAO": "2", "ShadufAB": "2"}
    assert rows[-1] == {"N": "10", "Starfish": "10", "ShadufHL": "10", "ShadufAO": "18",
                        "ShadufAB": "90"}
    assert capsys.readouterr().out == opcount_csv(10)
    assert main(["opcount", "--max-n", "1"]) == 2


def test_sweep_writes_results_and_is_byte_identical(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"topology": {"nodes": 30, "seed": 2}, "payments": 300,
                               "seeds": [0, 1], "strategies": ["LN", "Starfish"],
                               "capacity_multipliers": [1, 5], "skewness": [1, 8]}))
    assert main(["sweep", "--config", str(cfg), "--out", str(tmp_path / "a")]) == 0
    assert main(["sweep", "--config", str(cfg), "--out", str(tmp_path / "b"), "--jobs", "2"]) == 0
    for name in ("results.csv", "summary.csv", "config.json"):
        assert read(tmp_path / "a" / name) == read(tmp_path / "b" / name)
    rows = (tmp_path / "a" / "results.csv").read_text().splitlines()
    assert len(rows) == 1 + 2 * 2 * 2 * 2
    written = json.loads((tmp_path / "a" / "config.json").read_text())
    assert "floored" in written["notes"]["amounts"]
    assert main(["sweep", "--config", str(tmp_path / "a" / "config.json"),
                 "--out", str(tmp_path / "c")]) == 0  # the written config reloads
    assert read(tmp_path / "c" / "results.csv") == read(tmp_path / "a" / "results.csv")
    assert main(["sweep", "--config", str(cfg), "--out", str(tmp_path / "a")]) == 2


def test_sweep_seed_override(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"topology": {"nodes": 30, "seed": 2}, "payments": 100,
                               "strategies": ["LN"], "capacity_multipliers": [1],
                               "skewness": [1]}))
    assert main(["sweep", "--config", str(cfg), "--out", str(tmp_path), "--seed", "4"]) == 0
    rows = list(csv.DictReader((tmp_path / "results.csv").read_text().splitlines()))
    assert [r["seed"] for r in rows] == ["4"]


@pytest.mark.parametrize("body", ['{"payments": -5}', '{"topology": "missing.csv"}', "[1]"])
def test_sweep_config_errors_exit_2(tmp_path, body):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(body)
    assert main(["sweep", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2


def test_sweep_invariant_failure_exit_1(tmp_path, monkeypatch):
    from starfish.core import InvariantViolation
    from starfish.sim import experiment

    real = experiment.run_cell

    def flaky(topology, kind, mult, *args, **kwargs):
        if kind.value == "Starfish" and mult == 5:
            raise InvariantViolation("coins not conserved")
        return real(topology, kind, mult, *args, **kwargs)

    monkeypatch.setattr(experiment, "run_cell", flaky)
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"topology": {"nodes": 30, "seed": 2}, "payments": 100,
                               "seeds": [0], "strategies": ["LN", "Starfish"],
                               "capacity_multipliers": [1, 5], "skewness": [1]}))
    assert main(["sweep", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 1
    rows = (tmp_path / "o" / "results.csv").read_text().splitlines()
    assert len(rows) == 1 + 3  # the failed cell is left out, the others still ran


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "starfish", "opcount", "--max-n", "3"],
                          capture_output=True, text=True, check=True)
    assert proc.stdout.splitlines()[-1] == "3,3,2,4,6"
    bad = tmp_path / "bad.json"
    bad.write_text('{"parties": 5}')
    proc = subprocess.run([sys.executable, "-m", "starfish", "trace", str(bad),
                           "--out", str(tmp_path / "o")], capture_output=True, text=True)
    assert proc.returncode == 2 and "scenario error" in proc.stderr
