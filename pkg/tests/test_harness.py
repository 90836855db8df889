"""Metrics, exported state, offline replay and the command-line interface."""

import json
import subprocess
import sys
from dataclasses import replace
from functools import lru_cache
from pathlib import Path

import pytest

from icledger.chain import IndividualChain
from icledger.core import encode_stream
from icledger.harness import NodeState, StateError, StoredTrace, compute_metrics, replay
from icledger.harness.cli import ABORTED, BAD_INPUT, FAILED, NO_STATE, OK, main, write_run
from icledger.simnet import AdversarySpec, SimConfig, run

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


@lru_cache(maxsize=None)
def honest_run():
    return run(SimConfig(n=4, seed=1), 5)


@lru_cache(maxsize=None)
def mixed_run():
    advs = [AdversarySpec(7, ["double_spend", "insufficient_balance"]), AdversarySpec(6, ["equivocate_pieces"])]
    return run(SimConfig(n=7, seed=9, adversaries=advs), 5)


@pytest.fixture(scope="module")
def exported(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    write_run(mixed_run(), out)
    return out


def cli(capsys, *argv):
    code = main([str(a) for a in argv])
    captured = capsys.readouterr()
    return code, captured.out, captured.err


# -- metrics --------------------------------------------------------------------------


def first_terminal(trace):
    honest = set(trace.honest)
    out = {}
    for r in trace.records:
        if r["ev"] == "verdict" and r["node"] in honest and r["status"] != "undecided":
            out.setdefault(r["tx"], r["status"])
    return out


@pytest.mark.parametrize("make", [honest_run, mixed_run])
def test_rates_add_up(make):
    trace = make()
    m = compute_metrics(trace)
    assert m.identity_holds
    issued = {r["tx"]: r for r in trace.events("issue")}
    ruled = first_terminal(trace)
    assert m.issued == len(issued)
    assert m.validated == sum(1 for tx in issued if ruled.get(tx) == "validated")
    assert m.falsificated == sum(1 for tx in issued if ruled.get(tx) == "falsificated")
    assert sum(row["issued"] for row in m.per_node.values()) == m.issued


def test_all_honest_run_has_no_attacks_and_nothing_open():
    m = compute_metrics(honest_run())
    assert m.issued > 0 and m.R_a == 0 and m.falsificated == 0 and m.undecided == 0
    assert all(row["R_a"] == 0 for row in m.per_node.values())


def test_mixed_run_counts_attacks():
    m = compute_metrics(mixed_run())
    assert m.falsificated > 0 and m.R_a > 0


def test_stored_trace_recomputes_bit_exact(exported):
    stored = StoredTrace.load(exported)
    assert compute_metrics(stored).to_json() == (exported / "metrics.json").read_text()


def test_sharding_matrix_and_tables():
    trace = run(SimConfig(n=8, seed=3, group_size=4), 4)
    m = compute_metrics(trace)
    for i, row in m.sharding.items():
        for j, share in row.items():
            same = trace.config.group_of(int(i)) == trace.config.group_of(int(j))
            assert (share > 0) if i == j else (same or share == 0.0)
    tables = m.tables()
    assert set(tables) == {"per_node", "sharding", "rounds", "groups"}
    assert len(tables["per_node"]) == 9 and len(tables["groups"]) == 3


# -- exported state and replay ---------------------------------------------------------


def test_replay_matches_live_verdicts(exported):
    trace = mixed_run()
    checked = 0
    for r in trace.events("verdict"):
        if r["node"] not in trace.honest or r["status"] == "undecided":
            continue
        got = replay(exported / "state", r["tx"], r["node"])
        assert got["status"] == r["status"] and got["evidence"] == r["evidence"]
        if r["status"] == "validated":
            assert got["bundle"] == r["bundle"]
        checked += 1
        if checked >= 40:
            break
    assert checked > 0


def test_state_errors(tmp_path, exported):
    with pytest.raises(StateError):
        NodeState(tmp_path, 1)
    with pytest.raises(StateError):
        NodeState(exported / "state", 99)
    with pytest.raises(StateError):
        NodeState(exported / "state", 1).validate("00" * 32)


# -- command line ---------------------------------------------------------------------


def test_run_writes_outputs_and_is_deterministic(tmp_path, capsys):
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        code, stdout, _ = cli(capsys, "run", "--config", CONFIGS / "all-honest.json", "--rounds", 3, "--out", out)
        assert code == OK
        summary = json.loads(stdout)
        assert summary["aborted"] is None and summary["issued"] > 0
    names = ["config.json", "trace.jsonl", "metrics.json", "per_node.csv", "sharding.csv", "rounds.csv", "groups.csv"]
    for name in names:
        assert (a / name).read_bytes() == (b / name).read_bytes(), name
    assert (a / "state" / "keys.json").is_file()


def test_run_honours_out_environment(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("ICLEDGER_OUT", str(tmp_path / "env"))
    code, _, _ = cli(capsys, "run", "--config", CONFIGS / "all-honest.json", "--rounds", 2, "--seed", 4)
    assert code == OK and (tmp_path / "env" / "metrics.json").is_file()
    assert SimConfig.load(tmp_path / "env" / "config.json").seed == 4


def test_run_exit_codes(tmp_path, capsys):
    code, _, err = cli(capsys, "run", "--config", tmp_path / "missing.json", "--out", tmp_path)
    assert code == BAD_INPUT and "not found" in err
    bad = tmp_path / "bad.json"
    bad.write_text('{"n": "four"}')
    assert cli(capsys, "run", "--config", bad, "--out", tmp_path)[0] == BAD_INPUT
    over = {"n": 4, "seed": 1, "adversaries": [{"node": 3, "behaviors": ["silent"]}, {"node": 4, "behaviors": ["silent"]}]}
    bad.write_text(json.dumps(over))
    assert cli(capsys, "run", "--config", bad, "--out", tmp_path)[0] == ABORTED
    code, _, err = cli(capsys, "run", "--config", CONFIGS / "over-bound.json", "--rounds", 3, "--out", tmp_path / "o")
    assert code == ABORTED and "aborted" in err
    assert json.loads((tmp_path / "o" / "metrics.json").read_text())["aborted"]


def test_validate_subcommand(exported, capsys):
    r = next(r for r in mixed_run().events("verdict") if r["status"] == "falsificated" and r["node"] in mixed_run().honest)
    code, out, _ = cli(capsys, "validate", "--state", exported, "--tx", r["tx"], "--as", r["node"])
    assert code == OK
    report = json.loads(out)
    assert report["status"] == "falsificated" and report["evidence"] == r["evidence"]
    assert cli(capsys, "validate", "--state", exported, "--tx", "ab" * 32, "--as", 1)[0] == NO_STATE
    assert cli(capsys, "validate", "--state", exported / "nowhere", "--tx", r["tx"], "--as", 1)[0] == NO_STATE


def test_export_chain_and_verify_piece(exported, tmp_path, capsys):
    chain_out, log_out = tmp_path / "chain.bin", tmp_path / "log.bin"
    code, out, _ = cli(capsys, "export-chain", "--state", exported, "--node", 1, "--out", chain_out, "--log-out", log_out)
    assert code == OK and json.loads(out)["owner"] == 1
    code, out, _ = cli(capsys, "verify-piece", "--log", log_out, "--chain", chain_out)
    lines = [json.loads(line) for line in out.splitlines()]
    assert code == OK and lines and all(line["correct"] for line in lines)
    assert cli(capsys, "verify-piece", "--log", log_out, "--chain", chain_out, "--ordinal", 1)[0] == OK
    assert cli(capsys, "verify-piece", "--log", log_out, "--chain", chain_out, "--ordinal", 999)[0] == BAD_INPUT

    piece = IndividualChain.import_bytes(chain_out.read_bytes()).extract_piece(1)
    bad = tmp_path / "bad.pieces"
    bad.write_bytes(encode_stream([replace(piece, start_position=piece.start_position + 1)]))
    code, out, _ = cli(capsys, "verify-piece", "--log", log_out, "--piece", bad)
    assert code == FAILED and json.loads(out)["correct"] is False
    good = tmp_path / "good.pieces"
    good.write_bytes(encode_stream([piece]))
    assert cli(capsys, "verify-piece", "--log", log_out, "--piece", good)[0] == OK
    garbage = tmp_path / "garbage"
    garbage.write_bytes(b"\x00\x00\x00\x05abc")
    assert cli(capsys, "verify-piece", "--log", log_out, "--piece", garbage)[0] == FAILED
    assert cli(capsys, "export-chain", "--state", exported, "--node", 1, "--version", "x", "--out", chain_out)[0] == NO_STATE
    assert cli(capsys, "verify-piece", "--log", tmp_path / "none", "--chain", chain_out)[0] == NO_STATE


def test_sweep_subcommand(tmp_path, capsys):
    argv = ["sweep", "--config", CONFIGS / "all-honest.json", "--vary", "N=2,4", "--rounds", 2, "--out", tmp_path]
    code, out, _ = cli(capsys, *argv, "--jobs", 2)
    assert code == OK and out.startswith("n")
    rows = json.loads((tmp_path / "sweep.json").read_text())
    assert [r["n"] for r in rows] == [2, 4]
    csv_rows = (tmp_path / "sweep.csv").read_text().splitlines()
    assert csv_rows[0].startswith("n,g,capacity") and len(csv_rows) == 3
    serial = tmp_path / "serial"
    assert cli(capsys, "sweep", *argv[1:-1], serial, "--jobs", 1)[0] == OK
    assert (serial / "sweep.json").read_text() == (tmp_path / "sweep.json").read_text()
    assert cli(capsys, "sweep", "--config", CONFIGS / "all-honest.json", "--vary", "n", "--out", tmp_path)[0] == BAD_INPUT
    assert cli(capsys, "sweep", "--config", CONFIGS / "all-honest.json", "--vary", "n=0", "--out", tmp_path)[0] == BAD_INPUT


def test_console_script_entry_point(tmp_path):
    proc = subprocess.run(
        [sys.executable, "-m", "icledger.harness.cli", "run", "--config", str(CONFIGS / "all-honest.json"),
         "--rounds", "2", "--out", str(tmp_path)],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == OK, proc.stderr
    assert json.loads(proc.stdout)["n"] == 4


@pytest.mark.parametrize("name", sorted(p.name for p in CONFIGS.glob("*.json")))
def test_shipped_configs_load(name):
    cfg = SimConfig.load(CONFIGS / name)
    if not cfg.allow_fault_bound_violation:
        cfg.validate()
