"""Acceptance criteria 1-9; each test records one pass/fail line for the run summary."""

import random
import re
import time
from functools import lru_cache
from pathlib import Path

import pytest

from conftest import ACCEPTANCE
from icledger.chain import check_piece, verify_piece
from icledger.core import DecodeError, Piece, decode, encode
from icledger.harness import (
    compute_metrics,
    duplicate_bundles,
    duplicate_pieces,
    liveness_failures,
    log_divergences,
    oracle_mismatches,
    over_bound_scenarios,
    scenario_corpus,
)
from icledger.harness.cli import write_run
from icledger.simnet import SimConfig, run

pytestmark = pytest.mark.slow

MUTATIONS = 12_000
SHARDING_SIZES = (8, 16, 32)
THROUGHPUT_SIZES = (4, 8, 16)
THROUGHPUT = SimConfig.load(Path(__file__).resolve().parent.parent / "configs" / "throughput.json")


@pytest.fixture
def outcome(request):
    """Filled in by the test; ``ok`` is set only after every assertion passed."""
    entry = {"ok": False, "detail": ""}
    yield entry
    k = int(re.match(r"test_criterion_(\d+)", request.node.name).group(1))
    request.config.stash[ACCEPTANCE][k] = (entry["ok"], entry["detail"])


@lru_cache(maxsize=None)
def corpus():
    """Every corpus scenario run once; returns (scenario, trace) pairs and the wall time."""
    start = time.monotonic()
    runs = [(s, run(s.config, s.rounds)) for s in scenario_corpus()]
    return runs, time.monotonic() - start


def at_bound(runs):
    return [(s, t) for s, t in runs if s.name.startswith(("bound-", "groups-"))]


def safety_and_validity(runs):
    """Violations of criteria 1-4 over ``runs``: a dict of criterion -> messages."""
    out = {1: [], 2: [], 3: [], 4: []}
    for s, t in runs:
        if t.aborted is not None:
            out[1].append(f"{s.name}: aborted: {t.aborted}")
        out[1] += [f"{s.name}: {m}" for m in log_divergences(t)]
        out[2] += [f"{s.name}: {m}" for m in oracle_mismatches(t)[1]]
        out[3] += [f"{s.name}: {m}" for m in liveness_failures(t)[1]]
        out[4] += [f"{s.name}: {m}" for m in duplicate_pieces(t) + duplicate_bundles(t)]
    return out


def test_criterion_1_consensus_agreement(outcome):
    runs, elapsed = corpus()
    sizes = {s.config.n for s, _ in runs}
    behaviors = {b for s, _ in runs for a in s.config.adversaries for b in a.behaviors}
    bad = safety_and_validity(runs)[1]
    rounds = sum(min(l.round for l in t.logs().values()) for _, t in runs)
    outcome["detail"] = f"{len(runs)} scenarios, {rounds} rounds, {len(bad)} divergences, {elapsed:.0f}s"
    assert len(runs) >= 50 and sizes == {4, 7, 10} and len(behaviors) == 10
    assert bad == [], bad[:5]
    assert elapsed < 300
    outcome["ok"] = True


def test_criterion_2_oracle_equivalence(outcome):
    runs, _ = corpus()
    checked, bad = 0, []
    for s, t in runs:
        n, wrong = oracle_mismatches(t)
        checked += n
        bad += [f"{s.name}: {m}" for m in wrong]
    outcome["detail"] = f"{checked} terminal verdicts, {len(bad)} disagreements"
    assert checked > 0 and bad == [], bad[:5]
    outcome["ok"] = True


def test_criterion_3_liveness(outcome):
    runs, _ = corpus()
    checked, bad = 0, []
    for s, t in runs:
        n, late = liveness_failures(t)
        checked += n
        bad += [f"{s.name}: {m}" for m in late]
    hostile = [s.name for s, _ in runs if any({"withhold_proofs", "equivocate_pieces"} & set(a.behaviors) for a in s.config.adversaries)]
    outcome["detail"] = f"{checked} validator obligations, {len(bad)} missed, {len(hostile)} hostile-proof scenarios"
    assert checked > 0 and hostile and bad == [], bad[:5]
    outcome["ok"] = True


def test_criterion_4_no_duplicate_pieces_or_bundles(outcome):
    runs, _ = corpus()
    bad = safety_and_validity(runs)[4]
    forked = [s.name for s, _ in runs if any({"fork_chain", "equivocate_pieces"} & set(a.behaviors) for a in s.config.adversaries)]
    outcome["detail"] = f"{len(forked)} fork/equivocation scenarios, {len(bad)} duplicates"
    assert forked and bad == [], bad[:5]
    outcome["ok"] = True


def test_criterion_5_tamper_evidence(outcome):
    trace = run(SimConfig(n=4, seed=77), 6)
    node = trace.nodes[1]
    log = node.log
    pieces = [p for c in node.chains for p in c.pieces()] + list(node.store.all_pieces())
    pieces = [p for p in pieces if verify_piece(p, log)]
    assert pieces
    rng = random.Random(5)
    altered = rejected = undecodable = 0
    while altered < MUTATIONS:
        piece = rng.choice(pieces)
        data = bytearray(encode(piece))
        bit = rng.randrange(len(data) * 8)
        data[bit // 8] ^= 1 << (bit % 8)
        altered += 1
        try:
            value = decode(bytes(data))
        except DecodeError:
            rejected += 1
            undecodable += 1
            continue
        if not isinstance(value, Piece):
            rejected += 1
            undecodable += 1
            continue
        # both routes must agree that the mutant is not a correct piece
        if not verify_piece(value, log) and check_piece(value, log) is not None:
            rejected += 1
    outcome["detail"] = f"{altered} bit flips over {len(pieces)} pieces, {rejected} rejected ({undecodable} undecodable)"
    assert altered >= 10_000 and rejected == altered
    outcome["ok"] = True


def per_node_load(trace):
    m = compute_metrics(trace)
    honest = [str(i) for i in trace.config.honest]
    received = sum(m.messages[i]["received"].get("ledger", 0) for i in honest) / len(honest)
    foreign = sum(m.storage[i]["foreign"] for i in honest) / len(honest)
    return received, foreign


def spread(values):
    return (max(values) - min(values)) / min(values)


def test_criterion_6_spontaneous_sharding(outcome):
    start = time.monotonic()
    loads = {}
    for n in SHARDING_SIZES:
        trace = run(SimConfig(n=n, seed=3, group_size=4), 16)
        assert trace.aborted is None
        for i, node in trace.nodes.items():
            assert set(node.store.owners()) <= set(trace.config.group_of(i))
        loads[n] = per_node_load(trace)
    elapsed = time.monotonic() - start
    recv = spread([loads[n][0] for n in SHARDING_SIZES])
    stored = spread([loads[n][1] for n in SHARDING_SIZES])
    table = ", ".join(f"N={n}: {r:.1f} msgs/{s:.1f} blocks" for n, (r, s) in loads.items())
    outcome["detail"] = f"{table}; spread {recv:.1%} received, {stored:.1%} stored, {elapsed:.0f}s"
    assert recv < 0.10 and stored < 0.10 and elapsed < 600
    outcome["ok"] = True


def test_criterion_7_throughput_shape(outcome):
    worst_rate, worst_tp = float("inf"), 0.0
    for n in THROUGHPUT_SIZES:
        m = compute_metrics(run(THROUGHPUT.replace(n=n), 20))
        assert m.aborted is None and m.groups
        for gt in m.groups:
            worst_rate = min(worst_rate, gt.valid_over_capacity)
            for t_p in gt.t_p.values():
                worst_tp = max(worst_tp, t_p / gt.t_p_bound)
    outcome["detail"] = f"min valid rate {worst_rate:.3f} C, max t_p {worst_tp:.3f} of R g T / C_comm"
    assert worst_rate >= 0.5 and worst_tp <= 1.10
    outcome["ok"] = True


def test_criterion_8_fault_bound(outcome):
    runs, _ = corpus()
    bounded = at_bound(runs)
    bad = [m for ms in safety_and_validity(bounded).values() for m in ms]
    aborts = []
    for s in over_bound_scenarios():
        t = run(s.config, s.rounds)
        aborts.append((s.name, t.abort_kind))
        assert t.abort_kind == "fault_bound", (s.name, t.aborted)
        assert [r["kind"] for r in t.events("abort")] == ["fault_bound"]
        assert log_divergences(t) == []
        assert compute_metrics(t).aborted
    outcome["detail"] = f"{len(bounded)} at-bound scenarios clean ({len(bad)} violations); {len(aborts)} over-bound runs aborted"
    assert bounded and bad == [], bad[:5]
    outcome["ok"] = True


def test_criterion_9_determinism(outcome, tmp_path):
    picks = [s for s in scenario_corpus() if s.name in ("bound-mix-a-n7", "random-1-n7", "groups-n10")]
    picks.append(type(picks[0])("throughput", THROUGHPUT, 12))
    compared = 0
    for s in picks:
        a, b = tmp_path / f"{s.name}-a", tmp_path / f"{s.name}-b"
        write_run(run(s.config, s.rounds), a)
        write_run(run(s.config, s.rounds), b)
        files = sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file())
        assert files == sorted(p.relative_to(b) for p in b.rglob("*") if p.is_file())
        for rel in files:
            assert (a / rel).read_bytes() == (b / rel).read_bytes(), (s.name, rel)
            compared += 1
    outcome["detail"] = f"{len(picks)} scenarios re-run, {compared} output files byte-identical"
    outcome["ok"] = True
