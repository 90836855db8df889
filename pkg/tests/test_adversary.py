"""Each scripted Byzantine behavior against honest nodes, judged by whole-run checks."""

from functools import lru_cache

import pytest

from icledger.adversary import BEHAVIORS, CM_BEHAVIORS, AdversaryScript, MaliciousNode, apply_behavior
from icledger.chain import verify_piece
from icledger.harness import (
    duplicate_bundles,
    duplicate_pieces,
    liveness_failures,
    log_divergences,
    oracle_mismatches,
)
from icledger.simnet import AdversarySpec, SimConfig, run

ROUNDS = 6


@lru_cache(maxsize=None)
def attacked(behaviors, n, seed=11):
    advs = [AdversarySpec(n, list(behaviors))]
    return run(SimConfig(n=n, seed=seed + n, adversaries=advs), ROUNDS)


@lru_cache(maxsize=None)
def withholding_pair(n=7, seed=3):
    advs = [AdversarySpec(n - 1, ["withhold_proofs"]), AdversarySpec(n, ["withhold_proofs"])]
    return run(SimConfig(n=n, seed=seed, adversaries=advs), ROUNDS)


def honest_verdicts(trace, **match):
    honest = set(trace.honest)
    return [
        r for r in trace.events("verdict") if r["node"] in honest and all(r.get(k) == v for k, v in match.items())
    ]


@pytest.mark.parametrize("n", [4, 7])
@pytest.mark.parametrize("behavior", sorted(BEHAVIORS))
def test_behavior_breaks_no_invariant(behavior, n):
    trace = attacked((behavior,), n)
    assert trace.aborted is None
    assert log_divergences(trace) == []
    checked, wrong = oracle_mismatches(trace)
    assert wrong == [] and checked > 0
    checked, late = liveness_failures(trace)
    assert late == [] and checked > 0
    assert duplicate_pieces(trace) == []
    assert duplicate_bundles(trace) == []


@pytest.mark.parametrize("n", [4, 7])
def test_double_spend_is_caught(n):
    trace = attacked(("double_spend",), n)
    seconds = {r["tx"] for r in trace.events("issue") if r["kind"] == "double_spend_second"}
    assert seconds
    caught = honest_verdicts(trace, status="falsificated", evidence="no_double_spending")
    assert caught
    assert not any(r["tx"] in seconds and r["status"] == "validated" for r in honest_verdicts(trace))


@pytest.mark.parametrize(
    "behavior,evidence",
    [("insufficient_balance", "sufficient_balance"), ("bad_signature", "correct_messages")],
)
def test_invalid_payments_are_falsificated(behavior, evidence):
    trace = attacked((behavior,), 4)
    assert honest_verdicts(trace, status="falsificated", evidence=evidence)


@pytest.mark.parametrize("behavior", CM_BEHAVIORS)
def test_tampered_proposals_stay_out_of_the_log(behavior):
    n = 4
    trace = attacked((behavior,), n)
    rounds = [r["round"] for r in trace.events("adversary") if r["node"] == n and r["behavior"] == behavior]
    assert rounds
    log = trace.common_log()
    for r in rounds:
        if r <= log.round:
            assert log.result(r).entry_for(n) is None


def test_silent_node_never_proposes():
    trace = attacked(("silent",), 4)
    log = trace.common_log()
    assert log.round > ROUNDS
    assert all(log.result(r).entry_for(4) is None for r in range(2, log.round + 1))


def test_equivocated_pieces_are_discarded():
    trace = attacked(("equivocate_pieces",), 4)
    honest = [trace.nodes[i] for i in trace.honest]
    assert sum(node.collector.stats.discarded_pieces for node in honest) > 0
    for node in honest:
        assert all(verify_piece(piece, node.log) for piece in node.store.all_pieces())


@pytest.mark.parametrize("n", [4, 7])
def test_forking_node_keeps_one_correct_history(n):
    trace = attacked(("fork_chain",), n)
    attacker = trace.nodes[n]
    assert any(r["behavior"] == "fork_chain" for r in trace.events("adversary"))
    assert any(name.startswith("lost") for name in attacker.chains.versions)
    assert duplicate_pieces(trace) == []


def test_withholding_pair_is_never_ruled_on():
    trace = withholding_pair()
    bad = set(trace.config.malicious)
    inside = {r["tx"] for r in trace.events("issue") if r["sender"] in bad and r["receiver"] in bad}
    assert inside
    terminal = [r for r in honest_verdicts(trace) if r["tx"] in inside and r["status"] != "undecided"]
    assert terminal == []
    assert oracle_mismatches(trace)[1] == []
    assert liveness_failures(trace)[1] == []


def test_apply_behavior_runs_one_step():
    trace = attacked(("double_spend", "equivocate_pieces"), 4)
    node = trace.nodes[4]
    assert isinstance(node, MaliciousNode)
    flipped = apply_behavior(node, "equivocate_pieces", trace.rounds)
    assert flipped and not any(verify_piece(p, node.log) for p in flipped)
    with pytest.raises(ValueError):
        apply_behavior(node, "silent", trace.rounds)


def test_unknown_behavior_is_rejected():
    with pytest.raises(ValueError):
        AdversaryScript(1, ("teleport",))
