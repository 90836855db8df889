"""Consensus messages, the filter rules, the log and both BFT implementations."""

from dataclasses import replace

import pytest
from hypothesis import given
from hypothesis import strategies as st

from icledger.consensus import (
    ConsensusError,
    ConsensusLog,
    Exclusion,
    FaultBoundExceeded,
    bft_agree,
    chain_cm,
    classify_cm,
    fault_bound,
    filter_cms,
    leader_of,
    make_cm,
    quorum_size,
    result_problem,
    select_entries,
)
from worlds import World


@pytest.mark.parametrize("n,f", [(1, 0), (3, 0), (4, 1), (6, 1), (7, 2), (10, 3), (16, 5)])
def test_fault_bound_is_floor_of_n_minus_one_over_three(n, f):
    assert fault_bound(n) == f


@given(st.integers(1, 200))
def test_quorum_is_smallest_with_honest_intersection(n):
    f = fault_bound(n)
    # brute force: two quorums of size q share at least f+1 nodes
    smallest = next(q for q in range(1, n + 1) if 2 * q - n >= f + 1)
    assert quorum_size(n) == smallest
    assert quorum_size(n) <= n - f  # reachable with f silent nodes


def test_leader_rotates_over_all_nodes():
    assert [leader_of(r, 0, 4) for r in range(1, 5)] == [2, 3, 4, 1]
    assert leader_of(2, 1, 4) == 4
    assert {leader_of(5, v, 7) for v in range(7)} == set(range(1, 8))


def _proposals(w):
    r = w.log.round + 1
    out = {}
    for i, chain in w.chains.items():
        last = w.log.last_included(i)
        if chain.latest_cp[2].digest == last.cm.cp_digest:
            chain.append_checkpoint(w.log.result(w.log.round))
        out[i] = chain_cm(w.keys, chain, r)
    return out


def test_honest_cm_retained_and_replayed_cm_removed():
    w = World(4)
    w.round()
    cms = _proposals(w)
    r = w.log.round + 1
    assert filter_cms(cms.values(), w.log, r, w.keys) == list(cms.values())
    old = w.log.result(w.log.round).entry_for(2)
    replay = make_cm(w.keys, 2, r, old.cp_digest, old.cp_position, old.prev_cp_position)
    assert classify_cm(replay, w.log, r, w.keys) is Exclusion.ALREADY_INCLUDED


def test_filter_rules():
    w = World(4)
    w.round()
    cms = _proposals(w)
    r = w.log.round + 1
    cm = cms[3]
    assert classify_cm(replace(cm, round=r + 1), w.log, r, w.keys) is Exclusion.WRONG_ROUND
    assert classify_cm(replace(cm, signature=b"\x00" * 64), w.log, r, w.keys) is Exclusion.BAD_SIGNATURE
    forked = make_cm(w.keys, 3, r, cm.cp_digest, cm.cp_position, cm.prev_cp_position - 1)
    assert classify_cm(forked, w.log, r, w.keys) is Exclusion.FORK
    backwards = make_cm(w.keys, 3, r, cm.cp_digest, 1, cm.prev_cp_position)
    assert classify_cm(backwards, w.log, r, w.keys) is Exclusion.MALFORMED


def test_second_cm_reusing_an_included_previous_position_is_a_fork():
    """Node 4 proposes a CP on top of C(2) after a sibling CP on top of C(2) was included."""
    w = World(4)
    w.round()
    w.round()
    included = w.log.last_included(4).cm
    sibling = make_cm(w.keys, 4, w.log.round + 1, b"\x42" * 32, included.cp_position + 3, included.prev_cp_position)
    assert classify_cm(sibling, w.log, w.log.round + 1, w.keys) is Exclusion.FORK


def test_reproposal_after_exclusion_keeps_the_digest():
    w = World(4)
    w.round()
    w.round(excluded=[4])
    r = w.log.round
    chain = w.chains[4]
    cp_count = chain.cp_count
    assert w.log.result(r).entry_for(4) is None
    w.round()
    assert chain.cp_count == cp_count  # no new CP: the excluded one is re-proposed
    again = w.log.result(r + 1).entry_for(4)
    earlier = chain_cm(w.keys, chain, r)
    assert again.cp_digest == earlier.cp_digest and again.signature != earlier.signature


def test_select_entries_one_per_node_sorted():
    w = World(4)
    cms = list(_proposals(w).values())
    dup = make_cm(w.keys, 2, 2, b"\x01" * 32, 2, 1)
    picked = select_entries(list(reversed(cms)) + [dup])
    assert [cm.node for cm in picked] == [1, 2, 3, 4]
    assert picked[1].digest == min(cms[1].digest, dup.digest)


def test_log_append_guards():
    w = World(3)
    w.round()
    res = w.log.result(2)
    with pytest.raises(ConsensusError):
        w.log.append(res)  # wrong round
    with pytest.raises(ConsensusError):
        ConsensusLog([w.log.result(1), replace(res, round=2), replace(res, round=3)])  # digest included twice
    back = ConsensusLog.decode(w.log.encode())
    assert back == w.log and back.encode() == w.log.encode()


def test_result_problem_flags_short_and_wrong_results():
    w = World(4)
    cms = _proposals(w)
    r = w.log.round + 1
    from icledger.core import ConsensusResult

    assert result_problem(ConsensusResult(r, tuple(cms[i] for i in (1, 2, 3))), w.log, 4, w.keys) is None
    assert result_problem(ConsensusResult(r, tuple(cms[i] for i in (1, 2))), w.log, 4, w.keys) == "too few entries"
    assert result_problem(ConsensusResult(r + 1, ()), w.log, 4, w.keys) == "wrong round"


def test_bft_all_honest_includes_every_cm():
    w = World(4)
    props = _proposals(w)
    result = bft_agree({i: [cm] for i, cm in props.items()}, w.log, 4, w.keys, seed=1)
    assert [cm.node for cm in result.entries] == [1, 2, 3, 4]


def test_bft_with_silent_node():
    w = World(4)
    props = _proposals(w)
    result = bft_agree({i: [props[i]] for i in (1, 2, 3)}, w.log, 4, w.keys, seed=2)
    assert [cm.node for cm in result.entries] == [1, 2, 3]


def test_bft_beyond_the_bound_aborts():
    w = World(4)
    props = _proposals(w)
    with pytest.raises(FaultBoundExceeded):
        bft_agree({i: [props[i]] for i in (1, 2)}, w.log, 4, w.keys, impl="oracle")


@given(st.integers(4, 10), st.data())
def test_reference_and_oracle_bft_agree(n, data):
    w = World(n)
    w.round()
    props = _proposals(w)
    f = fault_bound(n)
    silent = data.draw(st.sets(st.integers(1, n), max_size=f))
    # every participant sees all CMs of the participants
    seen = [props[i] for i in sorted(props) if i not in silent]
    proposals = {i: seen for i in props if i not in silent}
    seed = data.draw(st.integers(0, 1000))
    assert bft_agree(proposals, w.log, n, w.keys, seed=seed) == bft_agree(proposals, w.log, n, w.keys, impl="oracle")
