"""Whole-run correctness checks over a finished :class:`SimulationTrace`.

Each check returns a list of human-readable violations; empty means pass.
"""

from __future__ import annotations

from typing import Dict, List, Set, Tuple

from ..chain import verify_piece
from ..validation.oracle import Oracle


def log_divergences(trace) -> List[str]:
    """Honest logs must agree byte for byte on every round they both hold."""
    logs = trace.logs()
    out = []
    ids = sorted(logs)
    for a, b in zip(ids, ids[1:]):
        la, lb = logs[a], logs[b]
        common = min(la.round, lb.round)
        for r in range(1, common + 1):
            if la.result(r).encoded != lb.result(r).encoded:
                out.append(f"nodes {a} and {b} differ at round {r}")
                break
    return out


def oracle_mismatches(trace, oracle: Oracle = None) -> Tuple[int, List[str]]:
    """Terminal honest verdicts that disagree with ground truth; returns (checked, mismatches)."""
    oracle = oracle or Oracle.from_trace(trace)
    txs = trace.transactions()
    honest = set(trace.honest)
    checked, out = 0, []
    for rec in trace.events("verdict"):
        if rec["node"] not in honest or rec["status"] == "undecided":
            continue
        checked += 1
        valid = oracle.valid(txs[rec["tx"]])
        if valid != (rec["status"] == "validated"):
            out.append(f"node {rec['node']} said {rec['status']} for {rec['tx'][:12]}, oracle says valid={valid}")
    return checked, out


def liveness_failures(trace) -> Tuple[int, List[str]]:
    """Every honest-to-honest transaction validated by every honest validator in time."""
    cfg = trace.config
    honest = set(trace.honest)
    verdicts: Dict[Tuple[str, int], dict] = {}
    for rec in trace.events("verdict"):
        verdicts.setdefault((rec["tx"], rec["node"]), rec)
    checked, out = 0, []
    for rec in trace.events("issue"):
        i, j = rec["sender"], rec["receiver"]
        if i not in honest or j not in honest:
            continue
        validators = {v for v in cfg.group_of(i) if v in honest} | {j}
        for v in sorted(validators):
            checked += 1
            got = verdicts.get((rec["tx"], v))
            if got is None:
                out.append(f"node {v} never ruled on {rec['tx'][:12]}")
            elif got["status"] != "validated":
                out.append(f"node {v} left {rec['tx'][:12]} {got['status']}")
            elif got["round"] - got["started_round"] > cfg.deadline_rounds:
                out.append(f"node {v} validated {rec['tx'][:12]} after {got['round'] - got['started_round']} rounds")
    return checked, out


def duplicate_pieces(trace) -> List[str]:
    """No two distinct correct pieces share a bounding check point.

    Candidates are every piece of every chain version any node keeps, plus
    every piece any node stored; correctness is judged against the longest
    honest log.
    """
    log = max(trace.logs().values(), key=lambda l: l.round)
    seen: Dict[Tuple[int, int], Set[bytes]] = {}

    def consider(piece):
        if verify_piece(piece, log):
            seen.setdefault((piece.owner, piece.start_ordinal), set()).add(piece.digest)

    for node in trace.nodes.values():
        for chain in node.chains:
            for piece in chain.pieces():
                consider(piece)
        for piece in node.store.all_pieces():
            consider(piece)
    return [f"{len(d)} correct pieces for owner {o} ordinal {l}" for (o, l), d in sorted(seen.items()) if len(d) > 1]


def duplicate_bundles(trace) -> List[str]:
    """Validated transactions have one complete bundle across all honest validators."""
    honest = set(trace.honest)
    seen: Dict[str, Set[str]] = {}
    for rec in trace.events("verdict"):
        if rec["node"] in honest and rec["status"] == "validated":
            seen.setdefault(rec["tx"], set()).add(rec["bundle"])
    return [f"{len(d)} bundles for {tx[:12]}" for tx, d in sorted(seen.items()) if len(d) > 1]
