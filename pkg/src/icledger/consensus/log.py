"""Consensus messages, the exclusion filter applied before agreement, and the replicated log."""

from __future__ import annotations

import enum
from dataclasses import dataclass, replace
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Set, Tuple

from ..core import (
    ConsensusMessage,
    ConsensusResult,
    Digest,
    NodeId,
    decode_stream,
    encode_stream,
)


class ConsensusError(RuntimeError):
    pass


class FaultBoundExceeded(ConsensusError):
    """A round cannot terminate because too many nodes are faulty."""


class SafetyViolation(ConsensusError):
    """Honest nodes decided different results for the same round."""


def fault_bound(n: int) -> int:
    return (n - 1) // 3


def quorum_size(n: int) -> int:
    """Smallest quorum whose pairwise intersections contain an honest node."""
    f = fault_bound(n)
    return (n + f + 2) // 2


class Exclusion(enum.Enum):
    WRONG_ROUND = "wrong_round"
    BAD_SIGNATURE = "bad_signature"
    ALREADY_INCLUDED = "already_included"
    FORK = "fork"
    MALFORMED = "malformed"


@dataclass(frozen=True)
class IncludedCheckPoint:
    ordinal: int
    round: int
    cm: ConsensusMessage


class ConsensusLog:
    """``CON(1..r)`` plus derived lookups.

    Every included CM of node ``i`` is the next check point of ``i``: the
    ``l``-th included CM of ``i`` describes ``C_i(l)``.
    """

    def __init__(self, results: Iterable[ConsensusResult] = ()):
        self.results: List[ConsensusResult] = []
        self._included: Dict[NodeId, List[IncludedCheckPoint]] = {}
        self._digests: Set[Digest] = set()
        for result in results:
            self.append(result)

    # -- mutation ---------------------------------------------------------

    def append(self, result: ConsensusResult) -> None:
        if result.round != self.round + 1:
            raise ConsensusError(f"log at round {self.round} cannot take round {result.round}")
        for cm in result.entries:
            if cm.cp_digest in self._digests:
                raise ConsensusError(f"check point of node {cm.node} included twice")
            history = self._included.get(cm.node)
            if history:
                if cm.prev_cp_position != history[-1].cm.cp_position:
                    raise ConsensusError(f"CM of node {cm.node} does not extend its last check point")
            elif not (cm.cp_position == cm.prev_cp_position == 1):
                raise ConsensusError(f"first CM of node {cm.node} must describe its genesis block")
        self.results.append(result)
        for cm in result.entries:
            history = self._included.setdefault(cm.node, [])
            history.append(IncludedCheckPoint(len(history) + 1, result.round, cm))
            self._digests.add(cm.cp_digest)

    # -- queries ------------------------------------------------------------

    @property
    def round(self) -> int:
        return len(self.results)

    def __len__(self) -> int:
        return len(self.results)

    def result(self, round: int) -> ConsensusResult:
        return self.results[round - 1]

    def is_included(self, cp_digest: Digest) -> bool:
        return cp_digest in self._digests

    def included(self, node: NodeId, ordinal: int) -> Optional[IncludedCheckPoint]:
        history = self._included.get(node, ())
        if 1 <= ordinal <= len(history):
            return history[ordinal - 1]
        return None

    def included_count(self, node: NodeId) -> int:
        return len(self._included.get(node, ()))

    def last_included(self, node: NodeId) -> Optional[IncludedCheckPoint]:
        history = self._included.get(node)
        return history[-1] if history else None

    def history(self, node: NodeId) -> Sequence[IncludedCheckPoint]:
        return tuple(self._included.get(node, ()))

    def copy(self) -> "ConsensusLog":
        return ConsensusLog(self.results)

    def prefix(self, round: int) -> "ConsensusLog":
        return ConsensusLog(self.results[:round])

    # -- persistence ----------------------------------------------------------

    def encode(self) -> bytes:
        return encode_stream(self.results)

    @classmethod
    def decode(cls, data: bytes) -> "ConsensusLog":
        values = decode_stream(data)
        if not all(isinstance(v, ConsensusResult) for v in values):
            raise ValueError("consensus log stream holds a non-result value")
        return cls(values)

    def __eq__(self, other) -> bool:
        return isinstance(other, ConsensusLog) and self.encode() == other.encode()


def sign_cm(keys, cm: ConsensusMessage) -> ConsensusMessage:
    return replace(cm, signature=keys.sign(cm.node, cm.signing_bytes()))


def make_cm(keys, node: NodeId, round: int, cp_digest: Digest, cp_position: int, prev_cp_position: int) -> ConsensusMessage:
    return sign_cm(keys, ConsensusMessage(node, round, cp_digest, cp_position, prev_cp_position))


def chain_cm(keys, chain, round: int) -> ConsensusMessage:
    """The CM describing ``chain``'s newest check point; genesis points at itself."""
    _, pos, cp = chain.latest_cp
    prev = chain.cp_positions[-2] if chain.cp_count > 1 else pos
    return make_cm(keys, chain.owner, round, cp.digest, pos, prev)


def classify_cm(cm: ConsensusMessage, log: ConsensusLog, round: int, keys) -> Optional[Exclusion]:
    """Return why ``cm`` must be excluded from ``round``, or ``None``."""
    if cm.round != round:
        return Exclusion.WRONG_ROUND
    if cm.node not in keys or not keys.verify(cm.node, cm.signing_bytes(), cm.signature):
        return Exclusion.BAD_SIGNATURE
    if log.is_included(cm.cp_digest):
        return Exclusion.ALREADY_INCLUDED
    last = log.last_included(cm.node)
    if last is None:
        if not (cm.cp_position == cm.prev_cp_position == 1):
            return Exclusion.MALFORMED
        return None
    if cm.cp_position <= cm.prev_cp_position:
        return Exclusion.MALFORMED
    if cm.prev_cp_position != last.cm.cp_position:
        return Exclusion.FORK
    return None


def filter_cms(candidates: Iterable[ConsensusMessage], log: ConsensusLog, round: int, keys) -> List[ConsensusMessage]:
    return [cm for cm in candidates if classify_cm(cm, log, round, keys) is None]


def select_entries(accepted: Iterable[ConsensusMessage]) -> Tuple[ConsensusMessage, ...]:
    """One CM per node (lowest digest on equivocation), ordered by node."""
    best: Dict[NodeId, ConsensusMessage] = {}
    for cm in accepted:
        cur = best.get(cm.node)
        if cur is None or cm.digest < cur.digest:
            best[cm.node] = cm
    return tuple(best[node] for node in sorted(best))


def result_problem(result: ConsensusResult, log: ConsensusLog, n: int, keys) -> Optional[str]:
    """Why a proposed ``CON(r)`` is unacceptable to an honest replica."""
    if result.round != log.round + 1:
        return "wrong round"
    if len(result.entries) < n - fault_bound(n):
        return "too few entries"
    for cm in result.entries:
        if not 1 <= cm.node <= n:
            return "unknown node"
        reason = classify_cm(cm, log, result.round, keys)
        if reason is not None:
            return f"entry of node {cm.node}: {reason.value}"
    return None


def bootstrap_result(keys, genesis_digests: Mapping[NodeId, Digest]) -> ConsensusResult:
    """``CON(1)``: every node's genesis check point, from the permissioned setup."""
    entries = tuple(
        make_cm(keys, node, 1, genesis_digests[node], 1, 1) for node in sorted(genesis_digests)
    )
    return ConsensusResult(1, entries)
