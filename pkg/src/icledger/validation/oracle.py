"""Ground-truth validity from the omniscient view (tests only).

Deliberately shares no code with the piece store or the evaluator: chains
are walked block by block, correctness is re-derived from the log, and the
validity conditions are applied by linear scans.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Optional, Tuple

from ..consensus.log import ConsensusLog
from ..core import (
    CheckPoint,
    Digest,
    GenesisDeclaration,
    NodeId,
    Transaction,
    TransactionBlock,
    digest,
    encode,
    genesis_transaction,
)

Position = Tuple[int, int]  # (TB ordinal, message ordinal); (0, 0) is the genesis balance


@dataclass
class OwnerTruth:
    owner: NodeId
    balance: Optional[int]
    messages: List[Tuple[Position, Transaction]] = field(default_factory=list)

    def at(self, pos: Position) -> Optional[Transaction]:
        for here, tx in self.messages:
            if here == pos:
                return tx
        return None

    def first(self, serial) -> Optional[Tuple[Position, Transaction]]:
        for here, tx in self.messages:
            if tx.serial == serial:
                return here, tx
        return None


def _blocks(chain) -> List:
    return list(chain.blocks)


def _correct_prefix(versions: Iterable, owner: NodeId, log: ConsensusLog) -> List:
    """Blocks of ``owner``'s chain through its last consensus-included check point.

    Each stretch between consecutive included check points is taken from a
    version whose blocks hash-link and whose check points sit exactly where
    the included CMs say.
    """
    versions = [_blocks(v) for v in versions]
    history = log.history(owner)
    if not history:
        return []
    genesis = next(
        (b[0] for b in versions if b and digest(encode(b[0])) == history[0].cm.cp_digest),
        None,
    )
    if genesis is None or history[0].cm.cp_position != 1:
        return []
    out: List = [genesis]
    for ordinal in range(1, len(history)):
        start_cm, end_cm = history[ordinal - 1].cm, history[ordinal].cm
        found = None
        for blocks in versions:
            lo, hi = start_cm.cp_position, end_cm.cp_position
            if hi > len(blocks) or end_cm.prev_cp_position != lo:
                continue
            span = blocks[lo - 1:hi]
            if digest(encode(span[0])) != start_cm.cp_digest or digest(encode(span[-1])) != end_cm.cp_digest:
                continue
            if any(b.prev_digest != digest(encode(a)) for a, b in zip(span, span[1:])):
                continue
            if not all(isinstance(b, TransactionBlock) for b in span[1:-1]):
                continue
            cps_before = sum(1 for b in blocks[:lo] if isinstance(b, CheckPoint))
            if cps_before != ordinal:
                continue
            found = span
            break
        if found is None:
            break
        out.extend(found[1:])
    return out


def _truth_for(owner: NodeId, versions: Iterable, log: ConsensusLog) -> OwnerTruth:
    blocks = _correct_prefix(versions, owner, log)
    balance = None
    first = log.included(owner, 1)
    if blocks and isinstance(blocks[0], CheckPoint) and isinstance(blocks[0].payload, GenesisDeclaration):
        if first is not None and digest(encode(blocks[0])) == first.cm.cp_digest:
            balance = blocks[0].payload.initial_balance
    truth = OwnerTruth(owner, balance)
    k = 0
    for block in blocks:
        if isinstance(block, TransactionBlock):
            k += 1
            for m, tx in enumerate(block.messages, start=1):
                truth.messages.append(((k, m), tx))
    return truth


class Oracle:
    """Validity of every transaction against the true chains and the log."""

    def __init__(self, chain_sets: Mapping[NodeId, Iterable], log: ConsensusLog, keys):
        self.keys = keys
        self.log = log
        self.truth: Dict[NodeId, OwnerTruth] = {
            owner: _truth_for(owner, list(versions), log) for owner, versions in chain_sets.items()
        }
        self._memo: Dict[Digest, bool] = {}

    @classmethod
    def from_trace(cls, trace) -> "Oracle":
        return cls(trace.chain_sets(), trace.common_log(), trace.keys)

    def genesis_valid(self, owner: NodeId) -> bool:
        truth = self.truth.get(owner)
        return truth is not None and truth.balance is not None

    def valid(self, tx: Transaction) -> bool:
        return self._valid(tx, ())

    def _source(self, owner: NodeId, src) -> Optional[Tuple[Transaction, int, bool]]:
        """Resolve a source index to (transaction, amount spendable by owner, is_genesis)."""
        truth = self.truth.get(owner)
        if truth is None:
            return None
        if (src.block_ordinal, src.message_ordinal) == (0, 0):
            if truth.balance is None:
                return None
            return genesis_transaction(owner, truth.balance), truth.balance, True
        found = truth.at((src.block_ordinal, src.message_ordinal))
        if found is None:
            return None
        if found.receiver == owner:
            return found, found.transfer_value, False
        if found.sender == owner:
            return found, found.remaining_value, False
        return None

    def _valid(self, tx: Transaction, path: Tuple[Digest, ...]) -> bool:
        if tx.digest in self._memo:
            return self._memo[tx.digest]
        if tx.digest in path:
            return False
        ok = self._check(tx, path + (tx.digest,))
        self._memo[tx.digest] = ok
        return ok

    def _check(self, tx: Transaction, path) -> bool:
        i, j = tx.sender, tx.receiver
        if tx.is_genesis:
            truth = self.truth.get(i)
            return truth is not None and truth.balance is not None and tx == genesis_transaction(i, truth.balance)
        if i == j or i not in self.truth or j not in self.truth:
            return False
        # Two Messages (first occurrence of the serial in each party's chain).
        at_i = self.truth[i].first(tx.serial)
        at_j = self.truth[j].first(tx.serial)
        if at_i is None or at_j is None or at_i[1] != tx or at_j[1] != tx:
            return False
        pos = at_i[0]
        # Correct Messages.
        if tx.serial.sender != i or not tx.sources:
            return False
        if not self.keys.verify(i, tx.signing_bytes(), tx.signature):
            return False
        resolved = []
        for src in tx.sources:
            if src.chain_owner != i or (src.block_ordinal, src.message_ordinal) >= pos:
                return False
            hit = self._source(i, src)
            if hit is None:
                return False
            resolved.append(hit)
        used = [h[0].digest for h in resolved]
        if len(set(used)) != len(used):
            return False
        # No Double Spending: an earlier message of i spending one of the same sources.
        for here, other in self.truth[i].messages:
            if here >= pos:
                break
            if other.sender != i:
                continue
            for src in other.sources:
                if src.chain_owner != i or (src.block_ordinal, src.message_ordinal) >= here:
                    continue
                hit = self._source(i, src)
                if hit is not None and hit[0].digest in used:
                    return False
        # Valid Sources.
        for source_tx, _, is_genesis in resolved:
            if not is_genesis and not self._valid(source_tx, path):
                return False
        # Sufficient Balance.
        return tx.transfer_value + tx.remaining_value == sum(h[1] for h in resolved)


def oracle_validate(state, tx: Transaction) -> bool:
    """``True`` iff ``tx`` is valid; ``state`` is an :class:`Oracle` or a trace."""
    oracle = state if isinstance(state, Oracle) else Oracle.from_trace(state)
    return oracle.valid(tx)
