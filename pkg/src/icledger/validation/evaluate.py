"""The five-item validation process over a validator's stored pieces."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Optional, Set, Tuple

from ..consensus.log import ConsensusLog
from ..core import (
    Digest,
    DomainError,
    NodeId,
    Piece,
    SerialNumber,
    Transaction,
    TransactionIndex,
    add_amounts,
    digest,
    encode_stream,
    genesis_transaction,
    transaction_signature_ok,
)
from .store import DISCARDED, PieceStore


class Status(enum.Enum):
    VALIDATED = "validated"
    FALSIFICATED = "falsificated"
    UNDECIDED = "undecided"


class Item(enum.Enum):
    TWO_MESSAGES = "two_messages"
    CORRECT_MESSAGES = "correct_messages"
    NO_DOUBLE_SPENDING = "no_double_spending"
    VALIDATED_SOURCES = "validated_sources"
    SUFFICIENT_BALANCE = "sufficient_balance"


@dataclass(frozen=True, order=True)
class Need:
    """A missing proof range.

    ``through_tb`` set: pieces of ``owner`` up to the one holding that TB.
    ``through_tb`` unset: the TB is unknown, so the serial's index is asked for.
    """

    owner: NodeId
    through_tb: Optional[int] = None
    serial: Optional[SerialNumber] = None


@dataclass(frozen=True)
class Verdict:
    status: Status
    evidence: Optional[Item] = None
    missing: Tuple[Need, ...] = ()
    detail: str = ""

    @property
    def terminal(self) -> bool:
        return self.status is not Status.UNDECIDED

    def as_dict(self) -> dict:
        return {
            "status": self.status.value,
            "evidence": self.evidence.value if self.evidence else None,
            "missing": [
                {"owner": n.owner, "through_tb": n.through_tb, "serial": str(n.serial) if n.serial else None}
                for n in self.missing
            ],
            "detail": self.detail,
        }


def spendable_amount(source: Transaction, spender: NodeId, via_genesis: bool = False) -> int:
    """What ``spender`` may spend out of ``source``."""
    if via_genesis:
        if spender != source.sender:
            raise DomainError("only the owner spends a genesis balance")
        return source.remaining_value
    if spender == source.receiver:
        return source.transfer_value
    if spender == source.sender:
        return source.remaining_value
    raise DomainError(f"node {spender} is not a party of {source.serial}")


@dataclass(frozen=True)
class ProofBundle:
    """Pieces sufficient to validate one transaction, keyed by (owner, ordinal)."""

    subject: Tuple[TransactionIndex, ...]
    pieces: Tuple[Piece, ...]

    @property
    def digest(self) -> Digest:
        head = encode_stream(list(self.subject))
        return digest(head + encode_stream(list(self.pieces)))

    def ranges(self) -> Dict[NodeId, int]:
        out: Dict[NodeId, int] = {}
        for p in self.pieces:
            out[p.owner] = max(out.get(p.owner, 0), p.start_ordinal)
        return out


_Reqs = Dict[NodeId, int]


def _merge(into: _Reqs, other: Mapping[NodeId, int]) -> None:
    for owner, ordinal in other.items():
        if ordinal > into.get(owner, -1):
            into[owner] = ordinal


class Evaluator:
    """Memoized validation against one :class:`PieceStore`.

    Terminal verdicts are cached per transaction digest; undecided ones are
    recomputed as proofs arrive, so collection is incremental.  ``hints``
    maps ``(serial, owner)`` to candidate TB ordinals learnt from parties.
    """

    def __init__(self, store: PieceStore, keys):
        self.store = store
        self.keys = keys
        self.verdicts: Dict[Digest, Verdict] = {}
        self.requirements: Dict[Digest, _Reqs] = {}
        self.locations: Dict[Digest, Tuple[TransactionIndex, TransactionIndex]] = {}
        self.hints: Dict[Tuple[SerialNumber, NodeId], Set[int]] = {}
        self.work_units = 0

    # -- hints --------------------------------------------------------------

    def add_hint(self, serial: SerialNumber, index: TransactionIndex) -> None:
        if index.block_ordinal >= 1:
            self.hints.setdefault((serial, index.chain_owner), set()).add(index.block_ordinal)

    def _locate(self, tx: Transaction, owner: NodeId):
        found = self.store.first_occurrence(owner, tx.serial)
        if found is not None:
            return found
        covered = self.store.tb_covered(owner)
        live = sorted(k for k in self.hints.get((tx.serial, owner), ()) if k > covered)
        if live:
            return Need(owner, live[0])
        return Need(owner, None, tx.serial)

    # -- evaluation ---------------------------------------------------------

    def evaluate(self, tx: Transaction) -> Verdict:
        return self._eval(tx, set())

    def evaluate_genesis(self, owner: NodeId) -> Verdict:
        if self.store.genesis(owner) is None:
            return Verdict(Status.UNDECIDED, missing=(Need(owner, 0),))
        return Verdict(Status.VALIDATED)

    def _done(self, tx: Transaction, verdict: Verdict, reqs: Optional[_Reqs] = None) -> Verdict:
        self.verdicts[tx.digest] = verdict
        if reqs is not None:
            self.requirements[tx.digest] = reqs
        self.work_units += 1
        return verdict

    def _eval(self, tx: Transaction, visiting: Set[Digest]) -> Verdict:
        cached = self.verdicts.get(tx.digest)
        if cached is not None:
            return cached
        if tx.is_genesis:
            return self._eval_genesis(tx)
        store = self.store
        at_sender = self._locate(tx, tx.sender)
        at_receiver = self._locate(tx, tx.receiver) if tx.receiver != tx.sender else at_sender
        missing = [x for x in (at_sender, at_receiver) if isinstance(x, Need)]
        if missing:
            return Verdict(Status.UNDECIDED, missing=tuple(sorted(set(missing))))
        (idx_s, msg_s), (idx_r, msg_r) = at_sender, at_receiver

        # 1. Two Messages: both first occurrences of the serial equal the subject.
        if msg_s.encoded != tx.encoded or msg_r.encoded != tx.encoded:
            return self._done(tx, Verdict(Status.FALSIFICATED, Item.TWO_MESSAGES, detail="party copies differ"))
        if tx.sender == tx.receiver:
            return self._done(tx, Verdict(Status.FALSIFICATED, Item.CORRECT_MESSAGES, detail="self transfer"))
        self.locations[tx.digest] = (idx_s, idx_r)
        reqs: _Reqs = {
            tx.sender: store.piece_of_tb(tx.sender, idx_s.block_ordinal),
            tx.receiver: store.piece_of_tb(tx.receiver, idx_r.block_ordinal),
        }

        # 2. Correct Messages.
        problem, sources = self._message_problem(tx, idx_s)
        if problem:
            return self._done(tx, Verdict(Status.FALSIFICATED, Item.CORRECT_MESSAGES, detail=problem))

        # 3. No Double Spending: no earlier message of the sender reuses a source.
        for src_tx, _ in sources:
            for spender in store.spenders(tx.sender, src_tx.digest):
                if spender.precedes(idx_s):
                    return self._done(
                        tx,
                        Verdict(Status.FALSIFICATED, Item.NO_DOUBLE_SPENDING, detail=f"source reused at {spender}"),
                    )

        # 4. Validated Sources (recursive).
        visiting = visiting | {tx.digest}
        needs: List[Need] = []
        for src_tx, via_genesis in sources:
            if via_genesis:
                reqs[tx.sender] = max(reqs[tx.sender], 1)
                continue
            if src_tx.digest in visiting:
                return self._done(tx, Verdict(Status.FALSIFICATED, Item.VALIDATED_SOURCES, detail="source cycle"))
            sub = self._eval(src_tx, visiting)
            if sub.status is Status.FALSIFICATED:
                return self._done(
                    tx, Verdict(Status.FALSIFICATED, Item.VALIDATED_SOURCES, detail=f"source {src_tx.serial} falsificated")
                )
            if sub.status is Status.UNDECIDED:
                needs.extend(sub.missing)
            else:
                _merge(reqs, self.requirements.get(src_tx.digest, {}))
        if needs:
            return Verdict(Status.UNDECIDED, missing=tuple(sorted(set(needs))))

        # 5. Sufficient Balance.
        total = add_amounts(*(spendable_amount(s, tx.sender, g) for s, g in sources))
        if tx.transfer_value + tx.remaining_value != total:
            return self._done(
                tx,
                Verdict(Status.FALSIFICATED, Item.SUFFICIENT_BALANCE, detail=f"spends {total}"),
            )
        return self._done(tx, Verdict(Status.VALIDATED), reqs)

    def _eval_genesis(self, tx: Transaction) -> Verdict:
        block = self.store.genesis(tx.sender)
        if block is None:
            return Verdict(Status.UNDECIDED, missing=(Need(tx.sender, 0),))
        if tx.encoded != genesis_transaction(tx.sender, block.payload.initial_balance).encoded:
            return self._done(tx, Verdict(Status.FALSIFICATED, Item.CORRECT_MESSAGES, detail="not the declared balance"))
        return self._done(tx, Verdict(Status.VALIDATED), {tx.sender: 1})

    def _message_problem(self, tx: Transaction, at: TransactionIndex):
        if tx.serial.sender != tx.sender:
            return "serial not issued by sender", []
        if not tx.sources:
            return "no sources", []
        if not transaction_signature_ok(self.keys, tx):
            return "bad signature", []
        resolved = []
        for src in tx.sources:
            if src.chain_owner != tx.sender:
                return f"source {src} outside the sender's chain", []
            if not src.precedes(at):
                return f"source {src} is not earlier", []
            found = self.store.message(src)
            if found is None:
                return f"source {src} does not exist", []
            if not src.is_genesis and tx.sender not in (found.sender, found.receiver):
                return f"source {src} does not involve the sender", []
            resolved.append((found, src.is_genesis))
        if len({s.digest for s, _ in resolved}) != len(resolved):
            return "source listed twice", []
        return None, resolved

    # -- bundles --------------------------------------------------------------

    def bundle(self, tx: Transaction) -> Optional[ProofBundle]:
        """The proofs behind a validated verdict."""
        reqs = self.requirements.get(tx.digest)
        if reqs is None:
            return None
        pieces = []
        for owner in sorted(reqs):
            for ordinal in range(1, reqs[owner] + 1):
                pieces.append(self.store.piece(owner, ordinal))
        return ProofBundle(self.locations[tx.digest], tuple(pieces))


class IncompleteBundle(ValueError):
    """``validate`` was handed a bundle that does not cover its subject."""


def validate(subject: Transaction, bundle: Iterable[Piece], log: ConsensusLog, keys, holder: NodeId = 0) -> Verdict:
    """Validate ``subject`` using only ``bundle``; incorrect pieces are dropped."""
    pieces = bundle.pieces if isinstance(bundle, ProofBundle) else bundle
    store = PieceStore(holder)
    for piece in pieces:
        store.offer(piece, log)
    verdict = Evaluator(store, keys).evaluate(subject)
    if not verdict.terminal:
        raise IncompleteBundle(f"bundle lacks {', '.join(map(str, verdict.missing))}")
    return verdict


__all__ = [
    "DISCARDED",
    "Evaluator",
    "IncompleteBundle",
    "Item",
    "Need",
    "ProofBundle",
    "Status",
    "Verdict",
    "spendable_amount",
    "validate",
]
