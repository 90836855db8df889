"""Proof collection: ask parties first, then the other party, then everyone."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, List, Optional, Protocol, Tuple

from ..core import Digest, NodeId, SerialNumber, Transaction, TransactionIndex
from .evaluate import Evaluator, Need, Status, Verdict
from .messages import IndexRequest, IndexResponse, PiecePush, PieceRequest, PieceResponse
from .store import DEFERRED, DISCARDED, PieceStore

BROADCAST = 0


class Transport(Protocol):
    def send(self, dst: NodeId, msg) -> None: ...

    def broadcast_request(self, msg) -> None: ...


@dataclass
class Collection:
    tx: Transaction
    started_round: int
    started_at: int
    parties: Tuple[NodeId, NodeId]
    verdict: Optional[Verdict] = None
    expired: bool = False


@dataclass
class _Ask:
    level: int = 0
    target: Optional[NodeId] = None
    sent_at: int = -1
    through: Optional[int] = None
    wait_round: int = -1
    broadcast_round: int = -1


@dataclass
class CollectorStats:
    requests: int = 0
    broadcasts: int = 0
    discarded_pieces: int = 0
    malformed: int = 0


class ProofCollector:
    """Drives one validator's collections to a terminal verdict or the deadline.

    Owners push new pieces to their group, so a chain of a group member is
    only pulled once a round has passed without the push covering the need.
    Needs are keyed per chain (or per unknown serial) and deduplicated across
    collections, so each missing range is asked once.  A request that comes
    back empty, wrong, or late climbs one step: owner (when a party), sender,
    receiver, then a network broadcast.  An owner answering ``pending`` is not
    escalated; its range simply is not included yet.
    """

    def __init__(
        self,
        node: NodeId,
        store: PieceStore,
        evaluator: Evaluator,
        get_log,
        transport: Transport,
        now: Callable[[], int],
        on_verdict: Callable[[Collection, Verdict], None],
        deadline_rounds: int = 3,
        request_timeout_us: int = 1_000_000,
        pushed_by: Callable[[NodeId], bool] = lambda owner: False,
    ):
        self.node = node
        self.store = store
        self.evaluator = evaluator
        self.get_log = get_log
        self.transport = transport
        self.now = now
        self.on_verdict = on_verdict
        self.deadline_rounds = deadline_rounds
        self.request_timeout_us = request_timeout_us
        self.pushed_by = pushed_by
        self.collections: Dict[Digest, Collection] = {}
        self._asks: Dict[tuple, _Ask] = {}
        self.stats = CollectorStats()

    # -- entry points ----------------------------------------------------------

    def watch(self, tx: Transaction, hints: Iterable[TransactionIndex] = ()) -> Collection:
        for index in hints:
            if index.chain_owner in (tx.sender, tx.receiver):
                self.evaluator.add_hint(tx.serial, index)
        coll = self.collections.get(tx.digest)
        if coll is None:
            coll = Collection(tx, self.get_log().round, self.now(), (tx.sender, tx.receiver))
            self.collections[tx.digest] = coll
        if coll.verdict is None and not coll.expired:
            self._advance(coll)
        return coll

    def pending(self) -> List[Collection]:
        return [c for c in self.collections.values() if c.verdict is None and not c.expired]

    def on_round(self) -> None:
        """Called after every newly decided round."""
        for piece, outcome in self.store.retry_deferred(self.get_log()):
            if outcome == DISCARDED:
                self.stats.discarded_pieces += 1
        round = self.get_log().round
        for coll in self.pending():
            self._advance(coll)
            if coll.verdict is None and round > coll.started_round + self.deadline_rounds:
                coll.expired = True
                self.on_verdict(coll, Verdict(Status.UNDECIDED, detail="deadline"))

    def poll(self) -> None:
        """Re-evaluate pending collections and re-ask timed-out requests."""
        for coll in self.pending():
            self._advance(coll)

    def _offer(self, owner: NodeId, pieces) -> bool:
        """Store what verifies; ``True`` if something waits for a later round."""
        log = self.get_log()
        deferred = False
        for piece in pieces:
            if piece.owner != owner:
                self.stats.malformed += 1
                continue
            outcome = self.store.offer(piece, log)
            if outcome == DISCARDED:
                self.stats.discarded_pieces += 1
            elif outcome == DEFERRED:
                deferred = True
        return deferred

    def on_push(self, src: NodeId, msg: PiecePush) -> None:
        self._offer(msg.owner, msg.pieces)
        self.poll()

    def on_piece_response(self, src: NodeId, msg: PieceResponse) -> None:
        log = self.get_log()
        deferred = self._offer(msg.owner, msg.pieces)
        ask = self._asks.get(("chain", msg.owner))
        if ask is not None and ask.target is not None and ask.target in (src, BROADCAST):
            if self.store.tb_covered(msg.owner) >= (ask.through or 0):
                ask.level, ask.target = 0, None
            elif deferred or (src == msg.owner and msg.pending):
                # Not sealed or not yet in our log: wait a round, do not blame.
                ask.target, ask.wait_round = None, log.round
            elif ask.target != BROADCAST:
                ask.level, ask.target = ask.level + 1, None
            else:
                ask.target = None  # re-broadcast at most once a round
        self.poll()

    def on_index_response(self, src: NodeId, msg: IndexResponse) -> None:
        learnt = False
        for index in msg.indices:
            if not index.is_genesis:
                before = self.evaluator.hints.get((msg.serial, index.chain_owner), set())
                if index.block_ordinal not in before:
                    learnt = True
                self.evaluator.add_hint(msg.serial, index)
        for key, ask in self._asks.items():
            if key[0] == "index" and key[1] == msg.serial and ask.target is not None and ask.target in (src, BROADCAST):
                if learnt:
                    ask.level, ask.target = 0, None
                elif ask.target != BROADCAST:
                    ask.level, ask.target = ask.level + 1, None
                else:
                    ask.target = None
        self.poll()

    # -- internals ------------------------------------------------------------

    def _advance(self, coll: Collection) -> None:
        verdict = self.evaluator.evaluate(coll.tx)
        if verdict.terminal:
            coll.verdict = verdict
            self.on_verdict(coll, verdict)
            return
        for need in verdict.missing:
            self._ask(coll, need)

    def _plan(self, coll: Collection, owner: NodeId) -> List[NodeId]:
        order = [owner] if owner in coll.parties else []
        order += list(coll.parties)
        out = []
        for node in order:
            if node != self.node and node not in out:
                out.append(node)
        return out + [BROADCAST]

    def _ask(self, coll: Collection, need: Need) -> None:
        if need.through_tb is not None or need.serial is None:
            key = ("chain", need.owner)
        else:
            key = ("index", need.serial, need.owner)
        round = self.get_log().round
        if key[0] == "chain" and round <= coll.started_round and self.pushed_by(need.owner):
            return  # the owner pushes its new pieces; pull only if they do not show up
        ask = self._asks.setdefault(key, _Ask())
        now = self.now()
        if ask.target is not None:
            if now - ask.sent_at < self.request_timeout_us:
                return  # in flight; its answer triggers a re-ask for whatever is still missing
            if ask.target != BROADCAST:
                ask.level += 1
        elif ask.wait_round == round:
            return  # pending at the source; try again next round
        plan = self._plan(coll, need.owner)
        target = plan[min(ask.level, len(plan) - 1)]
        if target == BROADCAST and ask.broadcast_round == round:
            return
        if key[0] == "chain":
            msg = PieceRequest(need.owner, self.store.prefix(need.owner) + 1, need.through_tb)
        else:
            msg = IndexRequest(need.serial)
        ask.target, ask.sent_at, ask.through = target, now, need.through_tb
        if target == BROADCAST:
            ask.broadcast_round = round
            self.stats.broadcasts += 1
            self.transport.broadcast_request(msg)
        else:
            self.stats.requests += 1
            self.transport.send(target, msg)
