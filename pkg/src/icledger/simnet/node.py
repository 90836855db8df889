"""Honest ledger node: the state machine every simulated participant runs."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Set, Tuple

from ..chain import ChainSet, IndividualChain
from ..consensus.log import ConsensusLog, chain_cm
from ..consensus.pbft import Commit, Decision, NewView, PbftReplica, PbftTimings, PrePrepare, Prepare, ViewChange
from ..core import (
    ConsensusMessage,
    ConsensusResult,
    Digest,
    NodeId,
    Piece,
    SerialNumber,
    Transaction,
    TransactionIndex,
    genesis_index,
    genesis_transaction,
    sign_transaction,
)
from ..validation.collector import BROADCAST, Collection, ProofCollector
from ..validation.evaluate import Evaluator, Status, Verdict
from ..validation.messages import (
    Ack,
    Announce,
    IndexRequest,
    IndexResponse,
    PiecePush,
    PieceRequest,
    PieceResponse,
    TxMessage,
)
from ..validation.store import PieceStore
from .kernel import US, rng_for

CONSENSUS_TYPES = (ConsensusMessage, PrePrepare, Prepare, Commit, ViewChange, NewView, Decision)


@dataclass
class Coin:
    """A validated output the node may spend."""

    tx: Transaction
    index: TransactionIndex
    amount: int
    closure: int  # number of chains its proofs span
    via_genesis: bool = False


@dataclass
class NodeContext:
    """What the runner hands every node."""

    config: object
    keys: object
    sim: object
    network: object
    record: Callable[[dict], None]
    bootstrap: ConsensusLog
    consensus_factory: Callable[["LedgerNode"], object]
    target_round: int
    on_decided: Callable[["LedgerNode", ConsensusResult], None]
    issue_until: Optional[int] = None


class LedgerNode:
    """Runs consensus rounds, keeps the individual chain, and validates.

    Honest behavior only; :mod:`icledger.adversary` subclasses this and
    overrides the marked hooks.
    """

    honest = True

    def __init__(self, node: NodeId, ctx: NodeContext):
        cfg = ctx.config
        self.id = node
        self.ctx = ctx
        self.cfg = cfg
        self.keys = ctx.keys
        self.sim = ctx.sim
        self.net = ctx.network
        self.group = list(cfg.group_of(node))
        self.peers = [p for p in self.group if p != node]
        self.all_nodes = list(range(1, cfg.n + 1))
        self.chains = ChainSet(IndividualChain.create(node, cfg.initial_balance, cfg.block_size))
        self.log = ctx.bootstrap.copy()
        self.store = PieceStore(node)
        self.evaluator = Evaluator(self.store, self.keys)
        self.collector = ProofCollector(
            node,
            self.store,
            self.evaluator,
            get_log=lambda: self.log,
            transport=self,
            now=lambda: self.sim.now,
            on_verdict=self._on_verdict,
            deadline_rounds=cfg.deadline_rounds,
            request_timeout_us=int(cfg.request_timeout * US),
            pushed_by=lambda owner: owner in self.group,
        )
        self.consensus = ctx.consensus_factory(self)
        self.rng = rng_for(cfg.seed, "workload", node)
        self.counter = 0
        self.coins: Dict[Digest, Coin] = {}
        self.pending_coins: Dict[Digest, Tuple[Transaction, TransactionIndex]] = {}
        self.known_indices: Dict[SerialNumber, Set[TransactionIndex]] = {}
        self.own_first: Dict[SerialNumber, TransactionIndex] = {}
        self.announced_through = 0
        self.cpu_free_at = 0
        self._charged_units = 0
        self.verdicts: Dict[Digest, Verdict] = {}
        self.stopped = False
        self._own_genesis_coin()

    # -- small helpers ----------------------------------------------------------

    @property
    def chain(self) -> IndividualChain:
        return self.chains.primary

    def record(self, ev: str, **fields) -> None:
        fields.update(t=self.sim.now, ev=ev, node=self.id)
        self.ctx.record(fields)

    def outgoing(self, dst: NodeId, msg) -> List[object]:
        """Hook: the messages actually put on the wire for ``msg`` to ``dst``."""
        return [msg]

    def send(self, dst: NodeId, msg) -> None:
        if dst == self.id:
            return
        for out in self.outgoing(dst, msg):
            self.net.send(self.id, dst, out)

    def broadcast(self, msg, targets: Optional[Sequence[NodeId]] = None) -> None:
        for dst in (self.all_nodes if targets is None else targets):
            if dst != self.id:
                self.send(dst, msg)

    def broadcast_request(self, msg) -> None:
        """Last-resort proof request: every node that validates the chain's owner."""
        owner = msg.owner if isinstance(msg, PieceRequest) else msg.serial.sender
        scope = set(self.group)
        if 1 <= owner <= self.cfg.n:
            scope.update(self.cfg.group_of(owner))
        self.broadcast(msg, sorted(scope))

    def _own_genesis_coin(self) -> None:
        g = genesis_transaction(self.id, self.cfg.initial_balance)
        self.coins[g.digest] = Coin(g, genesis_index(self.id), self.cfg.initial_balance, 1, via_genesis=True)

    # -- lifecycle ----------------------------------------------------------------

    def start(self) -> None:
        self.sim.schedule(0, self.start_round, kind="round")
        if self.cfg.issue_rate > 0:
            self._schedule_issue()

    def stop(self) -> None:
        self.stopped = True

    # -- consensus rounds -------------------------------------------------------------

    def start_round(self) -> None:
        if self.stopped:
            return
        round = self.log.round + 1
        cm = self.proposal(round)
        self.record("round_start", round=round)
        self.consensus.start_round(round, cm)

    def proposal(self, round: int) -> Optional[ConsensusMessage]:
        """Seal a new check point if the last one was included."""
        chain = self.chain
        _, pos, cp = chain.latest_cp
        if self.log.is_included(cp.digest):
            chain.append_checkpoint(self.log.result(self.log.round))
            self.record("append", kind="cp", length=len(chain))
        return self.make_cm(chain, round)

    def make_cm(self, chain: IndividualChain, round: int) -> ConsensusMessage:
        return chain_cm(self.keys, chain, round)

    def on_decide(self, result: ConsensusResult) -> None:
        if result.round != self.log.round + 1:
            return
        self.log.append(result)
        self.record("decide", round=result.round, digest=result.digest.hex(), size=len(result.entries))
        self.after_decide(result)
        self.ctx.on_decided(self, result)
        if self.log.round < self.ctx.target_round:
            self.sim.schedule(int(self.cfg.round_interval * US), self.start_round, kind="round")

    def quiescent(self) -> bool:
        """Every own transaction sits in an announced piece and no validation is in flight."""
        last = self.log.last_included(self.id)
        chain = self.chain
        if chain.tb_positions and (last is None or chain.tb_positions[-1] > last.cm.cp_position):
            return False
        if self.announced_through < self.log.included_count(self.id) - 1:
            return False
        return not self.collector.pending() and self.cpu_free_at <= self.sim.now

    def after_decide(self, result: ConsensusResult) -> None:
        self._publish_own_pieces()
        self.collector.on_round()
        self.watch_new_messages()

    # -- own pieces -------------------------------------------------------------------

    def _publish_own_pieces(self) -> None:
        """Store and announce pieces of our chain that just became correct."""
        correct = self.log.included_count(self.id) - 1
        fresh = []
        while self.announced_through < correct:
            ordinal = self.announced_through + 1
            piece = self.chain.extract_piece(ordinal)
            self.store.offer(piece, self.log)
            self.announced_through = ordinal
            fresh.append(piece)
        if fresh:
            self.push_pieces(fresh)
        for piece in fresh:
            self.announce_piece(piece)

    def push_pieces(self, pieces: List[Piece]) -> None:
        """Hand the group our newly correct pieces ahead of the announcements."""
        msg = PiecePush(self.id, tuple(pieces))
        for dst in self.peers:
            self.send(dst, msg)

    def announce_piece(self, piece: Piece) -> None:
        for k, block in piece.transaction_blocks():
            for m, tx in enumerate(block.messages, start=1):
                here = TransactionIndex(self.id, k, m)
                if self.own_first.get(tx.serial) != here:
                    continue
                indices = sorted(self.known_indices.get(tx.serial, {here}) | {here})
                self.announce(tx, indices)

    def announce(self, tx: Transaction, indices) -> None:
        """Group members learn ``tx`` from our pushed piece; others get an Announce."""
        if self.stopped:
            return
        msg = Announce(tx, tuple(indices))
        for dst in self.validators_of(tx):
            if dst not in self.peers:
                self.send(dst, msg)
        self.collector.watch(tx, indices)

    def watch_new_messages(self) -> None:
        """Validate what arrived inside group members' pieces."""
        for index, tx in self.store.take_new_messages():
            owner = index.chain_owner
            if owner == self.id or owner not in (tx.sender, tx.receiver) or self.id in (tx.sender, tx.receiver):
                continue
            if owner not in self.group or not self.validates(tx):
                continue
            self._learn_index(tx.serial, index)
            self.collector.watch(tx, [index])

    def validates(self, tx: Transaction) -> bool:
        try:
            return self.id in self.cfg.group_of(tx.sender) or self.id == tx.receiver
        except ValueError:
            return False

    def validators_of(self, tx: Transaction) -> List[NodeId]:
        try:
            group = self.cfg.group_of(tx.sender)
        except ValueError:
            return []
        out = [v for v in group if v != self.id]
        if tx.receiver not in group and tx.receiver != self.id and 1 <= tx.receiver <= self.cfg.n:
            out.append(tx.receiver)
        return out

    # -- message handling --------------------------------------------------------

    def handle(self, src: NodeId, msg) -> None:
        if isinstance(msg, CONSENSUS_TYPES):
            self.consensus.receive(src, msg)
        elif isinstance(msg, TxMessage):
            self.on_transaction(src, msg.tx)
        elif isinstance(msg, Ack):
            self._learn_index(msg.serial, msg.index)
        elif isinstance(msg, Announce):
            self.on_announce(src, msg)
        elif isinstance(msg, IndexRequest):
            self.serve_index(src, msg)
        elif isinstance(msg, PieceRequest):
            self.serve_pieces(src, msg)
        elif isinstance(msg, IndexResponse):
            self.collector.on_index_response(src, msg)
        elif isinstance(msg, PieceResponse):
            self.collector.on_piece_response(src, msg)
            self.watch_new_messages()
        elif isinstance(msg, PiecePush):
            self.collector.on_push(src, msg)
            self.watch_new_messages()

    def _learn_index(self, serial: SerialNumber, index: TransactionIndex) -> None:
        self.known_indices.setdefault(serial, set()).add(index)

    def record_transaction(self, tx: Transaction) -> TransactionIndex:
        index = self.chain.append_transaction(tx)
        self.own_first.setdefault(tx.serial, index)
        self._learn_index(tx.serial, index)
        self.record("append", kind="tx", tx=tx.tx_id, index=str(index))
        return index

    def on_transaction(self, src: NodeId, tx: Transaction) -> None:
        if tx.receiver != self.id or tx.sender == self.id or tx.serial in self.own_first:
            return
        index = self.record_transaction(tx)
        self.pending_coins[tx.digest] = (tx, index)
        self.send(tx.sender, Ack(tx.serial, index))

    def on_announce(self, src: NodeId, msg: Announce) -> None:
        tx = msg.tx
        if not self.validates(tx):
            return
        for index in msg.indices:
            if index.chain_owner in (tx.sender, tx.receiver):
                self._learn_index(tx.serial, index)
        self.collector.watch(tx, msg.indices)

    def serve_index(self, src: NodeId, req: IndexRequest) -> None:
        known = tuple(sorted(self.known_indices.get(req.serial, ())))
        self.send(src, IndexResponse(req.serial, known))

    def pieces_for(self, req: PieceRequest, requester: Optional[NodeId] = None) -> PieceResponse:
        """Our answer to ``req``; ``pending`` means "the rest is not sealed or is on its way"."""
        if req.owner == self.id:
            available = self.log.included_count(self.id) - 1
            last, pending = available, True
            if req.through_tb is not None:
                holder = self.chain.piece_of_tb(req.through_tb) if req.through_tb > 0 else 1
                if holder is not None and holder <= available:
                    last, pending = holder, False
            first = max(1, req.from_ordinal)
            if requester in self.peers and first <= self.announced_through:
                # Already pushed to this peer and still in transit.
                first, pending = self.announced_through + 1, True
            pieces = tuple(self.chain.extract_piece(l) for l in range(first, last + 1))
            return PieceResponse(self.id, pieces, pending)
        pieces, _ = self.store.pieces_through_tb(req.owner, max(1, req.from_ordinal), req.through_tb)
        return PieceResponse(req.owner, tuple(pieces), False)

    def serve_pieces(self, src: NodeId, req: PieceRequest) -> None:
        self.send(src, self.pieces_for(req, src))

    # -- validation results -------------------------------------------------------

    def _on_verdict(self, coll: Collection, verdict: Verdict) -> None:
        units = self.evaluator.work_units - self._charged_units
        self._charged_units = self.evaluator.work_units
        if units:
            self.record("work", units=units)
        start = max(self.sim.now, self.cpu_free_at)
        self.cpu_free_at = start + int(math.ceil(units * US / self.cfg.c_comp))
        self.sim.at(self.cpu_free_at, self._verdict_ready, coll, verdict, kind="compute")

    def _verdict_ready(self, coll: Collection, verdict: Verdict) -> None:
        tx = coll.tx
        self.verdicts[tx.digest] = verdict
        fields = dict(
            tx=tx.tx_id,
            sender=tx.sender,
            receiver=tx.receiver,
            status=verdict.status.value,
            evidence=verdict.evidence.value if verdict.evidence else None,
            round=self.log.round,
            started_round=coll.started_round,
            started_at=coll.started_at,
        )
        if verdict.status is Status.VALIDATED:
            bundle = self.evaluator.bundle(tx)
            fields["bundle"] = bundle.digest.hex()
            fields["chains"] = len(bundle.ranges())
            self._credit(tx)
            for index in self.evaluator.locations.get(tx.digest, ()):
                self._learn_index(tx.serial, index)
        self.record("verdict", **fields)

    def _credit(self, tx: Transaction) -> None:
        if self.id not in (tx.sender, tx.receiver):
            return
        index = self.own_first.get(tx.serial)
        if index is None:
            return
        amount = tx.transfer_value if tx.receiver == self.id else tx.remaining_value
        self.pending_coins.pop(tx.digest, None)
        if amount > 0:
            reqs = self.evaluator.requirements.get(tx.digest, {})
            self.coins[tx.digest] = Coin(tx, index, amount, len(reqs))

    # -- workload -------------------------------------------------------------------

    def _schedule_issue(self) -> None:
        gap = self.rng.expovariate(self.cfg.issue_rate)
        self.sim.schedule(max(1, int(gap * US)), self._issue_tick, kind="issue")

    def _issue_tick(self) -> None:
        if self.stopped:
            return
        if self.ctx.issue_until is not None and self.log.round >= self.ctx.issue_until:
            return
        self.issue()
        self._schedule_issue()

    def pick_partner(self) -> Optional[NodeId]:
        return self.rng.choice(self.peers) if self.peers else None

    def pick_coins(self) -> List[Coin]:
        """Spendable coins, fewest foreign chains first, then oldest."""
        ranked = sorted(self.coins.values(), key=lambda c: (c.closure, c.index))
        for coin in ranked:
            if coin.amount >= 2:
                return [coin]
        chosen, total = [], 0
        for coin in ranked:
            chosen.append(coin)
            total += coin.amount
            if total >= 2 or len(chosen) == 8:
                break
        return chosen if total >= 2 else []

    def next_serial(self) -> SerialNumber:
        self.counter += 1
        return SerialNumber(self.id, self.counter)

    def build_transaction(self, receiver: NodeId, coins: List[Coin], transfer: Optional[int] = None) -> Transaction:
        total = sum(c.amount for c in coins)
        if transfer is None:
            transfer = self.rng.randint(1, max(1, total // 2))
        tx = Transaction(
            sender=self.id,
            receiver=receiver,
            serial=self.next_serial(),
            sources=tuple(sorted(c.index for c in coins)),
            transfer_value=transfer,
            remaining_value=total - transfer,
        )
        return sign_transaction(self.keys, tx)

    def issue(self) -> Optional[Transaction]:
        partner = self.pick_partner()
        coins = self.pick_coins()
        if partner is None or not coins:
            self.record("issue_skipped", reason="no partner" if partner is None else "no coin")
            return None
        tx = self.build_transaction(partner, coins)
        for coin in coins:
            del self.coins[coin.tx.digest]
        self.submit(tx, kind="normal")
        return tx

    def submit(self, tx: Transaction, kind: str, deliver: bool = True) -> TransactionIndex:
        index = self.record_transaction(tx)
        if tx.remaining_value > 0:
            self.pending_coins[tx.digest] = (tx, index)
        self.record("issue", tx=tx.tx_id, sender=tx.sender, receiver=tx.receiver, kind=kind, honest=self.honest)
        if deliver:
            self.send(tx.receiver, TxMessage(tx))
        return index
