"""Scripted Byzantine behaviors.

A :class:`MaliciousNode` is an honest node with hooks overridden according
to its script.  Adversaries can sign only with their own keys and cannot
find hash collisions; everything else is fair game.  Colluders share state
through a :class:`CollusionBus`.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Any, Dict, List, Optional, Sequence, Tuple

from .chain import ChainSet, IndividualChain
from .consensus.log import fault_bound, make_cm
from .consensus.pbft import PrePrepare, sign_message
from .core import (
    ConsensusMessage,
    ConsensusResult,
    NodeId,
    Piece,
    Transaction,
    TransactionBlock,
    TransactionIndex,
    sign_transaction,
)
from .simnet.node import Coin, LedgerNode, NodeContext
from .validation.messages import Announce, IndexRequest, IndexResponse, PiecePush, PieceRequest, PieceResponse, TxMessage

BEHAVIORS = frozenset(
    {
        "fork_chain",
        "double_spend",
        "bad_signature",
        "wrong_round_cm",
        "replay_cm",
        "insufficient_balance",
        "withhold_proofs",
        "equivocate_pieces",
        "spam_invalid",
        "silent",
    }
)

# Behaviors that tamper with the node's consensus proposal in alternate rounds.
CM_BEHAVIORS = ("bad_signature", "wrong_round_cm", "replay_cm")


@dataclass(frozen=True)
class AdversaryScript:
    node: NodeId
    behaviors: Tuple[str, ...]
    params: Dict[str, Any] = field(default_factory=dict, hash=False, compare=False)

    def __post_init__(self):
        unknown = [b for b in self.behaviors if b not in BEHAVIORS]
        if unknown:
            raise ValueError(f"unknown behaviors {unknown}")

    @classmethod
    def from_spec(cls, spec) -> "AdversaryScript":
        return cls(spec.node, tuple(spec.behaviors), dict(spec.params))


class CollusionBus:
    """Instant, free channel among malicious nodes."""

    def __init__(self):
        self.members: Dict[NodeId, "MaliciousNode"] = {}

    def join(self, node: "MaliciousNode") -> None:
        self.members[node.id] = node

    def chain_set(self, owner: NodeId) -> Optional[ChainSet]:
        member = self.members.get(owner)
        return member.chains if member else None

    def is_colluder(self, node: NodeId) -> bool:
        return node in self.members


def _flip_piece(piece: Piece, salt: int) -> Piece:
    """A copy of ``piece`` with one transaction value changed."""
    blocks = list(piece.blocks)
    tbs = [i for i, b in enumerate(blocks) if isinstance(b, TransactionBlock) and b.messages]
    if not tbs:
        last = blocks[-1]
        # No transactions to alter: forge the closing check point's payload.
        payload = last.payload
        if isinstance(payload, ConsensusResult) and payload.entries:
            payload = ConsensusResult(payload.round, payload.entries[:-1])
        else:
            payload = ConsensusResult(salt + 1, ())
        blocks[-1] = replace(last, payload=payload)
        return replace(piece, blocks=tuple(blocks))
    at = tbs[salt % len(tbs)]
    block = blocks[at]
    msgs = list(block.messages)
    m = salt % len(msgs)
    msgs[m] = replace(msgs[m], transfer_value=msgs[m].transfer_value ^ 1)
    blocks[at] = replace(block, messages=tuple(msgs))
    return replace(piece, blocks=tuple(blocks))


class MaliciousNode(LedgerNode):
    honest = False

    def __init__(self, node: NodeId, ctx: NodeContext, script: AdversaryScript, bus: CollusionBus):
        super().__init__(node, ctx)
        self.script = script
        self.behaviors = frozenset(script.behaviors)
        self.params = dict(script.params)
        self.bus = bus
        self.forks = 0
        bus.join(self)

    def has(self, behavior: str) -> bool:
        return behavior in self.behaviors

    def param(self, name: str, default):
        return self.params.get(name, default)

    # -- silence ------------------------------------------------------------------

    def start(self) -> None:
        if self.has("silent"):
            return
        super().start()

    def handle(self, src: NodeId, msg) -> None:
        if self.has("silent"):
            return
        super().handle(src, msg)

    def outgoing(self, dst: NodeId, msg) -> List[object]:
        if self.has("silent"):
            return []
        if isinstance(msg, ConsensusMessage) and msg.node == self.id and self.has("fork_chain"):
            return [self._fork_cm_for(dst, msg)]
        if isinstance(msg, PrePrepare) and msg.leader == self.id and self.has("fork_chain"):
            return [self._equivocal_pre_prepare(dst, msg)]
        return [msg]

    # -- consensus proposals -----------------------------------------------------

    def _misbehaves(self, round: int) -> Optional[str]:
        active = [b for b in CM_BEHAVIORS if self.has(b)]
        if not active or round % 2:
            return None
        return active[(round // 2) % len(active)]

    def proposal(self, round: int) -> Optional[ConsensusMessage]:
        if self.has("fork_chain"):
            cm = self._fork_proposal(round)
        else:
            cm = super().proposal(round)
        mode = self._misbehaves(round)
        if mode == "bad_signature":
            sig = bytearray(cm.signature)
            sig[0] ^= 0xFF
            cm = replace(cm, signature=bytes(sig))
        elif mode == "wrong_round_cm":
            shift = self.rng.choice((-1, 2))
            cm = make_cm(self.keys, self.id, round + shift, cm.cp_digest, cm.cp_position, cm.prev_cp_position)
        elif mode == "replay_cm":
            last = self.log.last_included(self.id)
            old = last.cm
            cm = make_cm(self.keys, self.id, round, old.cp_digest, old.cp_position, old.prev_cp_position)
        if mode is not None:
            self.record("adversary", behavior=mode, round=round)
        return cm

    # -- fork_chain ------------------------------------------------------------------

    def _adopt_included(self) -> None:
        """Continue from whichever version had its newest check point included."""
        versions = self.chains.versions
        alt = versions.get("alt")
        if alt is None:
            return
        main = versions["main"]
        if self.log.is_included(alt.latest_cp[2].digest):
            versions["main"], lost = alt, main
            self._reindex_own()
        elif self.log.is_included(main.latest_cp[2].digest):
            lost = alt
        else:
            return  # neither version got in; propose both again
        del versions["alt"]
        for name in [n for n in versions if n.startswith("lost")]:
            del versions[name]
        self.forks += 1
        versions[f"lost{self.forks}"] = lost

    def after_decide(self, result: ConsensusResult) -> None:
        if self.has("fork_chain"):
            self._adopt_included()
        super().after_decide(result)

    def _reindex_own(self) -> None:
        self.own_first = {}
        for index, tx in self.chain.messages():
            self.own_first.setdefault(tx.serial, index)

    def _fork_proposal(self, round: int) -> ConsensusMessage:
        self._adopt_included()
        main = self.chain
        included = self.log.is_included(main.latest_cp[2].digest)
        if included:
            alt = self.chains.fork("alt")
            shadow = self._shadow_transaction()
            if shadow is not None:
                alt.append_transaction(shadow)
            payload = self.log.result(self.log.round)
            main.append_checkpoint(payload)
            if alt.latest_cp[2].digest == main.latest_cp[2].digest or shadow is None:
                alt.append_checkpoint(ConsensusResult(payload.round, payload.entries[:-1]) if payload.entries else payload)
            else:
                alt.append_checkpoint(payload)
            self.record("append", kind="cp", length=len(main))
            self.record("adversary", behavior="fork_chain", round=round)
        return self.make_cm(main, round)

    def _shadow_transaction(self) -> Optional[Transaction]:
        coins = self.pick_coins()
        others = [p for p in self.peers]
        if not coins or not others:
            return None
        receiver = self.rng.choice(others)
        tx = self.build_transaction(receiver, coins)
        self.send(receiver, TxMessage(tx))
        self.record("issue", tx=tx.tx_id, sender=self.id, receiver=receiver, kind="fork_shadow", honest=False)
        return tx

    def _fork_cm_for(self, dst: NodeId, cm: ConsensusMessage) -> ConsensusMessage:
        alt = self.chains.versions.get("alt")
        if alt is None or dst % 2 == 0:
            return cm
        return self.make_cm(alt, cm.round)

    def _equivocal_pre_prepare(self, dst: NodeId, pp: PrePrepare) -> PrePrepare:
        entries = pp.result.entries
        if dst % 2 == 0 or len(entries) <= self.cfg.n - fault_bound(self.cfg.n):
            return pp
        victim = max(i for i, cm in enumerate(entries) if cm.node != self.id)
        forged = ConsensusResult(pp.result.round, entries[:victim] + entries[victim + 1:])
        return sign_message(self.keys, replace(pp, result=forged, signature=b""))

    # -- transaction workload ----------------------------------------------------------

    def issue(self) -> Optional[Transaction]:
        if self.has("spam_invalid"):
            self._spam()
        if self.has("double_spend") and self.rng.random() < self.param("double_spend_rate", 0.5):
            if self._double_spend():
                return None
        if self.has("insufficient_balance") and self.rng.random() < self.param("overspend_rate", 0.5):
            if self._overspend():
                return None
        if self.has("bad_signature") and self.rng.random() < self.param("bad_signature_rate", 0.3):
            if self._bad_signature_tx():
                return None
        return super().issue()

    def _take_coins(self) -> Tuple[Optional[NodeId], List[Coin]]:
        partner = self.pick_partner()
        coins = self.pick_coins()
        if partner is None or not coins:
            return None, []
        for coin in coins:
            del self.coins[coin.tx.digest]
        return partner, coins

    def _double_spend(self) -> bool:
        if len(self.peers) < 1:
            return False
        partner, coins = self._take_coins()
        if not coins:
            return False
        first = self.build_transaction(partner, coins)
        second_to = self.rng.choice(self.peers)
        second = self.build_transaction(second_to, coins)
        self.submit(first, kind="double_spend_first")
        self.submit(second, kind="double_spend_second")
        return True

    def _overspend(self) -> bool:
        partner, coins = self._take_coins()
        if not coins:
            return False
        total = sum(c.amount for c in coins)
        extra = self.param("overspend", 1_000)
        tx = Transaction(
            self.id,
            partner,
            self.next_serial(),
            tuple(sorted(c.index for c in coins)),
            transfer_value=max(1, total // 2) + extra,
            remaining_value=total - max(1, total // 2),
        )
        self.submit(sign_transaction(self.keys, tx), kind="overspend")
        return True

    def _bad_signature_tx(self) -> bool:
        partner, coins = self._take_coins()
        if not coins:
            return False
        tx = self.build_transaction(partner, coins)
        sig = bytearray(tx.signature)
        sig[-1] ^= 0x01
        self.submit(replace(tx, signature=bytes(sig)), kind="bad_signature")
        return True

    def _spam(self) -> None:
        targets = self.peers or [p for p in self.all_nodes if p != self.id]
        for _ in range(int(self.param("spam_per_tick", 2))):
            receiver = self.rng.choice(targets)
            bogus_source = TransactionIndex(self.id, 10**6 + self.counter, 1)
            tx = sign_transaction(
                self.keys,
                Transaction(self.id, receiver, self.next_serial(), (bogus_source,), 5, 0),
            )
            # Half the spam never enters our own chain, so it cannot be decided.
            recorded = self.rng.random() < 0.5
            if recorded:
                self.submit(tx, kind="spam")
            else:
                self.record("issue", tx=tx.tx_id, sender=self.id, receiver=receiver, kind="spam_unrecorded", honest=False)
                self.send(receiver, TxMessage(tx))

    # -- proof serving -----------------------------------------------------------------

    def announce(self, tx: Transaction, indices) -> None:
        if self.has("withhold_proofs"):
            self.collector.watch(tx, indices)
            return
        super().announce(tx, indices)

    def serve_index(self, src: NodeId, req: IndexRequest) -> None:
        if self.has("withhold_proofs"):
            return
        if self.has("equivocate_pieces"):
            bogus = tuple(
                TransactionIndex(i.chain_owner, i.block_ordinal + 1 + self.rng.randrange(3), i.message_ordinal)
                for i in sorted(self.known_indices.get(req.serial, ()))
            )
            self.send(src, IndexResponse(req.serial, bogus))
            return
        super().serve_index(src, req)

    def _lost_version_of(self, owner: NodeId, pieces: Tuple[Piece, ...]) -> Tuple[Piece, ...]:
        """Swap in pieces from the newest losing fork where it has them."""
        lost = [c for n, c in self.chains.versions.items() if n.startswith("lost")]
        if not lost or owner != self.id:
            return pieces
        chain = lost[-1]
        return tuple(chain.extract_piece(p.start_ordinal) if p.start_ordinal < chain.cp_count else p for p in pieces)

    def _shape(self, dst: NodeId, owner: NodeId, pieces: Tuple[Piece, ...]) -> Tuple[Piece, ...]:
        if self.has("fork_chain") and dst % 2 == 1:
            pieces = self._lost_version_of(owner, pieces)
        if self.has("equivocate_pieces") and pieces:
            salt = self.rng.randrange(1 << 30)
            pieces = tuple(_flip_piece(p, salt + i) for i, p in enumerate(pieces))
        return pieces

    def push_pieces(self, pieces) -> None:
        if self.has("withhold_proofs"):
            return
        for dst in self.peers:
            self.send(dst, PiecePush(self.id, self._shape(dst, self.id, tuple(pieces))))

    def serve_pieces(self, src: NodeId, req: PieceRequest) -> None:
        if self.has("withhold_proofs"):
            return
        response = self.pieces_for(req)
        self.send(src, replace(response, pieces=self._shape(src, response.owner, response.pieces)))


def apply_behavior(node: MaliciousNode, behavior: str, round: int) -> List[object]:
    """Run one script step outside the event loop; returns what it produced.

    Useful for tests and for replaying a behavior against a stand-alone node.
    """
    if behavior not in node.behaviors:
        raise ValueError(f"node {node.id} does not run {behavior}")
    sent: List[object] = []
    original = node.net.send

    def capture(src, dst, payload):
        sent.append(payload)
        return original(src, dst, payload)

    node.net.send = capture
    try:
        if behavior in CM_BEHAVIORS or behavior == "fork_chain":
            sent.append(node.proposal(round))
        elif behavior == "double_spend":
            node._double_spend()
        elif behavior == "insufficient_balance":
            node._overspend()
        elif behavior == "spam_invalid":
            node._spam()
        elif behavior == "equivocate_pieces":
            for ordinal in range(1, node.log.included_count(node.id)):
                sent.append(_flip_piece(node.chain.extract_piece(ordinal), round + ordinal))
    finally:
        node.net.send = original
    return sent
