"""Per-validator store of verified pieces."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Tuple

from ..chain import PieceFault, check_piece
from ..consensus.log import ConsensusLog
from ..core import (
    CheckPoint,
    Digest,
    GenesisDeclaration,
    NodeId,
    Piece,
    SerialNumber,
    Transaction,
    TransactionBlock,
    TransactionIndex,
    genesis_transaction,
)

STORED = "stored"
DUPLICATE = "duplicate"
DEFERRED = "deferred"
DISCARDED = "discarded"


class ConflictingPiece(RuntimeError):
    """Two different pieces passed verification for one slot of a chain."""


@dataclass
class _OwnerIndex:
    """Lookups over the contiguous prefix of one owner's stored pieces."""

    prefix: int = 0  # pieces 1..prefix are all stored
    tb_through: int = -1  # cumulative TB count at the end of the prefix
    first_seen: Dict[SerialNumber, Tuple[TransactionIndex, Transaction]] = None
    spends: Dict[Digest, List[TransactionIndex]] = None

    def __post_init__(self):
        self.first_seen = {}
        self.spends = {}


class PieceStore:
    """Correct pieces held by one node, indexed for validation.

    Incorrect pieces are discarded on arrival.  A piece whose closing check
    point is not yet in the local log is parked until the log catches up.
    """

    def __init__(self, holder: NodeId):
        self.holder = holder
        self._pieces: Dict[NodeId, Dict[int, Piece]] = {}
        self._tbs: Dict[NodeId, Dict[int, TransactionBlock]] = {}
        self._genesis: Dict[NodeId, CheckPoint] = {}
        self._index: Dict[NodeId, _OwnerIndex] = {}
        self._deferred: Dict[Digest, Piece] = {}
        self.discarded = 0
        self.stored = 0
        self._new_messages: List[Tuple[TransactionIndex, Transaction]] = []

    # -- intake ------------------------------------------------------------------

    def offer(self, piece: Piece, log: ConsensusLog) -> str:
        held = self._pieces.get(piece.owner, {}).get(piece.start_ordinal)
        if held is not None and held.digest == piece.digest:
            return DUPLICATE
        fault = check_piece(piece, log)
        if fault is PieceFault.END_NOT_INCLUDED:
            self._deferred[piece.digest] = piece
            return DEFERRED
        if fault is not None:
            self.discarded += 1
            return DISCARDED
        if held is not None:
            raise ConflictingPiece(f"node {self.holder}: two correct pieces {piece.owner}/{piece.start_ordinal}")
        self._insert(piece)
        return STORED

    def retry_deferred(self, log: ConsensusLog) -> List[Tuple[Piece, str]]:
        outcomes = []
        parked, self._deferred = self._deferred, {}
        for piece in parked.values():
            outcomes.append((piece, self.offer(piece, log)))
        return outcomes

    def add_genesis(self, block: CheckPoint, log: ConsensusLog) -> bool:
        """Hold a lone genesis block once its digest is in ``CON(1)``."""
        if not block.is_genesis or not isinstance(block.payload, GenesisDeclaration):
            return False
        owner = block.payload.owner
        first = log.included(owner, 1)
        if first is None or first.cm.cp_digest != block.digest:
            return False
        self._genesis[owner] = block
        return True

    def _insert(self, piece: Piece) -> None:
        owner = piece.owner
        self._pieces.setdefault(owner, {})[piece.start_ordinal] = piece
        tbs = self._tbs.setdefault(owner, {})
        for k, block in piece.transaction_blocks():
            tbs[k] = block
        if piece.start_ordinal == 1:
            self._genesis[owner] = piece.blocks[0]
        self.stored += 1
        self._extend_prefix(owner)

    def _extend_prefix(self, owner: NodeId) -> None:
        idx = self._index.setdefault(owner, _OwnerIndex())
        pieces = self._pieces[owner]
        while idx.prefix + 1 in pieces:
            piece = pieces[idx.prefix + 1]
            for k, block in piece.transaction_blocks():
                for m, tx in enumerate(block.messages, start=1):
                    here = TransactionIndex(owner, k, m)
                    if tx.serial not in idx.first_seen:
                        idx.first_seen[tx.serial] = (here, tx)
                        self._new_messages.append((here, tx))
                    if tx.sender == owner:
                        for digest in self._resolved_sources(owner, tx, here):
                            idx.spends.setdefault(digest, []).append(here)
            idx.prefix += 1
            idx.tb_through = piece.tb_range[1]

    def _resolved_sources(self, owner: NodeId, tx: Transaction, at: TransactionIndex) -> List[Digest]:
        """Digests of the transactions ``tx`` spends, resolving only earlier indices."""
        out = []
        for src in tx.sources:
            if src.chain_owner != owner or not src.precedes(at):
                continue
            found = self.resolve(src)
            if found is not None:
                out.append(found.digest)
        return out

    def take_new_messages(self) -> List[Tuple[TransactionIndex, Transaction]]:
        """First occurrences that joined a stored prefix since the last call."""
        out, self._new_messages = self._new_messages, []
        return out

    # -- queries ------------------------------------------------------------------

    def prefix(self, owner: NodeId) -> int:
        idx = self._index.get(owner)
        return idx.prefix if idx else 0

    def tb_covered(self, owner: NodeId) -> int:
        """TB ordinals ``1..n`` are inside the stored prefix; ``-1`` if no prefix."""
        idx = self._index.get(owner)
        return idx.tb_through if idx and idx.prefix else -1

    def piece(self, owner: NodeId, ordinal: int) -> Optional[Piece]:
        return self._pieces.get(owner, {}).get(ordinal)

    def pieces(self, owner: NodeId) -> List[Piece]:
        held = self._pieces.get(owner, {})
        return [held[k] for k in sorted(held)]

    def owners(self) -> List[NodeId]:
        return sorted(self._pieces)

    def genesis_owners(self) -> List[NodeId]:
        return sorted(self._genesis)

    def genesis(self, owner: NodeId) -> Optional[CheckPoint]:
        return self._genesis.get(owner)

    def genesis_transaction(self, owner: NodeId) -> Optional[Transaction]:
        block = self._genesis.get(owner)
        if block is None:
            return None
        return genesis_transaction(owner, block.payload.initial_balance)

    def message(self, index: TransactionIndex) -> Optional[Transaction]:
        if index.is_genesis:
            return self.genesis_transaction(index.chain_owner)
        block = self._tbs.get(index.chain_owner, {}).get(index.block_ordinal)
        if block is None or not 1 <= index.message_ordinal <= len(block.messages):
            return None
        return block.messages[index.message_ordinal - 1]

    resolve = message

    def first_occurrence(self, owner: NodeId, serial: SerialNumber) -> Optional[Tuple[TransactionIndex, Transaction]]:
        idx = self._index.get(owner)
        return idx.first_seen.get(serial) if idx else None

    def spenders(self, owner: NodeId, source_digest: Digest) -> List[TransactionIndex]:
        idx = self._index.get(owner)
        return list(idx.spends.get(source_digest, ())) if idx else []

    def piece_of_tb(self, owner: NodeId, tb_ordinal: int) -> Optional[int]:
        for ordinal, piece in self._pieces.get(owner, {}).items():
            lo, hi = piece.tb_range
            if lo <= tb_ordinal <= hi:
                return ordinal
        return None

    def pieces_through_tb(self, owner: NodeId, start: int, tb_ordinal: Optional[int]) -> Tuple[List[Piece], bool]:
        """Contiguous stored pieces from ``start`` up to the one holding ``tb_ordinal``."""
        held = self._pieces.get(owner, {})
        out = []
        ordinal = start
        while ordinal in held:
            piece = held[ordinal]
            out.append(piece)
            if tb_ordinal is not None and piece.tb_range[1] >= tb_ordinal:
                return out, True
            ordinal += 1
        return out, False

    def blocks_held(self, owner: NodeId) -> int:
        positions = set()
        for piece in self._pieces.get(owner, {}).values():
            positions.update(range(piece.start_position, piece.end_position + 1))
        return len(positions)

    def all_pieces(self) -> Iterable[Piece]:
        for owner in sorted(self._pieces):
            yield from self.pieces(owner)
