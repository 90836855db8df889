"""Individual blockchains, pieces, and piece verification."""

from __future__ import annotations

import enum
from dataclasses import dataclass, replace
from typing import Dict, Iterator, List, Optional, Tuple, Union

from .consensus.log import ConsensusLog
from .core import (
    Block,
    CheckPoint,
    ConsensusResult,
    Digest,
    GenesisDeclaration,
    NodeId,
    Piece,
    Transaction,
    TransactionBlock,
    TransactionIndex,
    decode_stream,
    encode_stream,
)

DEFAULT_BLOCK_SIZE = 16


class ChainError(ValueError):
    pass


def make_genesis(owner: NodeId, initial_balance: int) -> CheckPoint:
    return CheckPoint(None, GenesisDeclaration(owner, initial_balance))


class IndividualChain:
    """Chain ``B_i`` of one node.

    Positions are 1-based (``blocks[0]`` is ``B_i(1)``).  The tail transaction
    block stays open until it holds ``block_size`` messages or a check point
    is appended after it.
    """

    def __init__(self, owner: NodeId, genesis: CheckPoint, block_size: int = DEFAULT_BLOCK_SIZE):
        if not genesis.is_genesis or not isinstance(genesis.payload, GenesisDeclaration):
            raise ChainError("chain must start with a genesis check point")
        if genesis.payload.owner != owner:
            raise ChainError("genesis declares a different owner")
        if block_size < 1:
            raise ChainError("block size must be positive")
        self.owner = owner
        self.block_size = block_size
        self.blocks: List[Block] = [genesis]
        self.cp_positions: List[int] = [1]
        self.tb_positions: List[int] = []
        self._tail_open = False

    @classmethod
    def create(cls, owner: NodeId, initial_balance: int, block_size: int = DEFAULT_BLOCK_SIZE) -> "IndividualChain":
        return cls(owner, make_genesis(owner, initial_balance), block_size)

    # -- queries --------------------------------------------------------------

    def __len__(self) -> int:
        return len(self.blocks)

    @property
    def genesis(self) -> CheckPoint:
        return self.blocks[0]

    @property
    def initial_balance(self) -> int:
        return self.genesis.payload.initial_balance

    @property
    def tb_count(self) -> int:
        return len(self.tb_positions)

    @property
    def cp_count(self) -> int:
        return len(self.cp_positions)

    def block(self, position: int) -> Block:
        return self.blocks[position - 1]

    def checkpoint(self, ordinal: int) -> CheckPoint:
        return self.block(self.cp_positions[ordinal - 1])

    @property
    def latest_cp(self) -> Tuple[int, int, CheckPoint]:
        """``(ordinal, position, block)`` of the newest check point."""
        pos = self.cp_positions[-1]
        return len(self.cp_positions), pos, self.block(pos)

    def cp_position(self, ordinal: int) -> int:
        return self.cp_positions[ordinal - 1]

    def message(self, index: TransactionIndex) -> Optional[Transaction]:
        if index.chain_owner != self.owner or not 1 <= index.block_ordinal <= self.tb_count:
            return None
        tb = self.block(self.tb_positions[index.block_ordinal - 1])
        if not 1 <= index.message_ordinal <= len(tb.messages):
            return None
        return tb.messages[index.message_ordinal - 1]

    def messages(self) -> Iterator[Tuple[TransactionIndex, Transaction]]:
        for k, pos in enumerate(self.tb_positions, start=1):
            for m, tx in enumerate(self.block(pos).messages, start=1):
                yield TransactionIndex(self.owner, k, m), tx

    def piece_of_tb(self, tb_ordinal: int) -> Optional[int]:
        """Ordinal ``l`` of the piece holding TB ``tb_ordinal``, if sealed by a CP."""
        if not 1 <= tb_ordinal <= self.tb_count:
            return None
        pos = self.tb_positions[tb_ordinal - 1]
        for ordinal, cp_pos in enumerate(self.cp_positions, start=1):
            if cp_pos > pos:
                return ordinal - 1
        return None

    # -- mutation -------------------------------------------------------------

    def append_transaction(self, tx: Transaction) -> TransactionIndex:
        if self.owner not in (tx.sender, tx.receiver):
            raise ChainError(f"transaction {tx.serial} does not involve node {self.owner}")
        if self._tail_open:
            tail = self.blocks[-1]
            self.blocks[-1] = replace(tail, messages=tail.messages + (tx,))
        else:
            self.blocks.append(TransactionBlock(self.blocks[-1].digest, (tx,)))
            self.tb_positions.append(len(self.blocks))
            self._tail_open = True
        count = len(self.blocks[-1].messages)
        if count >= self.block_size:
            self._tail_open = False
        return TransactionIndex(self.owner, self.tb_count, count)

    def append_checkpoint(self, payload: ConsensusResult) -> CheckPoint:
        self._tail_open = False
        cp = CheckPoint(self.blocks[-1].digest, payload)
        self.blocks.append(cp)
        self.cp_positions.append(len(self.blocks))
        return cp

    def extract_piece(self, cp_ordinal: int) -> Piece:
        if not 1 <= cp_ordinal < self.cp_count:
            raise ChainError(f"no piece {cp_ordinal} in chain of node {self.owner}")
        start = self.cp_positions[cp_ordinal - 1]
        end = self.cp_positions[cp_ordinal]
        return Piece(self.owner, cp_ordinal, start, tuple(self.blocks[start - 1:end]))

    def pieces(self) -> Iterator[Piece]:
        for ordinal in range(1, self.cp_count):
            yield self.extract_piece(ordinal)

    def copy(self) -> "IndividualChain":
        other = IndividualChain.__new__(IndividualChain)
        other.owner = self.owner
        other.block_size = self.block_size
        other.blocks = list(self.blocks)
        other.cp_positions = list(self.cp_positions)
        other.tb_positions = list(self.tb_positions)
        other._tail_open = self._tail_open
        return other

    # -- persistence ----------------------------------------------------------

    def export_bytes(self) -> bytes:
        return encode_stream(self.blocks)

    @classmethod
    def from_blocks(cls, blocks, block_size: int = DEFAULT_BLOCK_SIZE) -> "IndividualChain":
        blocks = list(blocks)
        if not blocks or not isinstance(blocks[0], CheckPoint):
            raise ChainError("chain export must start with a genesis check point")
        chain = cls(blocks[0].payload.owner, blocks[0], block_size)
        for block in blocks[1:]:
            if block.prev_digest != chain.blocks[-1].digest:
                raise ChainError(f"broken link at position {len(chain.blocks) + 1}")
            chain.blocks.append(block)
            if isinstance(block, CheckPoint):
                chain.cp_positions.append(len(chain.blocks))
            else:
                chain.tb_positions.append(len(chain.blocks))
        chain._tail_open = False
        return chain

    @classmethod
    def import_bytes(cls, data: bytes, block_size: int = DEFAULT_BLOCK_SIZE) -> "IndividualChain":
        return cls.from_blocks(decode_stream(data), block_size)


class ChainSet:
    """All chain versions a (possibly malicious) node maintains."""

    def __init__(self, primary: IndividualChain):
        self.owner = primary.owner
        self.versions: Dict[str, IndividualChain] = {"main": primary}

    @property
    def primary(self) -> IndividualChain:
        return self.versions["main"]

    def fork(self, name: str, source: str = "main") -> IndividualChain:
        chain = self.versions[source].copy()
        self.versions[name] = chain
        return chain

    def __iter__(self):
        return iter(self.versions.values())


# -- piece verification ---------------------------------------------------------


class PieceFault(enum.Enum):
    SHAPE = "shape"
    BROKEN_LINK = "broken_link"
    START_NOT_INCLUDED = "start_not_included"
    END_NOT_INCLUDED = "end_not_included"
    START_MISMATCH = "start_mismatch"
    END_MISMATCH = "end_mismatch"


def check_piece(piece: Piece, log: ConsensusLog) -> Optional[PieceFault]:
    """Return the first reason ``piece`` is not correct against ``log``.

    ``END_NOT_INCLUDED`` means the log has no CM for ``C_i(l+1)`` yet; every
    other fault is final.
    """
    blocks = piece.blocks
    if len(blocks) < 2 or piece.start_ordinal < 1 or piece.start_position < 1:
        return PieceFault.SHAPE
    first, last = blocks[0], blocks[-1]
    if not isinstance(first, CheckPoint) or not isinstance(last, CheckPoint):
        return PieceFault.SHAPE
    if any(not isinstance(b, TransactionBlock) for b in blocks[1:-1]):
        return PieceFault.SHAPE
    # Genesis iff the piece starts the chain.
    if (piece.start_ordinal == 1) != first.is_genesis or last.is_genesis:
        return PieceFault.SHAPE
    if piece.start_ordinal == 1 and (
        piece.start_position != 1
        or not isinstance(first.payload, GenesisDeclaration)
        or first.payload.owner != piece.owner
    ):
        return PieceFault.SHAPE
    for prev, block in zip(blocks, blocks[1:]):
        if block.prev_digest != prev.digest:
            return PieceFault.BROKEN_LINK
    start = log.included(piece.owner, piece.start_ordinal)
    if start is None:
        return PieceFault.START_NOT_INCLUDED
    if start.cm.cp_digest != first.digest or start.cm.cp_position != piece.start_position:
        return PieceFault.START_MISMATCH
    end = log.included(piece.owner, piece.start_ordinal + 1)
    if end is None:
        return PieceFault.END_NOT_INCLUDED
    if (
        end.cm.cp_digest != last.digest
        or end.cm.prev_cp_position != piece.start_position
        or end.cm.cp_position != piece.end_position
    ):
        return PieceFault.END_MISMATCH
    return None


def verify_piece(piece: Piece, log: ConsensusLog) -> bool:
    return check_piece(piece, log) is None
