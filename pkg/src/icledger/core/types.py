"""Immutable domain values shared by every layer of the ledger."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional, Tuple, Union

NodeId = int
Digest = bytes

DIGEST_SIZE = 32
MAX_U32 = 2**32 - 1
MAX_U64 = 2**64 - 1

# Index of the genesis pseudo-transaction inside its owner's chain.
GENESIS_TB = 0
GENESIS_MSG = 0


class DomainError(ValueError):
    """A value violates a domain-type invariant."""


def check_amount(value: int) -> int:
    if not isinstance(value, int) or value < 0 or value > MAX_U64:
        raise DomainError(f"amount out of range: {value!r}")
    return value


def add_amounts(*values: int) -> int:
    """Sum amounts, refusing anything that would not fit the wire width."""
    total = 0
    for v in values:
        total += check_amount(v)
        if total > MAX_U64:
            raise DomainError("amount overflow")
    return total


@dataclass(frozen=True, order=True)
class SerialNumber:
    sender: NodeId
    counter: int

    def __str__(self) -> str:
        return f"{self.sender}:{self.counter}"


@dataclass(frozen=True, order=True)
class TransactionIndex:
    """Position ``[i, k, m]`` of a transaction message in chain ``i``.

    ``block_ordinal`` counts transaction blocks only (1-based) and
    ``message_ordinal`` is the slot inside that block (1-based).  The genesis
    pseudo-transaction lives at ``[i, 0, 0]``.
    """

    chain_owner: NodeId
    block_ordinal: int
    message_ordinal: int

    @property
    def is_genesis(self) -> bool:
        return self.block_ordinal == GENESIS_TB and self.message_ordinal == GENESIS_MSG

    def precedes(self, other: "TransactionIndex") -> bool:
        """Strictly earlier position within the same chain."""
        return (self.block_ordinal, self.message_ordinal) < (
            other.block_ordinal,
            other.message_ordinal,
        )

    def __str__(self) -> str:
        return f"[{self.chain_owner},{self.block_ordinal},{self.message_ordinal}]"


@dataclass(frozen=True)
class Transaction:
    sender: NodeId
    receiver: NodeId
    serial: SerialNumber
    sources: Tuple[TransactionIndex, ...]
    transfer_value: int
    remaining_value: int
    signature: bytes = b""

    @property
    def is_genesis(self) -> bool:
        return (
            not self.sources
            and self.sender == self.receiver
            and self.serial.counter == 0
            and self.transfer_value == 0
        )

    @cached_property
    def encoded(self) -> bytes:
        from .codec import encode

        return encode(self)

    @cached_property
    def digest(self) -> Digest:
        from .crypto import digest

        return digest(self.encoded)

    @property
    def tx_id(self) -> str:
        return self.digest.hex()

    def signing_bytes(self) -> bytes:
        from .codec import transaction_signing_bytes

        return transaction_signing_bytes(self)


def genesis_transaction(owner: NodeId, balance: int) -> Transaction:
    """The initial balance seen as a source-less transaction to oneself."""
    return Transaction(
        sender=owner,
        receiver=owner,
        serial=SerialNumber(owner, 0),
        sources=(),
        transfer_value=0,
        remaining_value=check_amount(balance),
    )


def genesis_index(owner: NodeId) -> TransactionIndex:
    return TransactionIndex(owner, GENESIS_TB, GENESIS_MSG)


@dataclass(frozen=True)
class ConsensusMessage:
    node: NodeId
    round: int
    cp_digest: Digest
    cp_position: int
    prev_cp_position: int
    signature: bytes = b""

    @cached_property
    def encoded(self) -> bytes:
        from .codec import encode

        return encode(self)

    @cached_property
    def digest(self) -> Digest:
        from .crypto import digest

        return digest(self.encoded)

    def signing_bytes(self) -> bytes:
        from .codec import cm_signing_bytes

        return cm_signing_bytes(self)


@dataclass(frozen=True)
class ConsensusResult:
    """``CON(r)``: the agreed CMs of one round, ordered by node id."""

    round: int
    entries: Tuple[ConsensusMessage, ...]

    def __post_init__(self) -> None:
        nodes = [cm.node for cm in self.entries]
        if nodes != sorted(set(nodes)):
            raise DomainError("consensus entries must be unique and sorted by node")

    @cached_property
    def encoded(self) -> bytes:
        from .codec import encode

        return encode(self)

    @cached_property
    def digest(self) -> Digest:
        from .crypto import digest

        return digest(self.encoded)

    def entry_for(self, node: NodeId) -> Optional[ConsensusMessage]:
        for cm in self.entries:
            if cm.node == node:
                return cm
        return None


@dataclass(frozen=True)
class GenesisDeclaration:
    owner: NodeId
    initial_balance: int


@dataclass(frozen=True)
class TransactionBlock:
    prev_digest: Digest
    messages: Tuple[Transaction, ...]

    @cached_property
    def encoded(self) -> bytes:
        from .codec import encode

        return encode(self)

    @cached_property
    def digest(self) -> Digest:
        from .crypto import digest

        return digest(self.encoded)


@dataclass(frozen=True)
class CheckPoint:
    prev_digest: Optional[Digest]
    payload: Union[ConsensusResult, GenesisDeclaration]

    @property
    def is_genesis(self) -> bool:
        return self.prev_digest is None

    @cached_property
    def encoded(self) -> bytes:
        from .codec import encode

        return encode(self)

    @cached_property
    def digest(self) -> Digest:
        from .crypto import digest

        return digest(self.encoded)


Block = Union[TransactionBlock, CheckPoint]


@dataclass(frozen=True)
class Piece:
    """Blocks from check point ``C_i(l)`` through ``C_i(l+1)`` inclusive."""

    owner: NodeId
    start_ordinal: int
    start_position: int
    blocks: Tuple[Block, ...] = field(default=())

    @property
    def end_ordinal(self) -> int:
        return self.start_ordinal + 1

    @property
    def end_position(self) -> int:
        return self.start_position + len(self.blocks) - 1

    def transaction_blocks(self):
        """Yield ``(tb_ordinal, block)`` for every TB in the piece.

        The TB ordinal follows from positions alone: before position ``j`` of
        ``C_i(l)`` there are ``l - 1`` check points, hence ``j - l`` TBs.
        """
        base = self.start_position - self.start_ordinal
        for offset, block in enumerate(self.blocks[1:-1], start=1):
            if isinstance(block, TransactionBlock):
                yield base + offset, block

    @property
    def tb_range(self) -> Tuple[int, int]:
        """Inclusive TB ordinal range (empty when ``lo > hi``)."""
        base = self.start_position - self.start_ordinal
        return base + 1, base + len(self.blocks) - 2

    @property
    def message_count(self) -> int:
        return sum(len(b.messages) for b in self.blocks if isinstance(b, TransactionBlock))

    @cached_property
    def encoded(self) -> bytes:
        from .codec import encode

        return encode(self)

    @cached_property
    def digest(self) -> Digest:
        from .crypto import digest

        return digest(self.encoded)
