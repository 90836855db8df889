"""Ledger-layer wire messages: transfers, announcements, proof requests.

``weight`` is the channel cost in transaction messages.  Messages that carry
a transaction cost one unit per transaction; requests, acknowledgements and
index replies are headers only and cost nothing beyond latency.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import ClassVar, Optional, Tuple

from ..core import Piece, SerialNumber, Transaction, TransactionIndex, register
from ..core.codec import BOOL, U32, Opt, Seq, Struct


@register(0x20, [("tx", Struct(Transaction))])
@dataclass(frozen=True)
class TxMessage:
    """Sender hands the receiver a new transaction to record."""

    category: ClassVar[str] = "ledger"
    tx: Transaction
    weight: ClassVar[int] = 1


@register(0x21, [("serial", Struct(SerialNumber)), ("index", Struct(TransactionIndex))])
@dataclass(frozen=True)
class Ack:
    """Receiver tells the sender where it recorded the transaction."""

    category: ClassVar[str] = "ledger"
    serial: SerialNumber
    index: TransactionIndex
    weight: ClassVar[int] = 0


@register(0x22, [("tx", Struct(Transaction)), ("indices", Seq(Struct(TransactionIndex)))])
@dataclass(frozen=True)
class Announce:
    """A party asks the validators of its group to validate ``tx``."""

    category: ClassVar[str] = "ledger"
    tx: Transaction
    indices: Tuple[TransactionIndex, ...]
    weight: ClassVar[int] = 1


@register(0x23, [("serial", Struct(SerialNumber))])
@dataclass(frozen=True)
class IndexRequest:
    category: ClassVar[str] = "ledger"
    serial: SerialNumber
    weight: ClassVar[int] = 0


@register(0x24, [("serial", Struct(SerialNumber)), ("indices", Seq(Struct(TransactionIndex)))])
@dataclass(frozen=True)
class IndexResponse:
    category: ClassVar[str] = "ledger"
    serial: SerialNumber
    indices: Tuple[TransactionIndex, ...]
    weight: ClassVar[int] = 0


@register(0x25, [("owner", U32), ("from_ordinal", U32), ("through_tb", Opt(U32))])
@dataclass(frozen=True)
class PieceRequest:
    """Pieces of ``owner`` from ``from_ordinal`` up to the one holding ``through_tb``."""

    category: ClassVar[str] = "ledger"
    owner: int
    from_ordinal: int
    through_tb: Optional[int]
    weight: ClassVar[int] = 0


@register(0x26, [("owner", U32), ("pieces", Seq(Struct(Piece))), ("pending", BOOL)])
@dataclass(frozen=True)
class PieceResponse:
    """``pending`` means the owner has not yet sealed or had included the range."""

    category: ClassVar[str] = "ledger"
    owner: int
    pieces: Tuple[Piece, ...]
    pending: bool = False

    @property
    def weight(self) -> int:
        return sum(p.message_count for p in self.pieces)


@register(0x27, [("owner", U32), ("pieces", Seq(Struct(Piece)))])
@dataclass(frozen=True)
class PiecePush:
    """An owner hands its group the pieces that just became correct."""

    category: ClassVar[str] = "ledger"
    owner: int
    pieces: Tuple[Piece, ...]

    @property
    def weight(self) -> int:
        return sum(p.message_count for p in self.pieces)


LEDGER_MESSAGES = (TxMessage, Ack, Announce, IndexRequest, IndexResponse, PieceRequest, PieceResponse, PiecePush)
PROOF_MESSAGES = (IndexResponse, PieceResponse, PiecePush)
