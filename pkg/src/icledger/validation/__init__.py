"""Local validation of transactions from consensus-sealed chain pieces."""

from .collector import Collection, ProofCollector
from .evaluate import (
    Evaluator,
    IncompleteBundle,
    Item,
    Need,
    ProofBundle,
    Status,
    Verdict,
    spendable_amount,
    validate,
)
from .messages import (
    Ack,
    Announce,
    IndexRequest,
    IndexResponse,
    PiecePush,
    PieceRequest,
    PieceResponse,
    TxMessage,
)
from .store import PieceStore

__all__ = [
    "Ack",
    "Announce",
    "Collection",
    "Evaluator",
    "IncompleteBundle",
    "IndexRequest",
    "IndexResponse",
    "Item",
    "Need",
    "PiecePush",
    "PieceRequest",
    "PieceResponse",
    "PieceStore",
    "ProofBundle",
    "ProofCollector",
    "Status",
    "TxMessage",
    "Verdict",
    "spendable_amount",
    "validate",
]
