from .codec import (
    DecodeError,
    EncodeError,
    decode,
    decode_stream,
    encode,
    encode_stream,
    register,
    signing_bytes,
)
from .crypto import KeyRing, PublicKeyRing, derive_seed, digest, sign, verify_signature
from .types import (
    DIGEST_SIZE,
    Block,
    CheckPoint,
    ConsensusMessage,
    ConsensusResult,
    Digest,
    DomainError,
    GenesisDeclaration,
    NodeId,
    Piece,
    SerialNumber,
    Transaction,
    TransactionBlock,
    TransactionIndex,
    add_amounts,
    check_amount,
    genesis_index,
    genesis_transaction,
)


def sign_transaction(keys: KeyRing, tx: Transaction) -> Transaction:
    from dataclasses import replace

    return replace(tx, signature=keys.sign(tx.sender, tx.signing_bytes()))


def transaction_signature_ok(keys, tx: Transaction) -> bool:
    return keys.verify(tx.sender, tx.signing_bytes(), tx.signature)


__all__ = [name for name in dir() if not name.startswith("_")]
