"""Canonical byte encoding.

Every encodable value is written as a one-byte type tag followed by its
fields in declaration order.  Integers are fixed-width big-endian, byte
strings and sequences carry a u32 length prefix, optional fields a 0/1 flag
byte.  The layout is documented in FORMAT.md; decoding is strict (unknown
tags, bad flags, trailing bytes and out-of-range values all raise).
"""

from __future__ import annotations

import struct
from functools import cached_property
from dataclasses import fields as dc_fields
from typing import Any, Callable, Dict, Iterable, List, Sequence, Tuple, Type

from .types import (
    DIGEST_SIZE,
    MAX_U32,
    MAX_U64,
    CheckPoint,
    ConsensusMessage,
    ConsensusResult,
    DomainError,
    GenesisDeclaration,
    Piece,
    SerialNumber,
    Transaction,
    TransactionBlock,
    TransactionIndex,
)


class EncodeError(ValueError):
    pass


class DecodeError(ValueError):
    pass


# -- field kinds --------------------------------------------------------------


class Kind:
    def write(self, out: List[bytes], value: Any) -> None:  # pragma: no cover
        raise NotImplementedError

    def read(self, buf: "Reader") -> Any:  # pragma: no cover
        raise NotImplementedError


class _Int(Kind):
    def __init__(self, fmt: str, limit: int):
        self.fmt = fmt
        self.limit = limit

    def write(self, out, value):
        if not isinstance(value, int) or isinstance(value, bool) or not 0 <= value <= self.limit:
            raise EncodeError(f"integer out of range for {self.fmt}: {value!r}")
        out.append(struct.pack(self.fmt, value))

    def read(self, buf):
        return buf.unpack(self.fmt)


class _Bool(Kind):
    def write(self, out, value):
        out.append(b"\x01" if value else b"\x00")

    def read(self, buf):
        flag = buf.unpack(">B")
        if flag > 1:
            raise DecodeError("bad boolean flag")
        return bool(flag)


class _Digest(Kind):
    def write(self, out, value):
        if not isinstance(value, (bytes, bytearray)) or len(value) != DIGEST_SIZE:
            raise EncodeError("digest must be 32 bytes")
        out.append(bytes(value))

    def read(self, buf):
        return buf.take(DIGEST_SIZE)


class _Bytes(Kind):
    def write(self, out, value):
        if not isinstance(value, (bytes, bytearray)):
            raise EncodeError("expected bytes")
        U32.write(out, len(value))
        out.append(bytes(value))

    def read(self, buf):
        return buf.take(U32.read(buf))


class _Str(Kind):
    def write(self, out, value):
        BYTES.write(out, value.encode("utf-8"))

    def read(self, buf):
        try:
            return BYTES.read(buf).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise DecodeError(str(exc)) from None


class Opt(Kind):
    def __init__(self, inner: Kind):
        self.inner = inner

    def write(self, out, value):
        if value is None:
            out.append(b"\x00")
        else:
            out.append(b"\x01")
            self.inner.write(out, value)

    def read(self, buf):
        return self.inner.read(buf) if BOOL.read(buf) else None


class Seq(Kind):
    def __init__(self, inner: Kind):
        self.inner = inner

    def write(self, out, value):
        items = tuple(value)
        U32.write(out, len(items))
        for item in items:
            self.inner.write(out, item)

    def read(self, buf):
        count = U32.read(buf)
        return tuple(self.inner.read(buf) for _ in range(count))


class Tagged(Kind):
    """A nested value carrying its own type tag; ``allowed`` restricts types."""

    def __init__(self, *allowed: type):
        self._allowed = allowed

    def write(self, out, value):
        if self._allowed and not isinstance(value, self._allowed):
            raise EncodeError(f"unexpected nested type {type(value).__name__}")
        _write_value(out, value)

    def read(self, buf):
        value = _read_value(buf)
        if self._allowed and not isinstance(value, self._allowed):
            raise DecodeError(f"unexpected nested type {type(value).__name__}")
        return value


class Struct(Kind):
    """A nested registered dataclass written without a tag."""

    def __init__(self, cls: type):
        self.cls = cls

    def write(self, out, value):
        if not isinstance(value, self.cls):
            raise EncodeError(f"expected {self.cls.__name__}")
        _write_fields(out, value, _BY_TYPE[self.cls][1])

    def read(self, buf):
        return _build(self.cls, _read_fields(buf, _BY_TYPE[self.cls][1]))


U8 = _Int(">B", 0xFF)
U32 = _Int(">I", MAX_U32)
U64 = _Int(">Q", MAX_U64)
BOOL = _Bool()
DIGEST = _Digest()
BYTES = _Bytes()
STR = _Str()

FieldSpec = Sequence[Tuple[str, Kind]]
_BY_TYPE: Dict[type, Tuple[int, FieldSpec]] = {}
_BY_TAG: Dict[int, Tuple[type, FieldSpec]] = {}


def register(tag: int, spec: FieldSpec) -> Callable[[Type], Type]:
    """Class decorator adding a dataclass to the canonical codec."""

    def deco(cls):
        if tag in _BY_TAG and _BY_TAG[tag][0] is not cls:
            raise ValueError(f"codec tag 0x{tag:02x} already taken by {_BY_TAG[tag][0].__name__}")
        names = [f.name for f in dc_fields(cls)]
        missing = [name for name, _ in spec if name not in names]
        if missing:
            raise ValueError(f"{cls.__name__}: unknown fields {missing}")
        _BY_TYPE[cls] = (tag, tuple(spec))
        _BY_TAG[tag] = (cls, tuple(spec))
        return cls

    return deco


class Reader:
    __slots__ = ("data", "pos")

    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        end = self.pos + n
        if end > len(self.data):
            raise DecodeError("truncated input")
        chunk = self.data[self.pos:end]
        self.pos = end
        return chunk

    def unpack(self, fmt: str) -> int:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))[0]

    def at_end(self) -> bool:
        return self.pos == len(self.data)


def _write_fields(out, value, spec, omit: Iterable[str] = ()):
    for name, kind in spec:
        if name in omit:
            continue
        kind.write(out, getattr(value, name))


def _read_fields(buf, spec) -> Dict[str, Any]:
    return {name: kind.read(buf) for name, kind in spec}


def _build(cls, kwargs):
    try:
        return cls(**kwargs)
    except (DomainError, TypeError) as exc:
        raise DecodeError(f"invalid {cls.__name__}: {exc}") from None


def _write_value(out, value):
    try:
        tag, spec = _BY_TYPE[type(value)]
    except KeyError:
        raise EncodeError(f"type {type(value).__name__} is not encodable") from None
    out.append(bytes((tag,)))
    _write_fields(out, value, spec)


def _read_value(buf):
    tag = buf.unpack(">B")
    try:
        cls, spec = _BY_TAG[tag]
    except KeyError:
        raise DecodeError(f"unknown tag 0x{tag:02x}") from None
    return _build(cls, _read_fields(buf, spec))


def encode(value: Any) -> bytes:
    out: List[bytes] = []
    _write_value(out, value)
    return b"".join(out)


def decode(data: bytes, expected: type | Tuple[type, ...] | None = None) -> Any:
    buf = Reader(bytes(data))
    value = _read_value(buf)
    if not buf.at_end():
        raise DecodeError("trailing bytes")
    if expected is not None and not isinstance(value, expected):
        raise DecodeError(f"expected {expected}, got {type(value).__name__}")
    return value


def _signing_bytes(domain: bytes, value: Any) -> bytes:
    tag, spec = _BY_TYPE[type(value)]
    out: List[bytes] = [domain, bytes((tag,))]
    _write_fields(out, value, spec, omit=("signature",))
    return b"".join(out)


def transaction_signing_bytes(tx: Transaction) -> bytes:
    return _signing_bytes(b"icledger:tx\x00", tx)


def cm_signing_bytes(cm: ConsensusMessage) -> bytes:
    return _signing_bytes(b"icledger:cm\x00", cm)


def signing_bytes(value: Any, domain: str) -> bytes:
    """Bytes covered by a signature on any registered message type."""
    return _signing_bytes(b"icledger:" + domain.encode() + b"\x00", value)


# -- length-prefixed streams (chain / log exports) -----------------------------


def encode_stream(values: Iterable[Any]) -> bytes:
    out: List[bytes] = []
    for v in values:
        body = v.encoded if isinstance(getattr(type(v), "encoded", None), cached_property) else encode(v)
        out.append(struct.pack(">I", len(body)))
        out.append(body)
    return b"".join(out)


def decode_stream(data: bytes) -> List[Any]:
    buf = Reader(bytes(data))
    values = []
    while not buf.at_end():
        size = U32.read(buf)
        values.append(decode(buf.take(size)))
    return values


# -- core registrations ------------------------------------------------------

register(0x01, [("chain_owner", U32), ("block_ordinal", U32), ("message_ordinal", U32)])(
    TransactionIndex
)
register(0x02, [("sender", U32), ("counter", U64)])(SerialNumber)
register(
    0x03,
    [
        ("sender", U32),
        ("receiver", U32),
        ("serial", Struct(SerialNumber)),
        ("sources", Seq(Struct(TransactionIndex))),
        ("transfer_value", U64),
        ("remaining_value", U64),
        ("signature", BYTES),
    ],
)(Transaction)
register(
    0x04,
    [
        ("node", U32),
        ("round", U32),
        ("cp_digest", DIGEST),
        ("cp_position", U32),
        ("prev_cp_position", U32),
        ("signature", BYTES),
    ],
)(ConsensusMessage)
register(0x05, [("round", U32), ("entries", Seq(Struct(ConsensusMessage)))])(ConsensusResult)
register(0x06, [("owner", U32), ("initial_balance", U64)])(GenesisDeclaration)
register(0x07, [("prev_digest", DIGEST), ("messages", Seq(Struct(Transaction)))])(TransactionBlock)
register(
    0x08,
    [("prev_digest", Opt(DIGEST)), ("payload", Tagged(ConsensusResult, GenesisDeclaration))],
)(CheckPoint)
register(
    0x09,
    [
        ("owner", U32),
        ("start_ordinal", U32),
        ("start_position", U32),
        ("blocks", Seq(Tagged(TransactionBlock, CheckPoint))),
    ],
)(Piece)
