"""Exported run state and offline replay of a single validation."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Dict, List, Optional

from ..chain import IndividualChain
from ..consensus.log import ConsensusLog
from ..core import (
    CheckPoint,
    Piece,
    PublicKeyRing,
    SerialNumber,
    Transaction,
    TransactionBlock,
    TransactionIndex,
    decode_stream,
    encode_stream,
)
from ..simnet.config import SimConfig
from ..validation.evaluate import Evaluator, Verdict
from ..validation.store import PieceStore


class StateError(RuntimeError):
    pass


def export_state(trace, directory) -> Path:
    """Write logs, chain versions, stores and public keys of every node.

    Layout: ``config.json``, ``keys.json``, ``node-<i>/log.bin``,
    ``node-<i>/store.bin``, ``node-<i>/hints.json`` and
    ``node-<i>/chain-<version>.bin``.
    """
    root = Path(directory)
    root.mkdir(parents=True, exist_ok=True)
    (root / "config.json").write_text(trace.config.to_json() + "\n")
    keys = {str(i): pk.hex() for i, pk in sorted(trace.keys.public_view().public_keys.items())}
    meta = {"keys": keys, "honest": trace.honest}
    (root / "keys.json").write_text(json.dumps(meta, sort_keys=True, indent=2) + "\n")
    for i, node in sorted(trace.nodes.items()):
        d = root / f"node-{i}"
        d.mkdir(exist_ok=True)
        (d / "log.bin").write_bytes(node.log.encode())
        for name, chain in sorted(node.chains.versions.items()):
            (d / f"chain-{name}.bin").write_bytes(chain.export_bytes())
        store = node.store
        held: List[object] = []
        for owner in store.owners():
            held.extend(store.pieces(owner))
        for owner in store.genesis_owners():
            if not store.pieces(owner):
                held.append(store.genesis(owner))
        (d / "store.bin").write_bytes(encode_stream(held))
        hints = [
            [serial.sender, serial.counter, owner, sorted(ordinals)]
            for (serial, owner), ordinals in sorted(node.evaluator.hints.items(), key=lambda kv: (kv[0][0], kv[0][1]))
        ]
        (d / "hints.json").write_text(json.dumps(hints) + "\n")
    return root


class NodeState:
    """One node's view, rebuilt from an export."""

    def __init__(self, directory, node: int):
        root = Path(directory)
        d = root / f"node-{node}"
        if not (root / "config.json").is_file() or not (root / "keys.json").is_file():
            raise StateError(f"{root}: not an exported state directory")
        if not d.is_dir():
            raise StateError(f"{root}: no state for node {node}")
        self.config = SimConfig.load(root / "config.json")
        meta = json.loads((root / "keys.json").read_text())
        self.keys = PublicKeyRing({int(i): bytes.fromhex(pk) for i, pk in meta["keys"].items()})
        self.node = node
        self.log = ConsensusLog.decode((d / "log.bin").read_bytes())
        self.store = PieceStore(node)
        values = decode_stream((d / "store.bin").read_bytes())
        for value in values:
            if isinstance(value, CheckPoint):
                self.store.add_genesis(value, self.log)
        for piece in sorted((v for v in values if isinstance(v, Piece)), key=lambda p: (p.owner, p.start_ordinal)):
            self.store.offer(piece, self.log)
        self.evaluator = Evaluator(self.store, self.keys)
        for sender, counter, owner, ordinals in json.loads((d / "hints.json").read_text()):
            for k in ordinals:
                self.evaluator.add_hint(SerialNumber(sender, counter), TransactionIndex(owner, k, 1))
        self.chains: Dict[int, List[IndividualChain]] = {}
        for other in sorted(root.glob("node-*")):
            owner = int(other.name.split("-", 1)[1])
            self.chains[owner] = [IndividualChain.import_bytes(p.read_bytes()) for p in sorted(other.glob("chain-*.bin"))]

    def find(self, tx_id: str) -> Optional[Transaction]:
        """A transaction by hex id, from the held pieces or any exported chain."""
        for owner in self.store.owners():
            for piece in self.store.pieces(owner):
                for block in piece.blocks:
                    if isinstance(block, TransactionBlock):
                        for tx in block.messages:
                            if tx.tx_id == tx_id:
                                return tx
        for versions in self.chains.values():
            for chain in versions:
                for block in chain.blocks:
                    if isinstance(block, TransactionBlock):
                        for tx in block.messages:
                            if tx.tx_id == tx_id:
                                return tx
        return None

    def validate(self, tx_id: str) -> Verdict:
        tx = self.find(tx_id)
        if tx is None:
            raise StateError(f"transaction {tx_id} not found in the exported state")
        return self.evaluator.evaluate(tx)


def replay(directory, tx_id: str, node: int) -> dict:
    """Validate ``tx_id`` as ``node`` from an export; a JSON-ready report."""
    state = NodeState(directory, node)
    verdict = state.validate(tx_id)
    out = {"tx": tx_id, "node": node, "round": state.log.round}
    out.update(verdict.as_dict())
    if verdict.status.value == "validated":
        out["bundle"] = state.evaluator.bundle(state.find(tx_id)).digest.hex()
    return out
