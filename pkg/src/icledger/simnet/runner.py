"""Scenario execution: wire nodes, consensus, and network together and run."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Optional

from ..chain import ChainSet, make_genesis
from ..consensus.log import ConsensusError, ConsensusLog, FaultBoundExceeded, SafetyViolation, bootstrap_result
from ..consensus.oracle import OracleClient, OracleConsensus
from ..consensus.pbft import PbftReplica, PbftTimings
from ..core import KeyRing, Transaction, TransactionBlock
from .config import SimConfig
from .kernel import US, Network, Simulator
from .node import LedgerNode, NodeContext

log = logging.getLogger(__name__)


@dataclass
class SimulationTrace:
    config: SimConfig
    rounds: int
    records: List[dict]
    nodes: Dict[int, LedgerNode]
    keys: KeyRing
    aborted: Optional[str] = None
    abort_kind: Optional[str] = None
    end_time: int = 0

    @property
    def honest(self) -> List[int]:
        return [i for i, n in sorted(self.nodes.items()) if n.honest]

    def logs(self) -> Dict[int, ConsensusLog]:
        return {i: self.nodes[i].log for i in self.honest}

    def common_log(self) -> ConsensusLog:
        """The longest log every honest node has (they agree on prefixes)."""
        logs = list(self.logs().values())
        shortest = min(logs, key=lambda l: l.round)
        return shortest.copy()

    def chain_sets(self) -> Dict[int, ChainSet]:
        return {i: n.chains for i, n in sorted(self.nodes.items())}

    def transactions(self) -> Dict[str, Transaction]:
        """Every transaction recorded in any version of any chain."""
        out: Dict[str, Transaction] = {}
        for node in self.nodes.values():
            for chain in node.chains:
                for block in chain.blocks:
                    if isinstance(block, TransactionBlock):
                        for tx in block.messages:
                            out.setdefault(tx.tx_id, tx)
        return out

    def events(self, kind: Optional[str] = None) -> Iterator[dict]:
        for rec in self.records:
            if kind is None or rec["ev"] == kind:
                yield rec

    def to_jsonl(self) -> str:
        return "".join(json.dumps(r, sort_keys=True, separators=(",", ":")) + "\n" for r in self.records)


def _node_class(cfg: SimConfig, node: int):
    for spec in cfg.adversaries:
        if spec.node == node:
            return spec
    return None


def run(config: SimConfig, rounds: int, *, record_deliveries: bool = True) -> SimulationTrace:
    """Issue transactions for ``rounds`` rounds after the bootstrap round ``CON(1)``.

    Afterwards the run drains: it continues without new transactions until
    every honest node is quiescent, for at most ``drain_rounds`` rounds.
    """
    from ..adversary import AdversaryScript, CollusionBus, MaliciousNode

    cfg = config.validate()
    if rounds < 1:
        raise ValueError("rounds must be positive")
    nodes_ids = list(range(1, cfg.n + 1))
    keys = KeyRing(nodes_ids, cfg.seed)
    sim = Simulator()
    records: List[dict] = [{"t": 0, "ev": "run", "n": cfg.n, "seed": cfg.seed, "rounds": rounds}]

    def recorder(rec: dict) -> None:
        if record_deliveries or rec["ev"] != "deliver" or rec["cat"] == "ledger":
            records.append(rec)

    lo, hi = (int(round(x * US)) for x in cfg.latency)
    net = Network(
        sim,
        latency_us=(lo, hi),
        c_comm=cfg.c_comm / cfg.g,
        seed=cfg.seed,
        recorder=recorder,
        wire_check=cfg.wire_check,
        charged={"ledger"},
    )
    genesis = {i: make_genesis(i, cfg.initial_balance).digest for i in nodes_ids}
    bootstrap = ConsensusLog([bootstrap_result(keys, genesis)])
    issue_until = 1 + rounds
    target = issue_until + cfg.drain_rounds
    honest = set(cfg.honest)
    first_decision: Dict[int, bytes] = {}
    done: set = set()
    finished: List[int] = []
    timings = PbftTimings(grace_us=int(cfg.grace * US), view_timeout_us=int(cfg.view_timeout * US))
    oracle = None
    if cfg.consensus == "oracle":
        oracle = OracleConsensus(sim, cfg.n, keys, bootstrap, sorted(honest), delay_us=hi)

    def on_decided(node: LedgerNode, result) -> None:
        if not node.honest:
            return
        seen = first_decision.setdefault(result.round, result.digest)
        if seen != result.digest:
            raise SafetyViolation(f"round {result.round}: node {node.id} decided a different result")
        if node.log.round >= target:
            done.add(node.id)
        reached = all(nodes[i].log.round > issue_until for i in honest)
        if done >= honest or (reached and all(nodes[i].quiescent() for i in honest)):
            finished.append(sim.now)
            sim.stop()

    def guarded(node: LedgerNode, fn):
        # Malicious replicas may wedge themselves; that is their problem, not the run's.
        if node.honest:
            return fn

        def call(*args):
            try:
                fn(*args)
            except ConsensusError:
                pass

        return call

    def consensus_factory(node: LedgerNode):
        if oracle is not None:
            oracle.subscribe(node.id, node.on_decide)

            def submit_filter(cm):
                seen, out = set(), []
                for dst in (1, 2):
                    for m in node.outgoing(dst, cm):
                        if m.digest not in seen:
                            seen.add(m.digest)
                            out.append(m)
                return out

            return OracleClient(node.id, oracle, submit_filter)
        return PbftReplica(
            node.id,
            cfg.n,
            keys,
            get_log=lambda: node.log,
            emit=node.send,
            emit_all=node.broadcast,
            schedule=lambda delay, fn, *args: sim.schedule(delay, guarded(node, fn), *args, kind="timer"),
            on_decide=node.on_decide,
            timings=timings,
        )

    ctx = NodeContext(
        config=cfg,
        keys=keys,
        sim=sim,
        network=net,
        record=records.append,
        bootstrap=bootstrap,
        consensus_factory=consensus_factory,
        target_round=target,
        on_decided=on_decided,
        issue_until=issue_until,
    )
    bus = CollusionBus()
    nodes: Dict[int, LedgerNode] = {}
    for i in nodes_ids:
        spec = _node_class(cfg, i)
        if spec is None:
            nodes[i] = LedgerNode(i, ctx)
        else:
            nodes[i] = MaliciousNode(i, ctx, AdversaryScript.from_spec(spec), bus)
        net.register(i, nodes[i].handle if nodes[i].honest else guarded(nodes[i], nodes[i].handle))
    for i in nodes_ids:
        nodes[i].start()

    trace = SimulationTrace(cfg, rounds, records, nodes, keys)
    slack = cfg.round_interval + cfg.view_timeout * 2 ** min(cfg.n + 3, 10)
    cap = int((rounds + cfg.drain_rounds + 2) * slack * US)
    try:
        sim.run(until=cap)
    except FaultBoundExceeded as exc:
        trace.aborted, trace.abort_kind = str(exc), "fault_bound"
    except SafetyViolation as exc:
        trace.aborted, trace.abort_kind = str(exc), "safety"
    if trace.aborted is None and not finished:
        trace.aborted, trace.abort_kind = f"honest nodes stalled before round {target}", "stalled"
    if trace.aborted is not None:
        records.append({"t": sim.now, "ev": "abort", "kind": trace.abort_kind, "reason": trace.aborted})
        log.warning("run aborted: %s", trace.aborted)
    trace.end_time = sim.now
    for i in nodes_ids:
        node = nodes[i]
        node.stop()
        held = {str(owner): node.store.blocks_held(owner) for owner in node.store.owners()}
        records.append(
            {
                "t": sim.now,
                "ev": "final",
                "node": i,
                "honest": node.honest,
                "chain_length": len(node.chain),
                "log_round": node.log.round,
                "held": held,
                "sent": dict(sorted(net.sent.get(i, {}).items())),
                "received": dict(sorted(net.received.get(i, {}).items())),
            }
        )
    return trace
