"""Omniscient BFT stand-in and the two-implementation agreement entry point."""

from __future__ import annotations

from typing import Callable, Dict, Iterable, List, Mapping, Optional, Sequence

from ..core import ConsensusMessage, ConsensusResult, NodeId
from .log import ConsensusLog, FaultBoundExceeded, SafetyViolation, fault_bound, filter_cms, select_entries


def oracle_result(proposals: Iterable[ConsensusMessage], log: ConsensusLog, n: int, keys) -> ConsensusResult:
    """Filter every proposed CM at one trusted point and keep one per node."""
    round = log.round + 1
    entries = select_entries(filter_cms(proposals, log, round, keys))
    if len(entries) < n - fault_bound(n):
        raise FaultBoundExceeded(f"round {round}: only {len(entries)} admissible CMs for n={n}")
    return ConsensusResult(round, entries)


class OracleConsensus:
    """Simulator-side service deciding each round once every expected node proposed.

    ``expected`` are the nodes whose proposal the round waits for (the
    honest ones); others are taken if they arrive in time.  The decision
    reaches every subscriber ``delay_us`` after the last expected proposal.
    """

    def __init__(self, sim, n: int, keys, log: ConsensusLog, expected: Sequence[NodeId], delay_us: int = 0):
        self.sim = sim
        self.n = n
        self.keys = keys
        self.log = log.copy()
        self.expected = set(expected)
        self.delay_us = delay_us
        self._proposals: Dict[int, List[ConsensusMessage]] = {}
        self._proposers: Dict[int, set] = {}
        self._subscribers: Dict[NodeId, Callable[[ConsensusResult], None]] = {}
        self._scheduled: set = set()

    def subscribe(self, node: NodeId, on_decide: Callable[[ConsensusResult], None]) -> None:
        self._subscribers[node] = on_decide

    def submit(self, node: NodeId, cms: Iterable[ConsensusMessage], round: Optional[int] = None) -> None:
        round = self.log.round + 1 if round is None else round
        if round <= self.log.round:
            return
        self._proposals.setdefault(round, []).extend(cms)
        proposers = self._proposers.setdefault(round, set())
        proposers.add(node)
        if round == self.log.round + 1 and self.expected <= proposers and round not in self._scheduled:
            self._scheduled.add(round)
            self.sim.schedule(self.delay_us, self._decide, round, kind="oracle")

    def _decide(self, round: int) -> None:
        result = oracle_result(self._proposals.pop(round, []), self.log, self.n, self.keys)
        self.log.append(result)
        self._proposers.pop(round, None)
        for node in sorted(self._subscribers):
            self._subscribers[node](result)


class OracleClient:
    """The per-node face of :class:`OracleConsensus`, shaped like a replica."""

    def __init__(self, node: NodeId, service: OracleConsensus, submit_filter: Callable = None):
        self.node = node
        self.service = service
        self.submit_filter = submit_filter or (lambda cm: [cm])
        self.view_changes_total = 0

    def start_round(self, round: int, own_cm: Optional[ConsensusMessage]) -> None:
        cms = [] if own_cm is None else list(self.submit_filter(own_cm))
        self.service.submit(self.node, cms, round)

    def receive(self, src: NodeId, msg) -> None:
        pass


def bft_agree(
    proposals: Mapping[NodeId, Iterable[ConsensusMessage]],
    log: ConsensusLog,
    n: int,
    keys,
    *,
    impl: str = "reference",
    seed: int = 0,
    latency_us=(1_000, 5_000),
    timings=None,
) -> ConsensusResult:
    """Agree on ``CON(log.round + 1)`` from each node's candidate CMs.

    ``proposals[i]`` is what node ``i`` has seen; its own CM among them is
    broadcast to the other participants.  Nodes absent from the map are
    silent.  ``impl="reference"`` runs the three-phase protocol over a
    seeded simulated network and checks that every participant decided the
    same result; ``impl="oracle"`` filters the union centrally.
    """
    if impl == "oracle":
        union = [cm for node in sorted(proposals) for cm in proposals[node]]
        return oracle_result(union, log, n, keys)
    if impl != "reference":
        raise ValueError(f"unknown BFT implementation {impl!r}")

    from ..simnet.kernel import Network, Simulator
    from .pbft import PbftReplica

    sim = Simulator()
    net = Network(sim, latency_us=latency_us, seed=seed)
    decided: Dict[NodeId, ConsensusResult] = {}
    replicas: Dict[NodeId, PbftReplica] = {}
    participants = sorted(proposals)
    logs = {node: log.copy() for node in participants}

    for node in participants:
        def emit(dst, msg, src=node):
            net.send(src, dst, msg)

        def emit_all(msg, src=node):
            net.broadcast(src, msg, participants)

        def on_decide(result, node=node):
            decided[node] = result

        replicas[node] = PbftReplica(
            node,
            n,
            keys,
            get_log=lambda node=node: logs[node],
            emit=emit,
            emit_all=emit_all,
            schedule=lambda delay, fn, *args: sim.schedule(delay, fn, *args),
            on_decide=on_decide,
            timings=timings,
        )
        net.register(node, lambda src, msg, node=node: replicas[node].receive(src, msg))

    round = log.round + 1
    for node in participants:
        cms = list(proposals[node])
        own = next((cm for cm in cms if cm.node == node), None)
        replicas[node].start_round(round, own)
        for cm in cms:
            if cm is not own:
                replicas[node].receive(node, cm)
    sim.run()
    if len(decided) != len(participants):
        raise FaultBoundExceeded(f"round {round}: {len(participants) - len(decided)} participants did not decide")
    digests = {r.digest for r in decided.values()}
    if len(digests) != 1:
        raise SafetyViolation(f"round {round}: participants decided {len(digests)} different results")
    return decided[participants[0]]
