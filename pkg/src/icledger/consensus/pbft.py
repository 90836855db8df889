"""Reference BFT core: leader-rotating three-phase commit with view change.

One :class:`PbftReplica` lives at every node and runs one instance per
consensus round.  A round decides a ``ConsensusResult`` holding the filtered
CMs of at least ``N - f`` nodes.  Safety rests on quorum intersection
(:func:`quorum_size`) and on carrying prepared certificates across view
changes; liveness on view timers that double with every view, which assumes
eventually bounded message delay.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Callable, ClassVar, Dict, List, Optional, Tuple

from ..core import ConsensusMessage, ConsensusResult, Digest, NodeId, register, signing_bytes
from ..core.codec import DIGEST, U32, Opt, Seq, Struct
from .log import (
    ConsensusLog,
    FaultBoundExceeded,
    classify_cm,
    fault_bound,
    quorum_size,
    result_problem,
    select_entries,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PrePrepare:
    category: ClassVar[str] = "consensus"
    round: int
    view: int
    leader: NodeId
    result: ConsensusResult
    signature: bytes = b""


@dataclass(frozen=True)
class Prepare:
    category: ClassVar[str] = "consensus"
    round: int
    view: int
    node: NodeId
    result_digest: Digest
    signature: bytes = b""


@dataclass(frozen=True)
class Commit:
    category: ClassVar[str] = "consensus"
    round: int
    view: int
    node: NodeId
    result_digest: Digest
    signature: bytes = b""


@dataclass(frozen=True)
class PreparedCert:
    view: int
    result: ConsensusResult
    prepares: Tuple[Prepare, ...]


@dataclass(frozen=True)
class ViewChange:
    category: ClassVar[str] = "consensus"
    round: int
    new_view: int
    node: NodeId
    prepared: Optional[PreparedCert]
    signature: bytes = b""


@dataclass(frozen=True)
class NewView:
    category: ClassVar[str] = "consensus"
    round: int
    view: int
    leader: NodeId
    view_changes: Tuple[ViewChange, ...]
    result: ConsensusResult
    signature: bytes = b""


@dataclass(frozen=True)
class Decision:
    """A decided result with its commit certificate, for lagging replicas."""

    category: ClassVar[str] = "consensus"
    round: int
    node: NodeId
    result: ConsensusResult
    commits: Tuple[Commit, ...]


def _register_wire_types() -> None:
    from ..core.codec import BYTES

    register(
        0x30,
        [("round", U32), ("view", U32), ("leader", U32), ("result", Struct(ConsensusResult)), ("signature", BYTES)],
    )(PrePrepare)
    register(0x31, [("round", U32), ("view", U32), ("node", U32), ("result_digest", DIGEST), ("signature", BYTES)])(Prepare)
    register(0x32, [("round", U32), ("view", U32), ("node", U32), ("result_digest", DIGEST), ("signature", BYTES)])(Commit)
    register(0x33, [("view", U32), ("result", Struct(ConsensusResult)), ("prepares", Seq(Struct(Prepare)))])(PreparedCert)
    register(
        0x34,
        [("round", U32), ("new_view", U32), ("node", U32), ("prepared", Opt(Struct(PreparedCert))), ("signature", BYTES)],
    )(ViewChange)
    register(
        0x35,
        [
            ("round", U32),
            ("view", U32),
            ("leader", U32),
            ("view_changes", Seq(Struct(ViewChange))),
            ("result", Struct(ConsensusResult)),
            ("signature", BYTES),
        ],
    )(NewView)
    register(0x36, [("round", U32), ("node", U32), ("result", Struct(ConsensusResult)), ("commits", Seq(Struct(Commit)))])(Decision)


_register_wire_types()

_DOMAINS = {PrePrepare: "pre-prepare", Prepare: "prepare", Commit: "commit", ViewChange: "view-change", NewView: "new-view"}


def _signer(msg) -> NodeId:
    return msg.leader if isinstance(msg, (PrePrepare, NewView)) else msg.node


def sign_message(keys, msg):
    data = signing_bytes(msg, _DOMAINS[type(msg)])
    return replace(msg, signature=keys.sign(_signer(msg), data))


def signature_ok(keys, msg) -> bool:
    return keys.verify(_signer(msg), signing_bytes(msg, _DOMAINS[type(msg)]), msg.signature)


def leader_of(round: int, view: int, n: int) -> NodeId:
    return (round + view) % n + 1


@dataclass
class PbftTimings:
    grace_us: int = 50_000
    view_timeout_us: int = 500_000
    max_views: int = 0  # 0 -> derived from N

    def view_timeout(self, view: int) -> int:
        return self.view_timeout_us * (2 ** min(view, 8))


@dataclass
class _RoundState:
    round: int
    view: int = 0
    candidates: Dict[NodeId, List[ConsensusMessage]] = field(default_factory=dict)
    accepted: Dict[int, ConsensusResult] = field(default_factory=dict)
    known: Dict[Digest, ConsensusResult] = field(default_factory=dict)
    prepares: Dict[Tuple[int, Digest], Dict[NodeId, Prepare]] = field(default_factory=dict)
    commits: Dict[Tuple[int, Digest], Dict[NodeId, Commit]] = field(default_factory=dict)
    committed_views: set = field(default_factory=set)
    prepared: Optional[PreparedCert] = None
    view_changes: Dict[int, Dict[NodeId, ViewChange]] = field(default_factory=dict)
    proposed_views: set = field(default_factory=set)
    decided: bool = False
    view_timer: object = None
    grace_timer: object = None


class PbftReplica:
    """Per-node BFT state machine.

    ``emit(dst, msg)`` and ``emit_all(msg)`` are the node's outgoing paths
    (adversaries hook them); ``schedule(delay_us, fn)`` returns a cancellable
    handle; ``on_decide(result)`` receives every decided ``CON(r)``.
    """

    def __init__(
        self,
        node: NodeId,
        n: int,
        keys,
        get_log: Callable[[], ConsensusLog],
        emit: Callable[[NodeId, object], None],
        emit_all: Callable[[object], None],
        schedule: Callable,
        on_decide: Callable[[ConsensusResult], None],
        timings: Optional[PbftTimings] = None,
    ):
        self.node = node
        self.n = n
        self.f = fault_bound(n)
        self.q = quorum_size(n)
        self.keys = keys
        self.get_log = get_log
        self.emit = emit
        self.emit_all = emit_all
        self.schedule = schedule
        self.on_decide = on_decide
        self.timings = timings or PbftTimings()
        self.max_views = self.timings.max_views or (n + 2)
        self.state: Optional[_RoundState] = None
        self._future: Dict[int, List[Tuple[NodeId, object]]] = {}
        self.view_changes_total = 0

    # -- round lifecycle ----------------------------------------------------

    @property
    def current_round(self) -> int:
        return self.get_log().round + 1

    def start_round(self, round: int, own_cm: Optional[ConsensusMessage]) -> None:
        if round != self.current_round:
            raise ValueError(f"replica {self.node} cannot start round {round}")
        self.state = _RoundState(round)
        self._arm_view_timer()
        if own_cm is not None:
            self.emit_all(own_cm)
            self._on_cm(own_cm)
        for src, msg in self._future.pop(round, []):
            self.receive(src, msg)
        self._maybe_propose()

    def receive(self, src: NodeId, msg) -> None:
        r = getattr(msg, "round", None)
        if r is None:
            return
        cur = self.current_round
        if r > cur or (r == cur and (self.state is None or self.state.round != cur)):
            if r <= cur + 2:
                self._future.setdefault(r, []).append((src, msg))
            return
        st = self.state
        if st is None or st.decided:
            return
        if isinstance(msg, ConsensusMessage):
            # Stale-round CMs land here too and are excluded by the filter.
            self._on_cm(msg)
            self._maybe_propose()
            return
        if r != st.round:
            return
        handler = {
            PrePrepare: self._on_pre_prepare,
            Prepare: self._on_prepare,
            Commit: self._on_commit,
            ViewChange: self._on_view_change,
            NewView: self._on_new_view,
            Decision: self._on_decision,
        }.get(type(msg))
        if handler is not None:
            handler(msg)

    # -- helpers --------------------------------------------------------------

    def _leader(self, view: int) -> NodeId:
        return leader_of(self.state.round, view, self.n)

    def _arm_view_timer(self) -> None:
        st = self.state
        if st.view_timer is not None:
            st.view_timer.cancel()
        view = st.view
        st.view_timer = self.schedule(self.timings.view_timeout(view), self._on_view_timeout, st.round, view)

    def _on_cm(self, cm: ConsensusMessage) -> None:
        st = self.state
        if classify_cm(cm, self.get_log(), st.round, self.keys) is not None:
            return
        bucket = st.candidates.setdefault(cm.node, [])
        if cm not in bucket:
            bucket.append(cm)

    def _fresh_result(self) -> Optional[ConsensusResult]:
        st = self.state
        if len(st.candidates) < self.n - self.f:
            return None
        entries = select_entries(cm for bucket in st.candidates.values() for cm in bucket)
        return ConsensusResult(st.round, entries)

    def _maybe_propose(self) -> None:
        st = self.state
        if st is None or st.decided or st.view in st.proposed_views or self._leader(st.view) != self.node:
            return
        if st.view > 0:
            self._maybe_new_view()
            return
        have = len(st.candidates)
        if have >= self.n:
            self._propose()
        elif have >= self.n - self.f and st.grace_timer is None:
            st.grace_timer = self.schedule(self.timings.grace_us, self._on_grace, st.round, st.view)

    def _on_grace(self, round: int, view: int) -> None:
        st = self.state
        if st is None or st.round != round or st.view != view or st.decided:
            return
        if view not in st.proposed_views:
            self._propose()

    def _propose(self) -> None:
        st = self.state
        result = self._fresh_result()
        if result is None:
            return
        st.proposed_views.add(st.view)
        pp = sign_message(self.keys, PrePrepare(st.round, st.view, self.node, result))
        self.emit_all(pp)
        self._accept(st.view, result)

    def _accept(self, view: int, result: ConsensusResult) -> None:
        st = self.state
        if view in st.accepted:
            return
        st.accepted[view] = result
        st.known[result.digest] = result
        prep = sign_message(self.keys, Prepare(st.round, view, self.node, result.digest))
        self.emit_all(prep)
        self._on_prepare(prep)
        for v, d in list(st.commits):
            if d == result.digest and not st.decided:
                self._check_decide(v, d)

    # -- normal case --------------------------------------------------------

    def _on_pre_prepare(self, msg: PrePrepare) -> None:
        st = self.state
        if msg.view != st.view or msg.leader != self._leader(msg.view) or msg.view in st.accepted:
            return
        if not signature_ok(self.keys, msg):
            return
        st.known.setdefault(msg.result.digest, msg.result)
        if msg.view != 0:
            return  # later views are installed only through NEW-VIEW
        if result_problem(msg.result, self.get_log(), self.n, self.keys) is not None:
            return
        self._accept(msg.view, msg.result)

    def _on_prepare(self, msg: Prepare) -> None:
        st = self.state
        if msg.node != self.node and not signature_ok(self.keys, msg):
            return
        key = (msg.view, msg.result_digest)
        st.prepares.setdefault(key, {}).setdefault(msg.node, msg)
        self._check_prepared(msg.view, msg.result_digest)

    def _check_prepared(self, view: int, digest: Digest) -> None:
        st = self.state
        if view != st.view or view in st.committed_views:
            return
        accepted = st.accepted.get(view)
        if accepted is None or accepted.digest != digest:
            return
        votes = st.prepares.get((view, digest), {})
        if len(votes) < self.q:
            return
        st.prepared = PreparedCert(view, accepted, tuple(votes[n] for n in sorted(votes))[: self.q])
        st.committed_views.add(view)
        com = sign_message(self.keys, Commit(st.round, view, self.node, digest))
        self.emit_all(com)
        self._on_commit(com)

    def _on_commit(self, msg: Commit) -> None:
        st = self.state
        if msg.node != self.node and not signature_ok(self.keys, msg):
            return
        key = (msg.view, msg.result_digest)
        st.commits.setdefault(key, {}).setdefault(msg.node, msg)
        self._check_decide(msg.view, msg.result_digest)

    def _check_decide(self, view: int, digest: Digest) -> None:
        st = self.state
        votes = st.commits.get((view, digest), {})
        if len(votes) >= self.q and digest in st.known:
            cert = tuple(votes[n] for n in sorted(votes))[: self.q]
            self._decide(st.known[digest], cert)

    def _decide(self, result: ConsensusResult, commits: Tuple[Commit, ...]) -> None:
        st = self.state
        if st.decided:
            return
        st.decided = True
        for timer in (st.view_timer, st.grace_timer):
            if timer is not None:
                timer.cancel()
        self.emit_all(Decision(st.round, self.node, result, commits))
        self.on_decide(result)

    def _on_decision(self, msg: Decision) -> None:
        if not self._commit_cert_ok(msg.result, msg.commits):
            return
        self._decide(msg.result, msg.commits)

    def _commit_cert_ok(self, result: ConsensusResult, commits) -> bool:
        st = self.state
        if result.round != st.round:
            return False
        views = {c.view for c in commits}
        signers = {c.node for c in commits}
        if len(views) != 1 or len(signers) < self.q or len(signers) != len(commits):
            return False
        return all(
            c.round == st.round and c.result_digest == result.digest and signature_ok(self.keys, c)
            for c in commits
        )

    # -- view change --------------------------------------------------------

    def _on_view_timeout(self, round: int, view: int) -> None:
        st = self.state
        if st is None or st.round != round or st.view != view or st.decided:
            return
        self._start_view_change(view + 1)

    def _start_view_change(self, new_view: int) -> None:
        st = self.state
        if new_view > self.max_views:
            raise FaultBoundExceeded(
                f"round {st.round} did not terminate after {self.max_views} view changes "
                f"at node {self.node}"
            )
        st.view = new_view
        self.view_changes_total += 1
        if st.grace_timer is not None:
            st.grace_timer.cancel()
            st.grace_timer = None
        vc = sign_message(self.keys, ViewChange(st.round, new_view, self.node, st.prepared))
        self.emit_all(vc)
        self._arm_view_timer()
        self._on_view_change(vc)

    def _prepared_cert_ok(self, cert: PreparedCert) -> bool:
        st = self.state
        signers = {p.node for p in cert.prepares}
        if len(signers) < self.q or len(signers) != len(cert.prepares):
            return False
        digest = cert.result.digest
        return cert.result.round == st.round and all(
            p.round == st.round and p.view == cert.view and p.result_digest == digest and signature_ok(self.keys, p)
            for p in cert.prepares
        )

    def _view_change_ok(self, vc: ViewChange) -> bool:
        if vc.node != self.node and not signature_ok(self.keys, vc):
            return False
        return vc.prepared is None or (vc.prepared.view < vc.new_view and self._prepared_cert_ok(vc.prepared))

    def _on_view_change(self, vc: ViewChange) -> None:
        st = self.state
        if vc.new_view <= 0 or not self._view_change_ok(vc):
            return
        st.view_changes.setdefault(vc.new_view, {}).setdefault(vc.node, vc)
        # Join a view change once f+1 replicas ask for it.
        if vc.new_view > st.view and len(st.view_changes[vc.new_view]) >= self.f + 1:
            self._start_view_change(vc.new_view)
            return
        self._maybe_new_view()

    def _maybe_new_view(self) -> None:
        st = self.state
        view = st.view
        if st.decided or view == 0 or view in st.proposed_views or self._leader(view) != self.node:
            return
        vcs = st.view_changes.get(view, {})
        if len(vcs) < self.q:
            return
        chosen = tuple(vcs[n] for n in sorted(vcs))[: self.q]
        result = self._carried_result(chosen)
        if result is None:
            result = self._fresh_result()
        if result is None:
            return
        st.proposed_views.add(view)
        nv = sign_message(self.keys, NewView(st.round, view, self.node, chosen, result))
        self.emit_all(nv)
        self._accept(view, result)

    @staticmethod
    def _carried_result(vcs) -> Optional[ConsensusResult]:
        certs = [vc.prepared for vc in vcs if vc.prepared is not None]
        if not certs:
            return None
        return max(certs, key=lambda c: c.view).result

    def _on_new_view(self, msg: NewView) -> None:
        st = self.state
        if msg.view < st.view or msg.view in st.accepted or msg.leader != self._leader(msg.view):
            return
        if not signature_ok(self.keys, msg):
            return
        signers = {vc.node for vc in msg.view_changes}
        if len(signers) < self.q or len(signers) != len(msg.view_changes):
            return
        if any(vc.new_view != msg.view or vc.round != st.round or not self._view_change_ok(vc) for vc in msg.view_changes):
            return
        carried = self._carried_result(msg.view_changes)
        if carried is not None:
            if carried.digest != msg.result.digest:
                return
        elif result_problem(msg.result, self.get_log(), self.n, self.keys) is not None:
            return
        if msg.view > st.view:
            st.view = msg.view
            self._arm_view_timer()
        st.known.setdefault(msg.result.digest, msg.result)
        self._accept(msg.view, msg.result)
        for (view, digest) in list(st.prepares):
            if view == msg.view:
                self._check_prepared(view, digest)
