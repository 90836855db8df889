"""Run metrics computed purely from a trace's config and records."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional

from ..simnet.config import SimConfig
from ..simnet.kernel import US

PROOF_TRANSFERS = ("PieceResponse", "PiecePush")


@dataclass
class StoredTrace:
    """A trace read back from disk: enough for :func:`compute_metrics`."""

    config: SimConfig
    records: List[dict]

    @classmethod
    def load(cls, directory) -> "StoredTrace":
        directory = Path(directory)
        config = SimConfig.load(directory / "config.json")
        lines = (directory / "trace.jsonl").read_text().splitlines()
        return cls(config, [json.loads(line) for line in lines if line])


@dataclass
class GroupThroughput:
    members: List[int]
    chain_growth: float  # R: messages appended per chain per second
    valid_rate: float  # validated transactions per second, counted in messages
    valid_over_capacity: float
    t_p: Dict[str, float]
    t_v: Dict[str, float]
    t_p_bound: float
    t_v_bound: float


@dataclass
class Metrics:
    n: int
    g: int
    capacity: float
    duration: float
    issued: int
    validated: int
    falsificated: int
    undecided: int
    R: float
    R_v: float
    R_a: float
    R_u: float
    per_node: Dict[str, Dict[str, float]]
    messages: Dict[str, Dict[str, Dict[str, int]]]
    storage: Dict[str, Dict[str, int]]
    sharding: Dict[str, Dict[str, float]]
    round_latency: Dict[str, float]
    window: Dict[str, float]
    groups: List[GroupThroughput] = field(default_factory=list)
    aborted: Optional[str] = None

    @property
    def identity_holds(self) -> bool:
        return self.issued == self.validated + self.falsificated + self.undecided and abs(
            self.R - (self.R_v + self.R_a + self.R_u)
        ) <= 1e-9 * max(1.0, self.R)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    def tables(self) -> Dict[str, List[List[object]]]:
        """Flat tables for CSV output."""
        nodes = sorted(self.per_node, key=int)
        per_node = [["node", "issued", "validated", "falsificated", "undecided", "R_v", "R_a",
                     "ledger_sent", "ledger_received", "own_blocks", "foreign_blocks"]]
        for i in nodes:
            row = self.per_node[i]
            msgs = self.messages.get(i, {})
            per_node.append([
                int(i), row["issued"], row["validated"], row["falsificated"], row["undecided"],
                row["R_v"], row["R_a"],
                msgs.get("sent", {}).get("ledger", 0), msgs.get("received", {}).get("ledger", 0),
                self.storage[i]["own"], self.storage[i]["foreign"],
            ])
        sharding = [["holder"] + [int(j) for j in nodes]]
        for i in nodes:
            sharding.append([int(i)] + [self.sharding[i].get(j, 0.0) for j in nodes])
        rounds = [["round", "latency"]] + [[int(r), v] for r, v in sorted(self.round_latency.items(), key=lambda x: int(x[0]))]
        groups = [["group", "members", "chain_growth", "valid_rate", "valid_over_capacity",
                   "max_t_p", "t_p_bound", "max_t_v", "t_v_bound"]]
        for k, gt in enumerate(self.groups):
            groups.append([
                k, " ".join(map(str, gt.members)), gt.chain_growth, gt.valid_rate, gt.valid_over_capacity,
                max(gt.t_p.values(), default=0.0), gt.t_p_bound, max(gt.t_v.values(), default=0.0), gt.t_v_bound,
            ])
        return {"per_node": per_node, "sharding": sharding, "rounds": rounds, "groups": groups}


def _seconds(t_us: float) -> float:
    return t_us / US


def _tx_outcomes(records: Iterable[dict], honest: set) -> Dict[str, dict]:
    """Per transaction: the first honest terminal verdict (status, time)."""
    out: Dict[str, dict] = {}
    for rec in records:
        if rec["ev"] != "verdict" or rec["node"] not in honest or rec["status"] == "undecided":
            continue
        out.setdefault(rec["tx"], {"status": rec["status"], "t": rec["t"]})
    return out


def compute_metrics(trace) -> Metrics:
    """Metrics of a finished run; ``trace`` needs ``config`` and ``records``."""
    cfg: SimConfig = trace.config
    records: List[dict] = trace.records
    honest = set(cfg.honest)
    nodes = list(range(1, cfg.n + 1))
    finals = {rec["node"]: rec for rec in records if rec["ev"] == "final"}
    end = max((rec["t"] for rec in records), default=0)
    duration = _seconds(end) or 1.0
    abort = next((rec["reason"] for rec in records if rec["ev"] == "abort"), None)

    issued = {}
    for rec in records:
        if rec["ev"] == "issue":
            issued.setdefault(rec["tx"], rec)
    outcomes = _tx_outcomes(records, honest)
    counts = {"validated": 0, "falsificated": 0, "undecided": 0}
    per_node = {str(i): {"issued": 0, "validated": 0, "falsificated": 0, "undecided": 0} for i in nodes}
    for tx, rec in issued.items():
        status = outcomes.get(tx, {}).get("status", "undecided")
        counts[status] += 1
        row = per_node[str(rec["sender"])]
        row["issued"] += 1
        row[status] += 1
    for row in per_node.values():
        row["R_v"] = row["validated"] / duration
        row["R_a"] = row["falsificated"] / duration

    messages = {
        str(i): {"sent": finals.get(i, {}).get("sent", {}), "received": finals.get(i, {}).get("received", {})}
        for i in nodes
    }
    lengths = {i: finals.get(i, {}).get("chain_length", 0) for i in nodes}
    storage: Dict[str, Dict[str, int]] = {}
    sharding: Dict[str, Dict[str, float]] = {}
    for i in nodes:
        held = {int(k): v for k, v in finals.get(i, {}).get("held", {}).items()}
        storage[str(i)] = {
            "own": lengths[i],
            "foreign": sum(v for owner, v in held.items() if owner != i),
        }
        sharding[str(i)] = {
            str(j): 1.0 if j == i else (min(1.0, held.get(j, 0) / lengths[j]) if lengths[j] else 0.0)
            for j in nodes
        }

    starts: Dict[int, int] = {}
    decides: Dict[int, int] = {}
    for rec in records:
        if rec.get("node") not in honest:
            continue
        if rec["ev"] == "round_start":
            starts[rec["round"]] = min(starts.get(rec["round"], rec["t"]), rec["t"])
        elif rec["ev"] == "decide":
            decides[rec["round"]] = max(decides.get(rec["round"], rec["t"]), rec["t"])
    round_latency = {str(r): _seconds(decides[r] - starts[r]) for r in sorted(decides) if r in starts}

    window, groups = _throughput(cfg, records, honest, outcomes, issued, decides)
    return Metrics(
        n=cfg.n,
        g=cfg.g,
        capacity=cfg.capacity,
        duration=duration,
        issued=len(issued),
        validated=counts["validated"],
        falsificated=counts["falsificated"],
        undecided=counts["undecided"],
        R=len(issued) / duration,
        R_v=counts["validated"] / duration,
        R_a=counts["falsificated"] / duration,
        R_u=counts["undecided"] / duration,
        per_node=per_node,
        messages=messages,
        storage=storage,
        sharding=sharding,
        round_latency=round_latency,
        window=window,
        groups=groups,
        aborted=abort,
    )


def _throughput(cfg: SimConfig, records, honest, outcomes, issued, decides):
    """Steady-state group rates over the rounds after warmup.

    The window runs from the last honest decision of round ``1 + warmup``
    to the last honest decision of the final round; ``T`` is its mean
    round length.
    """
    first = 1 + cfg.warmup_rounds
    issued_rounds = next((rec["rounds"] for rec in records if rec["ev"] == "run"), None)
    last = max(decides, default=0)
    if issued_rounds is not None:
        last = min(last, 1 + issued_rounds)
    if last <= first or first not in decides:
        return {"start": 0.0, "end": 0.0, "rounds": 0, "T": 0.0}, []
    lo, hi = decides[first], decides[last]
    rounds = last - first
    span = _seconds(hi - lo)
    T = span / rounds
    window = {"start": _seconds(lo), "end": _seconds(hi), "rounds": rounds, "T": T}

    def inside(t):
        return lo < t <= hi

    appended: Dict[int, int] = {}
    pieces: Dict[int, int] = {}
    work: Dict[int, int] = {}
    for rec in records:
        if not inside(rec["t"]):
            continue
        ev = rec["ev"]
        if ev == "append" and rec["kind"] == "tx":
            appended[rec["node"]] = appended.get(rec["node"], 0) + 1
        elif ev == "deliver" and rec["msg"] in PROOF_TRANSFERS:
            pieces[rec["dst"]] = pieces.get(rec["dst"], 0) + rec["w"]
        elif ev == "work":
            work[rec["node"]] = work.get(rec["node"], 0) + rec["units"]

    groups = []
    for members in cfg.partition():
        g = len(members)
        R = sum(appended.get(i, 0) for i in members) / (g * span)
        valid = sum(
            1
            for tx, out in outcomes.items()
            if out["status"] == "validated" and inside(out["t"]) and tx in issued and issued[tx]["sender"] in members
        )
        watched = [i for i in members if i in honest]
        groups.append(
            GroupThroughput(
                members=list(members),
                chain_growth=R,
                valid_rate=2 * valid / span,
                valid_over_capacity=2 * valid / span / cfg.capacity,
                t_p={str(i): pieces.get(i, 0) / rounds / cfg.c_comm for i in watched},
                t_v={str(i): work.get(i, 0) / rounds / cfg.c_comp for i in watched},
                t_p_bound=R * g * T / cfg.c_comm,
                t_v_bound=R * g * T / cfg.c_comp,
            )
        )
    return window, groups
