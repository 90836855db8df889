"""Scenario configuration (JSON-compatible)."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

from ..consensus.log import FaultBoundExceeded, fault_bound


_INTEGER_FIELDS = ("n", "seed", "block_size", "deadline_rounds", "drain_rounds", "initial_balance", "warmup_rounds")
_REAL_FIELDS = ("c_comm", "c_comp", "round_interval", "issue_rate", "grace", "view_timeout", "request_timeout")


class ConfigError(ValueError):
    pass


@dataclass
class AdversarySpec:
    node: int
    behaviors: List[str]
    params: Dict[str, Any] = field(default_factory=dict)


@dataclass
class SimConfig:
    """Everything that determines a run, together with ``seed``.

    Times are simulated seconds; rates are per node per simulated second.
    ``c_comm`` is a node's sending capacity in transaction messages, split
    evenly over the channels to its group.
    """

    n: int = 4
    seed: int = 0
    adversaries: List[AdversarySpec] = field(default_factory=list)
    latency: Tuple[float, float] = (0.001, 0.01)
    c_comm: float = 1000.0
    c_comp: float = 1000.0
    round_interval: float = 1.0
    block_size: int = 16
    issue_rate: float = 1.0
    deadline_rounds: int = 3
    drain_rounds: int = 6
    group_size: Optional[int] = None
    groups: Optional[List[List[int]]] = None
    initial_balance: int = 10**12
    consensus: str = "pbft"
    warmup_rounds: int = 2
    grace: float = 0.05
    view_timeout: float = 0.5
    request_timeout: float = 1.0
    allow_fault_bound_violation: bool = False
    wire_check: bool = False

    # -- derived ----------------------------------------------------------------

    @property
    def malicious(self) -> List[int]:
        return sorted({a.node for a in self.adversaries})

    @property
    def honest(self) -> List[int]:
        bad = set(self.malicious)
        return [i for i in range(1, self.n + 1) if i not in bad]

    def partition(self) -> List[List[int]]:
        if self.groups is not None:
            return [sorted(g) for g in self.groups]
        size = self.group_size or self.n
        nodes = list(range(1, self.n + 1))
        return [nodes[i:i + size] for i in range(0, self.n, size)]

    def group_of(self, node: int) -> List[int]:
        for g in self.partition():
            if node in g:
                return g
        raise ConfigError(f"node {node} is in no group")

    @property
    def g(self) -> int:
        return max(len(g) for g in self.partition())

    @property
    def capacity(self) -> float:
        """``C = C_comm C_comp / (C_comm + C_comp)``."""
        return self.c_comm * self.c_comp / (self.c_comm + self.c_comp)

    # -- validation -------------------------------------------------------------

    def validate(self) -> "SimConfig":
        try:
            return self._validate()
        except TypeError as exc:
            raise ConfigError(f"malformed config: {exc}") from None

    def _validate(self) -> "SimConfig":
        from ..adversary import BEHAVIORS

        for name in _INTEGER_FIELDS:
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, int):
                raise ConfigError(f"{name} must be an integer, got {value!r}")
        for name in _REAL_FIELDS:
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ConfigError(f"{name} must be a number, got {value!r}")
        if self.n < 1:
            raise ConfigError("n must be positive")
        for name in ("c_comm", "c_comp", "round_interval", "grace", "view_timeout", "request_timeout"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if self.issue_rate < 0:
            raise ConfigError("issue_rate must be non-negative")
        lo, hi = self.latency
        if lo < 0 or hi < lo:
            raise ConfigError("latency must be an ordered non-negative pair")
        if self.block_size < 1 or self.deadline_rounds < 1:
            raise ConfigError("block_size and deadline_rounds must be positive")
        if self.warmup_rounds < 0 or self.drain_rounds < 0:
            raise ConfigError("warmup_rounds and drain_rounds must be non-negative")
        if self.consensus not in ("pbft", "oracle"):
            raise ConfigError(f"unknown consensus implementation {self.consensus!r}")
        if self.group_size is not None and self.group_size < 1:
            raise ConfigError("group_size must be positive")
        parts = self.partition()
        flat = sorted(x for g in parts for x in g)
        if flat != list(range(1, self.n + 1)):
            raise ConfigError("groups must partition nodes 1..n")
        seen = set()
        for adv in self.adversaries:
            if isinstance(adv.node, bool) or not isinstance(adv.node, int) or not isinstance(adv.behaviors, list):
                raise ConfigError(f"adversary entries need an integer node and a list of behaviors: {adv!r}")
            if not 1 <= adv.node <= self.n:
                raise ConfigError(f"adversary node {adv.node} out of range")
            if adv.node in seen:
                raise ConfigError(f"node {adv.node} has two adversary scripts")
            seen.add(adv.node)
            unknown = [b for b in adv.behaviors if b not in BEHAVIORS]
            if unknown or not adv.behaviors:
                raise ConfigError(f"unknown adversary behaviors {unknown} for node {adv.node}")
        f = fault_bound(self.n)
        if len(self.malicious) > f and not self.allow_fault_bound_violation:
            raise FaultBoundExceeded(
                f"{len(self.malicious)} malicious nodes exceed the bound {f} for n={self.n}"
            )
        return self

    # -- (de)serialization ------------------------------------------------------

    def to_dict(self) -> Dict[str, Any]:
        out = asdict(self)
        out["latency"] = list(self.latency)
        return out

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "SimConfig":
        known = {f.name for f in fields(cls)}
        extra = set(data) - known
        if extra:
            raise ConfigError(f"unknown config keys: {sorted(extra)}")
        kwargs = dict(data)
        try:
            if "adversaries" in kwargs:
                kwargs["adversaries"] = [
                    a if isinstance(a, AdversarySpec) else AdversarySpec(**a) for a in kwargs["adversaries"]
                ]
            if "latency" in kwargs:
                lo, hi = kwargs["latency"]
                kwargs["latency"] = (float(lo), float(hi))
            return cls(**kwargs)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"malformed config: {exc}") from None

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    @classmethod
    def load(cls, path) -> "SimConfig":
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: top level must be an object")
        return cls.from_dict(data)

    def replace(self, **changes) -> "SimConfig":
        data = self.to_dict()
        data.update(changes)
        return SimConfig.from_dict(data)
