"""Deterministic discrete-event kernel and point-to-point network.

Simulated time is an integer number of microseconds.  Events fire in
``(time, insertion order)`` order, so a run is a pure function of its inputs.
"""

from __future__ import annotations

import heapq
import math
import random
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Iterable, List, Optional, Tuple

from ..core import decode, encode
from ..core.crypto import derive_seed

US = 1_000_000


def seconds_to_us(seconds: float) -> int:
    return int(round(seconds * US))


def us_to_seconds(us: int) -> float:
    return us / US


def rng_for(*parts: object) -> random.Random:
    """Independent deterministic stream for one (seed, purpose, ...) tuple."""
    return random.Random(int.from_bytes(derive_seed(*parts)[:8], "big"))


@dataclass(order=True)
class Event:
    time: int
    seq: int
    kind: str = field(compare=False)
    callback: Callable[..., None] = field(compare=False, repr=False)
    args: Tuple[Any, ...] = field(compare=False, default=(), repr=False)
    cancelled: bool = field(compare=False, default=False)

    def cancel(self) -> None:
        self.cancelled = True


class Simulator:
    def __init__(self) -> None:
        self.now = 0
        self._queue: List[Event] = []
        self._seq = 0
        self._stopped = False
        self.events_run = 0

    def at(self, time: int, callback, *args, kind: str = "timer") -> Event:
        if time < self.now:
            raise ValueError("cannot schedule in the past")
        ev = Event(int(time), self._seq, kind, callback, args)
        self._seq += 1
        heapq.heappush(self._queue, ev)
        return ev

    def schedule(self, delay: int, callback, *args, kind: str = "timer") -> Event:
        return self.at(self.now + max(0, int(delay)), callback, *args, kind=kind)

    def stop(self) -> None:
        self._stopped = True

    def pending(self) -> int:
        return sum(1 for ev in self._queue if not ev.cancelled)

    def run(self, until: Optional[int] = None) -> None:
        self._stopped = False
        queue = self._queue
        while queue and not self._stopped:
            if until is not None and queue[0].time > until:
                self.now = until
                return
            ev = heapq.heappop(queue)
            if ev.cancelled:
                continue
            self.now = ev.time
            self.events_run += 1
            ev.callback(*ev.args)


Handler = Callable[[int, Any], None]


def payload_category(payload: Any) -> str:
    return getattr(payload, "category", "consensus")


def payload_weight(payload: Any) -> int:
    """Channel cost in transaction messages; zero-weight sends only see latency."""
    return max(0, int(getattr(payload, "weight", 1)))


class Network:
    """Point-to-point channels with random latency and a per-channel rate cap.

    A send occupies its ``(src, dst)`` channel for ``weight / c_comm``
    seconds; delivery happens after transmission plus a latency drawn
    uniformly from ``[lo, hi]`` microseconds by a per-link stream.  When
    ``charged`` is given, only those payload categories use channel time;
    the rest see latency alone.
    """

    def __init__(
        self,
        sim: Simulator,
        *,
        latency_us: Tuple[int, int] = (0, 0),
        c_comm: float = math.inf,
        seed: int = 0,
        recorder: Optional[Callable[[Dict[str, Any]], None]] = None,
        wire_check: bool = False,
        charged: Optional[Iterable[str]] = None,
    ):
        lo, hi = latency_us
        if lo < 0 or hi < lo:
            raise ValueError("bad latency range")
        if c_comm <= 0:
            raise ValueError("c_comm must be positive")
        self.sim = sim
        self.latency_us = (int(lo), int(hi))
        self.c_comm = c_comm
        self.seed = seed
        self.recorder = recorder
        self.wire_check = wire_check
        self.charged = None if charged is None else frozenset(charged)
        self.handlers: Dict[int, Handler] = {}
        self._free_at: Dict[Tuple[int, int], int] = {}
        self._link_rng: Dict[Tuple[int, int], random.Random] = {}
        self.sent: Dict[int, Dict[str, int]] = {}
        self.received: Dict[int, Dict[str, int]] = {}

    def register(self, node: int, handler: Handler) -> None:
        self.handlers[node] = handler
        self.sent.setdefault(node, {})
        self.received.setdefault(node, {})

    @property
    def nodes(self) -> List[int]:
        return sorted(self.handlers)

    def transmission_us(self, weight: int) -> int:
        if math.isinf(self.c_comm):
            return 0
        return int(math.ceil(weight * US / self.c_comm))

    def _latency(self, src: int, dst: int) -> int:
        lo, hi = self.latency_us
        if lo == hi:
            return lo
        rng = self._link_rng.get((src, dst))
        if rng is None:
            rng = self._link_rng[(src, dst)] = rng_for(self.seed, "link", src, dst)
        return rng.randint(lo, hi)

    def send(self, src: int, dst: int, payload: Any) -> int:
        """Schedule delivery of ``payload``; returns the delivery time."""
        if dst not in self.handlers:
            raise KeyError(f"unknown destination {dst}")
        if self.wire_check:
            payload = decode(encode(payload))
        weight = payload_weight(payload)
        category = payload_category(payload)
        key = (src, dst)
        if self.charged is None or category in self.charged:
            start = max(self.sim.now, self._free_at.get(key, 0))
            done = start + self.transmission_us(weight)
            self._free_at[key] = done
        else:
            done = self.sim.now
        deliver = done + self._latency(src, dst)
        counts = self.sent.setdefault(src, {})
        counts[category] = counts.get(category, 0) + 1
        self.sim.at(deliver, self._deliver, src, dst, payload, weight, category, kind="deliver")
        return deliver

    def broadcast(self, src: int, payload: Any, targets: Optional[Iterable[int]] = None) -> None:
        for dst in (self.nodes if targets is None else targets):
            if dst != src:
                self.send(src, dst, payload)

    def _deliver(self, src, dst, payload, weight, category) -> None:
        counts = self.received.setdefault(dst, {})
        counts[category] = counts.get(category, 0) + 1
        if self.recorder is not None:
            self.recorder(
                {
                    "t": self.sim.now,
                    "ev": "deliver",
                    "src": src,
                    "dst": dst,
                    "msg": type(payload).__name__,
                    "cat": category,
                    "w": weight,
                }
            )
        self.handlers[dst](src, payload)
