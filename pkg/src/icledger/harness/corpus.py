"""The seeded adversarial scenario corpus."""

from __future__ import annotations

import random
from dataclasses import dataclass
from typing import List

from ..adversary import BEHAVIORS
from ..consensus.log import fault_bound
from ..simnet.config import AdversarySpec, SimConfig

SIZES = (4, 7, 10)

MIXES = (
    ("fork_chain", "double_spend"),
    ("equivocate_pieces", "withhold_proofs"),
    ("spam_invalid", "bad_signature", "wrong_round_cm"),
    ("replay_cm", "insufficient_balance"),
    ("silent",),
)


@dataclass(frozen=True)
class Scenario:
    name: str
    config: SimConfig
    rounds: int = 8


def _at_bound(n: int, seed: int, mixes, **extra) -> SimConfig:
    f = fault_bound(n)
    advs = [AdversarySpec(n - k, list(mixes[k % len(mixes)])) for k in range(f)]
    return SimConfig(n=n, seed=seed, adversaries=advs, **extra)


def scenario_corpus() -> List[Scenario]:
    """Every adversary script at N in {4, 7, 10}, alone and mixed up to the fault bound."""
    out: List[Scenario] = []
    for n in SIZES:
        out.append(Scenario(f"honest-n{n}", SimConfig(n=n, seed=100 + n)))
    for n in SIZES:
        for k, behavior in enumerate(sorted(BEHAVIORS)):
            cfg = SimConfig(n=n, seed=200 + 10 * n + k, adversaries=[AdversarySpec(n, [behavior])])
            out.append(Scenario(f"{behavior}-n{n}", cfg))
    for n in SIZES:
        out.append(Scenario(f"bound-mix-a-n{n}", _at_bound(n, 300 + n, MIXES)))
        out.append(Scenario(f"bound-mix-b-n{n}", _at_bound(n, 310 + n, MIXES[1:] + MIXES[:1])))
        out.append(Scenario(f"bound-oracle-n{n}", _at_bound(n, 320 + n, MIXES, consensus="oracle")))
    out.append(Scenario("groups-n10", _at_bound(10, 401, MIXES, groups=[[1, 2, 3, 4, 5], [6, 7, 8, 9, 10]])))
    out.append(Scenario("groups-n7", _at_bound(7, 402, MIXES[2:], group_size=4)))
    rng = random.Random(2024)
    for k in range(6):
        n = SIZES[k % len(SIZES)]
        f = rng.randint(1, fault_bound(n))
        nodes = rng.sample(range(1, n + 1), f)
        advs = [AdversarySpec(i, sorted(rng.sample(sorted(BEHAVIORS), rng.randint(1, 3)))) for i in sorted(nodes)]
        out.append(Scenario(f"random-{k}-n{n}", SimConfig(n=n, seed=500 + k, adversaries=advs, issue_rate=1.5)))
    return out


def over_bound_scenarios() -> List[Scenario]:
    """More silent nodes than the bound tolerates; runs must abort, not diverge."""
    out = []
    for n in SIZES:
        f = fault_bound(n) + 1
        advs = [AdversarySpec(n - k, ["silent"]) for k in range(f)]
        cfg = SimConfig(n=n, seed=600 + n, adversaries=advs, allow_fault_bound_violation=True)
        out.append(Scenario(f"over-bound-n{n}", cfg, rounds=4))
    return out
