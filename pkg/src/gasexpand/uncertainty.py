"""Box demand uncertainty: profiles, extremal scenarios, scaling, sampling.

Random draws use NumPy's ``PCG64`` bit generator seeded through a
``SeedSequence`` built from the user seed plus a CRC32 of a text label, so
every consumer of randomness gets an independent, reproducible stream.
"""

from __future__ import annotations

import json
import zlib
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .network import Network


@dataclass(frozen=True)
class DemandProfile:
    profile_id: str
    intervals: Mapping[str, tuple[float, float]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        clean = {}
        for node, (lo, hi) in self.intervals.items():
            lo, hi = float(lo), float(hi)
            if not 0 <= lo <= hi:
                raise ValueError(f"profile {self.profile_id!r}: bad interval for {node!r}: [{lo}, {hi}]")
            clean[node] = (lo, hi)
        object.__setattr__(self, "intervals", dict(sorted(clean.items())))

    def interval(self, node: str) -> tuple[float, float]:
        return self.intervals.get(node, (0.0, 0.0))

    def contains(self, scenario: Scenario, tol: float = 1e-12) -> bool:
        nodes = set(self.intervals) | set(scenario.demands)
        return all(
            lo - tol <= scenario.demand(n) <= hi + tol for n in nodes for lo, hi in [self.interval(n)]
        )


@dataclass(frozen=True)
class Scenario:
    scenario_id: str
    profile_id: str
    demands: Mapping[str, float] = field(default_factory=dict)

    def demand(self, node: str) -> float:
        return self.demands.get(node, 0.0)


@dataclass(frozen=True)
class ScenarioSet:
    profiles: tuple[DemandProfile, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "profiles", tuple(self.profiles))
        ids = [p.profile_id for p in self.profiles]
        if len(set(ids)) != len(ids):
            raise ValueError(f"duplicate profile ids in {ids}")

    def __iter__(self):
        return iter(self.profiles)

    def __len__(self) -> int:
        return len(self.profiles)


def extremal_scenarios(profile: DemandProfile) -> tuple[Scenario, Scenario]:
    """The all-lower-bound and all-upper-bound demand points of the box."""
    low = {n: lo for n, (lo, _) in profile.intervals.items()}
    high = {n: hi for n, (_, hi) in profile.intervals.items()}
    pid = profile.profile_id
    return Scenario(f"{pid}/low", pid, low), Scenario(f"{pid}/high", pid, high)


def profile_id_for(delta: float) -> str:
    return f"d{delta:g}"


def scale_profile(network: Network, delta: float, epsilon: float, profile_id: str | None = None) -> DemandProfile:
    """Box of half-width ``epsilon`` (relative) around ``delta``-scaled nominal demand."""
    if not delta > 0:
        raise ValueError("delta must be positive")
    if not 0 <= epsilon < 1:
        raise ValueError("epsilon must lie in [0, 1)")
    intervals = {}
    for node in network.nodes:
        if node.is_delivery:
            centre = delta * node.nominal_demand
            intervals[node.id] = (centre * (1 - epsilon), centre * (1 + epsilon))
    return DemandProfile(profile_id or profile_id_for(delta), intervals)


def nominal_scenario(network: Network, delta: float, profile_id: str | None = None) -> Scenario:
    """Point scenario at the ``delta``-scaled nominal demand."""
    low, _ = extremal_scenarios(scale_profile(network, delta, 0.0, profile_id))
    pid = low.profile_id
    return Scenario(f"{pid}/nominal", pid, dict(low.demands))


def make_rng(seed: int, label: str) -> np.random.Generator:
    """Independent generator for ``label`` derived from the master ``seed``."""
    seq = np.random.SeedSequence([int(seed) & 0xFFFFFFFF, zlib.crc32(label.encode("utf-8"))])
    return np.random.Generator(np.random.PCG64(seq))


def sample(profile: DemandProfile, count: int, seed: int | np.random.Generator) -> list[Scenario]:
    """``count`` scenarios drawn independently and uniformly from the box.

    Passing an integer seed derives the stream labelled by the profile id, so
    two calls with the same seed return identical scenarios.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    rng = seed if isinstance(seed, np.random.Generator) else make_rng(seed, f"sample:{profile.profile_id}")
    nodes = list(profile.intervals)
    lo = np.array([profile.intervals[n][0] for n in nodes])
    hi = np.array([profile.intervals[n][1] for n in nodes])
    draws = lo + (hi - lo) * rng.random((count, len(nodes)))
    return [
        Scenario(f"{profile.profile_id}/s{k:05d}", profile.profile_id, dict(zip(nodes, map(float, row))))
        for k, row in enumerate(draws)
    ]


# --------------------------------------------------------------------------
# profile documents


def profile_to_doc(profile: DemandProfile) -> dict:
    return {"profile_id": profile.profile_id, "intervals": {n: [lo, hi] for n, (lo, hi) in profile.intervals.items()}}


def profile_from_doc(doc: Mapping) -> DemandProfile:
    try:
        return DemandProfile(str(doc["profile_id"]), {n: tuple(v) for n, v in doc["intervals"].items()})
    except (KeyError, TypeError, ValueError) as exc:
        raise ValueError(f"malformed profile document: {exc}") from exc


def load_profiles(text: str | bytes) -> ScenarioSet:
    """Read one profile document, a list of them, or ``{"profiles": [...]}``."""
    doc = json.loads(text)
    if isinstance(doc, Mapping) and "profiles" in doc:
        doc = doc["profiles"]
    if isinstance(doc, Mapping):
        doc = [doc]
    return ScenarioSet(tuple(profile_from_doc(d) for d in doc))


def check_scenarios(network: Network, scenarios: Iterable[Scenario]) -> None:
    known = network.node_by_id
    for s in scenarios:
        unknown = sorted(set(s.demands) - set(known))
        if unknown:
            raise ValueError(f"scenario {s.scenario_id!r} references unknown nodes {unknown}")


def profiles_of(items: Sequence[DemandProfile] | ScenarioSet) -> tuple[DemandProfile, ...]:
    return tuple(items.profiles if isinstance(items, ScenarioSet) else items)
