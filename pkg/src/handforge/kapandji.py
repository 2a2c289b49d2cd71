"""The 16-target Kapandji reachability test.

Each finger carries four targets (MCP, PIP, DIP, TIP) placed on the palmar
surface of the finger at that site. The thumb pulp has to reach every one
of them without the two chains passing through each other.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from handforge.geometry import Transform, forward_transform
from handforge.hand import FINGER_SITES, FINGERS, HandModel
from handforge.ik import TARGET_POINT, IkResult, IkSettings, Status, make_starts, solve_batch


@dataclass(frozen=True, eq=False)
class KapandjiTarget:
    """A target fixed to a finger link; ``offset`` is relative to that link's frame."""

    finger: str
    site: str
    link: int
    offset: Transform

    def position(self, hand: HandModel, q_finger) -> np.ndarray:
        chain = hand.fingers[self.finger]
        return forward_transform(chain, q_finger, TARGET_POINT[self.site]).translation


def generate_targets(hand: HandModel) -> tuple[KapandjiTarget, ...]:
    """Targets in fixed order: fingers index to little, sites MCP to TIP."""
    out = []
    for f in FINGERS:
        chain = hand.fingers[f]
        for s in FINGER_SITES:
            site = chain.site(TARGET_POINT[s])
            out.append(KapandjiTarget(f, s, site.link, site.offset))
    return tuple(out)


@dataclass(frozen=True, eq=False)
class TargetOutcome:
    target: KapandjiTarget
    result: IkResult

    @property
    def reached(self) -> bool:
        return self.result.status is Status.CONVERGED

    @property
    def residual(self) -> float:
        return self.result.residual

    @property
    def status(self) -> Status:
        return self.result.status


@dataclass(frozen=True, eq=False)
class KapandjiReport:
    outcomes: tuple[TargetOutcome, ...]

    @property
    def passed(self) -> bool:
        return len(self.outcomes) == len(FINGERS) * len(FINGER_SITES) and all(o.reached for o in self.outcomes)

    @property
    def n_reached(self) -> int:
        return sum(o.reached for o in self.outcomes)

    def failures(self) -> list[TargetOutcome]:
        return [o for o in self.outcomes if not o.reached]

    def outcome(self, finger: str, site: str) -> TargetOutcome:
        for o in self.outcomes:
            if o.target.finger == finger and o.target.site == site:
                return o
        raise KeyError((finger, site))


def run_kapandji(hand: HandModel, settings: IkSettings | None = None) -> KapandjiReport:
    """Collision-aware solve for all 16 targets.

    The solves are independent (each has its own seeded starts); they are
    only batched together for speed.
    """
    settings = settings or IkSettings()
    targets = generate_targets(hand)
    problems = [make_starts(hand, t.finger, t.site, settings) for t in targets]
    results = solve_batch(hand, problems, settings, constrained=True)
    return KapandjiReport(tuple(TargetOutcome(t, r) for t, r in zip(targets, results)))
