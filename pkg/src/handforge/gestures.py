"""Named hand poses as joint vectors in degrees.

Finger values are the single coupled flexion driver. Thumb values are
(adduction, flexion, curl) of the three independent thumb drivers. All
values sit inside the default [0, 90] deg ranges.
"""

from __future__ import annotations

from dataclasses import dataclass
from types import MappingProxyType
from typing import Mapping

import numpy as np

from handforge.errors import InvalidInput
from handforge.hand import FINGERS, HandModel

THUMB_OPEN = (0.0, 0.0, 0.0)
THUMB_FOLDED = (90.0, 30.0, 90.0)
THUMB_PINCH = (60.0, 40.0, 30.0)

OPEN, CLOSED = 0.0, 90.0


@dataclass(frozen=True)
class GesturePose:
    name: str
    thumb: tuple[float, float, float]
    fingers: Mapping[str, float]

    def __post_init__(self):
        if set(self.fingers) != set(FINGERS):
            raise InvalidInput(f"{self.name}: needs a value for each of {FINGERS}")
        object.__setattr__(self, "fingers", MappingProxyType(dict(self.fingers)))
        for v in (*self.thumb, *self.fingers.values()):
            if not 0.0 <= v <= 90.0:
                raise InvalidInput(f"{self.name}: {v} deg outside the joint range")

    def joint_vectors(self) -> dict[str, list[float]]:
        """Per-chain drivers in degrees, thumb first."""
        out = {"thumb": list(self.thumb)}
        out.update({f: [self.fingers[f]] for f in FINGERS})
        return out

    def radians(self) -> dict[str, np.ndarray]:
        return {k: np.radians(v) for k, v in self.joint_vectors().items()}

    def check(self, hand: HandModel) -> None:
        """Raise if any value falls outside ``hand``'s joint bounds."""
        for name, q in self.radians().items():
            lo, hi = hand.chain(name).bounds
            if np.any(q < lo - 1e-12) or np.any(q > hi + 1e-12):
                raise InvalidInput(f"{self.name}: {name} outside its joint range")


def _pose(name: str, thumb, extended: set[str], partial: Mapping[str, float] | None = None) -> GesturePose:
    fingers = {f: OPEN if f in extended else CLOSED for f in FINGERS}
    fingers.update(partial or {})
    return GesturePose(name, tuple(thumb), fingers)


_ALL = set(FINGERS)

_POSES = [
    _pose("open-hand", THUMB_OPEN, _ALL),
    _pose("fist", THUMB_FOLDED, set()),
    _pose("pointing", THUMB_FOLDED, {"index"}),
    _pose("thumb-up", THUMB_OPEN, set()),
    _pose("ok", THUMB_PINCH, {"middle", "ring", "little"}, {"index": 45.0}),
    # European counting starts from the thumb.
    _pose("count-1", THUMB_OPEN, set()),
    _pose("count-2", THUMB_OPEN, {"index"}),
    _pose("count-3", THUMB_OPEN, {"index", "middle"}),
    _pose("count-4", THUMB_OPEN, {"index", "middle", "ring"}),
    _pose("count-5", THUMB_OPEN, _ALL),
    # Chinese counting.
    _pose("chinese-1", THUMB_FOLDED, {"index"}),
    _pose("chinese-2", THUMB_FOLDED, {"index", "middle"}),
    _pose("chinese-3", THUMB_FOLDED, {"middle", "ring", "little"}),
    _pose("chinese-4", THUMB_FOLDED, _ALL),
    _pose("chinese-5", THUMB_OPEN, _ALL),
    _pose("chinese-6", THUMB_OPEN, {"little"}),
    _pose("chinese-7", THUMB_PINCH, set(), {"index": 45.0, "middle": 45.0}),
    _pose("chinese-8", THUMB_OPEN, {"index"}),
    _pose("chinese-9", THUMB_FOLDED, set(), {"index": 45.0}),
    _pose("chinese-10", THUMB_FOLDED, set()),
]

GESTURES: Mapping[str, GesturePose] = MappingProxyType({p.name: p for p in _POSES})


def gesture_pose(name: str) -> GesturePose:
    try:
        return GESTURES[name]
    except KeyError:
        raise InvalidInput(f"unknown gesture {name!r}; known: {', '.join(GESTURES)}") from None
