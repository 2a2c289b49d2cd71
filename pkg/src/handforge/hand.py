"""Hand construction from anthropometric proportions.

Hand frame: origin at the wrist, +x toward the fingertips, +y toward the
thumb side, +z out of the back of the hand. The palm faces -z and every
link's palmar side is the local -z of its joint frame.

Each finger is three parallel hinges driven by one variable. A finger
placement carries two angles about z:

* ``heading`` turns the whole finger (the extended finger points along it);
* ``orientation`` inclines the hinge axes, so the finger bends sideways
  while flexing. This is the base orientation listed for the default hand.

The thumb root is rotated by ``theta_z`` about z, so the extended thumb
points along that heading in the palm plane. Its two-hinge base first
adducts the thumb across the palm (about root -z), then flexes it below
the palm (about +y); MCP and IP then curl the thumb back up toward the
palm (about -y), coupled 1:1. That makes 4 hinges and 3 independent
variables. The thumb's pad side, where its sites sit, is the curl side
(local +z).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from handforge.errors import InvalidInput
from handforge.geometry import (
    JointSpec,
    LinkSpec,
    SerialChain,
    Site,
    Transform,
    capsule_distance,
    link_segments,
    site_positions,
)

FINGERS = ("index", "middle", "ring", "little")
DIGITS = ("thumb",) + FINGERS
FINGER_SITES = ("MCP", "PIP", "DIP", "TIP")
THUMB_SITES = ("MCP", "IP", "TIP", "PULP")

DEFAULT_HAND_LENGTH = 127.5

# (length mm, width mm) per link, thumb: CMC, proximal, distal; fingers: proximal, middle, distal.
DEFAULT_LINKS: dict[str, tuple[tuple[float, float], ...]] = {
    "thumb": ((30.8, 25.0), (22.6, 16.0), (20.7, 16.0)),
    "index": ((26.4, 15.0), (17.1, 14.0), (16.8, 13.0)),
    "middle": ((29.7, 15.0), (19.1, 14.0), (18.2, 13.0)),
    "ring": ((26.9, 15.0), (18.5, 14.0), (18.1, 13.0)),
    "little": ((21.4, 13.0), (13.1, 12.0), (15.7, 11.0)),
}

# finger: (base position mm, base orientation deg)
DEFAULT_PLACEMENTS: dict[str, tuple[tuple[float, float, float], float]] = {
    "index": ((59.3, 18.1, -1.8), 7.03),
    "middle": ((60.5, 0.0, 0.0), 0.0),
    "ring": ((56.1, -17.2, -2.7), -5.1),
    "little": ((46.1, -31.1, -6.8), -7.27),
}

DEFAULT_THUMB_BASE = (12.0, 2.0, -5.0, 45.0)


@dataclass(frozen=True)
class AnthropometricTable:
    """Link dimensions for all five digits."""

    links: Mapping[str, tuple[LinkSpec, ...]]
    hand_length: float = DEFAULT_HAND_LENGTH

    def __post_init__(self):
        links = {}
        for digit in DIGITS:
            if digit not in self.links:
                raise InvalidInput(f"anthropometric table misses {digit!r}")
            specs = tuple(self.links[digit])
            if len(specs) != 3:
                raise InvalidInput(f"{digit} needs 3 links, got {len(specs)}")
            for s in specs:
                if not s.length > 0:
                    raise InvalidInput(f"{digit}: link lengths must be > 0")
            links[digit] = specs
        extra = set(self.links) - set(DIGITS)
        if extra:
            raise InvalidInput(f"unknown digits in table: {sorted(extra)}")
        if not self.hand_length > 0:
            raise InvalidInput("hand_length must be > 0")
        object.__setattr__(self, "links", links)

    def length(self, digit: str) -> float:
        return float(sum(s.length for s in self.links[digit]))

    @classmethod
    def default(cls) -> "AnthropometricTable":
        return cls({d: tuple(LinkSpec(*lw) for lw in v) for d, v in DEFAULT_LINKS.items()})


def default_fractions() -> dict[str, tuple[float, ...]]:
    return {d: tuple(lw[0] / DEFAULT_HAND_LENGTH for lw in v) for d, v in DEFAULT_LINKS.items()}


def default_widths() -> dict[str, tuple[float, ...]]:
    return {d: tuple(lw[1] for lw in v) for d, v in DEFAULT_LINKS.items()}


def scale_proportions(
    hand_length: float,
    proportion_table: Mapping[str, Sequence[float]] | None = None,
    widths: Mapping[str, Sequence[float]] | None = None,
) -> AnthropometricTable:
    """Link lengths as fractions of the wrist-to-middle-fingertip length.

    With the default fractions and ``hand_length=127.5`` this gives back the
    default link table exactly (up to float rounding).
    """
    if not hand_length > 0:
        raise InvalidInput(f"hand_length must be > 0, got {hand_length}")
    fractions = default_fractions() if proportion_table is None else proportion_table
    widths = default_widths() if widths is None else widths
    links = {}
    for digit in DIGITS:
        fr = fractions.get(digit)
        wd = widths.get(digit)
        if fr is None or wd is None:
            raise InvalidInput(f"missing proportions or widths for {digit!r}")
        if len(fr) != len(wd):
            raise InvalidInput(f"{digit}: {len(fr)} fractions but {len(wd)} widths")
        for f in fr:
            if not 0.0 < f < 1.0:
                raise InvalidInput(f"{digit}: fraction {f} outside (0, 1)")
        for w in wd:
            if not w > 0:
                raise InvalidInput(f"{digit}: width {w} must be > 0")
        links[digit] = tuple(LinkSpec(float(f) * hand_length, float(w)) for f, w in zip(fr, wd))
    return AnthropometricTable(links, hand_length)


@dataclass(frozen=True)
class FingerPlacement:
    finger: str
    position: tuple[float, float, float]
    orientation: float = 0.0
    heading: float = 0.0

    def __post_init__(self):
        if self.finger not in FINGERS:
            raise InvalidInput(f"unknown finger {self.finger!r}")
        pos = tuple(float(v) for v in self.position)
        if len(pos) != 3:
            raise InvalidInput(f"{self.finger}: base position needs 3 coordinates")
        if not -45.0 <= self.orientation <= 45.0:
            raise InvalidInput(f"{self.finger}: orientation {self.orientation} outside [-45, 45] deg")
        object.__setattr__(self, "position", pos)


def default_placements() -> list[FingerPlacement]:
    return [FingerPlacement(f, pos, ang) for f, (pos, ang) in DEFAULT_PLACEMENTS.items()]


@dataclass(frozen=True, order=True)
class ThumbBase:
    """Thumb root position (mm) and rotation about the hand z axis (deg)."""

    x: float
    y: float
    z: float
    theta_z: float

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x, self.y, self.z, self.theta_z)


def _range(joint_range) -> tuple[float, float]:
    return (0.0, 90.0) if joint_range is None else tuple(joint_range)


def finger_chain(
    finger: str,
    links: Sequence[LinkSpec],
    placement: FingerPlacement,
    joint_range=None,
) -> SerialChain:
    alpha = np.radians(placement.orientation)
    axis = (-float(np.sin(alpha)), float(np.cos(alpha)), 0.0)
    rng = _range(joint_range)
    joints = [JointSpec(axis, rng, 1.0, 0) for _ in range(3)]
    r = [lk.radius for lk in links]
    tip = links[2].length
    sites = {
        "MCP": Site(0, Transform.from_translation((0.0, 0.0, -r[0]))),
        "PIP": Site(1, Transform.from_translation((0.0, 0.0, -r[1]))),
        "DIP": Site(2, Transform.from_translation((0.0, 0.0, -r[2]))),
        "TIP": Site(2, Transform.from_translation((tip, 0.0, 0.0))),
        "PULP": Site(2, Transform.from_translation((tip, 0.0, -r[2]))),
    }
    base = Transform.from_xyz_rz(placement.position, np.radians(placement.heading))
    return SerialChain(base, joints, links, sites, name=finger)


def thumb_chain(links: Sequence[LinkSpec], base: ThumbBase, joint_range=None) -> SerialChain:
    rng = _range(joint_range)
    cmc, prox, dist = links
    joints = [
        JointSpec((0.0, 0.0, -1.0), rng, 1.0, 0),
        JointSpec((0.0, 1.0, 0.0), rng, 1.0, 1),
        JointSpec((0.0, -1.0, 0.0), rng, 1.0, 2),
        JointSpec((0.0, -1.0, 0.0), rng, 1.0, 2),
    ]
    chain_links = [LinkSpec(0.0, cmc.width), cmc, prox, dist]
    r_t = dist.radius
    sites = {
        "MCP": Site(2, Transform.from_translation((0.0, 0.0, prox.radius))),
        "IP": Site(3, Transform.from_translation((0.0, 0.0, r_t))),
        "TIP": Site(3, Transform.from_translation((dist.length, 0.0, 0.0))),
        "PULP": Site(3, Transform.from_translation((dist.length, 0.0, r_t))),
    }
    root = Transform.from_xyz_rz((base.x, base.y, base.z), np.radians(base.theta_z))
    return SerialChain(root, joints, chain_links, sites, name="thumb")


@dataclass(frozen=True, eq=False)
class HandModel:
    """Four coupled fingers and a thumb in a common hand frame."""

    fingers: Mapping[str, SerialChain]
    thumb: SerialChain
    table: AnthropometricTable | None = None
    placements: tuple[FingerPlacement, ...] = ()
    thumb_base: ThumbBase | None = None

    def __post_init__(self):
        fingers = dict(self.fingers)
        if set(fingers) != set(FINGERS):
            raise InvalidInput(f"hand needs fingers {FINGERS}, got {sorted(fingers)}")
        for name, chain in fingers.items():
            if len(chain.joints) != 3 or chain.n_independent != 1:
                raise InvalidInput(f"{name}: a finger has 3 hinges and 1 independent DoF")
            missing = set(FINGER_SITES) - set(chain.sites)
            if missing:
                raise InvalidInput(f"{name}: missing sites {sorted(missing)}")
        if len(self.thumb.joints) != 4 or self.thumb.n_independent != 3:
            raise InvalidInput("thumb has 4 hinges and 3 independent DoFs")
        if "PULP" not in self.thumb.sites:
            raise InvalidInput("thumb needs a PULP site")
        object.__setattr__(self, "fingers", {f: fingers[f] for f in FINGERS})
        object.__setattr__(self, "placements", tuple(self.placements))

    def chain(self, name: str) -> SerialChain:
        if name == "thumb":
            return self.thumb
        try:
            return self.fingers[name]
        except KeyError:
            raise InvalidInput(f"unknown chain {name!r}") from None

    @property
    def chains(self) -> dict[str, SerialChain]:
        return {"thumb": self.thumb, **self.fingers}

    @property
    def n_independent(self) -> int:
        return sum(c.n_independent for c in self.chains.values())

    @property
    def thumb_length(self) -> float:
        return float(sum(lk.length for lk in self.thumb.links))

    def with_thumb(self, base: ThumbBase) -> "HandModel":
        if self.table is None:
            raise InvalidInput("hand was not built from a table; cannot move the thumb")
        return replace(self, thumb=thumb_chain(self.table.links["thumb"], base), thumb_base=base)

    def with_finger(self, chain: SerialChain) -> "HandModel":
        return replace(self, fingers={**self.fingers, chain.name: chain})

    def same_structure(self, other: "HandModel") -> bool:
        return self.thumb.same_structure(other.thumb) and all(
            self.fingers[f].same_structure(other.fingers[f]) for f in FINGERS
        )


def build_hand(
    table: AnthropometricTable,
    placements: Sequence[FingerPlacement],
    thumb: ThumbBase,
) -> HandModel:
    placements = tuple(placements)
    names = [p.finger for p in placements]
    if sorted(names) != sorted(FINGERS):
        raise InvalidInput(f"need exactly one placement per finger, got {names}")
    by_name = {p.finger: p for p in placements}
    fingers = {f: finger_chain(f, table.links[f], by_name[f]) for f in FINGERS}
    return HandModel(
        fingers,
        thumb_chain(table.links["thumb"], thumb),
        table=table,
        placements=tuple(by_name[f] for f in FINGERS),
        thumb_base=thumb,
    )


def default_hand(thumb: ThumbBase | None = None) -> HandModel:
    return build_hand(
        AnthropometricTable.default(),
        default_placements(),
        thumb or ThumbBase(*DEFAULT_THUMB_BASE),
    )


def flexed_tip(links: Sequence[LinkSpec], placement: FingerPlacement) -> np.ndarray:
    chain = finger_chain(placement.finger, links, placement)
    return site_positions(chain, np.array([np.pi / 2]), "TIP")


def place_finger_bases(
    table: AnthropometricTable,
    angular_offsets: Mapping[str, float],
) -> list[FingerPlacement]:
    """Finger bases on the circle about the middle-finger MCP.

    Each finger points radially at its angular offset (deg) so its extended
    tip lands on the circle whose radius is the middle-finger length. Bases
    are then shifted along z so all fully flexed tips share the z of the
    longest finger's flexed tip. Hinge inclinations are left at zero; see
    :func:`max_inclination`.
    """
    if set(angular_offsets) != set(FINGERS):
        raise InvalidInput(f"angular offsets needed for {FINGERS}")
    if angular_offsets["middle"] != 0.0:
        raise InvalidInput("middle finger offset must be 0 deg")
    for f, phi in angular_offsets.items():
        if abs(phi) >= 90.0:
            raise InvalidInput(f"{f}: |offset| must be < 90 deg")

    radius = table.length("middle")
    center = np.array([table.hand_length - radius, 0.0, 0.0])
    flat = {}
    for f in FINGERS:
        phi = np.radians(angular_offsets[f])
        xy = center + (radius - table.length(f)) * np.array([np.cos(phi), np.sin(phi), 0.0])
        flat[f] = FingerPlacement(f, tuple(xy), 0.0, float(angular_offsets[f]))

    longest = max(FINGERS, key=table.length)
    ref_z = flexed_tip(table.links[longest], flat[longest])[2]
    out = []
    for f in FINGERS:
        dz = ref_z - flexed_tip(table.links[f], flat[f])[2]
        x, y, _ = flat[f].position
        out.append(replace(flat[f], position=(x, y, float(dz))))
    return out


def _adjacent(a: str, b: str) -> bool:
    return a in FINGERS and b in FINGERS and abs(FINGERS.index(a) - FINGERS.index(b)) == 1


def inclination_sign(hand: HandModel, moving: str, neighbor: str) -> float:
    """+1 when a positive inclination bends ``moving`` toward ``neighbor``.

    A positive inclination moves the flexing finger toward -y of its base frame.
    """
    a = hand.fingers[moving].base
    b = hand.fingers[neighbor].base
    local = a.rotation.T @ (b.translation - a.translation)
    return 1.0 if local[1] <= 0.0 else -1.0


def _placement_of(hand: HandModel, finger: str) -> FingerPlacement:
    for p in hand.placements:
        if p.finger == finger:
            return p
    chain = hand.fingers[finger]
    heading = float(np.degrees(np.arctan2(chain.base.rotation[1, 0], chain.base.rotation[0, 0])))
    axis = chain.joints[0].axis
    orientation = float(np.degrees(np.arctan2(-axis[0], axis[1])))
    return FingerPlacement(finger, tuple(chain.base.translation), orientation, heading)


def max_inclination(
    hand: HandModel,
    pair: tuple[str, str],
    cap: float = 45.0,
    step: float = 0.1,
    flex_step: float = 1.0,
) -> float:
    """Largest hinge inclination (deg, magnitude) of ``pair[0]`` before it hits ``pair[1]``.

    The moving finger is inclined toward its neighbour from 0 deg in
    ``step`` increments. At every increment both fingers flex together over
    [0, 90] deg in ``flex_step`` increments and the clearance of all link
    capsule pairs is checked. The sweep stops at the first contact and the
    previous inclination is returned; ``cap`` if none occurs.
    """
    moving, neighbor = pair
    if not _adjacent(moving, neighbor):
        raise InvalidInput(f"{moving!r} and {neighbor!r} are not adjacent fingers")
    if not 0.0 < cap <= 45.0:
        raise InvalidInput("cap must be in (0, 45] deg")

    sign = inclination_sign(hand, moving, neighbor)
    place = _placement_of(hand, moving)
    links = hand.fingers[moving].links
    other = hand.fingers[neighbor]

    flex = np.radians(np.arange(0.0, 90.0 + 1e-9, flex_step))[:, None]
    seg_b = link_segments(other, flex)  # (F, 3, 2, 3)
    r_b = np.array([lk.radius for lk in other.links])
    r_a = np.array([lk.radius for lk in links])
    radii = r_a[:, None] + r_b[None, :]

    n_steps = int(round(cap / step))
    best = 0.0
    for k in range(n_steps + 1):
        angle = min(k * step, cap)
        chain = finger_chain(moving, links, replace(place, orientation=sign * angle))
        seg_a = link_segments(chain, flex)
        clearance = capsule_distance(
            seg_a[:, :, None], 0.0, seg_b[:, None, :], 0.0
        ) - radii
        if np.any(clearance <= 0.0):
            return best
        best = angle
    return best
