"""Rigid transforms, serial-chain kinematics and capsule distances.

All angles are radians here. Joint vectors hold the *independent* variables of
a chain; :func:`expand_coupling` maps them onto the individual hinges.

Every kinematic routine accepts a single joint vector of shape ``(m,)`` or a
batch of shape ``(..., m)``; the batched path is what the solvers and the
workspace sampler use.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Mapping

import numpy as np

from handforge.errors import InvalidInput

ORTHO_TOL = 1e-9
AXIS_TOL = 1e-12
PINV_RCOND = 1e-8


def _readonly(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


def rot_z(theta: float) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def axis_angle(axis, theta) -> np.ndarray:
    """Rotation matrices about a fixed ``axis`` (normalised) for an array of angles."""
    axis = np.asarray(axis, dtype=float)
    norm = np.linalg.norm(axis)
    if not norm > 0:
        raise InvalidInput("rotation axis must be non-zero")
    k = _skew(axis / norm)
    theta = np.asarray(theta, dtype=float)[..., None, None]
    return np.eye(3) + np.sin(theta) * k + (1.0 - np.cos(theta)) * (k @ k)


def _skew(a: np.ndarray) -> np.ndarray:
    return np.array([[0.0, -a[2], a[1]], [a[2], 0.0, -a[0]], [-a[1], a[0], 0.0]])


@dataclass(frozen=True, eq=False)
class Transform:
    """Rigid transform: rotate, then translate (mm)."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        rot = _readonly(self.rotation)
        trans = _readonly(self.translation)
        if rot.shape != (3, 3) or trans.shape != (3,):
            raise InvalidInput("Transform needs a 3x3 rotation and a 3-vector translation")
        if not np.allclose(rot.T @ rot, np.eye(3), atol=ORTHO_TOL, rtol=0.0):
            raise InvalidInput("rotation is not orthonormal")
        if abs(np.linalg.det(rot) - 1.0) > ORTHO_TOL:
            raise InvalidInput("rotation is not proper (det != +1)")
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", trans)

    @classmethod
    def identity(cls) -> "Transform":
        return cls()

    @classmethod
    def from_xyz_rz(cls, xyz, theta_z: float) -> "Transform":
        return cls(rot_z(theta_z), np.asarray(xyz, dtype=float))

    @classmethod
    def from_translation(cls, xyz) -> "Transform":
        return cls(np.eye(3), np.asarray(xyz, dtype=float))

    def compose(self, other: "Transform") -> "Transform":
        """``self * other``: apply ``other`` first, then ``self``."""
        return Transform(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def inverse(self) -> "Transform":
        rt = self.rotation.T
        return Transform(rt, -rt @ self.translation)

    def apply(self, points) -> np.ndarray:
        return np.asarray(points, dtype=float) @ self.rotation.T + self.translation

    @property
    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def __eq__(self, other):
        if not isinstance(other, Transform):
            return NotImplemented
        return np.array_equal(self.rotation, other.rotation) and np.array_equal(
            self.translation, other.translation
        )

    def __repr__(self):
        return f"Transform(translation={self.translation.tolist()})"


@dataclass(frozen=True)
class JointSpec:
    """A revolute hinge. ``range_deg`` is kept in degrees as given by users."""

    axis: tuple[float, float, float]
    range_deg: tuple[float, float] = (0.0, 90.0)
    coupling_ratio: float = 1.0
    driver_index: int = 0

    def __post_init__(self):
        axis = tuple(float(v) for v in self.axis)
        if len(axis) != 3 or abs(np.linalg.norm(axis) - 1.0) > AXIS_TOL:
            raise InvalidInput(f"joint axis must be a unit 3-vector, got {self.axis}")
        lo, hi = (float(v) for v in self.range_deg)
        if lo > hi:
            raise InvalidInput(f"joint range min > max: {self.range_deg}")
        if self.driver_index < 0:
            raise InvalidInput("driver_index must be non-negative")
        object.__setattr__(self, "axis", axis)
        object.__setattr__(self, "range_deg", (lo, hi))

    @property
    def range_rad(self) -> tuple[float, float]:
        return (float(np.radians(self.range_deg[0])), float(np.radians(self.range_deg[1])))


@dataclass(frozen=True)
class LinkSpec:
    """A link along the local x axis of its joint frame.

    A zero ``length`` is accepted so that two hinges can share a center
    (the thumb's two-axis base).
    """

    length: float
    width: float

    def __post_init__(self):
        if not (self.length >= 0.0) or not (self.width > 0.0):
            raise InvalidInput(f"link needs length >= 0 and width > 0, got {self.length}, {self.width}")

    @property
    def radius(self) -> float:
        return 0.5 * self.width


@dataclass(frozen=True, eq=False)
class Site:
    """A named frame rigidly attached to the frame of joint ``link``."""

    link: int
    offset: Transform = field(default_factory=Transform)

    def __eq__(self, other):
        if not isinstance(other, Site):
            return NotImplemented
        return self.link == other.link and self.offset == other.offset


@dataclass(frozen=True, eq=False)
class SerialChain:
    """Ordered hinges and links hanging off ``base`` (hand frame to chain root)."""

    base: Transform
    joints: tuple[JointSpec, ...]
    links: tuple[LinkSpec, ...]
    sites: Mapping[str, Site]
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "joints", tuple(self.joints))
        object.__setattr__(self, "links", tuple(self.links))
        object.__setattr__(self, "sites", dict(self.sites))
        if len(self.joints) != len(self.links):
            raise InvalidInput(f"{self.name}: {len(self.joints)} joints but {len(self.links)} links")
        if not self.joints:
            raise InvalidInput(f"{self.name}: chain has no joints")
        drivers = sorted({j.driver_index for j in self.joints})
        if drivers != list(range(len(drivers))):
            raise InvalidInput(f"{self.name}: driver indices must be 0..m-1, got {drivers}")
        for name, site in self.sites.items():
            if not 0 <= site.link < len(self.joints):
                raise InvalidInput(f"{self.name}: site {name} refers to missing link {site.link}")

    @property
    def n_independent(self) -> int:
        return 1 + max(j.driver_index for j in self.joints)

    @cached_property
    def _arrays(self):
        axes = np.array([j.axis for j in self.joints])
        rot_k = np.array([_skew(a) for a in axes])
        return {
            "axes": axes,
            "k": rot_k,
            "k2": rot_k @ rot_k,
            "lengths": np.array([lk.length for lk in self.links]),
            "ratio": np.array([j.coupling_ratio for j in self.joints]),
            "driver": np.array([j.driver_index for j in self.joints], dtype=int),
            "lo": np.radians([j.range_deg[0] for j in self.joints]),
            "hi": np.radians([j.range_deg[1] for j in self.joints]),
        }

    @cached_property
    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        """Box bounds (rad) on the independent variables.

        Intersection over the driven hinges of ``range / ratio``, so that a
        driver inside these bounds never saturates a hinge.
        """
        m = self.n_independent
        lo = np.full(m, -np.inf)
        hi = np.full(m, np.inf)
        for j in self.joints:
            a, b = j.range_rad
            r = j.coupling_ratio
            if r == 0.0:
                continue
            a, b = (a / r, b / r) if r > 0 else (b / r, a / r)
            lo[j.driver_index] = max(lo[j.driver_index], a)
            hi[j.driver_index] = min(hi[j.driver_index], b)
        lo[~np.isfinite(lo)] = 0.0
        hi[~np.isfinite(hi)] = 0.0
        hi = np.maximum(hi, lo)
        return _readonly(lo), _readonly(hi)

    def clamp(self, q) -> np.ndarray:
        lo, hi = self.bounds
        return np.clip(q, lo, hi)

    def site(self, name: str) -> Site:
        try:
            return self.sites[name]
        except KeyError:
            raise InvalidInput(f"chain {self.name!r} has no site {name!r}") from None

    def same_structure(self, other: "SerialChain") -> bool:
        return (
            self.name == other.name
            and self.base == other.base
            and self.joints == other.joints
            and self.links == other.links
            and self.sites.keys() == other.sites.keys()
            and all(self.sites[k] == other.sites[k] for k in self.sites)
        )


def _check_q(chain: SerialChain, q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    if q.ndim == 0 or q.shape[-1] != chain.n_independent:
        raise InvalidInput(
            f"chain {chain.name!r} takes {chain.n_independent} joint variables, got shape {q.shape}"
        )
    return q


def expand_coupling(chain: SerialChain, q) -> np.ndarray:
    """Per-hinge angles: ``ratio_k * q[driver_k]`` clamped to each hinge range."""
    q = _check_q(chain, q)
    arr = chain._arrays
    angles = arr["ratio"] * q[..., arr["driver"]]
    return np.clip(angles, arr["lo"], arr["hi"])


def joint_frames(chain: SerialChain, q):
    """Rotations and origins of every joint frame, after its own rotation.

    Returns ``(R, p)`` with shapes ``(..., n, 3, 3)`` and ``(..., n, 3)``.
    """
    angles = expand_coupling(chain, q)
    arr = chain._arrays
    batch = angles.shape[:-1]
    n = len(chain.joints)
    s = np.sin(angles)[..., None, None]
    c = np.cos(angles)[..., None, None]
    local = np.eye(3) + s * arr["k"] + (1.0 - c) * arr["k2"]

    rots = np.empty(batch + (n, 3, 3))
    origins = np.empty(batch + (n, 3))
    rot = np.broadcast_to(chain.base.rotation, batch + (3, 3))
    pos = np.broadcast_to(chain.base.translation, batch + (3,))
    for k in range(n):
        rot = rot @ local[..., k, :, :]
        rots[..., k, :, :] = rot
        origins[..., k, :] = pos
        pos = pos + arr["lengths"][k] * rot[..., :, 0]
    return rots, origins


def link_segments(chain: SerialChain, q) -> np.ndarray:
    """Start/end points of every link, shape ``(..., n, 2, 3)``."""
    rots, origins = joint_frames(chain, q)
    ends = origins + chain._arrays["lengths"][:, None] * rots[..., :, :, 0]
    return np.stack([origins, ends], axis=-2)


def site_positions(chain: SerialChain, q, site: str) -> np.ndarray:
    st = chain.site(site)
    rots, origins = joint_frames(chain, q)
    return origins[..., st.link, :] + rots[..., st.link, :, :] @ st.offset.translation


def forward_transform(chain: SerialChain, q, site: str) -> Transform:
    """Pose of ``site`` in the hand frame for a single joint vector."""
    st = chain.site(site)
    q = _check_q(chain, q)
    if q.ndim != 1:
        raise InvalidInput("forward_transform takes a single joint vector")
    rots, origins = joint_frames(chain, q)
    rot = rots[st.link]
    return Transform(rot @ st.offset.rotation, origins[st.link] + rot @ st.offset.translation)


def points_jacobian(chain: SerialChain, q, points):
    """Positions and linear Jacobians of several link-attached points.

    ``points`` is a sequence of ``(link_index, local_offset)``. Returns arrays
    of shape ``(..., P, 3)`` and ``(..., P, 3, m)``. Joint frames are computed
    once for all points.
    """
    q = _check_q(chain, q)
    arr = chain._arrays
    rots, origins = joint_frames(chain, q)
    m = chain.n_independent
    raw = arr["ratio"] * q[..., arr["driver"]]
    live = (raw >= arr["lo"] - 1e-12) & (raw <= arr["hi"] + 1e-12)
    weight = arr["ratio"] * live
    axes_w = np.einsum("...kij,kj->...ki", rots, arr["axes"])

    batch = q.shape[:-1]
    pos = np.empty(batch + (len(points), 3))
    jac = np.zeros(batch + (len(points), 3, m))
    for i, (link, offset) in enumerate(points):
        p = origins[..., link, :] + rots[..., link, :, :] @ np.asarray(offset, dtype=float)
        pos[..., i, :] = p
        # Hinges beyond the point's link do not move it.
        n = link + 1
        cols = np.cross(axes_w[..., :n, :], p[..., None, :] - origins[..., :n, :])
        cols = cols * weight[..., :n, None]
        for k in range(n):
            jac[..., i, :, arr["driver"][k]] += cols[..., k, :]
    return pos, jac


def site_jacobian(chain: SerialChain, q, site: str):
    """Batched site positions and linear Jacobians ``(..., 3)``, ``(..., 3, m)``."""
    st = chain.site(site)
    pos, jac = points_jacobian(chain, q, [(st.link, st.offset.translation)])
    return pos[..., 0, :], jac[..., 0, :, :]


def linear_jacobian(chain: SerialChain, q, site: str) -> np.ndarray:
    """Linear part of the site Jacobian, 3 x m (mm/rad)."""
    return site_jacobian(chain, q, site)[1]


def pseudoinverse(jac) -> np.ndarray:
    """Moore-Penrose inverse via SVD; singular values below 1e-8 * max are dropped.

    Works on a single matrix or a stack ``(..., r, c)``.
    """
    jac = np.asarray(jac, dtype=float)
    u, s, vt = np.linalg.svd(jac, full_matrices=False)
    smax = s.max(axis=-1, keepdims=True) if s.shape[-1] else s
    keep = s > PINV_RCOND * smax
    inv_s = np.where(keep, 1.0 / np.where(keep, s, 1.0), 0.0)
    return np.swapaxes(vt, -1, -2) @ (inv_s[..., :, None] * np.swapaxes(u, -1, -2))


def segment_distance(p0, p1, q0, q1) -> np.ndarray:
    """Minimum distance between segments ``[p0, p1]`` and ``[q0, q1]`` (broadcasting)."""
    p0, p1, q0, q1 = (np.asarray(v, dtype=float) for v in (p0, p1, q0, q1))
    d1 = p1 - p0
    d2 = q1 - q0
    r = p0 - q0
    a = np.einsum("...i,...i", d1, d1)
    e = np.einsum("...i,...i", d2, d2)
    f = np.einsum("...i,...i", d2, r)
    c = np.einsum("...i,...i", d1, r)
    b = np.einsum("...i,...i", d1, d2)
    eps = 1e-12
    a_ok = a > eps
    e_ok = e > eps
    safe_a = np.where(a_ok, a, 1.0)
    safe_e = np.where(e_ok, e, 1.0)
    denom = a * e - b * b

    s = np.where(denom > eps * np.maximum(a * e, eps), (b * f - c * e) / np.where(denom > 0, denom, 1.0), 0.0)
    s = np.clip(s, 0.0, 1.0)
    t = (b * s + f) / safe_e
    s = np.where(t < 0.0, np.clip(-c / safe_a, 0.0, 1.0), np.where(t > 1.0, np.clip((b - c) / safe_a, 0.0, 1.0), s))
    t = np.clip(t, 0.0, 1.0)

    # Degenerate (point-like) segments.
    s = np.where(a_ok, s, 0.0)
    t = np.where(e_ok, np.where(a_ok, t, np.clip(f / safe_e, 0.0, 1.0)), 0.0)
    s = np.where(a_ok & ~e_ok, np.clip(-c / safe_a, 0.0, 1.0), s)

    gap = (p0 + d1 * s[..., None]) - (q0 + d2 * t[..., None])
    return np.sqrt(np.einsum("...i,...i", gap, gap))


def capsule_distance(seg_a, r_a: float, seg_b, r_b: float):
    """Signed clearance between two capsules; negative means penetration.

    Segments are given as ``(2, 3)`` arrays of end points. A sphere is a
    capsule whose two end points coincide.
    """
    seg_a = np.asarray(seg_a, dtype=float)
    seg_b = np.asarray(seg_b, dtype=float)
    d = segment_distance(seg_a[..., 0, :], seg_a[..., 1, :], seg_b[..., 0, :], seg_b[..., 1, :])
    return d - (np.asarray(r_a) + np.asarray(r_b))
