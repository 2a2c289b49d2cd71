"""Voxel workspaces, thumb/finger intersection volumes and the opposability index.

Cells are cubes of side ``h`` centred on integer multiples of ``h``, so grids
built with the same ``h`` always line up regardless of their bounds. A
layer marks every cell touched by the sphere swept by one site over its
chain's joint space.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from handforge.errors import GridTooSmall, InvalidInput, Undefined
from handforge.geometry import SerialChain, site_positions
from handforge.hand import FINGER_SITES, FINGERS, HandModel
from handforge.ik import TARGET_POINT

DEFAULT_CELL = 2.0
DEFAULT_JOINT_RESOLUTION = 3.0
THUMB_LAYER = ("thumb", "PULP")
# Dispersion is scored on volumes in cm^3.
SIGMA_UNIT = 1000.0

LayerKey = tuple[str, str]


@dataclass
class WorkspaceGrid:
    """Axis-aligned occupancy grid; ``first`` is the integer index of the lowest cell."""

    h: float
    first: np.ndarray
    shape: tuple[int, int, int]
    layers: dict[LayerKey, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if not self.h > 0:
            raise InvalidInput("cell size must be > 0")
        self.first = np.asarray(self.first, dtype=np.int64)
        self.shape = tuple(int(n) for n in self.shape)
        if any(n < 1 for n in self.shape):
            raise InvalidInput("grid needs at least one cell per axis")

    @classmethod
    def from_bounds(cls, lo, hi, h: float = DEFAULT_CELL) -> "WorkspaceGrid":
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        if np.any(hi < lo):
            raise InvalidInput("grid bounds are inverted")
        first = np.floor(lo / h + 0.5).astype(np.int64)
        last = np.floor(hi / h + 0.5).astype(np.int64)
        return cls(h, first, tuple(last - first + 1))

    @property
    def cell_volume(self) -> float:
        return self.h**3

    @property
    def lower(self) -> np.ndarray:
        return (self.first - 0.5) * self.h

    @property
    def upper(self) -> np.ndarray:
        return (self.first + np.array(self.shape) - 0.5) * self.h

    def empty_layer(self) -> np.ndarray:
        return np.zeros(self.shape, dtype=bool)

    def layer(self, key: LayerKey) -> np.ndarray:
        try:
            return self.layers[key]
        except KeyError:
            raise InvalidInput(f"layer {key} has not been sampled") from None

    def rasterize(self, key: LayerKey, cells: np.ndarray) -> np.ndarray:
        """Boolean layer with the integer cell indices ``(N, 3)`` marked; not stored."""
        local = np.asarray(cells, dtype=np.int64).reshape(-1, 3) - self.first
        if np.any(local < 0) or np.any(local >= np.array(self.shape)):
            raise GridTooSmall(f"layer {key} reaches outside the grid")
        layer = self.empty_layer()
        layer[local[:, 0], local[:, 1], local[:, 2]] = True
        return layer

    def set_cells(self, key: LayerKey, cells: np.ndarray) -> None:
        """Mark integer cell indices ``(N, 3)`` in layer ``key``."""
        layer = self.rasterize(key, cells)
        if key in self.layers:
            layer |= self.layers[key]
        self.layers[key] = layer

    def cell_centers(self, key: LayerKey) -> np.ndarray:
        idx = np.argwhere(self.layer(key))
        return (idx + self.first) * self.h

    def count(self, key: LayerKey) -> int:
        return int(np.count_nonzero(self.layer(key)))


def sphere_cells(centers, radius: float, h: float) -> np.ndarray:
    """Integer indices of every cell whose cube meets at least one ball.

    Exact test: a cube meets a ball when the distance from the ball centre
    to the cube is at most ``radius``.
    """
    pts = np.asarray(centers, dtype=float).reshape(-1, 3)
    if pts.size == 0:
        return np.empty((0, 3), dtype=np.int64)
    idx = np.floor(pts / h + 0.5).astype(np.int64)
    reach = int(np.ceil(radius / h)) + 1
    origin = idx.min(axis=0) - reach
    box = tuple(idx.max(axis=0) - origin + reach + 1)
    home = np.zeros(box, dtype=bool)
    home[tuple((idx - origin).T)] = True

    # Any cell meeting a ball lies within radius + h*sqrt(3) (centre to centre)
    # of the cell holding that ball's centre. The distance transform finds
    # those candidates in time independent of radius / h.
    dist = ndimage.distance_transform_edt(~home) * h
    cand = np.argwhere(dist <= radius + h * np.sqrt(3.0) + 1e-9) + origin
    tree = cKDTree(pts)
    mid = cand * h
    dmin, _ = tree.query(mid)
    half_diag = 0.5 * h * np.sqrt(3.0)
    sure = dmin <= radius
    maybe = np.flatnonzero(~sure & (dmin <= radius + half_diag))
    hit = sure.copy()
    if maybe.size:
        near = tree.query_ball_point(mid[maybe], radius + half_diag)
        lens = np.fromiter((len(n) for n in near), dtype=np.int64, count=len(near))
        owner = np.repeat(np.arange(maybe.size), lens)
        flat = np.fromiter(itertools.chain.from_iterable(near), dtype=np.int64, count=int(lens.sum()))
        out = np.maximum(np.abs(pts[flat] - mid[maybe][owner]) - 0.5 * h, 0.0)
        inside = (out**2).sum(axis=1) <= radius**2
        hit[maybe[np.unique(owner[inside])]] = True
    return cand[hit]


def joint_grid(chain: SerialChain, resolution_deg: float) -> np.ndarray:
    """Every independent joint vector on a regular grid over the chain's bounds."""
    if not resolution_deg > 0:
        raise InvalidInput("joint resolution must be > 0")
    step = np.radians(resolution_deg)
    lo, hi = chain.bounds
    axes = []
    for a, b in zip(lo, hi):
        n = int(np.floor((b - a) / step + 1e-9))
        ax = a + step * np.arange(n + 1)
        if b - ax[-1] > 1e-9:
            ax = np.append(ax, b)
        axes.append(ax)
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=-1)


def site_radius(chain: SerialChain, site: str) -> float:
    return chain.links[chain.site(site).link].radius


def _resolve(hand: HandModel, chain_id: str, site: str) -> tuple[SerialChain, str]:
    chain = hand.chain(chain_id)
    if chain_id in FINGERS and site in TARGET_POINT:
        site = TARGET_POINT[site]
    chain.site(site)
    return chain, site


def workspace_layer(
    hand: HandModel,
    chain_id: str,
    site: str,
    joint_resolution: float,
    grid: WorkspaceGrid,
    radius: float | None = None,
) -> np.ndarray:
    """Occupancy of the sphere swept by one site over its chain's joint space.

    Finger Kapandji sites use the same palmar surface points as the
    reachability test. ``radius`` defaults to the half-width of the link
    carrying the site. The grid is left untouched.
    """
    chain, point = _resolve(hand, chain_id, site)
    q = joint_grid(chain, joint_resolution)
    centers = site_positions(chain, q, point)
    r = site_radius(chain, point) if radius is None else float(radius)
    if r < 0:
        raise InvalidInput("radius must be >= 0")
    return grid.rasterize((chain_id, site), sphere_cells(centers, r, grid.h))


def sample_workspace(
    hand: HandModel,
    chain_id: str,
    site: str,
    joint_resolution: float,
    grid: WorkspaceGrid,
    radius: float | None = None,
) -> np.ndarray:
    """Store (replacing) the layer ``(chain_id, site)`` and return it."""
    layer = workspace_layer(hand, chain_id, site, joint_resolution, grid, radius)
    grid.layers[(chain_id, site)] = layer
    return layer


def hand_bounds(hand: HandModel, thumb_bases: Iterable = ()) -> tuple[np.ndarray, np.ndarray]:
    """Box around every chain base inflated by the chain length plus its widest link.

    ``thumb_bases`` adds further thumb root positions (a search box).
    """
    lo = np.full(3, np.inf)
    hi = np.full(3, -np.inf)
    for chain in hand.chains.values():
        reach = sum(lk.length for lk in chain.links) + max(lk.width for lk in chain.links)
        origins = [chain.base.translation]
        if chain is hand.thumb:
            origins += [np.array(b[:3], dtype=float) for b in thumb_bases]
        for o in origins:
            lo = np.minimum(lo, o - reach)
            hi = np.maximum(hi, o + reach)
    return lo, hi


def grid_for_hand(hand: HandModel, h: float = DEFAULT_CELL, thumb_bases: Iterable = ()) -> WorkspaceGrid:
    lo, hi = hand_bounds(hand, thumb_bases)
    return WorkspaceGrid.from_bounds(lo - 2 * h, hi + 2 * h, h)


def sample_fingers(hand: HandModel, grid: WorkspaceGrid, joint_resolution: float = DEFAULT_JOINT_RESOLUTION) -> None:
    for f in FINGERS:
        for s in FINGER_SITES:
            sample_workspace(hand, f, s, joint_resolution, grid)


def shared_volume(grid: WorkspaceGrid, a: np.ndarray, b: np.ndarray) -> float:
    """Volume (mm^3) of the cells occupied in both layers."""
    return np.count_nonzero(a & b) * grid.cell_volume


def intersection_volumes(hand: HandModel, grid: WorkspaceGrid, thumb: np.ndarray | None = None) -> np.ndarray:
    """Matrix ``v[i, j]`` (mm^3): cells shared by the thumb pulp and finger i's site j.

    ``thumb`` overrides the stored thumb layer.
    """
    if thumb is None:
        thumb = grid.layer(THUMB_LAYER)
    v = np.zeros((len(FINGERS), len(FINGER_SITES)))
    for i, f in enumerate(FINGERS):
        for j, s in enumerate(FINGER_SITES):
            v[i, j] = shared_volume(grid, thumb, grid.layer((f, s)))
    return v


def opposability_index(v, w, d_t: float) -> float:
    """Weighted intersection volume normalised by the cube of the thumb length."""
    if not d_t > 0:
        raise InvalidInput(f"thumb length must be > 0, got {d_t}")
    v = np.asarray(v, dtype=float)
    w = np.broadcast_to(np.asarray(w, dtype=float), v.shape)
    if np.any(w < 0):
        raise InvalidInput("weights must be >= 0")
    return float((w * v).sum() / d_t**3)


def relative_std_dev(v) -> float:
    """Per-finger volume spread in percent: population variance over mean, times 100.

    ``v`` is the k x e volume matrix; rows are summed per finger first. The
    result depends on the unit the volumes are expressed in.
    """
    v = np.asarray(v, dtype=float)
    if v.ndim == 1:
        v = v[:, None]
    if v.shape[0] < 1:
        raise InvalidInput("need at least one finger")
    per_finger = v.sum(axis=1)
    mean = per_finger.mean()
    if mean == 0.0:
        raise Undefined("all intersection volumes are zero")
    var = ((per_finger - mean) ** 2).sum() / per_finger.size
    return float(var / mean * 100.0)


@dataclass(frozen=True, eq=False)
class OpposabilityResult:
    v: np.ndarray
    index: float
    sigma_r: float | None
    d_t: float


def evaluate_opposability(
    hand: HandModel,
    grid: WorkspaceGrid,
    weights=1.0,
    joint_resolution: float = DEFAULT_JOINT_RESOLUTION,
    sigma_unit: float = SIGMA_UNIT,
    store: bool = False,
) -> OpposabilityResult:
    """Sample the thumb pulp (finger layers must already be in ``grid``) and score it.

    ``sigma_unit`` is the volume unit in mm^3 used for the dispersion score
    (1000 = cm^3); the returned ``v`` stays in mm^3. With ``store`` the thumb
    layer is kept in the grid; otherwise the grid is only read, so several
    thumbs can be scored against one set of finger layers concurrently.
    """
    thumb = workspace_layer(hand, *THUMB_LAYER, joint_resolution, grid)
    if store:
        grid.layers[THUMB_LAYER] = thumb
    v = intersection_volumes(hand, grid, thumb)
    d_t = hand.thumb_length
    index = opposability_index(v, weights, d_t)
    try:
        sigma = relative_std_dev(v / sigma_unit)
    except Undefined:
        sigma = None
    return OpposabilityResult(v, index, sigma, d_t)


def finger_layers(grid: WorkspaceGrid) -> Mapping[LayerKey, np.ndarray]:
    return {k: v for k, v in grid.layers.items() if k[0] in FINGERS}
