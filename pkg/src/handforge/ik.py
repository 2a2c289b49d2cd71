"""Dual-chain convergence: bring the thumb pulp and a finger site together.

Both chains move at every iteration. With ``dP = P_thumb - P_finger`` the
thumb takes half of ``-dP`` and the finger half of ``+dP`` through the
pseudoinverse of their linear Jacobians, each update clamped to the joint
box. The collision-aware variant keeps the thumb and finger spheres apart
(``d >= r_t + r_f - epsilon``) with a weighted penalty row per violated
pair, and runs several starts.

The engine is vectorised over any number of (target, start) rows so that a
whole Kapandji test runs as one batch.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from handforge.errors import InvalidInput
from handforge.geometry import SerialChain, points_jacobian, pseudoinverse
from handforge.hand import FINGER_SITES, FINGERS, HandModel

# Finger site the thumb pulp is driven to, per Kapandji site name.
TARGET_POINT = {"MCP": "MCP", "PIP": "PIP", "DIP": "DIP", "TIP": "PULP"}
# Finger sphere allowed to touch the thumb pulp sphere, per target.
EXEMPT_SPHERE = {"MCP": "J0", "PIP": "J1", "DIP": "J2", "TIP": "TIP"}
THUMB_EFFECTOR = "PULP"
THUMB_PULP_SPHERE = "TIP"


class Status(str, enum.Enum):
    CONVERGED = "Converged"
    NOT_CONVERGED = "NotConverged"
    COLLISION_BLOCKED = "CollisionBlocked"


@dataclass(frozen=True)
class IkSettings:
    dx: float = 1.0
    tol: float = 0.5
    max_iters: int = 500
    epsilon: float = 0.5
    restarts: int = 8
    seed: int = 0
    penalty_weight: float = 10.0
    stall_iters: int = 60

    def __post_init__(self):
        if not self.dx > 0 or not self.tol > 0:
            raise InvalidInput("dx and tol must be > 0")
        if not self.epsilon >= 0:
            raise InvalidInput("epsilon must be >= 0")
        if self.max_iters < 1 or self.restarts < 1:
            raise InvalidInput("max_iters and restarts must be >= 1")
        if self.stall_iters < 1:
            raise InvalidInput("stall_iters must be >= 1")


@dataclass(frozen=True, eq=False)
class IkResult:
    q_thumb: np.ndarray
    q_finger: np.ndarray
    residual: float
    iterations: int
    status: Status

    @property
    def converged(self) -> bool:
        return self.status is Status.CONVERGED

    def __eq__(self, other):
        if not isinstance(other, IkResult):
            return NotImplemented
        return (
            np.array_equal(self.q_thumb, other.q_thumb)
            and np.array_equal(self.q_finger, other.q_finger)
            and self.residual == other.residual
            and self.iterations == other.iterations
            and self.status == other.status
        )


@dataclass(frozen=True)
class Sphere:
    key: str
    link: int
    offset: tuple[float, float, float]
    radius: float


def chain_spheres(chain: SerialChain) -> tuple[Sphere, ...]:
    """One sphere per distinct joint center plus one at the tip.

    Radii are half the width of the link leaving that joint. Joints joined
    by a zero-length link share one sphere with the larger radius.
    """
    spheres: list[Sphere] = []
    for k, link in enumerate(chain.links):
        if k > 0 and chain.links[k - 1].length == 0.0:
            prev = spheres[-1]
            spheres[-1] = Sphere(prev.key, prev.link, prev.offset, max(prev.radius, link.radius))
            continue
        spheres.append(Sphere(f"J{k}", k, (0.0, 0.0, 0.0), link.radius))
    last = chain.links[-1]
    spheres.append(Sphere("TIP", len(chain.links) - 1, (last.length, 0.0, 0.0), last.radius))
    return tuple(spheres)


def _sphere_index(spheres: Sequence[Sphere], key: str) -> int:
    for i, s in enumerate(spheres):
        if s.key == key:
            return i
    raise InvalidInput(f"no sphere {key!r}")


def _check_target(hand: HandModel, finger: str, site: str) -> None:
    if finger not in FINGERS:
        raise InvalidInput(f"opposed chain must be a finger, got {finger!r}")
    if site not in FINGER_SITES:
        raise InvalidInput(f"site must be one of {FINGER_SITES}, got {site!r}")
    hand.fingers[finger].site(TARGET_POINT[site])


def sphere_clearance(hand: HandModel, finger: str, q_thumb, q_finger, epsilon: float):
    """Margins ``d - (r_t + r_f - epsilon)`` for every thumb/finger sphere pair.

    Returns an array of shape ``(..., n_thumb_spheres, n_finger_spheres)``.
    """
    thumb, fchain = hand.thumb, hand.fingers[finger]
    ts, fs = chain_spheres(thumb), chain_spheres(fchain)
    ct, _ = points_jacobian(thumb, q_thumb, [(s.link, s.offset) for s in ts])
    cf, _ = points_jacobian(fchain, q_finger, [(s.link, s.offset) for s in fs])
    d = np.linalg.norm(ct[..., :, None, :] - cf[..., None, :, :], axis=-1)
    limit = np.array([s.radius for s in ts])[:, None] + np.array([s.radius for s in fs])[None, :] - epsilon
    return d - limit


def collision_free(hand: HandModel, finger: str, q_thumb, q_finger, epsilon: float, site: str | None = None) -> bool:
    """True iff every non-exempt sphere pair satisfies ``d >= r_t + r_f - epsilon``.

    ``site`` names the Kapandji target; its finger sphere may touch the
    thumb pulp sphere. ``None`` exempts nothing.
    """
    margin = sphere_clearance(hand, finger, q_thumb, q_finger, epsilon)
    if site is not None:
        ts, fs = chain_spheres(hand.thumb), chain_spheres(hand.fingers[finger])
        margin = margin.copy()
        margin[..., _sphere_index(ts, THUMB_PULP_SPHERE), _sphere_index(fs, EXEMPT_SPHERE[site])] = np.inf
    return bool(np.all(margin >= 0.0))


@dataclass
class Target:
    """One convergence problem with its start configurations (radians)."""

    finger: str
    site: str
    starts_thumb: np.ndarray
    starts_finger: np.ndarray


def _midpoint(chain: SerialChain) -> np.ndarray:
    lo, hi = chain.bounds
    return 0.5 * (lo + hi)


def make_starts(hand: HandModel, finger: str, site: str, settings: IkSettings, q0s=None) -> Target:
    """First start from ``q0s`` (or mid-range), then uniform random draws.

    The random stream depends only on (seed, finger, site), never on which
    other targets are solved alongside.
    """
    thumb, fchain = hand.thumb, hand.fingers[finger]
    if q0s is None:
        q0t, q0f = _midpoint(thumb), _midpoint(fchain)
    else:
        q0t, q0f = (np.asarray(v, dtype=float) for v in q0s)
    rng = np.random.default_rng([settings.seed, FINGERS.index(finger), FINGER_SITES.index(site)])
    n = settings.restarts - 1
    lo_t, hi_t = thumb.bounds
    lo_f, hi_f = fchain.bounds
    rt = rng.uniform(lo_t, hi_t, size=(n, len(lo_t)))
    rf = rng.uniform(lo_f, hi_f, size=(n, len(lo_f)))
    return Target(
        finger,
        site,
        np.vstack([thumb.clamp(q0t)[None], rt]),
        np.vstack([fchain.clamp(q0f)[None], rf]),
    )


def _pinv_step(jac, q, lo, hi, rhs):
    """``J^+ rhs`` with joints pinned at a bound (and pushed outward) removed."""
    dq = (pseudoinverse(jac) @ rhs[..., None])[..., 0]
    pinned = ((q <= lo) & (dq < 0.0)) | ((q >= hi) & (dq > 0.0))
    if pinned.any():
        rows = pinned.any(axis=-1)
        jr = jac[rows] * ~pinned[rows][:, None, :]
        dq[rows] = (pseudoinverse(jr) @ rhs[rows][..., None])[..., 0]
    return dq


def solve_batch(hand: HandModel, targets: Sequence[Target], settings: IkSettings, constrained: bool) -> list[IkResult]:
    """Run all (target, start) rows together and reduce per target.

    A target's rows stop as soon as one of them succeeds. A row also stops
    after ``stall_iters`` iterations without residual improvement. The
    reported result is the successful row with the smallest residual (lowest
    start index on ties); without success, the row with the smallest final
    residual, flagged ``CollisionBlocked`` when any row reached the tolerance
    only through penetration or stalled against an active constraint.
    """
    for t in targets:
        _check_target(hand, t.finger, t.site)
    thumb = hand.thumb
    ts = chain_spheres(thumb)
    t_points = [(thumb.site(THUMB_EFFECTOR).link, thumb.site(THUMB_EFFECTOR).offset.translation)]
    t_points += [(s.link, s.offset) for s in ts]
    r_thumb = np.array([s.radius for s in ts])
    pulp_sphere = _sphere_index(ts, THUMB_PULP_SPHERE)

    owner = np.concatenate([np.full(len(t.starts_thumb), i) for i, t in enumerate(targets)])
    start_idx = np.concatenate([np.arange(len(t.starts_thumb)) for t in targets])
    q_t = np.vstack([t.starts_thumb for t in targets]).astype(float)
    q_f = np.vstack([t.starts_finger for t in targets]).astype(float)
    n_rows = len(owner)

    fingers_used = sorted({t.finger for t in targets}, key=FINGERS.index)
    f_rows = {f: np.flatnonzero([targets[o].finger == f for o in owner]) for f in fingers_used}
    f_spheres = {f: chain_spheres(hand.fingers[f]) for f in fingers_used}
    n_fs = len(next(iter(f_spheres.values())))
    f_points = {}
    for f in fingers_used:
        chain = hand.fingers[f]
        pts = [(chain.site(TARGET_POINT[s]).link, chain.site(TARGET_POINT[s]).offset.translation) for s in FINGER_SITES]
        f_points[f] = pts + [(s.link, s.offset) for s in f_spheres[f]]
    target_col = np.array([FINGER_SITES.index(targets[o].site) for o in owner])
    exempt_col = np.array([_sphere_index(f_spheres[targets[o].finger], EXEMPT_SPHERE[targets[o].site]) for o in owner])
    r_finger = np.empty((n_rows, n_fs))
    lo_f = np.empty((n_rows, 1))
    hi_f = np.empty((n_rows, 1))
    for f, rows in f_rows.items():
        r_finger[rows] = [s.radius for s in f_spheres[f]]
        lo_f[rows], hi_f[rows] = hand.fingers[f].bounds
    lo_t, hi_t = thumb.bounds
    limit = r_thumb[None, :, None] + r_finger[:, None, :] - settings.epsilon
    exempt = np.zeros((n_rows, len(ts), n_fs), dtype=bool)
    exempt[np.arange(n_rows), pulp_sphere, exempt_col] = True

    active = np.ones(n_rows, dtype=bool)
    success = np.zeros(n_rows, dtype=bool)
    blocked = np.zeros(n_rows, dtype=bool)
    residual = np.full(n_rows, np.inf)
    iters = np.zeros(n_rows, dtype=int)
    best = np.full(n_rows, np.inf)
    last_gain = np.zeros(n_rows, dtype=int)
    sqrt_w = np.sqrt(settings.penalty_weight)

    for it in range(settings.max_iters + 1):
        rows = np.flatnonzero(active)
        if rows.size == 0:
            break
        pos_t, jac_t = points_jacobian(thumb, q_t[rows], t_points)
        pos_f = np.empty((rows.size, 4 + n_fs, 3))
        jac_f = np.empty((rows.size, 4 + n_fs, 3, 1))
        for f in fingers_used:
            sel = np.isin(rows, f_rows[f])
            if sel.any():
                pos_f[sel], jac_f[sel] = points_jacobian(hand.fingers[f], q_f[rows[sel]], f_points[f])
        k = np.arange(rows.size)
        dp = pos_t[:, 0] - pos_f[k, target_col[rows]]
        res = np.linalg.norm(dp, axis=-1)
        residual[rows] = res

        diff = pos_t[:, 1:, None, :] - pos_f[:, None, 4:, :]
        dist = np.linalg.norm(diff, axis=-1)
        gap = limit[rows] - dist
        violated = (gap > 0.0) & ~exempt[rows] if constrained else np.zeros_like(gap, dtype=bool)
        feasible = ~violated.any(axis=(1, 2))

        ok = res <= settings.tol
        done_ok = ok & feasible
        blocked[rows[ok & ~feasible]] = True
        success[rows[done_ok]] = True

        gain = res < best[rows] - 1e-9
        best[rows] = np.where(gain, res, best[rows])
        last_gain[rows[gain]] = it
        stalled = (it - last_gain[rows]) >= settings.stall_iters
        blocked[rows[stalled & ~feasible]] = True

        stop = done_ok | stalled
        # A target is finished once any of its starts succeeds.
        solved_targets = np.unique(owner[rows[done_ok]])
        stop |= np.isin(owner[rows], solved_targets)
        if it == settings.max_iters:
            blocked[rows[~feasible & ~done_ok]] = True
            break
        active[rows[stop]] = False
        go = ~stop
        if not go.any():
            continue
        rows, dp, res = rows[go], dp[go], res[go]
        jt, jf = jac_t[go], jac_f[go]
        k = np.arange(rows.size)
        scale = np.where(res > settings.dx, settings.dx / np.maximum(res, 1e-300), 1.0)
        step = dp * scale[:, None]

        qt, qf = q_t[rows], q_f[rows]
        dq_t = _pinv_step(jt[:, 0], qt, lo_t, hi_t, -0.5 * step)
        dq_f = _pinv_step(jf[k, target_col[rows]], qf, lo_f[rows], hi_f[rows], 0.5 * step)

        viol = violated[go]
        pen = viol.any(axis=(1, 2))
        if pen.any():
            dq_t[pen], dq_f[pen] = _penalty_step(
                jt[pen], jf[pen], target_col[rows[pen]], step[pen],
                diff[go][pen], dist[go][pen], gap[go][pen], viol[pen], sqrt_w, settings.dx,
            )
        q_t[rows] = np.clip(qt + dq_t, lo_t, hi_t)
        q_f[rows] = np.clip(qf + dq_f, lo_f[rows], hi_f[rows])
        iters[rows] += 1

    out = []
    for i in range(len(targets)):
        mine = np.flatnonzero(owner == i)
        won = mine[success[mine]]
        pool = won if won.size else mine
        j = pool[np.lexsort((start_idx[pool], residual[pool]))[0]]
        if won.size:
            status = Status.CONVERGED
        elif constrained and blocked[mine].any():
            status = Status.COLLISION_BLOCKED
        else:
            status = Status.NOT_CONVERGED
        out.append(IkResult(q_t[j].copy(), q_f[j].copy(), float(residual[j]), int(iters[j]), status))
    return out


def _penalty_step(jt, jf, tcol, step, diff, dist, gap, viol, sqrt_w, dx):
    """Weighted least-squares step: close ``dP`` while pushing violated pairs apart.

    Rows: ``[J_t, -J_f] dz = -step`` and, per violated sphere pair,
    ``sqrt(w) u^T [J_t,s, -J_f,s] dz = sqrt(w) min(gap, dx)``.
    """
    b = len(step)
    k = np.arange(b)
    n_t, n_f = diff.shape[1], diff.shape[2]
    u = diff / np.maximum(dist, 1e-12)[..., None]
    a_t = np.einsum("btfi,btij->btfj", u, jt[:, 1:])
    a_f = -np.einsum("btfi,bfij->btfj", u, jf[:, 4:])
    pair = np.concatenate([a_t, a_f], axis=-1) * (sqrt_w * viol)[..., None]
    main = np.concatenate([jt[:, 0], -jf[k, tcol]], axis=-1)
    a = np.concatenate([main, pair.reshape(b, n_t * n_f, -1)], axis=1)
    rhs = np.concatenate([-step, (sqrt_w * np.minimum(gap, dx) * viol).reshape(b, -1)], axis=1)
    dz = (pseudoinverse(a) @ rhs[..., None])[..., 0]
    m_t = jt.shape[-1]
    return dz[:, :m_t], dz[:, m_t:]


def solve_convergence(
    hand: HandModel,
    finger: str,
    site: str,
    settings: IkSettings | None = None,
    q0_thumb=None,
    q0_finger=None,
) -> IkResult:
    """Plain iterative scheme from one start; no collision handling."""
    settings = settings or IkSettings()
    _check_target(hand, finger, site)
    q0t = _midpoint(hand.thumb) if q0_thumb is None else np.asarray(q0_thumb, dtype=float)
    q0f = _midpoint(hand.fingers[finger]) if q0_finger is None else np.asarray(q0_finger, dtype=float)
    if q0t.shape != (hand.thumb.n_independent,) or q0f.shape != (1,):
        raise InvalidInput("start vectors do not match the chains")
    target = Target(finger, site, hand.thumb.clamp(q0t)[None], hand.fingers[finger].clamp(q0f)[None])
    return solve_batch(hand, [target], settings, constrained=False)[0]


def solve_constrained(
    hand: HandModel,
    finger: str,
    site: str,
    settings: IkSettings | None = None,
    q0s=None,
) -> IkResult:
    """Collision-aware multi-start solve; ``q0s`` is an optional (thumb, finger) start."""
    settings = settings or IkSettings()
    _check_target(hand, finger, site)
    return solve_batch(hand, [make_starts(hand, finger, site, settings, q0s)], settings, constrained=True)[0]
