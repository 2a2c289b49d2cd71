import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import minimize

from handforge.errors import InvalidInput
from handforge.geometry import (
    JointSpec,
    LinkSpec,
    SerialChain,
    Site,
    Transform,
    axis_angle,
    capsule_distance,
    expand_coupling,
    forward_transform,
    linear_jacobian,
    pseudoinverse,
    rot_z,
    segment_distance,
)
from handforge.hand import default_hand

angles = st.floats(-np.pi, np.pi, allow_nan=False)
coords = st.floats(-100, 100, allow_nan=False)


def one_hinge(axis=(0, 0, 1), length=10.0, rng=(0.0, 90.0)):
    return SerialChain(
        Transform.identity(),
        [JointSpec(axis, rng)],
        [LinkSpec(length, 2.0)],
        {"TIP": Site(0, Transform.from_translation((length, 0, 0)))},
    )


def coupled_finger(ratios=(1.0, 1.0, 1.0), lengths=(10.0, 8.0, 6.0)):
    joints = [JointSpec((0, 1, 0), (0, 90), r, 0) for r in ratios]
    links = [LinkSpec(L, 2.0) for L in lengths]
    sites = {"TIP": Site(2, Transform.from_translation((lengths[2], 0, 0)))}
    return SerialChain(Transform.identity(), joints, links, sites)


# --- Transform -------------------------------------------------------------


def test_transform_rejects_non_orthonormal():
    with pytest.raises(InvalidInput):
        Transform(np.diag([1.0, 1.0, 1.1]), np.zeros(3))
    with pytest.raises(InvalidInput):
        Transform(np.diag([1.0, 1.0, -1.0]), np.zeros(3))


def test_compose_and_inverse_round_trip():
    a = Transform(axis_angle((1, 2, 3), 0.7), (1, 2, 3))
    b = Transform(rot_z(-1.2), (-4, 0, 5))
    ab = a.compose(b)
    p = np.array([0.3, -2.0, 7.0])
    np.testing.assert_allclose(ab.apply(p), a.apply(b.apply(p)), atol=1e-12)
    np.testing.assert_allclose(ab.compose(ab.inverse()).matrix, np.eye(4), atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.tuples(angles, angles, angles), min_size=1, max_size=5))
def test_rotation_stays_orthonormal_after_many_compositions(seeds):
    t = Transform.identity()
    for _ in range(200):
        for a, b, c in seeds:
            t = t.compose(Transform(axis_angle((a, b, c + 4.0), a + b), (0, 0, 0)))
    r = t.rotation
    assert np.abs(r.T @ r - np.eye(3)).max() < 1e-9
    assert abs(np.linalg.det(r) - 1.0) < 1e-9


# --- coupling -------------------------------------------------------------


def test_expand_coupling_replicates_driver():
    got = np.degrees(expand_coupling(coupled_finger(), np.radians([30.0])))
    np.testing.assert_allclose(got, [30, 30, 30])


def test_expand_coupling_clamps_to_range():
    got = np.degrees(expand_coupling(coupled_finger(), np.radians([100.0])))
    np.testing.assert_allclose(got, [90, 90, 90])


def test_expand_coupling_ratio():
    chain = coupled_finger(ratios=(1.0, 0.5, 1.0))
    got = np.degrees(expand_coupling(chain, np.radians([60.0])))
    np.testing.assert_allclose(got[:2], [60, 30])


def test_expand_coupling_idempotent_under_reclamp():
    chain = coupled_finger()
    once = expand_coupling(chain, np.radians([120.0]))
    again = expand_coupling(chain, once[:1])
    np.testing.assert_array_equal(once, again)


def test_expand_coupling_dimension_mismatch():
    with pytest.raises(InvalidInput):
        expand_coupling(coupled_finger(), [0.1, 0.2])


# --- forward kinematics ----------------------------------------------------


def test_middle_finger_extended_tip():
    hand = default_hand()
    t = forward_transform(hand.fingers["middle"], [0.0], "TIP")
    np.testing.assert_allclose(t.translation, [127.5, 0.0, 0.0], atol=1e-9)


def test_quarter_turn_about_z():
    t = forward_transform(one_hinge(), [np.pi / 2], "TIP")
    np.testing.assert_allclose(t.translation, [0, 10, 0], atol=1e-12)


def test_unknown_site():
    with pytest.raises(InvalidInput):
        forward_transform(one_hinge(), [0.0], "PULP")


def _step_by_step(chain, q):
    """Independent oracle: explicit 4x4 products, one joint at a time."""
    angles = [j.coupling_ratio * q[j.driver_index] for j in chain.joints]
    m = chain.base.matrix
    for joint, link, a in zip(chain.joints, chain.links, angles):
        lo, hi = np.radians(joint.range_deg)
        a = min(max(a, lo), hi)
        k = np.array(joint.axis)
        kx = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
        r = np.eye(3) + np.sin(a) * kx + (1 - np.cos(a)) * kx @ kx
        rot = np.eye(4)
        rot[:3, :3] = r
        m = m @ rot
        yield m
        shift = np.eye(4)
        shift[0, 3] = link.length
        m = m @ shift


def test_index_finger_matches_matrix_products():
    chain = default_hand().fingers["index"]
    q = np.radians([45.0])
    frames = list(_step_by_step(chain, q))
    site = chain.site("TIP")
    expect = frames[site.link] @ site.offset.matrix
    got = forward_transform(chain, q, "TIP")
    np.testing.assert_allclose(got.matrix, expect, atol=1e-9)


def test_forward_is_bitwise_deterministic():
    chain = default_hand().thumb
    q = np.radians([10.0, 20.0, 30.0])
    a = forward_transform(chain, q, "PULP")
    b = forward_transform(chain, q, "PULP")
    assert a == b


# --- Jacobian --------------------------------------------------------------


def test_planar_hinge_column():
    jac = linear_jacobian(one_hinge(), [0.0], "TIP")
    np.testing.assert_allclose(jac[:, 0], [0, 10, 0], atol=1e-12)


def _fd_jacobian(chain, q, site, h=1e-6):
    cols = []
    for v in range(len(q)):
        dq = np.zeros_like(q)
        dq[v] = h
        plus = forward_transform(chain, q + dq, site).translation
        minus = forward_transform(chain, q - dq, site).translation
        cols.append((plus - minus) / (2 * h))
    return np.stack(cols, axis=-1)


@pytest.mark.parametrize("name", ["thumb", "index", "middle", "ring", "little"])
def test_jacobian_matches_finite_differences(name):
    hand = default_hand()
    chain = hand.chain(name)
    rng = np.random.default_rng(7)
    lo, hi = chain.bounds
    site = "PULP" if name == "thumb" else "TIP"
    for _ in range(20):
        # Keep the +-h stencil inside the range so no hinge saturates.
        q = rng.uniform(lo + 1e-3, hi - 1e-3)
        fd = _fd_jacobian(chain, q, site)
        jac = linear_jacobian(chain, q, site)
        assert np.abs(jac - fd).max() / np.abs(fd).max() < 1e-5


def test_fully_coupled_column_is_sum_of_hinge_columns():
    chain = coupled_finger()
    q = np.radians([25.0])
    tip = forward_transform(chain, q, "TIP").translation
    frames = list(_step_by_step(chain, q))
    total = np.zeros(3)
    for f in frames:
        axis = f[:3, :3] @ np.array([0, 1, 0])
        total += np.cross(axis, tip - f[:3, 3])
    np.testing.assert_allclose(linear_jacobian(chain, q, "TIP")[:, 0], total, atol=1e-9)


# --- pseudoinverse -----------------------------------------------------------


def test_pinv_identity_padded():
    j = np.hstack([np.eye(3), np.zeros((3, 1))])
    np.testing.assert_allclose(pseudoinverse(j), j.T, atol=1e-12)


def test_pinv_zero():
    np.testing.assert_array_equal(pseudoinverse(np.zeros((3, 2))), np.zeros((2, 3)))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 5))
def test_pinv_moore_penrose(seed, cols):
    j = np.random.default_rng(seed).normal(size=(3, cols)) * 50
    p = pseudoinverse(j)
    scale = max(np.abs(j).max(), 1.0)
    assert np.abs(j @ p @ j - j).max() < 1e-9 * scale
    assert np.abs(p @ j @ p - p).max() < 1e-9 * max(np.abs(p).max(), 1.0)


def test_pinv_rank_deficient():
    j = np.array([[1.0, 2.0], [2.0, 4.0], [0.0, 0.0]])
    p = pseudoinverse(j)
    np.testing.assert_allclose(j @ p @ j, j, atol=1e-12)
    np.testing.assert_allclose(p, np.linalg.pinv(j), atol=1e-12)


# --- capsule distance --------------------------------------------------------


def test_parallel_capsules():
    a = np.array([[0, 0, 0], [1, 0, 0]], float)
    b = a + [0, 5, 0]
    assert capsule_distance(a, 1.0, b, 1.0) == pytest.approx(3.0)


def test_coincident_capsules():
    a = np.array([[0, 0, 0], [3, 1, 2]], float)
    assert capsule_distance(a, 1.5, a, 2.0) == pytest.approx(-3.5)


def test_sphere_is_point_capsule():
    a = np.array([[0, 0, 0], [0, 0, 0]], float)
    b = np.array([[3, 4, 0], [3, 4, 0]], float)
    assert capsule_distance(a, 1.0, b, 1.0) == pytest.approx(3.0)


@settings(max_examples=25, deadline=None)
@given(st.lists(coords, min_size=12, max_size=12))
def test_skew_segments_match_dense_sampling(c):
    p0, p1, q0, q1 = (np.array(c[i : i + 3]) for i in range(0, 12, 3))
    s = np.linspace(0, 1, 10_001)[:, None]
    pa = p0 + s * (p1 - p0)
    pb = q0 + s * (q1 - q0)
    # Dense oracle: exact distance from every sample of A to segment B and back.
    da = segment_distance(pa, pa, q0, q1).min()
    db = segment_distance(pb, pb, p0, p1).min()
    got = segment_distance(p0, p1, q0, q1)
    assert got <= min(da, db) + 1e-9
    # Sampling resolution bounds how far the oracle can sit above the truth.
    step = max(np.linalg.norm(p1 - p0), np.linalg.norm(q1 - q0)) / 10_000
    assert got >= min(da, db) - step - 1e-9


def test_skew_segments_dense_sampling_then_polish():
    rng = np.random.default_rng(3)
    for _ in range(3):
        p0, p1, q0, q1 = rng.uniform(-20, 20, size=(4, 3))
        s = np.linspace(0, 1, 2_001)
        pa = p0 + s[:, None] * (p1 - p0)
        pb = q0 + s[:, None] * (q1 - q0)
        d2 = ((pa[:, None, :] - pb[None, :, :]) ** 2).sum(-1)
        i, j = np.unravel_index(np.argmin(d2), d2.shape)

        def dist(st_):
            return np.linalg.norm(p0 + st_[0] * (p1 - p0) - q0 - st_[1] * (q1 - q0))

        res = minimize(dist, [s[i], s[j]], bounds=[(0, 1), (0, 1)], method="L-BFGS-B",
                       options={"ftol": 1e-15, "gtol": 1e-12})
        assert float(segment_distance(p0, p1, q0, q1)) == pytest.approx(res.fun, abs=1e-6)
