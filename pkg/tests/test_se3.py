import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import random_pose
from silbench.errors import InsufficientSamplesError, NoSamplesError
from silbench.se3 import (
    IDENTITY,
    Pose,
    PoseWithCovariance,
    compose,
    geodesic_distance,
    invert,
    pose_covariance,
    pose_error,
    pose_mean,
    quat_from_axis_angle,
    quat_from_rotvec,
    quat_mul,
    quat_to_matrix,
    quat_to_rotvec,
    slerp,
)


def close_pose(a, b, tol=1e-9):
    return np.allclose(a.position, b.position, atol=tol) and geodesic_distance(a.orientation, b.orientation) < tol


unit = st.floats(-1.0, 1.0, allow_nan=False)
rotvecs = st.tuples(unit, unit, unit).map(lambda v: np.array(v) * 3.0)
positions = st.tuples(unit, unit, unit).map(lambda v: np.array(v) * 5.0)
poses = st.builds(lambda p, r: Pose(p, quat_from_rotvec(r)), positions, rotvecs)


def test_pose_quaternion_is_unit_with_positive_w():
    p = Pose([0, 0, 0], [-2.0, 0.0, 0.0, 0.0])
    assert np.allclose(p.orientation, [1, 0, 0, 0])
    assert abs(np.linalg.norm(Pose([0, 0, 0], [0.3, -0.4, 0.1, 0.2]).orientation) - 1) < 1e-12


def test_pose_rejects_nonfinite():
    with pytest.raises(ValueError):
        Pose([0, math.nan, 0], [1, 0, 0, 0])
    with pytest.raises(ValueError):
        Pose([0, 0, 0], [0, 0, 0, 0])


def test_seven_number_serialization_round_trip(rng):
    p = random_pose(rng)
    v = p.to_list()
    assert len(v) == 7
    assert v[:3] == p.position.tolist() and v[3:] == p.orientation.tolist()
    assert close_pose(Pose.from_list(v), p, 1e-15)


def test_compose_identity():
    assert close_pose(compose(IDENTITY, IDENTITY), IDENTITY)


def test_compose_with_inverse_is_identity(rng):
    for _ in range(20):
        t = random_pose(rng)
        assert close_pose(compose(t, invert(t)), IDENTITY)


def test_compose_chain_matches_left_fold_and_matrices(rng):
    chain = [random_pose(rng) for _ in range(4)]
    left = compose(compose(compose(chain[0], chain[1]), chain[2]), chain[3])
    right = compose(chain[0], compose(chain[1], compose(chain[2], chain[3])))
    m = chain[0].matrix() @ chain[1].matrix() @ chain[2].matrix() @ chain[3].matrix()
    assert close_pose(left, right)
    assert np.allclose(left.matrix(), m, atol=1e-9)


def test_compose_follows_frame_convention():
    # T_B^A translates by x then rotates 90 deg about z; a point at x=1 in C lands at (1, 1, 0) in A
    a = Pose([1, 0, 0], quat_from_axis_angle([0, 0, 1], math.pi / 2))
    b = Pose([1, 0, 0], [1, 0, 0, 0])
    assert np.allclose(compose(a, b).position, [1, 1, 0])


def test_invert_examples(rng):
    assert close_pose(invert(IDENTITY), IDENTITY)
    assert np.allclose(invert(Pose([1, 2, 3], [1, 0, 0, 0])).position, [-1, -2, -3])
    for _ in range(20):
        t = random_pose(rng)
        assert close_pose(compose(invert(t), t), IDENTITY)


def test_slerp_examples():
    q = quat_from_rotvec([0.2, -0.1, 0.4])
    assert np.allclose(slerp(q, q, 0.5), q, atol=1e-12)
    half = slerp(IDENTITY.orientation, quat_from_axis_angle([0, 0, 1], math.pi / 2), 0.5)
    assert geodesic_distance(half, quat_from_axis_angle([0, 0, 1], math.pi / 4)) < 1e-9
    assert np.allclose(slerp(q, -q, 0.7), q, atol=1e-12) or np.allclose(slerp(q, -q, 0.7), -q, atol=1e-12)


def test_slerp_sign_flip_against_axis_angle_oracle(rng):
    for _ in range(50):
        q0 = quat_from_rotvec(rng.normal(size=3))
        delta = quat_from_rotvec(rng.normal(size=3) * 0.8)
        q1 = -quat_mul(q0, delta)  # opposite hemisphere, same rotation
        u = rng.uniform()
        rel = quat_to_rotvec(delta)  # shorter arc, |angle| <= pi
        oracle = quat_mul(q0, quat_from_rotvec(rel * u))
        assert geodesic_distance(slerp(q0, q1, u), oracle) < 1e-9


def test_slerp_endpoints_and_domain():
    q0 = quat_from_rotvec([0.1, 0.2, 0.3])
    q1 = quat_from_rotvec([-0.3, 0.0, 1.0])
    assert geodesic_distance(slerp(q0, q1, 0.0), q0) < 1e-9
    assert geodesic_distance(slerp(q0, q1, 1.0), q1) < 1e-9
    with pytest.raises(ValueError):
        slerp(q0, q1, 1.5)


def test_slerp_near_antipodal_fallback_is_unit():
    q0 = np.array([1.0, 0.0, 0.0, 0.0])
    q1 = np.array([1e-8, 1.0, 0.0, 0.0])
    out = slerp(q0, q1, 0.3)
    assert abs(np.linalg.norm(out) - 1.0) < 1e-12


def test_pose_mean_examples():
    t = Pose([1, 2, 3], quat_from_rotvec([0.1, 0.2, 0.3]))
    assert close_pose(pose_mean([t] * 7), t)
    m = pose_mean([Pose([0, 0, 0], t.orientation), Pose([2, 0, 0], t.orientation)])
    assert np.allclose(m.position, [1, 0, 0])
    with pytest.raises(NoSamplesError, match="no samples"):
        pose_mean([])


def test_pose_mean_agrees_with_chordal_mean(rng):
    ref = quat_from_rotvec([0.4, -0.2, 1.0])
    qs = []
    while len(qs) < 50:
        v = rng.normal(size=3)
        v *= rng.uniform(0, math.radians(10)) / np.linalg.norm(v)
        qs.append(quat_mul(ref, quat_from_rotvec(v)))
    m = pose_mean([Pose([0, 0, 0], q) for q in qs]).orientation
    w, vecs = np.linalg.eigh(sum(np.outer(q, q) for q in qs))
    chordal = vecs[:, -1]
    assert math.degrees(geodesic_distance(m, chordal)) < 0.5


def test_geodesic_distance_examples(rng):
    q = quat_from_rotvec([0.3, 0.1, -0.5])
    assert geodesic_distance(q, q) == 0.0
    assert geodesic_distance(q, -q) == 0.0
    assert abs(geodesic_distance(IDENTITY.orientation, quat_from_axis_angle([1, 0, 0], math.pi / 2)) - math.pi / 2) < 1e-12
    for _ in range(50):
        a, b = quat_from_rotvec(rng.normal(size=3)), quat_from_rotvec(rng.normal(size=3))
        r = quat_to_matrix(a).T @ quat_to_matrix(b)
        oracle = math.acos(np.clip((np.trace(r) - 1) / 2, -1, 1))
        assert abs(geodesic_distance(a, b) - oracle) < 1e-6  # arccos of the trace loses precision near 0 and pi
        assert 0.0 <= geodesic_distance(a, b) <= math.pi


def test_pose_error_examples(rng):
    t = random_pose(rng)
    e = pose_error(t, t)
    assert e.translation == 0.0 and e.rotation == 0.0
    e = pose_error(Pose([0, 0, 0], t.orientation), Pose([3, 4, 0], t.orientation))
    assert abs(e.translation - 5.0) < 1e-12 and e.rotation < 1e-12
    for _ in range(20):
        a, b = random_pose(rng), random_pose(rng)
        rel = compose(invert(a), b)
        e = pose_error(a, b)
        assert abs(e.translation - np.linalg.norm(a.position - b.position)) < 1e-12
        assert abs(e.rotation - np.linalg.norm(quat_to_rotvec(rel.orientation))) < 1e-9


def test_pose_covariance_examples(rng):
    t = random_pose(rng)
    assert np.all(pose_covariance([t] * 5, t) == 0.0)
    c = pose_covariance([Pose([1, 0, 0], [1, 0, 0, 0]), Pose([-1, 0, 0], [1, 0, 0, 0])], IDENTITY)
    assert c[0, 0] == 1.0
    with pytest.raises(InsufficientSamplesError, match="insufficient samples"):
        pose_covariance([t], t)


def test_pose_covariance_monte_carlo():
    rng = np.random.default_rng(7)
    sig_t, sig_r = 0.05, math.radians(2.0)
    mean = Pose([1, 2, 3], quat_from_rotvec([0.1, 0.2, 0.3]))
    samples = [
        Pose(mean.position + rng.normal(0, sig_t, 3), quat_mul(mean.orientation, quat_from_rotvec(rng.normal(0, sig_r, 3))))
        for _ in range(100)
    ]
    d = np.diag(pose_covariance(samples, pose_mean(samples)))
    assert np.all(np.abs(d[:3] / sig_t**2 - 1) < 0.3)
    # body-frame rotation noise maps to Euler residuals with a comparable spread
    assert np.all(np.abs(d[3:] / sig_r**2 - 1) < 0.5)
    assert np.allclose(pose_covariance(samples[::-1], mean), pose_covariance(samples, mean), atol=1e-15)


def test_pose_with_covariance_invariants():
    with pytest.raises(ValueError):
        PoseWithCovariance(IDENTITY, np.diag([1, 1, 1, 1, 1, -1.0]))
    bad = np.eye(6)
    bad[0, 1] = 1e-6
    with pytest.raises(ValueError):
        PoseWithCovariance(IDENTITY, bad)


@given(poses, poses, poses)
@settings(max_examples=60, deadline=None)
def test_property_compose_associative(a, b, c):
    assert close_pose(compose(compose(a, b), c), compose(a, compose(b, c)))


@given(rotvecs, rotvecs, rotvecs)
@settings(max_examples=100, deadline=None)
def test_property_geodesic_is_metric(r0, r1, r2):
    a, b, c = (quat_from_rotvec(r) for r in (r0, r1, r2))
    assert geodesic_distance(a, b) == geodesic_distance(b, a)
    assert geodesic_distance(a, c) <= geodesic_distance(a, b) + geodesic_distance(b, c) + 1e-9
    assert geodesic_distance(a, a) == 0.0


@given(rotvecs, rotvecs, st.floats(0.0, 1.0))
@settings(max_examples=100, deadline=None)
def test_property_slerp_unit_norm(r0, r1, u):
    assert abs(np.linalg.norm(slerp(quat_from_rotvec(r0), quat_from_rotvec(r1), u)) - 1.0) < 1e-12


@given(st.integers(0, 10_000))
@settings(max_examples=30, deadline=None)
def test_property_pose_mean_left_equivariant(seed):
    rng = np.random.default_rng(seed)
    g = random_pose(rng)
    base = random_pose(rng)
    ts = [compose(base, Pose(rng.normal(0, 0.1, 3), quat_from_rotvec(rng.normal(0, 0.1, 3)))) for _ in range(8)]
    lhs = pose_mean([compose(g, t) for t in ts])
    rhs = compose(g, pose_mean(ts))
    assert close_pose(lhs, rhs)


@given(st.integers(0, 10_000))
@settings(max_examples=30, deadline=None)
def test_property_pose_covariance_order_invariant(seed):
    rng = np.random.default_rng(seed)
    ts = [random_pose(rng, 1.0) for _ in range(6)]
    m = pose_mean(ts)
    perm = rng.permutation(6)
    assert np.allclose(pose_covariance([ts[i] for i in perm], m), pose_covariance(ts, m), rtol=0, atol=1e-12)
