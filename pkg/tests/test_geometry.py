"""Pose algebra checked against independent 4x4 matrix oracles."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from densevo.geometry import (
    InvalidPoseError,
    Pose,
    Trajectory,
    accumulate,
    compose,
    inverse,
    matrix_to_quat,
    quat_to_matrix,
    relative,
    rotation_angle,
)


def random_pose(rng, t_scale=10.0):
    q = rng.normal(size=4)
    while np.linalg.norm(q) < 1e-3:
        q = rng.normal(size=4)
    return Pose(q, rng.uniform(-t_scale, t_scale, size=3))


def assert_pose_close(a, b, atol=1e-9):
    assert a.is_close(b, atol=atol), f"{a} != {b}"


unit_quats = st.tuples(
    *(st.floats(-1.0, 1.0, allow_nan=False) for _ in range(4))
).filter(lambda q: np.linalg.norm(q) > 1e-2)
translations = st.tuples(*(st.floats(-50.0, 50.0, allow_nan=False) for _ in range(3)))
poses = st.builds(lambda q, t: Pose(np.array(q), np.array(t)), unit_quats, translations)


class TestPoseBasics:
    def test_constructor_normalizes(self):
        p = Pose(np.array([2.0, 0.0, 0.0, 0.0]), np.zeros(3))
        assert np.linalg.norm(p.q) == pytest.approx(1.0, abs=1e-9)

    def test_constructor_forces_nonnegative_w(self):
        p = Pose(np.array([-1.0, 0.0, 0.0, 0.0]), np.zeros(3))
        assert p.q[0] > 0

    def test_nonfinite_rejected(self):
        with pytest.raises(InvalidPoseError):
            Pose(np.array([np.nan, 0, 0, 0]), np.zeros(3))
        with pytest.raises(InvalidPoseError):
            Pose(np.array([1.0, 0, 0, 0]), np.array([np.inf, 0, 0]))

    def test_zero_quaternion_rejected(self):
        with pytest.raises(InvalidPoseError):
            Pose(np.zeros(4), np.zeros(3))

    def test_matrix_round_trip(self):
        rng = np.random.default_rng(7)
        for _ in range(200):
            p = random_pose(rng)
            back = Pose.from_matrix(p.matrix())
            dq = min(np.abs(p.q - back.q).max(), np.abs(p.q + back.q).max())
            assert dq < 1e-9
            assert np.abs(p.t - back.t).max() < 1e-9

    def test_matrix_round_trip_near_pi_rotations(self):
        # exercises the non-trace branches of matrix_to_quat
        rng = np.random.default_rng(8)
        for _ in range(100):
            axis = rng.normal(size=3)
            axis /= np.linalg.norm(axis)
            angle = np.pi - rng.uniform(0, 1e-6)
            q = np.concatenate([[np.cos(angle / 2)], np.sin(angle / 2) * axis])
            p = Pose(q, np.zeros(3))
            back = Pose.from_matrix(p.matrix())
            assert_pose_close(p, back, atol=1e-7)

    def test_from_12_float_row_major(self):
        vals = [1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0]
        assert_pose_close(Pose.from_matrix(np.array(vals, dtype=float)), Pose.identity())


class TestCompose:
    def test_identity_neutral(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            p = random_pose(rng)
            assert_pose_close(compose(Pose.identity(), p), p)
            assert_pose_close(compose(p, Pose.identity()), p)

    def test_pure_translations_add(self):
        a = Pose(np.array([1.0, 0, 0, 0]), np.array([1.0, 2.0, 3.0]))
        b = Pose(np.array([1.0, 0, 0, 0]), np.array([-0.5, 4.0, 0.25]))
        assert_pose_close(compose(a, b), Pose(np.array([1.0, 0, 0, 0]), a.t + b.t))
        assert_pose_close(compose(b, a), compose(a, b))

    def test_matches_matrix_product_oracle(self):
        rng = np.random.default_rng(42)
        for _ in range(1000):
            a, b = random_pose(rng), random_pose(rng)
            expected = Pose.from_matrix(a.matrix() @ b.matrix())
            assert_pose_close(compose(a, b), expected)


class TestRelativeAccumulate:
    def test_relative_self_is_identity(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            p = random_pose(rng)
            assert_pose_close(relative(p, p), Pose.identity())

    def test_relative_from_identity(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            p = random_pose(rng)
            assert_pose_close(relative(Pose.identity(), p), p)

    def test_compose_round_trip(self):
        rng = np.random.default_rng(4)
        for _ in range(500):
            a, b = random_pose(rng), random_pose(rng)
            assert_pose_close(compose(a, relative(a, b)), b)

    def test_accumulate_empty(self):
        traj = accumulate([], Pose.identity())
        assert traj.frame_count == 1
        assert_pose_close(traj[0], Pose.identity())

    def test_accumulate_straight_line(self):
        step = Pose(np.array([1.0, 0, 0, 0]), np.array([1.0, 0, 0]))
        traj = accumulate([step] * 5)
        for i, p in enumerate(traj):
            assert np.allclose(p.t, [i, 0, 0], atol=1e-12)

    def test_accumulate_inversion_oracle(self):
        rng = np.random.default_rng(5)
        rels = [random_pose(rng, t_scale=1.0) for _ in range(50)]
        traj = accumulate(rels, random_pose(rng))
        assert traj.frame_count == 51
        for i, rel in enumerate(rels):
            assert_pose_close(relative(traj[i], traj[i + 1]), rel)


class TestRotationAngle:
    def test_identity_zero(self):
        assert rotation_angle(Pose.identity()) == 0.0

    def test_quarter_turn_about_z(self):
        q = np.array([np.cos(np.pi / 4), 0.0, 0.0, np.sin(np.pi / 4)])
        p = Pose(q, np.zeros(3))
        assert rotation_angle(p) == pytest.approx(np.pi / 2, abs=1e-12)

    def test_matches_trace_oracle(self):
        rng = np.random.default_rng(6)
        for _ in range(500):
            p = random_pose(rng)
            r = p.rotation()
            expected = np.arccos(np.clip((np.trace(r) - 1.0) / 2.0, -1.0, 1.0))
            assert rotation_angle(p) == pytest.approx(expected, abs=1e-7)

    def test_self_cancellation(self):
        rng = np.random.default_rng(9)
        for _ in range(20):
            p = random_pose(rng)
            assert rotation_angle(compose(p, inverse(p))) < 1e-12


class TestAlgebraicProperties:
    @settings(max_examples=150, deadline=None)
    @given(poses, poses, poses)
    def test_compose_associative(self, a, b, c):
        assert_pose_close(compose(compose(a, b), c), compose(a, compose(b, c)), atol=1e-9)

    @settings(max_examples=150, deadline=None)
    @given(poses)
    def test_double_inverse(self, p):
        assert_pose_close(inverse(inverse(p)), p)

    @settings(max_examples=150, deadline=None)
    @given(poses, poses, poses)
    def test_relative_left_invariance(self, g, a, b):
        lhs = relative(compose(g, a), compose(g, b))
        assert_pose_close(lhs, relative(a, b), atol=1e-9)

    def test_rotation_matrices_orthonormal(self):
        rng = np.random.default_rng(10)
        for _ in range(50):
            r = random_pose(rng).rotation()
            assert np.allclose(r @ r.T, np.eye(3), atol=1e-12)
            assert np.linalg.det(r) == pytest.approx(1.0, abs=1e-12)

    def test_quat_matrix_quat_round_trip(self):
        rng = np.random.default_rng(11)
        for _ in range(200):
            q = rng.normal(size=4)
            q /= np.linalg.norm(q)
            if q[0] < 0:
                q = -q
            back = matrix_to_quat(quat_to_matrix(q))
            assert np.abs(back - q).max() < 1e-9


class TestTrajectory:
    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            Trajectory(())

    def test_translations_shape(self):
        traj = accumulate([Pose(np.array([1.0, 0, 0, 0]), np.array([0.0, 0, 1.0]))] * 3)
        assert traj.translations().shape == (4, 3)
