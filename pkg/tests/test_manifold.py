"""Rotation/pose primitives: round trips, retraction Jacobians vs finite differences."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ctgbp.manifold import (
    Pose,
    UnitQuaternion,
    boxminus,
    boxplus,
    dboxplus_dtau,
    dboxplus_dtau_inv,
    quat_exp,
    quat_log,
    so3_left_jacobian,
    so3_left_jacobian_inv,
)


def random_rotation_tangent(rng, scale=np.pi - 0.1):
    v = rng.standard_normal(3)
    n = np.linalg.norm(v)
    return v / n * rng.uniform(0.0, scale)


def random_quaternion(rng):
    return quat_exp(random_rotation_tangent(rng))


def random_pose(rng):
    return Pose(random_quaternion(rng), rng.uniform(-5.0, 5.0, 3))


def numerical_dboxplus(x, tau, h=1e-6):
    """Central-difference oracle for dboxplus_dtau."""
    n = tau.shape[0]
    center = boxplus(x, tau)
    J = np.zeros((n, n))
    for j in range(n):
        e = np.zeros(n)
        e[j] = h
        plus = boxminus(boxplus(x, tau + e), center)
        minus = boxminus(boxplus(x, tau - e), center)
        J[:, j] = (plus - minus) / (2.0 * h)
    return J


class TestQuatExpLog:
    def test_exp_zero_is_identity(self):
        q = quat_exp(np.zeros(3))
        np.testing.assert_allclose(q.wxyz, [1.0, 0.0, 0.0, 0.0], atol=1e-15)

    def test_exp_half_turn_about_x(self):
        q = quat_exp(np.array([np.pi, 0.0, 0.0]))
        np.testing.assert_allclose(q.wxyz, [0.0, 1.0, 0.0, 0.0], atol=1e-12)

    def test_log_identity(self):
        np.testing.assert_allclose(quat_log(UnitQuaternion.identity()), np.zeros(3))

    def test_log_half_turn(self):
        q = UnitQuaternion(0.0, 1.0, 0.0, 0.0)
        np.testing.assert_allclose(quat_log(q), [np.pi, 0.0, 0.0], atol=1e-12)

    def test_round_trip_seeded(self):
        rng = np.random.default_rng(7)
        for _ in range(1000):
            v = random_rotation_tangent(rng)
            np.testing.assert_allclose(quat_log(quat_exp(v)), v, atol=1e-10)

    def test_unit_norm_after_operations(self):
        rng = np.random.default_rng(11)
        for _ in range(200):
            a, b = random_quaternion(rng), random_quaternion(rng)
            for q in (a * b, a.inverse(), (a * b).inverse() * a):
                assert abs(np.linalg.norm(q.wxyz) - 1.0) < 1e-12

    def test_canonical_w_nonnegative(self):
        rng = np.random.default_rng(3)
        for _ in range(200):
            q = random_quaternion(rng) * random_quaternion(rng)
            assert q.w >= 0.0

    def test_canonical_tie_break(self):
        q = UnitQuaternion(0.0, -1.0, 0.0, 0.0)
        np.testing.assert_allclose(q.wxyz, [0.0, 1.0, 0.0, 0.0])
        q = UnitQuaternion(0.0, 0.0, -0.6, -0.8)
        assert q.y > 0.0

    def test_log_norm_bounded_by_pi(self):
        rng = np.random.default_rng(5)
        for _ in range(500):
            q = random_quaternion(rng) * random_quaternion(rng)
            assert np.linalg.norm(quat_log(q)) <= np.pi + 1e-12

    @given(st.floats(1e-12, 1e-7))
    def test_small_angle_branch_consistent(self, theta):
        v = np.array([theta, 0.0, 0.0])
        np.testing.assert_allclose(quat_log(quat_exp(v)), v, rtol=1e-9, atol=1e-15)


class TestPose:
    def test_compose_associative(self):
        rng = np.random.default_rng(13)
        for _ in range(100):
            a, b, c = (random_pose(rng) for _ in range(3))
            lhs = (a * b) * c
            rhs = a * (b * c)
            np.testing.assert_allclose(lhs.rotation.wxyz, rhs.rotation.wxyz, atol=1e-12)
            np.testing.assert_allclose(lhs.translation, rhs.translation, atol=1e-12)

    def test_inverse_of_compose(self):
        rng = np.random.default_rng(17)
        for _ in range(100):
            a, b = random_pose(rng), random_pose(rng)
            lhs = (a * b).inverse()
            rhs = b.inverse() * a.inverse()
            np.testing.assert_allclose(lhs.rotation.wxyz, rhs.rotation.wxyz, atol=1e-12)
            np.testing.assert_allclose(lhs.translation, rhs.translation, atol=1e-12)

    def test_inverse_composes_to_identity(self):
        rng = np.random.default_rng(19)
        p = random_pose(rng)
        e = p * p.inverse()
        np.testing.assert_allclose(e.rotation.wxyz, [1, 0, 0, 0], atol=1e-12)
        np.testing.assert_allclose(e.translation, np.zeros(3), atol=1e-12)


class TestBoxOps:
    def test_boxplus_zero(self):
        rng = np.random.default_rng(23)
        p = random_pose(rng)
        q = boxplus(p, np.zeros(6))
        np.testing.assert_allclose(q.rotation.wxyz, p.rotation.wxyz, atol=1e-15)
        np.testing.assert_allclose(q.translation, p.translation, atol=1e-15)

    def test_boxplus_vector_is_addition(self):
        x = np.array([1.0, 2.0, 3.0])
        np.testing.assert_allclose(boxplus(x, np.array([0.1, -0.2, 0.3])), [1.1, 1.8, 3.3])

    def test_boxminus_self_is_zero(self):
        rng = np.random.default_rng(29)
        p = random_pose(rng)
        np.testing.assert_allclose(boxminus(p, p), np.zeros(6), atol=1e-12)

    def test_pure_translation_reduces_to_euclidean(self):
        a = Pose(UnitQuaternion.identity(), [1.0, 2.0, 3.0])
        b = Pose(UnitQuaternion.identity(), [0.5, 0.5, 0.5])
        np.testing.assert_allclose(boxminus(a, b), [0, 0, 0, 0.5, 1.5, 2.5], atol=1e-15)

    @pytest.mark.parametrize("kind", ["pose", "quaternion", "vector"])
    def test_round_trip_seeded(self, kind):
        rng = np.random.default_rng(31)
        for _ in range(1000):
            if kind == "pose":
                x = random_pose(rng)
                tau = np.concatenate([random_rotation_tangent(rng), rng.uniform(-3, 3, 3)])
            elif kind == "quaternion":
                x = random_quaternion(rng)
                tau = random_rotation_tangent(rng)
            else:
                x = rng.uniform(-3, 3, 3)
                tau = rng.uniform(-3, 3, 3)
            np.testing.assert_allclose(boxminus(boxplus(x, tau), x), tau, atol=1e-10)

    def test_dimension_mismatch_rejected(self):
        with pytest.raises(ValueError):
            boxplus(Pose.identity(), np.zeros(3))
        with pytest.raises(ValueError):
            boxplus(UnitQuaternion.identity(), np.zeros(6))
        with pytest.raises(ValueError):
            boxplus(np.zeros(3), np.zeros(4))


class TestDboxplus:
    def test_vector_is_identity(self):
        np.testing.assert_allclose(dboxplus_dtau(np.zeros(5), np.ones(5)), np.eye(5))

    def test_pose_at_zero_is_identity(self):
        rng = np.random.default_rng(37)
        np.testing.assert_allclose(dboxplus_dtau(random_pose(rng), np.zeros(6)), np.eye(6), atol=1e-15)

    @pytest.mark.parametrize("kind", ["pose", "quaternion", "vector"])
    def test_matches_finite_differences(self, kind):
        rng = np.random.default_rng(41)
        for _ in range(500):
            if kind == "pose":
                x = random_pose(rng)
                tau = np.concatenate([random_rotation_tangent(rng, 2.5), rng.uniform(-2, 2, 3)])
            elif kind == "quaternion":
                x = random_quaternion(rng)
                tau = random_rotation_tangent(rng, 2.5)
            else:
                x = rng.uniform(-2, 2, 4)
                tau = rng.uniform(-2, 2, 4)
            J = dboxplus_dtau(x, tau)
            J_num = numerical_dboxplus(x, tau)
            np.testing.assert_allclose(J, J_num, rtol=1e-5, atol=1e-6)

    def test_inverse_is_matrix_inverse(self):
        rng = np.random.default_rng(43)
        for _ in range(200):
            x = random_pose(rng)
            tau = np.concatenate([random_rotation_tangent(rng, 2.5), rng.uniform(-2, 2, 3)])
            J = dboxplus_dtau(x, tau)
            Jinv = dboxplus_dtau_inv(x, tau)
            np.testing.assert_allclose(J @ Jinv, np.eye(6), atol=1e-10)


class TestSo3Jacobians:
    @settings(max_examples=50)
    @given(st.integers(0, 10**9))
    def test_left_jacobian_definition(self, seed):
        """exp(w + d) == exp(J_l(w) d) exp(w) to first order."""
        rng = np.random.default_rng(seed)
        w = random_rotation_tangent(rng, 2.5)
        h = 1e-7
        J = so3_left_jacobian(w)
        for j in range(3):
            d = np.zeros(3)
            d[j] = h
            lhs = quat_exp(w + d)
            rhs = quat_exp(J @ d) * quat_exp(w)
            assert lhs.angle_to(rhs) < 1e-10

    def test_inverse_consistent(self):
        rng = np.random.default_rng(47)
        for _ in range(200):
            w = random_rotation_tangent(rng, 3.0)
            np.testing.assert_allclose(
                so3_left_jacobian(w) @ so3_left_jacobian_inv(w), np.eye(3), atol=1e-9)
