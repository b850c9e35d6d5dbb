"""Tests for homography normalization, task-error extraction, and the task Jacobian."""

import numpy as np
import pytest

from viewservo.exceptions import ConfigurationError, NumericError
from viewservo.homography import (
    NORMALIZED,
    PIXEL,
    CameraIntrinsics,
    ErrorSmoother,
    Homography,
    TaskError,
    normalize_homography,
    pixel_to_normalized,
    project_task,
    projection_matrix,
    smooth_error,
    task_error,
    task_jacobian,
)
from viewservo.kinematics import forward_kinematics, geometric_jacobian, rotation_about_axis

from helpers import random_chain, random_q

K_MAIN = CameraIntrinsics(fx=870.0, fy=870.0, cx=320.0, cy=240.0)


def plane_induced(R, t, n, d):
    """Ground-truth normalized homography for motion (R, t) against plane (n, d)."""
    return R + np.outer(t, n) / d


class TestCameraIntrinsics:
    def test_matrix_layout(self):
        K = CameraIntrinsics(fx=500.0, fy=510.0, cx=320.0, cy=240.0)
        np.testing.assert_array_equal(K.as_matrix(), [[500, 0, 320], [0, 510, 240], [0, 0, 1]])

    def test_inverse_is_exact(self):
        K = CameraIntrinsics(fx=500.0, fy=510.0, cx=320.0, cy=240.0)
        np.testing.assert_allclose(K.inverse_matrix() @ K.as_matrix(), np.eye(3), atol=1e-14)

    def test_positive_focal_enforced(self):
        with pytest.raises(ConfigurationError):
            CameraIntrinsics(fx=0.0, fy=500.0, cx=0.0, cy=0.0)
        with pytest.raises(ConfigurationError):
            CameraIntrinsics(fx=500.0, fy=-1.0, cx=0.0, cy=0.0)

    def test_distortion_length_enforced(self):
        with pytest.raises(ConfigurationError):
            CameraIntrinsics(fx=1.0, fy=1.0, cx=0.0, cy=0.0, distortion=(0.1, 0.0))
        K = CameraIntrinsics(fx=1.0, fy=1.0, cx=0.0, cy=0.0, distortion=(0.1, 0.0, 0.0, 0.0, 0.0))
        assert K.has_distortion
        assert not K_MAIN.has_distortion


class TestHomographyType:
    def test_singular_matrix_rejected(self):
        with pytest.raises(NumericError):
            Homography(matrix=np.ones((3, 3)), frame_tag=PIXEL)

    def test_non_finite_rejected(self):
        m = np.eye(3)
        m[0, 0] = np.inf
        with pytest.raises(NumericError):
            Homography(matrix=m, frame_tag=PIXEL)

    def test_bad_tag_rejected(self):
        with pytest.raises(ConfigurationError):
            Homography(matrix=np.eye(3), frame_tag="screen")

    def test_wrong_shape_rejected(self):
        with pytest.raises(ConfigurationError):
            Homography(matrix=np.eye(4), frame_tag=PIXEL)


class TestNormalizeHomography:
    def test_identity_fixed_point(self):
        np.testing.assert_array_equal(normalize_homography(np.eye(3)), np.eye(3))

    def test_uniform_scale_removed(self):
        np.testing.assert_allclose(normalize_homography(2.0 * np.eye(3)), np.eye(3), atol=1e-15)

    def test_sign_flip_restores_positive_det(self):
        R = rotation_about_axis(np.array([0.0, 0.0, 1.0]), 0.7)
        np.testing.assert_allclose(normalize_homography(-R), R, atol=1e-15)

    def test_middle_singular_value_one_det_positive(self):
        rng = np.random.default_rng(13)
        for _ in range(50):
            H = rng.normal(size=(3, 3))
            if abs(np.linalg.det(H)) < 1e-6:
                continue
            out = normalize_homography(H)
            s = np.linalg.svd(out, compute_uv=False)
            assert s[1] == pytest.approx(1.0, abs=1e-12)
            assert np.linalg.det(out) > 0

    def test_singular_input_raises(self):
        with pytest.raises(NumericError):
            normalize_homography(np.diag([1.0, 1.0, 0.0]))


class TestPixelToNormalized:
    def test_identity_intrinsics_passthrough(self):
        K = CameraIntrinsics(fx=1.0, fy=1.0, cx=0.0, cy=0.0)
        B = plane_induced(rotation_about_axis(np.array([0.0, 1.0, 0.0]), 0.2), np.array([0.01, 0, 0]), np.array([0.0, 0, 1]), 0.1)
        B = normalize_homography(B)
        G = Homography(matrix=B, frame_tag=PIXEL)
        H = pixel_to_normalized(G, K)
        assert H.frame_tag == NORMALIZED
        np.testing.assert_allclose(H.matrix, B, atol=1e-12)

    def test_recovers_conjugated_matrix(self):
        B = normalize_homography(plane_induced(rotation_about_axis(np.array([1.0, 0, 0]), 0.1), np.array([0, 0.02, 0.01]), np.array([0.0, 0, 1]), 0.15))
        K = K_MAIN.as_matrix()
        G = Homography(matrix=K @ B @ K_MAIN.inverse_matrix(), frame_tag=PIXEL)
        H = pixel_to_normalized(G, K_MAIN)
        np.testing.assert_allclose(H.matrix, B, atol=1e-10)

    def test_round_trip_up_to_scale(self):
        rng = np.random.default_rng(31)
        for _ in range(20):
            M = rng.normal(size=(3, 3))
            if abs(np.linalg.det(M)) < 1e-3:
                continue
            G = Homography(matrix=M, frame_tag=PIXEL)
            H = pixel_to_normalized(G, K_MAIN)
            back = K_MAIN.as_matrix() @ H.matrix @ K_MAIN.inverse_matrix()
            # compare direction only: normalize both by Frobenius norm and sign
            a = M / np.linalg.norm(M)
            b = back / np.linalg.norm(back)
            if np.sum(a * b) < 0:
                b = -b
            np.testing.assert_allclose(a, b, atol=1e-9)

    def test_distinct_target_intrinsics(self):
        # with differing view intrinsics the conjugation is K_cur^-1 G K_tgt
        K_tgt = CameraIntrinsics(fx=500.0, fy=500.0, cx=184.0, cy=138.0)
        B = normalize_homography(plane_induced(np.eye(3), np.array([0.005, 0, 0]), np.array([0.0, 0, 1]), 0.2))
        G_matrix = K_MAIN.as_matrix() @ B @ K_tgt.inverse_matrix()
        H = pixel_to_normalized(Homography(matrix=G_matrix, frame_tag=PIXEL), K_MAIN, K_target=K_tgt)
        np.testing.assert_allclose(H.matrix, B, atol=1e-10)

    def test_normalized_input_rejected(self):
        H = Homography(matrix=np.eye(3), frame_tag=NORMALIZED)
        with pytest.raises(ConfigurationError):
            pixel_to_normalized(H, K_MAIN)


PRINCIPAL_RAY = np.array([0.0, 0.0, 1.0])


class TestTaskError:
    def test_identity_gives_exact_zero(self):
        err = task_error(Homography(matrix=np.eye(3), frame_tag=NORMALIZED), PRINCIPAL_RAY)
        assert np.array_equal(err.e_v, np.zeros(3))
        assert np.array_equal(err.e_w, np.zeros(3))

    def test_z_rotation_30_degrees(self):
        H = Homography(matrix=rotation_about_axis(np.array([0.0, 0, 1]), np.deg2rad(30)), frame_tag=NORMALIZED)
        err = task_error(H, PRINCIPAL_RAY)
        # |e_w| = 2 sin(30 deg) = 1, along +z
        np.testing.assert_allclose(err.e_w, [0.0, 0.0, 1.0], atol=1e-9)
        np.testing.assert_allclose(err.e_v, np.zeros(3), atol=1e-15)

    def test_planar_translation(self):
        t = np.array([0.01, 0.0, 0.0])
        n = np.array([0.0, 0.0, 1.0])
        d = 0.1
        H = Homography(matrix=normalize_homography(plane_induced(np.eye(3), t, n, d)), frame_tag=NORMALIZED)
        err = task_error(H, PRINCIPAL_RAY)
        np.testing.assert_allclose(err.e_v, t / d, atol=1e-9)
        # skew part of I + t n^T/d is nonzero: e_w = n x t / d
        np.testing.assert_allclose(err.e_w, np.cross(n, t) / d, atol=1e-9)

    def test_pure_rotation_recovers_axis_times_two_sine(self):
        rng = np.random.default_rng(23)
        for _ in range(40):
            axis = rng.normal(size=3)
            axis /= np.linalg.norm(axis)
            theta = rng.uniform(np.deg2rad(1), np.deg2rad(89))
            H = Homography(matrix=rotation_about_axis(axis, theta), frame_tag=NORMALIZED)
            err = task_error(H, PRINCIPAL_RAY)
            np.testing.assert_allclose(err.e_w, 2.0 * np.sin(theta) * axis, atol=1e-9)

    def test_m_star_third_component_enforced(self):
        H = Homography(matrix=np.eye(3), frame_tag=NORMALIZED)
        with pytest.raises(ConfigurationError):
            task_error(H, np.array([0.0, 0.0, 2.0]))

    def test_pixel_input_rejected(self):
        with pytest.raises(ConfigurationError):
            task_error(Homography(matrix=np.eye(3), frame_tag=PIXEL), PRINCIPAL_RAY)

    def test_projection_consistency_enforced(self):
        with pytest.raises(ConfigurationError):
            TaskError(e_v=np.ones(3), e_w=np.ones(3), mode="b", projected=np.zeros(4))
        with pytest.raises(ConfigurationError):
            TaskError(e_v=np.ones(3), e_w=np.ones(3), mode="b", projected=None)

    def test_project_method(self):
        err = TaskError(e_v=np.array([1.0, 2, 3]), e_w=np.array([4.0, 5, 6]))
        full = err.project("b")
        np.testing.assert_array_equal(full.projected, [3, 4, 5, 6])
        assert full.mode == "b"


class TestProjectTask:
    def test_mode_a_pattern(self):
        np.testing.assert_array_equal(project_task(np.array([1.0, 2, 3]), np.array([4.0, 5, 6]), "a"), [1, 2, 3, 6])

    def test_mode_b_pattern(self):
        np.testing.assert_array_equal(project_task(np.array([1.0, 2, 3]), np.array([4.0, 5, 6]), "b"), [3, 4, 5, 6])

    def test_zero_maps_to_zero(self):
        for mode in ("a", "b"):
            assert np.array_equal(project_task(np.zeros(3), np.zeros(3), mode), np.zeros(4))

    def test_selecting_twice_equals_once(self):
        # pad the projected vector back to 6 components, re-project, compare
        e_v = np.array([1.0, 2, 3])
        e_w = np.array([4.0, 5, 6])
        for mode, rows in (("a", (0, 1, 2, 5)), ("b", (2, 3, 4, 5))):
            once = project_task(e_v, e_w, mode)
            padded = np.zeros(6)
            padded[list(rows)] = once
            again = project_task(padded[:3], padded[3:], mode)
            np.testing.assert_array_equal(again, once)

    def test_unknown_mode_rejected(self):
        with pytest.raises(ConfigurationError):
            project_task(np.zeros(3), np.zeros(3), "c")


def camera_body_twist_fd(chain, q, joint, h=1e-3):
    """Five-point-stencil derivative of the camera pose along one joint,
    mapped to the body twist (Rᵀ·ṗ, vee(RᵀṘ)). Independent of geometric_jacobian."""

    def cam(t):
        dq = np.zeros_like(q)
        dq[joint] = t
        return forward_kinematics(chain, q + dq)[1]

    def stencil(extract):
        return (-extract(cam(2 * h)) + 8 * extract(cam(h)) - 8 * extract(cam(-h)) + extract(cam(-2 * h))) / (12 * h)

    pose = forward_kinematics(chain, q)[1]
    R = pose.rotation
    p_dot = stencil(lambda c: c.translation)
    R_dot = stencil(lambda c: c.rotation)
    A = R.T @ R_dot
    A = (A - A.T) / 2.0
    omega_body = np.array([A[2, 1], A[0, 2], A[1, 0]])
    return np.concatenate([R.T @ p_dot, omega_body])


class TestTaskJacobian:
    def test_identity_inputs_give_projector(self):
        for mode in ("a", "b"):
            J = task_jacobian(np.eye(6), np.eye(3), mode)
            np.testing.assert_array_equal(J, projection_matrix(mode))

    def test_matches_body_twist_oracle(self):
        rng = np.random.default_rng(37)
        for _ in range(6):
            chain = random_chain(rng)
            q = random_q(rng, chain)
            pose = forward_kinematics(chain, q)[1]
            J_cam = geometric_jacobian(chain, q, pose.translation)
            for mode, rows in (("a", (0, 1, 2, 5)), ("b", (2, 3, 4, 5))):
                J_t = task_jacobian(J_cam, pose.rotation, mode)
                for j in range(chain.dof):
                    twist = camera_body_twist_fd(chain, q, j)
                    np.testing.assert_allclose(J_t[:, j], twist[list(rows)], atol=1e-9)

    def test_dimension_mismatch_raises(self):
        with pytest.raises(ConfigurationError):
            task_jacobian(np.eye(5), np.eye(3), "a")

    def test_non_orthonormal_rotation_raises(self):
        with pytest.raises(ConfigurationError):
            task_jacobian(np.eye(6), 2.0 * np.eye(3), "a")


class TestErrorSmoother:
    def test_constant_input_is_fixed_point(self):
        sm = ErrorSmoother()
        c = np.array([1.0, -2.0, 3.0, 0.5])
        for _ in range(15):
            out = smooth_error(sm, c)
        np.testing.assert_array_equal(out, c)

    def test_alternating_cancels_over_full_buffer(self):
        sm = ErrorSmoother(buffer_len=10)
        out = None
        for i in range(10):
            sign = 1.0 if i % 2 == 0 else -1.0
            out = smooth_error(sm, sign * np.ones(4))
        np.testing.assert_allclose(out, np.zeros(4), atol=1e-15)

    def test_ramp_mean(self):
        sm = ErrorSmoother(buffer_len=10)
        for k in range(1, 11):
            out = smooth_error(sm, np.full(4, float(k)))
        np.testing.assert_allclose(out, np.full(4, 5.5), atol=1e-15)

    def test_partial_buffer_averages_present_entries(self):
        sm = ErrorSmoother(buffer_len=10)
        smooth_error(sm, np.full(4, 1.0))
        smooth_error(sm, np.full(4, 2.0))
        out = smooth_error(sm, np.full(4, 6.0))
        np.testing.assert_allclose(out, np.full(4, 3.0), atol=1e-15)
        assert len(sm) == 3

    def test_oldest_entry_evicted(self):
        sm = ErrorSmoother(buffer_len=3)
        for v in (9.0, 1.0, 2.0, 3.0):
            out = smooth_error(sm, np.full(4, v))
        np.testing.assert_allclose(out, np.full(4, 2.0), atol=1e-15)

    def test_reset(self):
        sm = ErrorSmoother(buffer_len=5)
        smooth_error(sm, np.ones(4))
        sm.reset()
        assert len(sm) == 0
        out = smooth_error(sm, np.full(4, 7.0))
        np.testing.assert_array_equal(out, np.full(4, 7.0))

    def test_wrong_dimension_rejected(self):
        sm = ErrorSmoother()
        with pytest.raises(ConfigurationError):
            smooth_error(sm, np.ones(3))

    def test_bad_length_rejected(self):
        with pytest.raises(ConfigurationError):
            ErrorSmoother(buffer_len=0)
