"""Shared builders for test chains and random geometry."""

import numpy as np
from scipy.spatial.transform import Rotation

from viewservo.kinematics import ChainModel, Pose, RevoluteJoint


def planar_2r_chain(l1=1.0, l2=1.0, endoscope_length=0.5) -> ChainModel:
    """Two z-axis joints in the xy plane; camera frame at the second link tip."""
    joints = (
        RevoluteJoint(Pose(np.eye(3), np.zeros(3)), np.array([0.0, 0.0, 1.0])),
        RevoluteJoint(Pose(np.eye(3), np.array([l1, 0.0, 0.0])), np.array([0.0, 0.0, 1.0])),
    )
    mount = Pose(np.eye(3), np.array([l2, 0.0, 0.0]))
    return ChainModel(joints=joints, endoscope_mount=mount, endoscope_length=endoscope_length)


def random_chain(rng: np.random.Generator, n_joints=None) -> ChainModel:
    n = int(n_joints if n_joints is not None else rng.integers(2, 9))
    joints = []
    for _ in range(n):
        R = Rotation.random(random_state=int(rng.integers(0, 2**31))).as_matrix()
        t = rng.uniform(-0.3, 0.3, size=3)
        axis = rng.normal(size=3)
        axis /= np.linalg.norm(axis)
        joints.append(RevoluteJoint(Pose(R, t), axis))
    mount_R = Rotation.random(random_state=int(rng.integers(0, 2**31))).as_matrix()
    mount = Pose(mount_R, rng.uniform(-0.2, 0.2, size=3))
    return ChainModel(joints=tuple(joints), endoscope_mount=mount, endoscope_length=float(rng.uniform(0.1, 0.6)))


def random_q(rng: np.random.Generator, chain: ChainModel) -> np.ndarray:
    return rng.uniform(-1.5, 1.5, size=chain.dof)


def look_down_pose(x, y, z, roll=0.0) -> Pose:
    """Camera at (x, y, z) with optical axis along world -z, optional roll."""
    base = np.array([[1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, -1.0]])
    c, s = np.cos(roll), np.sin(roll)
    rz = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    return Pose(base @ rz, np.array([x, y, z], dtype=float))


def analytic_pixel_homography(scene, cam_current: Pose, cam_target: Pose, K_current, K_target=None):
    """Ground-truth G mapping target pixels to current pixels for a planar scene.

    Built from the relative camera motion and the plane expressed in the
    target camera frame; independent of any estimation code.
    """
    K_target = K_current if K_target is None else K_target
    R_rel = cam_current.rotation.T @ cam_target.rotation
    t_rel = cam_current.rotation.T @ (cam_target.translation - cam_current.translation)
    n_w = scene.normal
    rho = n_w @ scene.plane_pose.translation
    n_t = cam_target.rotation.T @ n_w
    d_t = rho - n_w @ cam_target.translation
    H = R_rel + np.outer(t_rel, n_t) / d_t
    return K_current.as_matrix() @ H @ K_target.inverse_matrix()
