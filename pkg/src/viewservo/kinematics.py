"""Serial revolute-joint chain: forward kinematics and geometric Jacobians.

Frames: every pose is expressed in the fixed world frame W. The chain ends in
a rigid endoscope whose distal camera frame C sits at the mount transform past
the last joint; the proximal shaft point lies behind C along the negative
optical axis (camera +z) at the endoscope length.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import yaml

from .exceptions import ConfigurationError

ROT_TOL = 1e-9


def rotation_about_axis(axis: np.ndarray, angle: float) -> np.ndarray:
    """Rodrigues rotation matrix for a unit axis."""
    axis = np.asarray(axis, dtype=float)
    kx, ky, kz = axis
    K = np.array([[0.0, -kz, ky], [kz, 0.0, -kx], [-ky, kx, 0.0]])
    return np.eye(3) + np.sin(angle) * K + (1.0 - np.cos(angle)) * (K @ K)


def rpy_matrix(roll: float, pitch: float, yaw: float) -> np.ndarray:
    """Rotation from roll-pitch-yaw (X, then Y, then Z, extrinsic)."""
    rx = rotation_about_axis(np.array([1.0, 0.0, 0.0]), roll)
    ry = rotation_about_axis(np.array([0.0, 1.0, 0.0]), pitch)
    rz = rotation_about_axis(np.array([0.0, 0.0, 1.0]), yaw)
    return rz @ ry @ rx


@dataclass(frozen=True)
class Pose:
    """Rigid transform: rotation (3x3, det +1) and translation (meters) in W."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=float)
        t = np.asarray(self.translation, dtype=float)
        if R.shape != (3, 3) or t.shape != (3,):
            raise ConfigurationError(f"pose needs 3x3 rotation and 3-vector, got {R.shape}, {t.shape}")
        if np.max(np.abs(R.T @ R - np.eye(3))) > ROT_TOL:
            raise ConfigurationError("rotation is not orthonormal")
        if abs(np.linalg.det(R) - 1.0) > ROT_TOL:
            raise ConfigurationError("rotation determinant is not +1")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    def transform_point(self, p: np.ndarray) -> np.ndarray:
        return self.rotation @ np.asarray(p, dtype=float) + self.translation

    def compose(self, other: "Pose") -> "Pose":
        return Pose(self.rotation @ other.rotation, self.rotation @ other.translation + self.translation)

    def inverse(self) -> "Pose":
        return Pose(self.rotation.T, -self.rotation.T @ self.translation)

    @staticmethod
    def identity() -> "Pose":
        return Pose(np.eye(3), np.zeros(3))


@dataclass(frozen=True)
class RevoluteJoint:
    """Fixed parent-to-joint transform followed by rotation about a unit axis."""

    origin: Pose
    axis: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.axis, dtype=float)
        if a.shape != (3,):
            raise ConfigurationError("joint axis must be a 3-vector")
        n = np.linalg.norm(a)
        if abs(n - 1.0) > 1e-9:
            raise ConfigurationError(f"joint axis must be unit-norm, got |axis| = {n}")
        object.__setattr__(self, "axis", a)


@dataclass(frozen=True)
class ChainModel:
    """Serial chain of revolute joints carrying an endoscope.

    ``endoscope_mount`` maps the last joint frame to the camera frame C; the
    shaft's proximal point lies ``endoscope_length`` behind C along -z.
    Servo control additionally needs >= 6 joints (checked by the controller
    layer, not here, so short chains remain usable for analysis).
    """

    joints: tuple[RevoluteJoint, ...]
    endoscope_mount: Pose
    endoscope_length: float
    joint_limits: tuple[tuple[float, float], ...] | None = None

    def __post_init__(self):
        if len(self.joints) < 1:
            raise ConfigurationError("chain needs at least one joint")
        if self.endoscope_length <= 0:
            raise ConfigurationError("endoscope_length must be positive")
        if self.joint_limits is not None and len(self.joint_limits) != len(self.joints):
            raise ConfigurationError("joint_limits length must match joint count")
        object.__setattr__(self, "joints", tuple(self.joints))

    @property
    def dof(self) -> int:
        return len(self.joints)


@dataclass
class JointConfig:
    """Joint angles in radians, one per chain joint, with optional limits."""

    q: np.ndarray
    limits: tuple[tuple[float, float], ...] | None = None

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=float).reshape(-1)
        if self.limits is not None:
            if len(self.limits) != self.q.shape[0]:
                raise ConfigurationError("limits length must match q length")
            for k, (lo, hi) in enumerate(self.limits):
                if not (lo <= self.q[k] <= hi):
                    raise ConfigurationError(f"joint {k} angle {self.q[k]:.4f} outside [{lo}, {hi}]")

    def validate(self, chain: ChainModel) -> None:
        if self.q.shape[0] != chain.dof:
            raise ConfigurationError(f"expected {chain.dof} joint angles, got {self.q.shape[0]}")


def _as_q(q) -> np.ndarray:
    if isinstance(q, JointConfig):
        return q.q
    return np.asarray(q, dtype=float).reshape(-1)


def joint_frames(chain: ChainModel, q) -> list[Pose]:
    """World pose of every joint frame (after its rotation), last entry is the flange."""
    qv = _as_q(q)
    if qv.shape[0] != chain.dof:
        raise ConfigurationError(f"expected {chain.dof} joint angles, got {qv.shape[0]}")
    pose = Pose.identity()
    frames = []
    for joint, angle in zip(chain.joints, qv):
        pose = pose.compose(joint.origin).compose(Pose(rotation_about_axis(joint.axis, angle), np.zeros(3)))
        frames.append(pose)
    return frames


def forward_kinematics(chain: ChainModel, q) -> tuple[Pose, Pose]:
    """Poses of the endoscope proximal point and the camera frame C.

    Both share the camera rotation; the proximal point sits endoscope_length
    behind the camera along its -z (negative optical axis).
    """
    flange = joint_frames(chain, q)[-1]
    camera = flange.compose(chain.endoscope_mount)
    optical_axis = camera.rotation[:, 2]
    proximal = Pose(camera.rotation, camera.translation - chain.endoscope_length * optical_axis)
    return proximal, camera


def geometric_jacobian(chain: ChainModel, q, point: np.ndarray, n_joints: int | None = None) -> np.ndarray:
    """6xDOF geometric Jacobian of a world point rigidly attached to the chain.

    Rows 0-2 map joint rates to the point's translational velocity, rows 3-5
    to the angular velocity. ``n_joints`` limits which joints move the point
    (attachment to an intermediate frame); columns past it are zero. Defaults
    to all joints (point carried by the endoscope body).
    """
    point = np.asarray(point, dtype=float).reshape(3)
    frames = joint_frames(chain, q)
    n = chain.dof
    if n_joints is None:
        n_joints = n
    if not (0 <= n_joints <= n):
        raise ConfigurationError(f"n_joints must be in [0, {n}]")
    J = np.zeros((6, n))
    for k in range(n_joints):
        frame = frames[k]
        axis_w = frame.rotation @ chain.joints[k].axis
        J[:3, k] = np.cross(axis_w, point - frame.translation)
        J[3:, k] = axis_w
    return J


def translational_jacobian(J: np.ndarray) -> np.ndarray:
    """Top three rows (translational block) of a 6-row Jacobian."""
    J = np.asarray(J, dtype=float)
    if J.shape[0] != 6:
        raise ConfigurationError(f"expected a 6-row Jacobian, got {J.shape}")
    return J[:3, :]


def default_chain() -> ChainModel:
    """Representative 7-joint arm (alternating z/y axes) with a 0.35 m endoscope."""
    offsets = [0.340, 0.0, 0.400, 0.0, 0.400, 0.0, 0.126]
    axes = [
        [0.0, 0.0, 1.0],
        [0.0, 1.0, 0.0],
        [0.0, 0.0, 1.0],
        [0.0, -1.0, 0.0],
        [0.0, 0.0, 1.0],
        [0.0, 1.0, 0.0],
        [0.0, 0.0, 1.0],
    ]
    joints = tuple(
        RevoluteJoint(Pose(np.eye(3), np.array([0.0, 0.0, dz])), np.array(ax))
        for dz, ax in zip(offsets, axes)
    )
    limits_deg = [170, 120, 170, 120, 170, 120, 175]
    limits = tuple((-np.deg2rad(d), np.deg2rad(d)) for d in limits_deg)
    mount = Pose(np.eye(3), np.array([0.0, 0.0, 0.35]))
    return ChainModel(joints=joints, endoscope_mount=mount, endoscope_length=0.35, joint_limits=limits)


def chain_from_dict(data: dict) -> ChainModel:
    """Build a chain from the documented config mapping (see README schema)."""
    try:
        joints = []
        for item in data["joints"]:
            t = np.asarray(item.get("translation", [0.0, 0.0, 0.0]), dtype=float)
            rpy = item.get("rpy", [0.0, 0.0, 0.0])
            joints.append(RevoluteJoint(Pose(rpy_matrix(*rpy), t), np.asarray(item["axis"], dtype=float)))
        mount = data["endoscope_mount"]
        mount_pose = Pose(
            rpy_matrix(*mount.get("rpy", [0.0, 0.0, 0.0])),
            np.asarray(mount.get("translation", [0.0, 0.0, 0.0]), dtype=float),
        )
        limits = data.get("joint_limits")
        if limits is not None:
            limits = tuple((float(lo), float(hi)) for lo, hi in limits)
        return ChainModel(
            joints=tuple(joints),
            endoscope_mount=mount_pose,
            endoscope_length=float(data["endoscope_length"]),
            joint_limits=limits,
        )
    except (KeyError, TypeError) as exc:
        raise ConfigurationError(f"bad chain config: {exc}") from exc


def load_chain(path) -> ChainModel:
    with open(path) as fh:
        return chain_from_dict(yaml.safe_load(fh))
