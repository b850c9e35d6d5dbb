"""Plane-induced homography to 4-DOF task error and task Jacobian.

A pixel-space homography G maps target-view pixels into the current view.
Conjugating by the intrinsics gives the normalized-space H whose deviation
from the identity encodes the remaining camera motion: translation-like error
from (H - I) m*, rotation-like error from the skew-symmetric part of H. A
projection operator picks the 4 servoable channels (the shaft rotation plus
either lateral or depth/tilt motion).
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .exceptions import ConfigurationError, NumericError

PIXEL = "pixel"
NORMALIZED = "normalized"

# stacked (e_v, e_w) component indices kept by each projector
PROJECTION_ROWS = {
    "a": (0, 1, 2, 5),
    "b": (2, 3, 4, 5),
}

N_TASK = 4
DEFAULT_BUFFER_LEN = 10
DET_TOL = 1e-12
ROT_TOL = 1e-9


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics with zero skew plus radial/tangential distortion."""

    fx: float
    fy: float
    cx: float
    cy: float
    distortion: tuple[float, float, float, float, float] = (0.0, 0.0, 0.0, 0.0, 0.0)

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ConfigurationError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        d = tuple(float(c) for c in self.distortion)
        if len(d) != 5:
            raise ConfigurationError(f"distortion needs 5 coefficients (k1,k2,p1,p2,k3), got {len(d)}")
        object.__setattr__(self, "distortion", d)

    def as_matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def inverse_matrix(self) -> np.ndarray:
        return np.array(
            [
                [1.0 / self.fx, 0.0, -self.cx / self.fx],
                [0.0, 1.0 / self.fy, -self.cy / self.fy],
                [0.0, 0.0, 1.0],
            ]
        )

    @property
    def has_distortion(self) -> bool:
        return any(c != 0.0 for c in self.distortion)


@dataclass(frozen=True)
class Homography:
    """3x3 non-singular map tagged with the space its entries live in."""

    matrix: np.ndarray
    frame_tag: str

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=float)
        if m.shape != (3, 3):
            raise ConfigurationError(f"homography must be 3x3, got {m.shape}")
        if not np.all(np.isfinite(m)):
            raise NumericError("homography has non-finite entries")
        if abs(np.linalg.det(m)) <= DET_TOL:
            raise NumericError("homography is singular")
        if self.frame_tag not in (PIXEL, NORMALIZED):
            raise ConfigurationError(f"unknown frame tag {self.frame_tag!r}")
        object.__setattr__(self, "matrix", m)


def normalize_homography(H: np.ndarray) -> np.ndarray:
    """Scale so the middle singular value is 1, flipping sign to keep det > 0."""
    H = np.asarray(H, dtype=float)
    if H.shape != (3, 3):
        raise ConfigurationError(f"expected 3x3 matrix, got {H.shape}")
    if abs(np.linalg.det(H)) <= DET_TOL:
        raise NumericError("cannot normalize a singular homography")
    s = np.linalg.svd(H, compute_uv=False)
    out = H / s[1]
    if np.linalg.det(out) < 0:
        out = -out
    return out


def pixel_to_normalized(G: Homography, K: CameraIntrinsics, K_target: CameraIntrinsics | None = None) -> Homography:
    """Conjugate a pixel-space G into normalized coordinates: H = K⁻¹ G K_t.

    K is the current view's intrinsics; K_target (defaulting to K) belongs to
    the view G maps from, which matters once per-vertex crops disagree.
    """
    if G.frame_tag != PIXEL:
        raise ConfigurationError("pixel_to_normalized expects a pixel-space homography")
    right = (K if K_target is None else K_target).as_matrix()
    H = K.inverse_matrix() @ G.matrix @ right
    return Homography(matrix=normalize_homography(H), frame_tag=NORMALIZED)


@dataclass(frozen=True)
class TaskError:
    """Raw (e_v, e_w) error pair, optionally with its 4-channel projection."""

    e_v: np.ndarray
    e_w: np.ndarray
    mode: str | None = None
    projected: np.ndarray | None = None

    def __post_init__(self):
        for name in ("e_v", "e_w"):
            v = np.asarray(getattr(self, name), dtype=float).reshape(-1)
            if v.shape != (3,):
                raise ConfigurationError(f"{name} must be a 3-vector")
            object.__setattr__(self, name, v)
        if (self.mode is None) != (self.projected is None):
            raise ConfigurationError("mode and projected must be set together")
        if self.mode is not None:
            want = project_task(self.e_v, self.e_w, self.mode)
            got = np.asarray(self.projected, dtype=float).reshape(-1)
            if got.shape != (N_TASK,) or not np.array_equal(got, want):
                raise ConfigurationError("projected vector inconsistent with mode")
            object.__setattr__(self, "projected", got)

    def project(self, mode: str) -> "TaskError":
        return TaskError(
            e_v=self.e_v,
            e_w=self.e_w,
            mode=mode,
            projected=project_task(self.e_v, self.e_w, mode),
        )


def task_error(H: Homography, m_star: np.ndarray) -> TaskError:
    """Extract (e_v, e_w) from a normalized homography.

    e_v = (H - I) m*;  [e_w]x = H - Hᵀ.
    """
    if H.frame_tag != NORMALIZED:
        raise ConfigurationError("task_error expects a normalized homography")
    m_star = np.asarray(m_star, dtype=float).reshape(-1)
    if m_star.shape != (3,) or m_star[2] != 1.0:
        raise ConfigurationError(f"m_star must be (x, y, 1), got {m_star}")
    M = H.matrix
    e_v = (M - np.eye(3)) @ m_star
    e_w = np.array(
        [
            M[2, 1] - M[1, 2],
            M[0, 2] - M[2, 0],
            M[1, 0] - M[0, 1],
        ]
    )
    return TaskError(e_v=e_v, e_w=e_w)


def project_task(e_v: np.ndarray, e_w: np.ndarray, mode: str) -> np.ndarray:
    """Select the 4 servoable channels from the stacked (e_v, e_w)."""
    if mode not in PROJECTION_ROWS:
        raise ConfigurationError(f"projection mode must be 'a' or 'b', got {mode!r}")
    stacked = np.concatenate([np.asarray(e_v, dtype=float).reshape(-1), np.asarray(e_w, dtype=float).reshape(-1)])
    if stacked.shape != (6,):
        raise ConfigurationError("e_v and e_w must each be 3-vectors")
    return stacked[list(PROJECTION_ROWS[mode])]


def projection_matrix(mode: str) -> np.ndarray:
    """The 4x6 selector as an explicit matrix (handy for Jacobian assembly)."""
    if mode not in PROJECTION_ROWS:
        raise ConfigurationError(f"projection mode must be 'a' or 'b', got {mode!r}")
    P = np.zeros((N_TASK, 6))
    for row, col in enumerate(PROJECTION_ROWS[mode]):
        P[row, col] = 1.0
    return P


def task_jacobian(J_ip1: np.ndarray, R_WC: np.ndarray, mode: str) -> np.ndarray:
    """Project the world-frame camera Jacobian into the 4 task channels.

    J_t = P_mode · blockdiag(R_WCᵀ, R_WCᵀ) · J_ip1, rotating both twist halves
    into the camera body frame first.
    """
    J_ip1 = np.asarray(J_ip1, dtype=float)
    if J_ip1.ndim != 2 or J_ip1.shape[0] != 6:
        raise ConfigurationError(f"camera Jacobian must be 6xn, got {J_ip1.shape}")
    R_WC = np.asarray(R_WC, dtype=float)
    if R_WC.shape != (3, 3) or np.max(np.abs(R_WC.T @ R_WC - np.eye(3))) > ROT_TOL:
        raise ConfigurationError("R_WC must be a 3x3 orthonormal rotation")
    body = np.vstack([R_WC.T @ J_ip1[:3], R_WC.T @ J_ip1[3:]])
    return projection_matrix(mode) @ body


@dataclass
class ErrorSmoother:
    """Moving-average filter over the projected task error; one per session."""

    buffer_len: int = DEFAULT_BUFFER_LEN
    _buffer: deque = field(init=False, repr=False)

    def __post_init__(self):
        if self.buffer_len < 1:
            raise ConfigurationError("buffer length must be at least 1")
        self._buffer = deque(maxlen=self.buffer_len)

    def reset(self):
        self._buffer.clear()

    def __len__(self) -> int:
        return len(self._buffer)


def smooth_error(smoother: ErrorSmoother, e: np.ndarray) -> np.ndarray:
    """Push e and return the mean over whatever the buffer currently holds."""
    e = np.asarray(e, dtype=float).reshape(-1)
    if e.shape != (N_TASK,):
        raise ConfigurationError(f"expected a {N_TASK}-vector task error, got shape {e.shape}")
    smoother._buffer.append(e)
    return np.mean(smoother._buffer, axis=0)
