"""Programmable remote-center-of-motion constraint and the composite-Jacobian PID.

The RCM point is pinned to the endoscope segment between the proximal point
x_i and the camera point x_ip1 by the entry-depth parameter lambda. Its
Jacobian over the extended variable (qdot, lambda_dot) stacks under the task
Jacobian into the composite system the PID controller inverts with damped
least squares.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .exceptions import ConfigurationError, DegenerateGeometryError

DEFAULT_DAMPING = 5e-4
DEFAULT_INTEGRAL_CLAMP = 10.0


def lambda_projection(x_i: np.ndarray, x_ip1: np.ndarray, x_trocar: np.ndarray) -> float:
    """Entry-depth parameter: orthogonal projection of the trocar onto the shaft line.

    Not clamped; the caller decides what lambda < 0 or > 1 means.
    """
    x_i = np.asarray(x_i, dtype=float)
    d = np.asarray(x_ip1, dtype=float) - x_i
    denom = float(d @ d)
    if denom < 1e-24:
        raise DegenerateGeometryError("shaft endpoints coincide; lambda undefined")
    return float(d @ (np.asarray(x_trocar, dtype=float) - x_i)) / denom


def rcm_point(x_i: np.ndarray, x_ip1: np.ndarray, lam: float) -> np.ndarray:
    """Point on the shaft line at parameter lambda."""
    x_i = np.asarray(x_i, dtype=float)
    return x_i + lam * (np.asarray(x_ip1, dtype=float) - x_i)


@dataclass(frozen=True)
class RcmState:
    """Trocar position, entry depth, RCM point, and RCM error, all in W."""

    x_trocar: np.ndarray
    lam: float
    x_rcm: np.ndarray
    e_rcm_p: np.ndarray

    @staticmethod
    def from_geometry(x_i: np.ndarray, x_ip1: np.ndarray, x_trocar: np.ndarray) -> "RcmState":
        lam = lambda_projection(x_i, x_ip1, x_trocar)
        x_rcm = rcm_point(x_i, x_ip1, lam)
        x_trocar = np.asarray(x_trocar, dtype=float)
        return RcmState(x_trocar=x_trocar, lam=lam, x_rcm=x_rcm, e_rcm_p=x_trocar - x_rcm)


def rcm_jacobian(Jv_i: np.ndarray, Jv_ip1: np.ndarray, lam: float, x_i: np.ndarray, x_ip1: np.ndarray) -> np.ndarray:
    """3x(n+1) Jacobian of the RCM point over (qdot, lambda_dot)."""
    Jv_i = np.asarray(Jv_i, dtype=float)
    Jv_ip1 = np.asarray(Jv_ip1, dtype=float)
    if Jv_i.shape != Jv_ip1.shape or Jv_i.shape[0] != 3:
        raise ConfigurationError(f"translational Jacobians must both be 3xn, got {Jv_i.shape}, {Jv_ip1.shape}")
    column = (np.asarray(x_ip1, dtype=float) - np.asarray(x_i, dtype=float)).reshape(3, 1)
    return np.hstack([Jv_i + lam * (Jv_ip1 - Jv_i), column])


def composite_jacobian(J_t: np.ndarray, J_rcm: np.ndarray) -> np.ndarray:
    """Stack task rows (zero-padded for lambda_dot) over the RCM rows."""
    J_t = np.asarray(J_t, dtype=float)
    J_rcm = np.asarray(J_rcm, dtype=float)
    if J_rcm.shape[0] != 3 or J_t.shape[1] + 1 != J_rcm.shape[1]:
        raise ConfigurationError(f"inconsistent blocks: J_t {J_t.shape}, J_rcm {J_rcm.shape}")
    top = np.hstack([J_t, np.zeros((J_t.shape[0], 1))])
    return np.vstack([top, J_rcm])


def damped_pseudoinverse(J: np.ndarray, mu: float = DEFAULT_DAMPING) -> np.ndarray:
    """Damped least-squares pseudo-inverse from the SVD: V diag(s/(s^2+mu^2)) U^T."""
    if mu < 0:
        raise ConfigurationError("damping must be non-negative")
    J = np.asarray(J, dtype=float)
    U, s, Vt = np.linalg.svd(J, full_matrices=False)
    denom = s * s + mu * mu
    factors = np.divide(s, denom, out=np.zeros_like(s), where=denom > 0)
    return Vt.T @ np.diag(factors) @ U.T


@dataclass(frozen=True)
class PidGains:
    """Diagonal PID gains over the stacked (task, RCM) error channels."""

    kp: np.ndarray
    ki: np.ndarray
    kd: np.ndarray

    def __post_init__(self):
        for name in ("kp", "ki", "kd"):
            v = np.asarray(getattr(self, name), dtype=float).reshape(-1)
            if np.any(v < 0):
                raise ConfigurationError(f"{name} entries must be non-negative")
            object.__setattr__(self, name, v)
        if not (self.kp.shape == self.ki.shape == self.kd.shape):
            raise ConfigurationError("gain vectors must share one length")

    @property
    def dim(self) -> int:
        return self.kp.shape[0]


def default_gains() -> PidGains:
    """Gains tuned for the 4-DOF task block followed by the 3 RCM channels."""
    return PidGains(
        kp=np.array([1.2, 1.5, 1.5, 1.8, 1e2, 1e2, 1e2]),
        ki=np.array([3e-3, 2.5e-3, 2.5e-3, 1.5e-3, 0.0, 0.0, 0.0]),
        kd=np.array([6e-2, 5e-2, 5e-2, 3e-2, 0.0, 0.0, 0.0]),
    )


@dataclass
class PidState:
    """Mutable per-session controller state; one owner per servo session."""

    dt: float
    integral_clamp: float = DEFAULT_INTEGRAL_CLAMP
    integral: np.ndarray | None = None
    prev_error: np.ndarray | None = None

    def __post_init__(self):
        if self.dt <= 0:
            raise ConfigurationError("dt must be positive")

    def reset(self):
        self.integral = None
        self.prev_error = None


def pid_step(
    state: PidState,
    gains: PidGains,
    J_cp: np.ndarray,
    e_t_p: np.ndarray,
    e_rcm_p: np.ndarray,
    damping: float = DEFAULT_DAMPING,
) -> tuple[np.ndarray, float]:
    """One PID update over the composite system; returns (qdot, lambda_dot).

    Integrates the stacked error with clamped accumulator, differentiates
    against the previous call (zero on the first), and maps the PID drive
    through the damped pseudo-inverse of the composite Jacobian.
    """
    e = np.concatenate([np.asarray(e_t_p, dtype=float).reshape(-1), np.asarray(e_rcm_p, dtype=float).reshape(-1)])
    if not np.all(np.isfinite(e)):
        raise ConfigurationError(f"non-finite error input: {e}")
    if e.shape[0] != gains.dim:
        raise ConfigurationError(f"error dimension {e.shape[0]} does not match gains dimension {gains.dim}")
    J_cp = np.asarray(J_cp, dtype=float)
    if J_cp.shape[0] != e.shape[0]:
        raise ConfigurationError(f"composite Jacobian rows {J_cp.shape[0]} != error dimension {e.shape[0]}")

    if state.integral is None:
        state.integral = np.zeros_like(e)
    integral = np.clip(state.integral + e * state.dt, -state.integral_clamp, state.integral_clamp)
    derivative = np.zeros_like(e) if state.prev_error is None else (e - state.prev_error) / state.dt

    drive = gains.kp * e + gains.ki * integral + gains.kd * derivative
    out = damped_pseudoinverse(J_cp, damping) @ drive

    state.integral = integral
    state.prev_error = e
    return out[:-1], float(out[-1])
