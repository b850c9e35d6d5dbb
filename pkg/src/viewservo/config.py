"""Scenario configuration: dataclasses plus the YAML schema loader.

A scenario file fully determines a run: the arm, the scene, the trocar, the
controller settings, the capture script that builds the view graph, and the
scenario kind with its knobs. Identical config + seed must reproduce a run
bit for bit, so every default lives here rather than scattered through the
runner.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import yaml

from .exceptions import ConfigurationError
from .homography import PROJECTION_ROWS
from .kinematics import ChainModel, Pose, chain_from_dict, default_chain, load_chain
from .rcm import DEFAULT_DAMPING, DEFAULT_INTEGRAL_CLAMP, PidGains, default_gains
from .vision import CorruptionParams, EndoscopeCamera, PlanarScene, RansacParams

SCENARIO_KINDS = ("any_to_any", "tool_motion", "reposition")
M_STAR_POLICIES = ("principal_ray", "target_centroid")

DEFAULT_FPS = 30.0
DEFAULT_SUBSTEPS = 10
DEFAULT_TROCAR = (0.55, 0.0, 0.45)
DEFAULT_SCENE_CENTER = (0.55, 0.0, 0.05)

# Planar elbow-up solution placing the camera at (0.55, 0, 0.30) looking
# straight down; verified against forward kinematics to machine precision.
DEFAULT_Q0 = (
    0.0,
    0.3999475030992552,
    0.0,
    -1.001116460746784,
    0.0,
    1.740528689743754,
    0.0,
)


@dataclass(frozen=True)
class ControlParams:
    """Controller settings for one run.

    ``dt`` is the camera frame period; each frame's joint update is split
    into ``substeps`` equal sub-intervals over which the task error is held
    while the RCM error is re-measured. The stiff RCM gain (1e2) is unstable
    as a single 30 Hz step, stable at the substepped rate.
    """

    gains: PidGains = field(default_factory=default_gains)
    damping: float = DEFAULT_DAMPING
    dt: float = 1.0 / DEFAULT_FPS
    substeps: int = DEFAULT_SUBSTEPS
    projection_mode: str = "b"
    integral_clamp: float = DEFAULT_INTEGRAL_CLAMP
    error_sign: float = 1.0

    def __post_init__(self):
        if self.dt <= 0:
            raise ConfigurationError("dt must be positive")
        if self.substeps < 1:
            raise ConfigurationError("substeps must be >= 1")
        if self.projection_mode not in PROJECTION_ROWS:
            raise ConfigurationError(f"projection_mode must be one of {sorted(PROJECTION_ROWS)}")
        if self.damping < 0:
            raise ConfigurationError("damping must be non-negative")
        if self.error_sign not in (1.0, -1.0):
            raise ConfigurationError("error_sign must be +1 or -1")

    @property
    def substep_dt(self) -> float:
        return self.dt / self.substeps


@dataclass(frozen=True)
class ConvergenceParams:
    """Stopping rules: early advance per intermediate vertex, final threshold
    at the target, hard step cap, and the consecutive-estimation-failure abort.

    ``settle_frames`` is how many consecutive frames the final vertex must
    measure under the final threshold; the controller keeps acting during the
    count, so a transient zero-crossing of the MPD does not end the run.
    """

    intermediate_mpd_px: float = 5.0
    final_mpd_px: float = 1.5
    max_steps: int = 2000
    failure_abort_steps: int = 30
    settle_frames: int = 1

    def __post_init__(self):
        if self.intermediate_mpd_px <= 0 or self.final_mpd_px <= 0:
            raise ConfigurationError("MPD thresholds must be positive")
        if self.max_steps < 1 or self.failure_abort_steps < 1:
            raise ConfigurationError("step counts must be positive")
        if self.settle_frames < 1:
            raise ConfigurationError("settle_frames must be >= 1")


@dataclass(frozen=True)
class BurstParams:
    """A transient window of degraded matching (occlusion stand-in)."""

    start_step: int
    length: int
    corruption: CorruptionParams

    def __post_init__(self):
        if self.start_step < 0 or self.length < 1:
            raise ConfigurationError("burst window must have start_step >= 0 and length >= 1")

    def covers(self, step: int) -> bool:
        return self.start_step <= step < self.start_step + self.length


@dataclass(frozen=True)
class RepositionParams:
    """Rigid scene-plane move applied after graph capture, trocar fixed."""

    rotate_deg: float = 0.0
    tilt_deg: float = 0.0
    tilt_axis: int = 0

    def __post_init__(self):
        if self.tilt_axis not in (0, 1):
            raise ConfigurationError("tilt_axis must be 0 or 1")

    def apply(self, scene: PlanarScene) -> PlanarScene:
        out = scene
        if self.rotate_deg != 0.0:
            out = out.rotated_in_plane(np.deg2rad(self.rotate_deg))
        if self.tilt_deg != 0.0:
            out = out.tilted(np.deg2rad(self.tilt_deg), in_plane_axis=self.tilt_axis)
        return out


@dataclass(frozen=True)
class JogLeg:
    """Constant camera-frame twist held for a number of frames, then a capture."""

    twist: np.ndarray
    steps: int

    def __post_init__(self):
        tw = np.asarray(self.twist, dtype=float).reshape(-1)
        if tw.shape != (6,) or not np.all(np.isfinite(tw)):
            raise ConfigurationError("jog twist must be a finite 6-vector")
        if self.steps < 1:
            raise ConfigurationError("jog leg needs at least one step")
        object.__setattr__(self, "twist", tw)


@dataclass(frozen=True)
class SceneParams:
    """Feature plane: pose of its frame plus the seeded texture."""

    center: tuple[float, float, float] = DEFAULT_SCENE_CENTER
    n_features: int = 40
    extent: float = 0.08
    seed: int = 0

    def build(self) -> PlanarScene:
        pose = Pose(np.eye(3), np.asarray(self.center, dtype=float))
        return PlanarScene.generate(pose, n_features=self.n_features, extent=self.extent, seed=self.seed)


# Default capture script: three views. Vertex 0 is the initial overview;
# each leg jogs the camera (tilt about the trocar, then tilt + roll) and
# captures the next vertex.
DEFAULT_CAPTURE_SCRIPT = (
    JogLeg(twist=np.array([0.0, 0.0, 0.0, 0.15, 0.0, 0.0]), steps=20),
    JogLeg(twist=np.array([0.0, 0.0, 0.0, -0.15, 0.12, 0.6]), steps=20),
)


@dataclass(frozen=True)
class ScenarioConfig:
    """Everything one scenario run needs, resolved and validated."""

    kind: str = "any_to_any"
    seed: int = 0
    chain: ChainModel = field(default_factory=default_chain)
    q0: np.ndarray = field(default_factory=lambda: np.array(DEFAULT_Q0))
    trocar: np.ndarray = field(default_factory=lambda: np.array(DEFAULT_TROCAR))
    camera: EndoscopeCamera = field(default_factory=EndoscopeCamera.default)
    scene: SceneParams = field(default_factory=SceneParams)
    control: ControlParams = field(default_factory=ControlParams)
    convergence: ConvergenceParams = field(default_factory=ConvergenceParams)
    ransac: RansacParams = field(default_factory=RansacParams)
    smoother_len: int = 10
    m_star_policy: str = "principal_ray"
    corruption: CorruptionParams = field(default_factory=CorruptionParams)
    bursts: tuple[BurstParams, ...] = ()
    reposition: RepositionParams = field(default_factory=RepositionParams)
    capture_script: tuple[JogLeg, ...] = DEFAULT_CAPTURE_SCRIPT
    target_vertex: int = 0
    out_dir: str | None = None

    def __post_init__(self):
        if self.kind not in SCENARIO_KINDS:
            raise ConfigurationError(f"kind must be one of {SCENARIO_KINDS}, got {self.kind!r}")
        if self.m_star_policy not in M_STAR_POLICIES:
            raise ConfigurationError(f"m_star policy must be one of {M_STAR_POLICIES}")
        if self.smoother_len < 1:
            raise ConfigurationError("smoother_len must be >= 1")
        q0 = np.asarray(self.q0, dtype=float).reshape(-1)
        if q0.shape[0] != self.chain.dof:
            raise ConfigurationError(f"q0 has {q0.shape[0]} entries for a {self.chain.dof}-joint chain")
        trocar = np.asarray(self.trocar, dtype=float).reshape(-1)
        if trocar.shape != (3,):
            raise ConfigurationError("trocar must be a 3-vector")
        if self.chain.dof < 6:
            raise ConfigurationError("servo control needs a chain with at least 6 joints")
        if self.target_vertex < 0:
            raise ConfigurationError("target_vertex must be a vertex id (>= 0)")
        object.__setattr__(self, "q0", q0)
        object.__setattr__(self, "trocar", trocar)
        object.__setattr__(self, "bursts", tuple(self.bursts))
        object.__setattr__(self, "capture_script", tuple(self.capture_script))

    def corruption_at(self, step: int) -> CorruptionParams:
        """Base corruption, overridden inside any burst window covering `step`."""
        for burst in self.bursts:
            if burst.covers(step):
                return burst.corruption
        return self.corruption

    def with_overrides(self, seed: int | None = None, out_dir: str | None = None) -> "ScenarioConfig":
        cfg = self
        if seed is not None:
            cfg = replace(cfg, seed=int(seed))
        if out_dir is not None:
            cfg = replace(cfg, out_dir=str(out_dir))
        return cfg


def _gains_from_dict(data: dict) -> PidGains:
    try:
        return PidGains(
            kp=np.asarray(data["kp"], dtype=float),
            ki=np.asarray(data["ki"], dtype=float),
            kd=np.asarray(data["kd"], dtype=float),
        )
    except KeyError as exc:
        raise ConfigurationError(f"gains need kp, ki and kd: missing {exc}") from exc


def _control_from_dict(data: dict) -> ControlParams:
    dt = data.get("dt")
    if dt is not None and "fps" in data:
        raise ConfigurationError("give either dt or fps, not both")
    if dt is None:
        dt = 1.0 / float(data.get("fps", DEFAULT_FPS))
    gains = _gains_from_dict(data["gains"]) if "gains" in data else default_gains()
    return ControlParams(
        gains=gains,
        damping=float(data.get("damping", DEFAULT_DAMPING)),
        dt=float(dt),
        substeps=int(data.get("substeps", DEFAULT_SUBSTEPS)),
        projection_mode=str(data.get("projection_mode", "b")),
        integral_clamp=float(data.get("integral_clamp", DEFAULT_INTEGRAL_CLAMP)),
        error_sign=float(data.get("error_sign", 1.0)),
    )


def _corruption_from_dict(data: dict) -> CorruptionParams:
    return CorruptionParams(
        noise_px=float(data.get("noise_px", 0.0)),
        outlier_rate=float(data.get("outlier_rate", 0.0)),
        dropout=float(data.get("dropout", 0.0)),
    )


def _camera_from_dict(data) -> EndoscopeCamera:
    from .homography import CameraIntrinsics
    from .vision import CircularFov

    if data in (None, "default"):
        return EndoscopeCamera.default()
    if not isinstance(data, dict):
        raise ConfigurationError("camera must be 'default' or a mapping")
    try:
        intr = data["intrinsics"]
        return EndoscopeCamera(
            intrinsics=CameraIntrinsics(
                fx=float(intr["fx"]),
                fy=float(intr["fy"]),
                cx=float(intr["cx"]),
                cy=float(intr["cy"]),
                distortion=tuple(float(c) for c in intr.get("distortion", (0.0,) * 5)),
            ),
            width=int(data["width"]),
            height=int(data["height"]),
            fov=CircularFov(center=tuple(data["fov"]["center"]), radius=float(data["fov"]["radius"])),
            crop_origin=tuple(data["crop_origin"]),
            crop_size=tuple(data["crop_size"]),
            scale=float(data["scale"]),
        )
    except KeyError as exc:
        raise ConfigurationError(f"camera config missing key {exc}") from exc


def _chain_from_config(data, base_dir: Path) -> ChainModel:
    if data in (None, "default"):
        return default_chain()
    if isinstance(data, dict):
        if "file" in data:
            path = Path(data["file"])
            if not path.is_absolute():
                path = base_dir / path
            return load_chain(path)
        return chain_from_dict(data)
    raise ConfigurationError("chain must be 'default', {file: ...}, or an inline chain mapping")


def scenario_from_dict(data: dict, base_dir: str | Path = ".") -> ScenarioConfig:
    """Build a ScenarioConfig from the documented YAML mapping.

    Relative paths inside the config (the chain file) resolve against
    ``base_dir``, normally the config file's directory.
    """
    if not isinstance(data, dict):
        raise ConfigurationError("scenario config must be a mapping")
    base = Path(base_dir)
    known = {
        "kind", "seed", "chain", "q0", "trocar", "camera", "scene", "control",
        "convergence", "ransac", "smoother_len", "m_star", "corruption",
        "bursts", "reposition", "capture_script", "target_vertex", "out_dir",
    }
    unknown = set(data) - known
    if unknown:
        raise ConfigurationError(f"unknown scenario config keys: {sorted(unknown)}")

    chain = _chain_from_config(data.get("chain"), base)

    scene_raw = data.get("scene", {}) or {}
    scene = SceneParams(
        center=tuple(scene_raw.get("center", DEFAULT_SCENE_CENTER)),
        n_features=int(scene_raw.get("n_features", 40)),
        extent=float(scene_raw.get("extent", 0.08)),
        seed=int(scene_raw.get("seed", 0)),
    )

    conv_raw = data.get("convergence", {}) or {}
    convergence = ConvergenceParams(
        intermediate_mpd_px=float(conv_raw.get("intermediate_mpd_px", 5.0)),
        final_mpd_px=float(conv_raw.get("final_mpd_px", 1.5)),
        max_steps=int(conv_raw.get("max_steps", 2000)),
        failure_abort_steps=int(conv_raw.get("failure_abort_steps", 30)),
        settle_frames=int(conv_raw.get("settle_frames", 1)),
    )

    ransac_raw = data.get("ransac", {}) or {}
    ransac = RansacParams(
        threshold_px=float(ransac_raw.get("threshold_px", 2.0)),
        confidence=float(ransac_raw.get("confidence", 0.995)),
        max_iters=int(ransac_raw.get("max_iters", 2000)),
    )

    bursts = tuple(
        BurstParams(
            start_step=int(b["start_step"]),
            length=int(b["length"]),
            corruption=_corruption_from_dict(b.get("corruption", {}) or {}),
        )
        for b in data.get("bursts", []) or []
    )

    repo_raw = data.get("reposition", {}) or {}
    reposition = RepositionParams(
        rotate_deg=float(repo_raw.get("rotate_deg", 0.0)),
        tilt_deg=float(repo_raw.get("tilt_deg", 0.0)),
        tilt_axis=int(repo_raw.get("tilt_axis", 0)),
    )

    script_raw = data.get("capture_script")
    if script_raw is None:
        capture_script = DEFAULT_CAPTURE_SCRIPT
    else:
        capture_script = tuple(
            JogLeg(twist=np.asarray(leg["twist"], dtype=float), steps=int(leg["steps"]))
            for leg in script_raw
        )

    return ScenarioConfig(
        kind=str(data.get("kind", "any_to_any")),
        seed=int(data.get("seed", 0)),
        chain=chain,
        q0=np.asarray(data.get("q0", DEFAULT_Q0), dtype=float),
        trocar=np.asarray(data.get("trocar", DEFAULT_TROCAR), dtype=float),
        camera=_camera_from_dict(data.get("camera")),
        scene=scene,
        control=_control_from_dict(data.get("control", {}) or {}),
        convergence=convergence,
        ransac=ransac,
        smoother_len=int(data.get("smoother_len", 10)),
        m_star_policy=str(data.get("m_star", "principal_ray")),
        corruption=_corruption_from_dict(data.get("corruption", {}) or {}),
        bursts=bursts,
        reposition=reposition,
        capture_script=capture_script,
        target_vertex=int(data.get("target_vertex", 0)),
        out_dir=data.get("out_dir"),
    )


def load_scenario(path) -> ScenarioConfig:
    path = Path(path)
    with open(path) as fh:
        data = yaml.safe_load(fh)
    return scenario_from_dict(data, base_dir=path.parent)
