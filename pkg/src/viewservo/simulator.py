"""Closed-loop world: integrates the controller, runs the scenarios, logs metrics.

The loop runs at the camera frame rate. Within one frame the measured task
error is held constant while the joint update is split into substeps, each
re-measuring the RCM error from fresh forward kinematics; the stiff RCM gain
needs that inner rate to contract. The task channels see the same net update
either way, so substepping changes nothing for them.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .config import ControlParams, ScenarioConfig
from .exceptions import ConfigurationError, EstimationError, ServoFailure
from .homography import (
    CameraIntrinsics,
    ErrorSmoother,
    N_TASK,
    pixel_to_normalized,
    project_task,
    smooth_error,
    task_error,
    task_jacobian,
)
from .kinematics import ChainModel, Pose, forward_kinematics, geometric_jacobian, translational_jacobian
from .rcm import PidGains, PidState, RcmState, composite_jacobian, pid_step, rcm_jacobian
from .vision import EndoscopeCamera, PlanarScene, mean_pairwise_distance
from .view_graph import ViewGraph

logger = logging.getLogger(__name__)

MM_PER_M = 1000.0

METRICS_FIELDS = (
    "step",
    "time_s",
    "rcm_error_mm",
    "et_0",
    "et_1",
    "et_2",
    "et_3",
    "mpd_px",
    "inlier_count",
    "tip_x_mm",
    "tip_y_mm",
    "tip_z_mm",
    "target_vertex",
)
METRICS_HEADER = ",".join(METRICS_FIELDS)


@dataclass(frozen=True)
class WorldState:
    """Kinematic snapshot: chain state, scene, trocar, rig, and derived frames.

    Immutable; `integrate_step` returns a fresh instance with the RCM state
    recomputed from forward kinematics, so the stored geometry can never go
    stale relative to q.
    """

    chain: ChainModel
    q: np.ndarray
    scene: PlanarScene
    x_trocar: np.ndarray
    camera: EndoscopeCamera
    time_s: float
    pose_proximal: Pose
    pose_camera: Pose
    rcm: RcmState

    @classmethod
    def create(
        cls,
        chain: ChainModel,
        q,
        scene: PlanarScene,
        x_trocar,
        camera: EndoscopeCamera,
        time_s: float = 0.0,
    ) -> "WorldState":
        q = np.asarray(q, dtype=float).reshape(-1)
        if q.shape[0] != chain.dof:
            raise ConfigurationError(f"q has {q.shape[0]} entries for a {chain.dof}-joint chain")
        if not np.all(np.isfinite(q)):
            raise ConfigurationError("q must be finite")
        x_trocar = np.asarray(x_trocar, dtype=float).reshape(-1)
        if x_trocar.shape != (3,):
            raise ConfigurationError("trocar must be a 3-vector")
        proximal, cam = forward_kinematics(chain, q)
        rcm = RcmState.from_geometry(proximal.translation, cam.translation, x_trocar)
        return cls(
            chain=chain,
            q=q,
            scene=scene,
            x_trocar=x_trocar,
            camera=camera,
            time_s=float(time_s),
            pose_proximal=proximal,
            pose_camera=cam,
            rcm=rcm,
        )

    def with_scene(self, scene: PlanarScene) -> "WorldState":
        return replace(self, scene=scene)

    def observe(self):
        return self.camera.observe(self.scene, self.pose_camera)

    @property
    def rcm_error_m(self) -> float:
        return float(np.linalg.norm(self.rcm.e_rcm_p))


def integrate_step(world: WorldState, qdot, dt: float) -> WorldState:
    """Explicit Euler joint update; limits clamp with a logged warning."""
    if dt <= 0:
        raise ConfigurationError("dt must be positive")
    qdot = np.asarray(qdot, dtype=float).reshape(-1)
    if qdot.shape[0] != world.chain.dof:
        raise ConfigurationError(f"qdot has {qdot.shape[0]} entries for a {world.chain.dof}-joint chain")
    if not np.all(np.isfinite(qdot)):
        raise ConfigurationError("qdot must be finite")
    q_new = world.q + dt * qdot
    limits = world.chain.joint_limits
    if limits is not None:
        lo = np.array([l for l, _ in limits])
        hi = np.array([h for _, h in limits])
        clipped = np.clip(q_new, lo, hi)
        hit = np.flatnonzero(clipped != q_new)
        if hit.size:
            logger.warning("joint limit clamp at t=%.3f s on joints %s", world.time_s, hit.tolist())
            q_new = clipped
    return WorldState.create(
        world.chain, q_new, world.scene, world.x_trocar, world.camera, world.time_s + dt
    )


def _fresh_pid(control: ControlParams) -> PidState:
    return PidState(dt=control.substep_dt, integral_clamp=control.integral_clamp)


def _controller_rates(world: WorldState, e_t: np.ndarray, control: ControlParams, pid: PidState) -> np.ndarray:
    """Joint rates for one substep from the composite task + RCM PID."""
    x_i = world.pose_proximal.translation
    x_ip1 = world.pose_camera.translation
    J_cam = geometric_jacobian(world.chain, world.q, x_ip1)
    J_t = task_jacobian(J_cam, world.pose_camera.rotation, control.projection_mode)
    Jv_i = translational_jacobian(geometric_jacobian(world.chain, world.q, x_i))
    Jv_ip1 = translational_jacobian(J_cam)
    J_rcm = rcm_jacobian(Jv_i, Jv_ip1, world.rcm.lam, x_i, x_ip1)
    J_cp = composite_jacobian(J_t, J_rcm)
    qdot, _ = pid_step(pid, control.gains, J_cp, e_t, world.rcm.e_rcm_p, damping=control.damping)
    return qdot


def advance_frame(
    world: WorldState, e_t, control: ControlParams, pid: PidState
) -> tuple[WorldState, float]:
    """Advance one camera frame holding e_t fixed; substep the RCM loop.

    Returns the new world and the largest RCM deviation (metres) seen at any
    substep boundary within the frame.
    """
    e_t = np.asarray(e_t, dtype=float).reshape(-1)
    if e_t.shape != (N_TASK,) or not np.all(np.isfinite(e_t)):
        raise ConfigurationError(f"task error must be a finite {N_TASK}-vector")
    max_rcm = world.rcm_error_m
    for _ in range(control.substeps):
        qdot = _controller_rates(world, e_t, control, pid)
        world = integrate_step(world, qdot, control.substep_dt)
        max_rcm = max(max_rcm, world.rcm_error_m)
    return world, max_rcm


def _jog_gains(gains: PidGains) -> PidGains:
    # commanded twist passes through at unit gain; RCM rows keep their
    # proportional stiffness; no integral or derivative memory while jogging
    kp = gains.kp.copy()
    kp[:N_TASK] = 1.0
    return PidGains(kp=kp, ki=np.zeros_like(kp), kd=np.zeros_like(kp))


def manual_jog(world: WorldState, twist, control: ControlParams | None = None) -> WorldState:
    """One frame of camera-frame twist command routed through the controller.

    The twist's servoable channels become the task error, so manual motion is
    shaped by the same composite Jacobian and keeps respecting the RCM.
    """
    if control is None:
        control = ControlParams()
    twist = np.asarray(twist, dtype=float).reshape(-1)
    if twist.shape != (6,) or not np.all(np.isfinite(twist)):
        raise ConfigurationError("jog command must be a finite 6-vector twist")
    e_t = project_task(twist[:3], twist[3:], control.projection_mode)
    jog_control = replace(control, gains=_jog_gains(control.gains))
    world, _ = advance_frame(world, e_t, jog_control, _fresh_pid(jog_control))
    return world


@dataclass(frozen=True)
class MetricsRecord:
    """One control frame of the servo log."""

    step: int
    time_s: float
    rcm_error_mm: float
    e_t: np.ndarray
    mpd_px: float
    inlier_count: int
    tip_mm: np.ndarray
    target_vertex: int

    def __post_init__(self):
        e = np.asarray(self.e_t, dtype=float).reshape(-1)
        tip = np.asarray(self.tip_mm, dtype=float).reshape(-1)
        if e.shape != (N_TASK,) or tip.shape != (3,):
            raise ConfigurationError("record needs a 4-vector task error and 3-vector tip")
        object.__setattr__(self, "e_t", e)
        object.__setattr__(self, "tip_mm", tip)

    def to_csv_row(self) -> str:
        values = [
            str(self.step),
            repr(float(self.time_s)),
            repr(float(self.rcm_error_mm)),
            repr(float(self.e_t[0])),
            repr(float(self.e_t[1])),
            repr(float(self.e_t[2])),
            repr(float(self.e_t[3])),
            repr(float(self.mpd_px)),
            str(self.inlier_count),
            repr(float(self.tip_mm[0])),
            repr(float(self.tip_mm[1])),
            repr(float(self.tip_mm[2])),
            str(self.target_vertex),
        ]
        return ",".join(values)

    @staticmethod
    def from_csv_row(line: str) -> "MetricsRecord":
        parts = line.strip().split(",")
        if len(parts) != len(METRICS_FIELDS):
            raise ConfigurationError(f"metrics row has {len(parts)} fields, expected {len(METRICS_FIELDS)}")
        return MetricsRecord(
            step=int(parts[0]),
            time_s=float(parts[1]),
            rcm_error_mm=float(parts[2]),
            e_t=np.array([float(parts[3]), float(parts[4]), float(parts[5]), float(parts[6])]),
            mpd_px=float(parts[7]),
            inlier_count=int(parts[8]),
            tip_mm=np.array([float(parts[9]), float(parts[10]), float(parts[11])]),
            target_vertex=int(parts[12]),
        )


def write_metrics_csv(path, records) -> None:
    lines = [METRICS_HEADER]
    lines.extend(r.to_csv_row() for r in records)
    Path(path).write_text("\n".join(lines) + "\n")


def read_metrics_csv(path) -> list[MetricsRecord]:
    text = Path(path).read_text().strip().splitlines()
    if not text or text[0] != METRICS_HEADER:
        raise ConfigurationError("not a metrics CSV (bad or missing header)")
    return [MetricsRecord.from_csv_row(line) for line in text[1:]]


def _m_star(policy: str, target_pixels: np.ndarray, intrinsics: CameraIntrinsics) -> np.ndarray:
    if policy == "principal_ray":
        return np.array([0.0, 0.0, 1.0])
    # centroid of the matched target features in normalized coordinates
    ones = np.ones((target_pixels.shape[0], 1))
    rays = (intrinsics.inverse_matrix() @ np.hstack([target_pixels, ones]).T).T
    m = rays.mean(axis=0)
    m[2] = 1.0
    return m


@dataclass
class ServoResult:
    """Outcome of one servo execution."""

    world: WorldState
    trajectory: list
    records: list
    converged: bool
    path: list

    @property
    def final_mpd_px(self) -> float:
        for rec in reversed(self.records):
            if np.isfinite(rec.mpd_px):
                return float(rec.mpd_px)
        return float("nan")


class ServoRun:
    """One servo execution, advanced one control frame per tick() call.

    Keeps the full loop state (path leg, PID and smoother memory, failure and
    settle counters) between ticks, so a caller can interleave other work,
    stream progress, or stop early. run_servo drives it to completion; the
    session service drives it from its command loop so aborts land between
    frames.
    """

    def __init__(
        self,
        world: WorldState,
        graph: ViewGraph,
        target_vertex: int,
        config: ScenarioConfig,
        rng=None,
        on_record=None,
    ):
        if rng is None:
            rng = np.random.default_rng(config.seed)
        if graph.current_id is None:
            raise ConfigurationError("graph has no current vertex")
        self.path = graph.shortest_path(graph.current_id, target_vertex)
        self.world = world
        self.graph = graph
        self.config = config
        self.rng = rng
        self.on_record = on_record
        self.pid = _fresh_pid(config.control)
        self.smoother = ErrorSmoother(buffer_len=config.smoother_len)
        self.records: list[MetricsRecord] = []
        self.trajectory: list[np.ndarray] = []
        self.step = 0
        self.leg = 0
        self.consecutive_failures = 0
        self.settle_streak = 0
        self.converged = False
        self.finished = False

    @property
    def leg_target(self) -> int:
        return self.path[self.leg]

    def result(self) -> ServoResult:
        return ServoResult(
            world=self.world,
            trajectory=self.trajectory,
            records=self.records,
            converged=self.converged,
            path=list(self.path),
        )

    def _emit(self, rec: MetricsRecord) -> MetricsRecord:
        self.records.append(rec)
        self.trajectory.append(self.world.q.copy())
        if self.on_record is not None:
            self.on_record(rec, self.world)
        return rec

    def tick(self) -> MetricsRecord:
        """Run one control frame and return the record it logged.

        Raises ServoFailure (after logging the frame) once the consecutive
        estimation failure budget is spent.
        """
        if self.finished:
            raise ConfigurationError("servo already finished")
        config, control, conv = self.config, self.config.control, self.config.convergence
        world = self.world
        step = self.step
        self.step += 1
        if self.step >= conv.max_steps:
            self.finished = True

        vid = self.path[self.leg]
        vertex = self.graph.vertices[vid]
        t_frame = world.time_s
        snapshot = world.observe()
        try:
            matches, G, mask = self.graph.match_to_vertex(
                snapshot,
                vid,
                config.ransac,
                seed=self.rng,
                corruption=config.corruption_at(step),
                image_size=world.camera.output_size,
            )
        except EstimationError:
            self.consecutive_failures += 1
            rec = self._emit(
                MetricsRecord(
                    step=step,
                    time_s=t_frame,
                    rcm_error_mm=world.rcm_error_m * MM_PER_M,
                    e_t=np.full(N_TASK, np.nan),
                    mpd_px=float("nan"),
                    inlier_count=0,
                    tip_mm=world.pose_camera.translation * MM_PER_M,
                    target_vertex=vid,
                ),
            )
            if self.consecutive_failures >= conv.failure_abort_steps:
                self.finished = True
                raise ServoFailure(
                    f"{self.consecutive_failures} consecutive estimation failures at step {step}",
                    records=self.records,
                )
            return rec
        self.consecutive_failures = 0

        inlier_cur = matches.current_pixels[mask]
        inlier_tgt = matches.target_pixels[mask]
        mpd = mean_pairwise_distance(inlier_cur, inlier_tgt)
        H = pixel_to_normalized(G, world.camera.output_intrinsics, vertex.intrinsics)
        m_star = _m_star(config.m_star_policy, inlier_tgt, vertex.intrinsics)
        te = task_error(H, m_star)
        e_raw = control.error_sign * project_task(te.e_v, te.e_w, control.projection_mode)
        e_s = smooth_error(self.smoother, e_raw)

        final_leg = self.leg == len(self.path) - 1
        threshold = conv.final_mpd_px if final_leg else conv.intermediate_mpd_px
        if final_leg:
            self.settle_streak = self.settle_streak + 1 if mpd <= threshold else 0
        if (final_leg and self.settle_streak >= conv.settle_frames) or (
            not final_leg and mpd <= threshold
        ):
            self.graph.set_current(vid)
            rec = self._emit(
                MetricsRecord(
                    step=step,
                    time_s=t_frame,
                    rcm_error_mm=world.rcm_error_m * MM_PER_M,
                    e_t=e_s,
                    mpd_px=mpd,
                    inlier_count=int(mask.sum()),
                    tip_mm=world.pose_camera.translation * MM_PER_M,
                    target_vertex=vid,
                ),
            )
            if final_leg:
                self.converged = True
                self.finished = True
            else:
                # next leg starts with fresh controller memory
                self.leg += 1
                self.pid = _fresh_pid(control)
                self.smoother = ErrorSmoother(buffer_len=config.smoother_len)
            return rec

        self.world, max_rcm = advance_frame(world, e_s, control, self.pid)
        return self._emit(
            MetricsRecord(
                step=step,
                time_s=t_frame,
                rcm_error_mm=max_rcm * MM_PER_M,
                e_t=e_s,
                mpd_px=mpd,
                inlier_count=int(mask.sum()),
                tip_mm=self.world.pose_camera.translation * MM_PER_M,
                target_vertex=vid,
            ),
        )


def run_servo(
    world: WorldState,
    graph: ViewGraph,
    target_vertex: int,
    config: ScenarioConfig,
    rng=None,
    on_record=None,
) -> ServoResult:
    """Servo along the shortest view-graph path to the target vertex.

    Per frame: observe, match against the active vertex, estimate G, convert
    to the normalized homography, extract and smooth the task error, then
    advance one substepped control frame. The active vertex advances when its
    MPD drops under the intermediate threshold; the run converges when the
    final vertex reaches the final threshold. `on_record` (record, world) is
    called after every frame so a session can stream progress.

    Raises ServoFailure after `failure_abort_steps` consecutive estimation
    failures, carrying the partial log.
    """
    run = ServoRun(world, graph, target_vertex, config, rng=rng, on_record=on_record)
    while not run.finished:
        run.tick()
    return run.result()


def build_world(config: ScenarioConfig) -> WorldState:
    return WorldState.create(
        config.chain, config.q0, config.scene.build(), config.trocar, config.camera, 0.0
    )


def build_graph(world: WorldState, config: ScenarioConfig) -> tuple[WorldState, ViewGraph]:
    """Run the capture script: a capture, then jog legs each ending in one."""
    graph = ViewGraph()

    def capture(w: WorldState) -> None:
        graph.capture_view(
            w.observe(),
            w.camera.output_intrinsics,
            timestamp=w.time_s,
            eval_camera_pose=w.pose_camera,
        )

    capture(world)
    for leg in config.capture_script:
        for _ in range(leg.steps):
            world = manual_jog(world, leg.twist, config.control)
        capture(world)
    return world, graph


@dataclass
class ScenarioArtifacts:
    """What a scenario run leaves behind."""

    config: ScenarioConfig
    summary: dict
    records: list
    graph: ViewGraph
    result: ServoResult | None = None
    csv_path: Path | None = None
    summary_path: Path | None = None
    graph_path: Path | None = None


def _summarize(
    config: ScenarioConfig,
    graph: ViewGraph,
    result: ServoResult | None,
    records: list,
    wall_time_s: float,
    failure: ServoFailure | None,
) -> dict:
    rcm = np.array([r.rcm_error_mm for r in records]) if records else np.zeros(0)
    final_mpd = result.final_mpd_px if result is not None else float("nan")
    tip_error = None
    target = graph.vertices.get(config.target_vertex)
    if result is not None and records and target is not None and target.eval_camera_pose is not None:
        tip_error = float(
            np.linalg.norm(records[-1].tip_mm - target.eval_camera_pose.translation * MM_PER_M)
        )
    return {
        "kind": config.kind,
        "seed": config.seed,
        "converged": bool(result.converged) if result is not None else False,
        "steps": len(records),
        "final_mpd_px": None if not np.isfinite(final_mpd) else float(final_mpd),
        "rcm_max_mm": float(rcm.max()) if rcm.size else None,
        "rcm_mean_mm": float(rcm.mean()) if rcm.size else None,
        "final_tip_error_mm": tip_error,
        "path": list(result.path) if result is not None else None,
        "target_vertex": config.target_vertex,
        "wall_time_s": float(wall_time_s),
        "failure": None if failure is None else str(failure),
    }


def run_scenario(config: ScenarioConfig) -> ScenarioArtifacts:
    """Build the world and graph, apply the scenario, servo, write artifacts.

    any_to_any servos from the last captured view back to the target.
    tool_motion does the same under the configured corruption bursts.
    reposition rigidly moves the scene plane first (trocar fixed), so the
    stored views no longer match the world until the servo catches up.

    A ServoFailure still writes the partial log and summary, then propagates.
    """
    t0 = time.perf_counter()
    rng = np.random.default_rng(config.seed)
    world = build_world(config)
    world, graph = build_graph(world, config)
    if config.kind == "reposition":
        world = world.with_scene(config.reposition.apply(world.scene))

    failure = None
    result = None
    try:
        result = run_servo(world, graph, config.target_vertex, config, rng=rng)
        records = result.records
    except ServoFailure as exc:
        failure = exc
        records = list(exc.records or [])

    wall = time.perf_counter() - t0
    summary = _summarize(config, graph, result, records, wall, failure)
    artifacts = ScenarioArtifacts(
        config=config, summary=summary, records=records, graph=graph, result=result
    )
    if config.out_dir is not None:
        out = Path(config.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        artifacts.csv_path = out / "metrics.csv"
        write_metrics_csv(artifacts.csv_path, records)
        artifacts.summary_path = out / "summary.json"
        artifacts.summary_path.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
        artifacts.graph_path = out / "graph.json"
        graph.save_json(artifacts.graph_path)
    if failure is not None:
        raise failure
    return artifacts


def replay_metrics(records, final_mpd_px: float | None = None) -> dict:
    """Summary statistics plus plot-ready series from a recorded log."""
    if not records:
        raise ConfigurationError("empty metrics log")
    mpd = np.array([r.mpd_px for r in records])
    rcm = np.array([r.rcm_error_mm for r in records])
    et_norm = np.array([float(np.linalg.norm(r.e_t)) for r in records])
    valid = np.isfinite(mpd)
    vertex_sequence = []
    for r in records:
        if not vertex_sequence or vertex_sequence[-1] != r.target_vertex:
            vertex_sequence.append(r.target_vertex)
    stats = {
        "steps": len(records),
        "duration_s": float(records[-1].time_s - records[0].time_s),
        "final_mpd_px": float(mpd[valid][-1]) if valid.any() else None,
        "rcm_max_mm": float(rcm.max()),
        "rcm_mean_mm": float(rcm.mean()),
        "estimation_failures": int((~valid).sum()),
        "vertex_sequence": vertex_sequence,
    }
    if final_mpd_px is not None:
        stats["converged"] = bool(valid.any() and mpd[valid][-1] <= final_mpd_px)
    series = {
        "step": [r.step for r in records],
        "time_s": [float(r.time_s) for r in records],
        "mpd_px": [float(r.mpd_px) for r in records],
        "rcm_error_mm": [float(r.rcm_error_mm) for r in records],
        "task_error_norm": [float(v) for v in et_norm],
        "target_vertex": [r.target_vertex for r in records],
    }
    return {"stats": stats, "series": series}
