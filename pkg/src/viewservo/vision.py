"""Synthetic endoscopic camera over a planar feature scene.

The scene is a textured plane carrying point features with stable ids. A raw
sensor projects them through a pinhole model with radial/tangential
distortion and a circular field-of-view mask; the processing chain then
undistorts, crops the rectangle inscribed in the circle, and rescales,
updating the intrinsics accordingly. Matching is id-based with controllable
corruption so estimator robustness is testable and deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .exceptions import (
    ConfigurationError,
    DegenerateGeometryError,
    EstimationError,
    InsufficientFeaturesError,
    NumericError,
    UndefinedMetricError,
)
from .homography import PIXEL, CameraIntrinsics, Homography
from .kinematics import Pose, rotation_about_axis

Z_MIN = 1e-6
UNDISTORT_MAX_ITERS = 20
UNDISTORT_TOL = 1e-10


def _as_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


@dataclass(frozen=True)
class PlanarScene:
    """Feature-carrying plane; features live at z=0 of the plane frame."""

    plane_pose: Pose
    feature_ids: np.ndarray
    feature_xy: np.ndarray
    texture_seed: int = 0

    def __post_init__(self):
        ids = np.asarray(self.feature_ids, dtype=int).reshape(-1)
        xy = np.asarray(self.feature_xy, dtype=float)
        if xy.shape != (ids.shape[0], 2):
            raise ConfigurationError(f"feature_xy must be ({ids.shape[0]}, 2), got {xy.shape}")
        if len(set(ids.tolist())) != ids.shape[0]:
            raise ConfigurationError("feature ids must be unique")
        object.__setattr__(self, "feature_ids", ids)
        object.__setattr__(self, "feature_xy", xy)

    @staticmethod
    def generate(plane_pose: Pose, n_features: int = 40, extent: float = 0.08, seed: int = 0) -> "PlanarScene":
        """Uniform feature texture on a square of half-side `extent` metres."""
        if n_features < 1:
            raise ConfigurationError("n_features must be positive")
        rng = np.random.default_rng(seed)
        xy = rng.uniform(-extent, extent, size=(n_features, 2))
        return PlanarScene(plane_pose=plane_pose, feature_ids=np.arange(n_features), feature_xy=xy, texture_seed=seed)

    @property
    def normal(self) -> np.ndarray:
        return self.plane_pose.rotation[:, 2].copy()

    def world_points(self) -> np.ndarray:
        pts = np.column_stack([self.feature_xy, np.zeros(len(self.feature_ids))])
        return pts @ self.plane_pose.rotation.T + self.plane_pose.translation

    def rotated_in_plane(self, angle_rad: float) -> "PlanarScene":
        """Scene spun about its own normal; feature pattern rides along."""
        delta = Pose(rotation=rotation_about_axis(np.array([0.0, 0.0, 1.0]), angle_rad), translation=np.zeros(3))
        return replace(self, plane_pose=self.plane_pose.compose(delta))

    def tilted(self, angle_rad: float, in_plane_axis: int = 0) -> "PlanarScene":
        """Scene tipped about one of its in-plane axes (0 = x, 1 = y)."""
        axis = np.zeros(3)
        axis[in_plane_axis] = 1.0
        delta = Pose(rotation=rotation_about_axis(axis, angle_rad), translation=np.zeros(3))
        return replace(self, plane_pose=self.plane_pose.compose(delta))


@dataclass(frozen=True)
class FeatureObservation:
    """One feature as seen in some pixel frame."""

    id: int
    pixel: np.ndarray
    inside_fov: bool

    def __post_init__(self):
        p = np.asarray(self.pixel, dtype=float).reshape(-1)
        if p.shape != (2,):
            raise ConfigurationError("pixel must be a 2-vector")
        if self.inside_fov and not np.all(np.isfinite(p)):
            raise ConfigurationError("in-FOV observation must have a finite pixel")
        object.__setattr__(self, "pixel", p)


@dataclass(frozen=True)
class CircularFov:
    """Synthetic endoscope boundary in raw sensor pixels."""

    center: tuple[float, float]
    radius: float

    def __post_init__(self):
        if self.radius <= 0:
            raise ConfigurationError("fov radius must be positive")

    def contains(self, pixel: np.ndarray) -> bool:
        d = np.asarray(pixel, dtype=float) - np.asarray(self.center, dtype=float)
        return bool(d @ d <= self.radius * self.radius)


def distort(p: np.ndarray, coefficients) -> np.ndarray:
    """Apply the 5-coefficient radial/tangential model in normalized coords."""
    k1, k2, p1, p2, k3 = coefficients
    p = np.asarray(p, dtype=float)
    x, y = p[..., 0], p[..., 1]
    r2 = x * x + y * y
    radial = 1.0 + r2 * (k1 + r2 * (k2 + r2 * k3))
    xd = x * radial + 2.0 * p1 * x * y + p2 * (r2 + 2.0 * x * x)
    yd = y * radial + p1 * (r2 + 2.0 * y * y) + 2.0 * p2 * x * y
    return np.stack([xd, yd], axis=-1)


def undistort(p: np.ndarray, coefficients) -> np.ndarray:
    """Invert distort by fixed-point iteration; raises on non-convergence."""
    k1, k2, p1, p2, k3 = coefficients
    pd = np.asarray(p, dtype=float)
    xd, yd = pd[..., 0], pd[..., 1]
    x, y = xd.copy(), yd.copy()
    for _ in range(UNDISTORT_MAX_ITERS):
        r2 = x * x + y * y
        radial = 1.0 + r2 * (k1 + r2 * (k2 + r2 * k3))
        x_new = (xd - (2.0 * p1 * x * y + p2 * (r2 + 2.0 * x * x))) / radial
        y_new = (yd - (p1 * (r2 + 2.0 * y * y) + 2.0 * p2 * x * y)) / radial
        step = max(np.max(np.abs(x_new - x)), np.max(np.abs(y_new - y)))
        x, y = x_new, y_new
        if step < UNDISTORT_TOL:
            return np.stack([x, y], axis=-1)
    residual = np.max(np.abs(distort(np.stack([x, y], axis=-1), coefficients) - pd))
    raise NumericError(
        f"undistort failed to converge in {UNDISTORT_MAX_ITERS} iterations; last step {step:.3e}, residual {residual:.3e}"
    )


def project_scene(scene: PlanarScene, camera: Pose, K: CameraIntrinsics, fov: CircularFov | None = None) -> list[FeatureObservation]:
    """Raw-sensor observations: pinhole projection plus distortion and FOV mask.

    Points behind the camera come back with inside_fov False; a view with no
    point in front at all is rejected as degenerate.
    """
    world = scene.world_points()
    cam_pts = (world - camera.translation) @ camera.rotation
    z = cam_pts[:, 2]
    in_front = z > Z_MIN
    if not np.any(in_front):
        raise DegenerateGeometryError("no scene feature lies in front of the camera")

    observations = []
    for idx, fid in enumerate(scene.feature_ids):
        if not in_front[idx]:
            observations.append(FeatureObservation(id=int(fid), pixel=np.array([np.nan, np.nan]), inside_fov=False))
            continue
        m = cam_pts[idx, :2] / z[idx]
        if K.has_distortion:
            m = distort(m, K.distortion)
        pixel = np.array([K.fx * m[0] + K.cx, K.fy * m[1] + K.cy])
        inside = fov.contains(pixel) if fov is not None else True
        observations.append(FeatureObservation(id=int(fid), pixel=pixel, inside_fov=inside))
    return observations


def crop_rescale_intrinsics(K: CameraIntrinsics, crop_origin: tuple[float, float], scale: float) -> CameraIntrinsics:
    """Intrinsics after cropping at crop_origin then rescaling by scale.

    Distortion coefficients ride along unchanged; they live on the normalized
    plane, which pixel-frame crop/scale does not touch.
    """
    if scale <= 0:
        raise ConfigurationError("scale must be positive")
    x0, y0 = float(crop_origin[0]), float(crop_origin[1])
    return CameraIntrinsics(
        fx=scale * K.fx,
        fy=scale * K.fy,
        cx=scale * (K.cx - x0),
        cy=scale * (K.cy - y0),
        distortion=K.distortion,
    )


@dataclass(frozen=True)
class EndoscopeCamera:
    """Raw sensor plus the undistort/crop/rescale chain feeding the estimators."""

    intrinsics: CameraIntrinsics
    width: int
    height: int
    fov: CircularFov
    crop_origin: tuple[float, float]
    crop_size: tuple[float, float]
    scale: float

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ConfigurationError("sensor size must be positive")
        if self.scale <= 0 or self.crop_size[0] <= 0 or self.crop_size[1] <= 0:
            raise ConfigurationError("crop size and scale must be positive")

    @staticmethod
    def default() -> "EndoscopeCamera":
        """640x480 sensor, centred circle of radius 230 px, inscribed 4:3 crop
        rescaled back to 640x480."""
        radius = 230.0
        crop_w = 2.0 * radius / 1.25
        crop_h = 0.75 * crop_w
        return EndoscopeCamera(
            intrinsics=CameraIntrinsics(
                fx=500.0, fy=500.0, cx=320.0, cy=240.0, distortion=(-0.18, 0.04, 5e-4, -5e-4, 0.005)
            ),
            width=640,
            height=480,
            fov=CircularFov(center=(320.0, 240.0), radius=radius),
            crop_origin=(320.0 - crop_w / 2.0, 240.0 - crop_h / 2.0),
            crop_size=(crop_w, crop_h),
            scale=640.0 / crop_w,
        )

    @property
    def output_size(self) -> tuple[int, int]:
        return (int(round(self.scale * self.crop_size[0])), int(round(self.scale * self.crop_size[1])))

    @property
    def output_intrinsics(self) -> CameraIntrinsics:
        """Intrinsics of the undistorted, cropped, rescaled output frame."""
        undistorted = CameraIntrinsics(
            fx=self.intrinsics.fx, fy=self.intrinsics.fy, cx=self.intrinsics.cx, cy=self.intrinsics.cy
        )
        return crop_rescale_intrinsics(undistorted, self.crop_origin, self.scale)

    def observe(self, scene: PlanarScene, camera_pose: Pose) -> list[FeatureObservation]:
        """Observations in the output pixel frame, visibility per the raw sensor."""
        raw = project_scene(scene, camera_pose, self.intrinsics, self.fov)
        out_w, out_h = self.output_size
        K = self.intrinsics
        K_out = self.output_intrinsics
        observations = []
        for obs in raw:
            visible = (
                obs.inside_fov
                and 0.0 <= obs.pixel[0] <= self.width
                and 0.0 <= obs.pixel[1] <= self.height
            )
            if not visible:
                observations.append(FeatureObservation(id=obs.id, pixel=np.array([np.nan, np.nan]), inside_fov=False))
                continue
            m_d = np.array([(obs.pixel[0] - K.cx) / K.fx, (obs.pixel[1] - K.cy) / K.fy])
            m = undistort(m_d, K.distortion) if K.has_distortion else m_d
            pixel = np.array([K_out.fx * m[0] + K_out.cx, K_out.fy * m[1] + K_out.cy])
            inside = 0.0 <= pixel[0] <= out_w and 0.0 <= pixel[1] <= out_h
            observations.append(FeatureObservation(id=obs.id, pixel=pixel, inside_fov=inside))
        return observations


@dataclass(frozen=True)
class CorruptionParams:
    """Knobs emulating descriptor failures and occlusion during matching."""

    noise_px: float = 0.0
    outlier_rate: float = 0.0
    dropout: float = 0.0

    def __post_init__(self):
        if self.noise_px < 0:
            raise ConfigurationError("noise_px must be non-negative")
        for name in ("outlier_rate", "dropout"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigurationError(f"{name} must lie in [0, 1], got {v}")


@dataclass(frozen=True)
class MatchSet:
    """Id-matched feature pairs between a target view and the current view.

    outlier_flags is ground truth for evaluation only; estimators must not
    read it (estimator_view strips it).
    """

    ids: np.ndarray
    target_pixels: np.ndarray
    current_pixels: np.ndarray
    outlier_flags: np.ndarray | None = None

    def __post_init__(self):
        ids = np.asarray(self.ids, dtype=int).reshape(-1)
        tgt = np.asarray(self.target_pixels, dtype=float)
        cur = np.asarray(self.current_pixels, dtype=float)
        n = ids.shape[0]
        if tgt.shape != (n, 2) or cur.shape != (n, 2):
            raise ConfigurationError(f"pixel arrays must be ({n}, 2), got {tgt.shape} and {cur.shape}")
        if len(set(ids.tolist())) != n:
            raise ConfigurationError("match ids must be unique")
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "target_pixels", tgt)
        object.__setattr__(self, "current_pixels", cur)
        if self.outlier_flags is not None:
            flags = np.asarray(self.outlier_flags, dtype=bool).reshape(-1)
            if flags.shape != (n,):
                raise ConfigurationError("outlier_flags length mismatch")
            object.__setattr__(self, "outlier_flags", flags)

    def __len__(self) -> int:
        return self.ids.shape[0]

    def estimator_view(self) -> "MatchSet":
        return MatchSet(ids=self.ids, target_pixels=self.target_pixels, current_pixels=self.current_pixels)

    def subset(self, mask: np.ndarray) -> "MatchSet":
        mask = np.asarray(mask, dtype=bool)
        return MatchSet(
            ids=self.ids[mask],
            target_pixels=self.target_pixels[mask],
            current_pixels=self.current_pixels[mask],
            outlier_flags=None if self.outlier_flags is None else self.outlier_flags[mask],
        )


def match_views(
    current: list[FeatureObservation],
    target: list[FeatureObservation],
    corruption: CorruptionParams = CorruptionParams(),
    seed=0,
    image_size: tuple[int, int] = (640, 480),
) -> MatchSet:
    """Match co-visible features by id, then corrupt deterministically.

    Corruption order: dropout removes round(delta*n) matches, round(rho*k) of
    the survivors become uniform wrong locations (flagged), Gaussian noise_px
    jitters the remaining current-view pixels. Target pixels stay untouched;
    their detection noise was frozen when the vertex was captured.
    """
    rng = _as_rng(seed)
    cur_by_id = {o.id: o for o in current if o.inside_fov}
    tgt_by_id = {o.id: o for o in target if o.inside_fov}
    shared = sorted(set(cur_by_id) & set(tgt_by_id))

    n = len(shared)
    n_drop = int(round(corruption.dropout * n))
    keep = np.ones(n, dtype=bool)
    if n_drop > 0:
        keep[rng.choice(n, size=n_drop, replace=False)] = False
    kept_ids = [shared[i] for i in range(n) if keep[i]]
    k = len(kept_ids)
    if k < 4:
        raise InsufficientFeaturesError(f"only {k} matches survive dropout; need at least 4")

    tgt_px = np.array([tgt_by_id[i].pixel for i in kept_ids])
    cur_px = np.array([cur_by_id[i].pixel for i in kept_ids])
    flags = np.zeros(k, dtype=bool)

    n_out = int(round(corruption.outlier_rate * k))
    if n_out > 0:
        out_idx = rng.choice(k, size=n_out, replace=False)
        flags[out_idx] = True
        w, h = image_size
        cur_px[out_idx] = rng.uniform(low=[0.0, 0.0], high=[float(w), float(h)], size=(n_out, 2))

    if corruption.noise_px > 0:
        noise = rng.normal(scale=corruption.noise_px, size=(k, 2))
        cur_px[~flags] += noise[~flags]

    return MatchSet(ids=np.array(kept_ids), target_pixels=tgt_px, current_pixels=cur_px, outlier_flags=flags)


def _hartley_normalization(points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    centroid = points.mean(axis=0)
    centered = points - centroid
    mean_dist = np.mean(np.linalg.norm(centered, axis=1))
    if mean_dist < 1e-12:
        raise EstimationError("all points coincide; homography undefined")
    s = np.sqrt(2.0) / mean_dist
    T = np.array([[s, 0.0, -s * centroid[0]], [0.0, s, -s * centroid[1]], [0.0, 0.0, 1.0]])
    return T, centered * s


def apply_homography(G: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Map (n, 2) pixels through a 3x3 matrix; rows near the horizon go to inf."""
    pts = np.asarray(points, dtype=float)
    homogeneous = np.column_stack([pts, np.ones(len(pts))]) @ np.asarray(G, dtype=float).T
    w = homogeneous[:, 2]
    out = np.full_like(pts, np.inf)
    ok = np.abs(w) > 1e-12
    out[ok] = homogeneous[ok, :2] / w[ok, None]
    return out


def estimate_homography_dlt(matches: MatchSet) -> Homography:
    """Normalized DLT: G maps target pixels to current pixels."""
    n = len(matches)
    if n < 4:
        raise InsufficientFeaturesError(f"DLT needs at least 4 matches, got {n}")
    T_tgt, tgt = _hartley_normalization(matches.target_pixels)
    T_cur, cur = _hartley_normalization(matches.current_pixels)

    A = np.zeros((2 * n, 9))
    for i in range(n):
        x, y = tgt[i]
        u, v = cur[i]
        A[2 * i] = [-x, -y, -1.0, 0.0, 0.0, 0.0, u * x, u * y, u]
        A[2 * i + 1] = [0.0, 0.0, 0.0, -x, -y, -1.0, v * x, v * y, v]

    _, s, Vt = np.linalg.svd(A)
    if s[-2] < 1e-10 * max(s[0], 1e-300):
        raise EstimationError("degenerate correspondence configuration (rank-deficient design matrix)")
    G_hat = Vt[-1].reshape(3, 3)
    G = np.linalg.inv(T_cur) @ G_hat @ T_tgt
    if abs(np.linalg.det(G)) <= 1e-12:
        raise EstimationError("estimated homography is singular")
    if np.linalg.det(G) < 0:
        G = -G
    return Homography(matrix=G, frame_tag=PIXEL)


@dataclass(frozen=True)
class RansacParams:
    threshold_px: float = 2.0
    confidence: float = 0.995
    max_iters: int = 2000

    def __post_init__(self):
        if self.threshold_px <= 0 or not 0.0 < self.confidence < 1.0 or self.max_iters < 1:
            raise ConfigurationError(f"invalid RANSAC parameters: {self}")


def estimate_homography_ransac(
    matches: MatchSet, params: RansacParams = RansacParams(), seed=0
) -> tuple[Homography, np.ndarray]:
    """RANSAC over 4-point DLT samples with a final refit on the consensus set.

    Deterministic given (matches, params, seed). Returns the refit pixel-space
    homography and the boolean inlier mask of the best consensus.
    """
    n = len(matches)
    if n < 4:
        raise InsufficientFeaturesError(f"RANSAC needs at least 4 matches, got {n}")
    rng = _as_rng(seed)

    best_mask = None
    best_count = 0
    best_err = np.inf
    needed = params.max_iters
    i = 0
    while i < min(needed, params.max_iters):
        i += 1
        idx = rng.choice(n, size=4, replace=False)
        try:
            model = estimate_homography_dlt(matches.subset(np.isin(np.arange(n), idx)))
        except EstimationError:
            continue
        err = np.linalg.norm(apply_homography(model.matrix, matches.target_pixels) - matches.current_pixels, axis=1)
        mask = err <= params.threshold_px
        count = int(mask.sum())
        mean_err = float(err[mask].mean()) if count else np.inf
        if count > best_count or (count == best_count and mean_err < best_err):
            best_mask, best_count, best_err = mask, count, mean_err
            ratio = count / n
            if ratio >= 1.0:
                needed = i
            elif ratio > 0:
                # standard sample-count bound for 4-point models
                denom = np.log1p(-(ratio**4))
                if denom < 0:
                    needed = int(np.ceil(np.log(1.0 - params.confidence) / denom))

    if best_mask is None or best_count < 4:
        raise EstimationError(f"no homography reached 4 inliers in {i} iterations")
    refit = estimate_homography_dlt(matches.subset(best_mask))
    return refit, best_mask


def mean_pairwise_distance(current_pixels: np.ndarray, target_pixels: np.ndarray, G: np.ndarray | None = None) -> float:
    """Mean pixel distance between matched points, mapping targets through G first."""
    cur = np.asarray(current_pixels, dtype=float)
    tgt = np.asarray(target_pixels, dtype=float)
    if cur.shape != tgt.shape or cur.ndim != 2 or cur.shape[1] != 2:
        raise ConfigurationError(f"matched sets must share shape (n, 2), got {cur.shape} and {tgt.shape}")
    if cur.shape[0] == 0:
        raise UndefinedMetricError("mean pairwise distance over an empty set")
    mapped = tgt if G is None else apply_homography(G, tgt)
    return float(np.mean(np.linalg.norm(cur - mapped, axis=1)))
