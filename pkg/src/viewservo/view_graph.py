"""Graph of captured desired views with constant-cost shortest-path navigation.

Vertices are images: feature snapshots plus the intrinsics in force at
capture time. Edges record capture adjacency (each new vertex links to the
vertex that was current when it was taken), so the graph stays connected by
construction. The stored camera pose is evaluation metadata only; no control
path may read it.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .exceptions import ConfigurationError, InsufficientFeaturesError, PathNotFoundError
from .homography import CameraIntrinsics, Homography
from .kinematics import Pose
from .vision import (
    CorruptionParams,
    FeatureObservation,
    MatchSet,
    RansacParams,
    estimate_homography_ransac,
    match_views,
)

MIN_SNAPSHOT_FEATURES = 4
GRAPH_SCHEMA_VERSION = 1


@dataclass(frozen=True)
class ViewVertex:
    """One desired view: snapshot, intrinsics, and evaluation-only metadata."""

    id: int
    snapshot: tuple[FeatureObservation, ...]
    intrinsics: CameraIntrinsics
    timestamp: float = 0.0
    eval_camera_pose: Pose | None = None

    def __post_init__(self):
        object.__setattr__(self, "snapshot", tuple(self.snapshot))
        if self.visible_count < MIN_SNAPSHOT_FEATURES:
            raise InsufficientFeaturesError(
                f"vertex snapshot needs at least {MIN_SNAPSHOT_FEATURES} visible features, got {self.visible_count}"
            )

    @property
    def visible_count(self) -> int:
        return sum(1 for o in self.snapshot if o.inside_fov)


@dataclass
class ViewGraph:
    """Mutable view graph; one owner mutates, queries are read-only."""

    vertices: dict[int, ViewVertex] = field(default_factory=dict)
    edges: set[frozenset[int]] = field(default_factory=set)
    current_id: int | None = None

    def capture_view(
        self,
        snapshot,
        intrinsics: CameraIntrinsics,
        timestamp: float = 0.0,
        eval_camera_pose: Pose | None = None,
    ) -> int:
        """Add a vertex for the snapshot, linked to the current vertex."""
        new_id = max(self.vertices) + 1 if self.vertices else 0
        vertex = ViewVertex(
            id=new_id,
            snapshot=tuple(snapshot),
            intrinsics=intrinsics,
            timestamp=timestamp,
            eval_camera_pose=eval_camera_pose,
        )
        self.vertices[new_id] = vertex
        if self.current_id is not None:
            self.edges.add(frozenset((self.current_id, new_id)))
        self.current_id = new_id
        return new_id

    def set_current(self, vertex_id: int):
        self._require(vertex_id)
        self.current_id = vertex_id

    def neighbors(self, vertex_id: int) -> list[int]:
        self._require(vertex_id)
        out = set()
        for edge in self.edges:
            if vertex_id in edge:
                out.update(edge - {vertex_id})
        return sorted(out)

    def shortest_path(self, start: int, goal: int) -> list[int]:
        """Minimal-hop path, endpoints inclusive; ties pick the smallest next id.

        Distances-to-goal come from a BFS rooted at the goal (all edges cost
        1); walking from the start greedily through the smallest improving
        neighbor yields the lexicographically smallest shortest path.
        """
        self._require(start)
        self._require(goal)
        if start == goal:
            return [start]

        dist = {goal: 0}
        frontier = [goal]
        while frontier:
            nxt = []
            for v in frontier:
                for nb in self.neighbors(v):
                    if nb not in dist:
                        dist[nb] = dist[v] + 1
                        nxt.append(nb)
            frontier = nxt
        if start not in dist:
            raise PathNotFoundError(f"vertex {goal} is unreachable from {start}")

        path = [start]
        while path[-1] != goal:
            here = path[-1]
            step = [nb for nb in self.neighbors(here) if dist.get(nb, np.inf) == dist[here] - 1]
            path.append(min(step))
        return path

    def match_to_vertex(
        self,
        current_snapshot,
        vertex_id: int,
        params: RansacParams = RansacParams(),
        seed=0,
        corruption: CorruptionParams = CorruptionParams(),
        image_size: tuple[int, int] = (640, 480),
    ) -> tuple[MatchSet, Homography, np.ndarray]:
        """Match the live snapshot against a stored vertex and estimate G.

        G maps vertex (target) pixels into the current view. Returns the match
        set, the estimated homography, and the RANSAC inlier mask.
        """
        vertex = self._require(vertex_id)
        matches = match_views(list(current_snapshot), list(vertex.snapshot), corruption, seed, image_size)
        G, mask = estimate_homography_ransac(matches, params, seed)
        return matches, G, mask

    def target_homography(
        self,
        current_snapshot,
        vertex_id: int,
        params: RansacParams = RansacParams(),
        seed=0,
    ) -> Homography:
        """Homography mapping the stored vertex's features into the current view."""
        _, G, _ = self.match_to_vertex(current_snapshot, vertex_id, params, seed)
        return G

    def to_dict(self) -> dict:
        vertices = []
        for vid in sorted(self.vertices):
            v = self.vertices[vid]
            vertices.append(
                {
                    "id": v.id,
                    "timestamp": v.timestamp,
                    "intrinsics": {
                        "fx": v.intrinsics.fx,
                        "fy": v.intrinsics.fy,
                        "cx": v.intrinsics.cx,
                        "cy": v.intrinsics.cy,
                        "distortion": list(v.intrinsics.distortion),
                    },
                    "camera_pose": None
                    if v.eval_camera_pose is None
                    else {
                        "rotation": v.eval_camera_pose.rotation.tolist(),
                        "translation": v.eval_camera_pose.translation.tolist(),
                    },
                    "features": [
                        {"id": int(o.id), "u": float(o.pixel[0]), "v": float(o.pixel[1]), "inside_fov": bool(o.inside_fov)}
                        for o in v.snapshot
                        if o.inside_fov
                    ],
                }
            )
        return {
            "version": GRAPH_SCHEMA_VERSION,
            "current_id": self.current_id,
            "vertices": vertices,
            "edges": sorted(sorted(e) for e in self.edges),
        }

    @staticmethod
    def from_dict(data: dict) -> "ViewGraph":
        if data.get("version") != GRAPH_SCHEMA_VERSION:
            raise ConfigurationError(f"unsupported graph schema version {data.get('version')!r}")
        graph = ViewGraph()
        for vd in data["vertices"]:
            pose = None
            if vd.get("camera_pose") is not None:
                pose = Pose(
                    rotation=np.array(vd["camera_pose"]["rotation"], dtype=float),
                    translation=np.array(vd["camera_pose"]["translation"], dtype=float),
                )
            kd = vd["intrinsics"]
            vertex = ViewVertex(
                id=int(vd["id"]),
                snapshot=tuple(
                    FeatureObservation(id=int(f["id"]), pixel=np.array([f["u"], f["v"]]), inside_fov=bool(f["inside_fov"]))
                    for f in vd["features"]
                ),
                intrinsics=CameraIntrinsics(
                    fx=kd["fx"], fy=kd["fy"], cx=kd["cx"], cy=kd["cy"], distortion=tuple(kd["distortion"])
                ),
                timestamp=float(vd.get("timestamp", 0.0)),
                eval_camera_pose=pose,
            )
            if vertex.id in graph.vertices:
                raise ConfigurationError(f"duplicate vertex id {vertex.id}")
            graph.vertices[vertex.id] = vertex
        for a, b in data["edges"]:
            if a not in graph.vertices or b not in graph.vertices:
                raise ConfigurationError(f"edge ({a}, {b}) references a missing vertex")
            graph.edges.add(frozenset((int(a), int(b))))
        current = data.get("current_id")
        if current is not None:
            if current not in graph.vertices:
                raise ConfigurationError(f"current vertex {current} does not exist")
            graph.current_id = int(current)
        return graph

    def save_json(self, path):
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=2, sort_keys=True)
            f.write("\n")

    @staticmethod
    def load_json(path) -> "ViewGraph":
        with open(path) as f:
            return ViewGraph.from_dict(json.load(f))

    def _require(self, vertex_id: int) -> ViewVertex:
        if vertex_id not in self.vertices:
            raise ConfigurationError(f"vertex {vertex_id} does not exist")
        return self.vertices[vertex_id]
