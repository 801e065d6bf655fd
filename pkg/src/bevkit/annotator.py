"""Rule-based per-(vehicle, timestep) scene annotation.

Produces, for every vehicle at every timestep with enough future horizon:
the containing area type, the occupied lane and its type, the future
maneuver category, the lane ids the future trajectory touches, neighbor
vehicle ids bucketed into four bearing sectors, and distances to all other
vehicles.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import geometry
from .errors import InsufficientHorizon
from .scenemodel import (
    AREA_PRIORITY,
    AreaType,
    LaneType,
    MapGraph,
    Scene,
    TrajectoryCategory,
    Vec2,
    VehicleState,
    VehicleTrack,
)

log = logging.getLogger(__name__)

DIRECTIONS = ("front", "behind", "left", "right")

_QUARTER = math.pi / 4.0
_THREE_QUARTER = 3.0 * math.pi / 4.0


@dataclass(frozen=True)
class AnnotatorConfig:
    """Annotation thresholds; defaults are the toolkit's declared convention."""

    stationary_displacement: float = 2.0  # meters over the horizon
    straight_max_deg: float = 15.0
    uturn_min_deg: float = 120.0
    neighbor_range: float = 50.0  # meters
    horizon: int = 50  # future timesteps
    min_horizon: int = 10


DEFAULT_CONFIG = AnnotatorConfig()


@dataclass(frozen=True)
class AnnotationRecord:
    scene_id: str
    vehicle_id: str
    timestep: int
    area_type: AreaType
    lane_type: LaneType
    current_lane: str | None
    trajectory_category: TrajectoryCategory
    trajectory_lanes: tuple[str, ...]
    relative_cars: dict[str, tuple[str, ...]]
    distances: dict[str, float]


# ---------------------------------------------------------------------------
# map index: precomputed per-lane / per-area arrays for fast point queries


class MapIndex:
    def __init__(self, map_graph: MapGraph):
        self.map = map_graph
        self._lanes = []
        for lid in sorted(map_graph.lanes):
            lane = map_graph.lanes[lid]
            bnd = geometry.as_xy(lane.boundary)
            cl = geometry.as_xy(lane.centerline)
            self._lanes.append(
                {
                    "id": lid,
                    "boundary": bnd,
                    "bbox": geometry.polygon_bbox(bnd),
                    "centerline": cl,
                    "cum": geometry.polyline_cumlen(cl),
                }
            )
        self._areas = []
        for aid in sorted(map_graph.areas, key=lambda a: (AREA_PRIORITY.index(map_graph.areas[a].area_type), a)):
            area = map_graph.areas[aid]
            poly = geometry.as_xy(area.polygon)
            self._areas.append(
                {"id": aid, "polygon": poly, "bbox": geometry.polygon_bbox(poly), "type": area.area_type}
            )

    def area_types_batch(self, points: np.ndarray) -> list[AreaType]:
        out = [AreaType.REGULAR_ROAD] * len(points)
        unresolved = np.ones(len(points), dtype=bool)
        for rec in self._areas:  # already in priority order
            if not unresolved.any():
                break
            x0, y0, x1, y1 = rec["bbox"]
            tol = geometry.ON_EDGE_TOL
            cand = unresolved & (
                (points[:, 0] >= x0 - tol)
                & (points[:, 0] <= x1 + tol)
                & (points[:, 1] >= y0 - tol)
                & (points[:, 1] <= y1 + tol)
            )
            if not cand.any():
                continue
            idx = np.nonzero(cand)[0]
            hit = geometry.points_in_polygon(points[idx], rec["polygon"])
            for i in idx[hit]:
                out[i] = rec["type"]
                unresolved[i] = False
        return out

    def lanes_batch(self, points: np.ndarray, yaws: np.ndarray) -> list[str | None]:
        """Best lane id per query, by (heading misalignment, centerline distance, id)."""
        n = len(points)
        best: list[tuple[float, float, str] | None] = [None] * n
        tol = geometry.ON_EDGE_TOL
        for rec in self._lanes:
            x0, y0, x1, y1 = rec["bbox"]
            cand = (
                (points[:, 0] >= x0 - tol)
                & (points[:, 0] <= x1 + tol)
                & (points[:, 1] >= y0 - tol)
                & (points[:, 1] <= y1 + tol)
            )
            if not cand.any():
                continue
            idx = np.nonzero(cand)[0]
            hit = geometry.points_in_polygon(points[idx], rec["boundary"])
            for i in idx[hit]:
                _, lat, tang = geometry.project_to_polyline(rec["centerline"], rec["cum"], points[i])
                mis = abs(geometry.angle_diff(float(yaws[i]), tang))
                key = (mis, lat, rec["id"])
                if best[i] is None or key < best[i]:
                    best[i] = key
        return [b[2] if b is not None else None for b in best]


# ---------------------------------------------------------------------------
# single-query operations


def classify_area(map_graph: MapGraph, position: Vec2, index: MapIndex | None = None) -> AreaType:
    """Area type of the highest-priority polygon containing the point."""
    index = index or MapIndex(map_graph)
    return index.area_types_batch(np.array([[position.x, position.y]]))[0]


def current_lane(map_graph: MapGraph, state: VehicleState, index: MapIndex | None = None) -> str | None:
    """Containing lane whose centerline tangent best matches the heading."""
    index = index or MapIndex(map_graph)
    return index.lanes_batch(np.array([[state.x, state.y]]), np.array([state.yaw]))[0]


def classify_motion(
    xy: np.ndarray, yaws: Sequence[float], config: AnnotatorConfig = DEFAULT_CONFIG
) -> TrajectoryCategory:
    """Maneuver category of a state window: displacement gate, then net yaw change."""
    xy = np.asarray(xy, dtype=float)
    disp = float(math.hypot(xy[-1, 0] - xy[0, 0], xy[-1, 1] - xy[0, 1]))
    if disp < config.stationary_displacement:
        return TrajectoryCategory.STATIONARY
    # unwrapped end-minus-start yaw: sum of shortest-arc steps
    steps = (np.diff(np.asarray(yaws, dtype=float)) + math.pi) % (2.0 * math.pi) - math.pi
    steps[steps == -math.pi] = math.pi
    deg = math.degrees(float(steps.sum()))
    if abs(deg) >= config.uturn_min_deg:
        return TrajectoryCategory.U_TURN
    if abs(deg) < config.straight_max_deg:
        return TrajectoryCategory.STRAIGHT
    return TrajectoryCategory.LEFT_TURN if deg > 0 else TrajectoryCategory.RIGHT_TURN


def _window(track: VehicleTrack, from_t: int, horizon: int, min_horizon: int):
    if not track.has(from_t):
        raise InsufficientHorizon(
            f"vehicle {track.vehicle_id!r} has no state at t={from_t}"
        )
    end = min(from_t + horizon, track.t1)
    if end - from_t < min_horizon:
        raise InsufficientHorizon(
            f"only {end - from_t} future steps at t={from_t}, need >= {min_horizon}"
        )
    states = [track.state_at(t) for t in range(from_t, end + 1)]
    return states


def classify_trajectory(
    track: VehicleTrack,
    from_t: int,
    horizon: int = 50,
    config: AnnotatorConfig = DEFAULT_CONFIG,
) -> TrajectoryCategory:
    states = _window(track, from_t, horizon, config.min_horizon)
    xy = np.array([(s.x, s.y) for s in states])
    return classify_motion(xy, [s.yaw for s in states], config)


def lanes_along(
    map_graph: MapGraph,
    track: VehicleTrack,
    from_t: int,
    to_t: int,
    index: MapIndex | None = None,
) -> tuple[str, ...]:
    """current_lane at each step of [from_t, to_t], collapsed, Nones dropped."""
    index = index or MapIndex(map_graph)
    states = [track.state_at(t) for t in range(from_t, to_t + 1)]
    pts = np.array([(s.x, s.y) for s in states])
    yaws = np.array([s.yaw for s in states])
    lane_ids = index.lanes_batch(pts, yaws)
    return _collapse(lane_ids)


def _collapse(lane_ids: Iterable[str | None]) -> tuple[str, ...]:
    out: list[str] = []
    prev = object()
    for lid in lane_ids:
        if lid is not None and lid != prev:
            out.append(lid)
        if lid is not None:
            prev = lid
    # drop only consecutive duplicates but keep first-occurrence order unique
    seen: set[str] = set()
    uniq = []
    for lid in out:
        if lid not in seen:
            seen.add(lid)
            uniq.append(lid)
    return tuple(uniq)


def trajectory_lanes(
    map_graph: MapGraph,
    track: VehicleTrack,
    from_t: int,
    horizon: int = 50,
    index: MapIndex | None = None,
    config: AnnotatorConfig = DEFAULT_CONFIG,
) -> tuple[str, ...]:
    if not track.has(from_t):
        raise InsufficientHorizon(f"vehicle {track.vehicle_id!r} has no state at t={from_t}")
    end = min(from_t + horizon, track.t1)
    if end - from_t < config.min_horizon:
        raise InsufficientHorizon(
            f"only {end - from_t} future steps at t={from_t}, need >= {config.min_horizon}"
        )
    return lanes_along(map_graph, track, from_t, end, index)


def bearing_direction(bearing: float) -> str:
    """Sector for a bearing in radians: front |b|<=45deg, behind |b|>=135deg, else left/right."""
    if abs(bearing) <= _QUARTER:
        return "front"
    if abs(bearing) >= _THREE_QUARTER:
        return "behind"
    return "left" if bearing > 0 else "right"


def relative_cars(
    scene: Scene,
    ego_id: str,
    timestep: int,
    range_limit: float = DEFAULT_CONFIG.neighbor_range,
) -> dict[str, tuple[str, ...]]:
    ego = scene.track(ego_id).state_at(timestep)
    buckets: dict[str, list[tuple[float, str]]] = {d: [] for d in DIRECTIONS}
    for tr in scene.tracks:
        if tr.vehicle_id == ego_id or not tr.has(timestep):
            continue
        st = tr.state_at(timestep)
        dx, dy = st.x - ego.x, st.y - ego.y
        dist = math.hypot(dx, dy)
        if dist > range_limit:
            continue
        bearing = geometry.angle_diff(math.atan2(dy, dx), ego.yaw)
        buckets[bearing_direction(bearing)].append((dist, tr.vehicle_id))
    return {d: tuple(vid for _, vid in sorted(v)) for d, v in buckets.items()}


def pairwise_distances(scene: Scene, ego_id: str, timestep: int) -> dict[str, float]:
    ego = scene.track(ego_id).state_at(timestep)
    out: dict[str, float] = {}
    for tr in scene.tracks:
        if tr.vehicle_id == ego_id or not tr.has(timestep):
            continue
        st = tr.state_at(timestep)
        out[tr.vehicle_id] = math.hypot(st.x - ego.x, st.y - ego.y)
    return out


# ---------------------------------------------------------------------------
# whole-scene annotation


def annotate_scene(scene: Scene, config: AnnotatorConfig = DEFAULT_CONFIG) -> list[AnnotationRecord]:
    """One record per (vehicle, timestep) with >= min_horizon future steps."""
    index = MapIndex(scene.map)
    tracks = sorted(scene.tracks, key=lambda tr: tr.vehicle_id)
    n = len(tracks)
    t_lo = tracks[0].t0 if tracks else 0
    t_hi = tracks[0].t1 if tracks else -1
    steps = t_hi - t_lo + 1

    xy = np.zeros((n, steps, 2))
    yaws = np.zeros((n, steps))
    for i, tr in enumerate(tracks):
        for j, (_, st) in enumerate(tr.states):
            xy[i, j] = (st.x, st.y)
            yaws[i, j] = st.yaw

    # lane and area lookups for every (vehicle, timestep) in one batch per map feature
    flat_pts = xy.reshape(-1, 2)
    flat_yaw = yaws.reshape(-1)
    lane_flat = index.lanes_batch(flat_pts, flat_yaw)
    area_flat = index.area_types_batch(flat_pts)
    lane_of = [lane_flat[i * steps : (i + 1) * steps] for i in range(n)]
    area_of = [area_flat[i * steps : (i + 1) * steps] for i in range(n)]

    records: list[AnnotationRecord] = []
    skipped = 0
    for j in range(steps):
        t = t_lo + j
        pos = xy[:, j]
        diff = pos[:, None, :] - pos[None, :, :]
        dists = np.hypot(diff[..., 0], diff[..., 1])
        future = steps - 1 - j
        if future < config.min_horizon:
            skipped += n
            continue
        end = min(j + config.horizon, steps - 1)
        for i, tr in enumerate(tracks):
            category = classify_motion(xy[i, j : end + 1], yaws[i, j : end + 1], config)
            lane_id = lane_of[i][j]
            lane_type = scene.map.lanes[lane_id].lane_type if lane_id is not None else LaneType.OTHER
            buckets: dict[str, list[tuple[float, str]]] = {d: [] for d in DIRECTIONS}
            distances: dict[str, float] = {}
            for k in range(n):
                if k == i:
                    continue
                distances[tracks[k].vehicle_id] = float(dists[i, k])
                if dists[i, k] > config.neighbor_range:
                    continue
                bearing = geometry.angle_diff(
                    math.atan2(pos[k, 1] - pos[i, 1], pos[k, 0] - pos[i, 0]), float(yaws[i, j])
                )
                buckets[bearing_direction(bearing)].append((float(dists[i, k]), tracks[k].vehicle_id))
            records.append(
                AnnotationRecord(
                    scene_id=scene.scene_id,
                    vehicle_id=tr.vehicle_id,
                    timestep=t,
                    area_type=area_of[i][j],
                    lane_type=lane_type,
                    current_lane=lane_id,
                    trajectory_category=category,
                    trajectory_lanes=_collapse(lane_of[i][j : end + 1]),
                    relative_cars={d: tuple(v for _, v in sorted(b)) for d, b in buckets.items()},
                    distances=distances,
                )
            )
    if skipped:
        log.debug("annotate_scene(%s): skipped %d (vehicle, timestep) pairs short of horizon", scene.scene_id, skipped)
    records.sort(key=lambda r: (r.vehicle_id, r.timestep))
    return records


# ---------------------------------------------------------------------------
# JSONL I/O (field names follow the annotation schema)


def record_to_dict(rec: AnnotationRecord) -> dict:
    return {
        "scene_id": rec.scene_id,
        "vehicle_id": rec.vehicle_id,
        "timestep": rec.timestep,
        "area_type": rec.area_type.value,
        "lane_type": rec.lane_type.value,
        "current_lane": rec.current_lane,
        "trajectory": rec.trajectory_category.value,
        "trajectory_lane": list(rec.trajectory_lanes),
        "relative_cars": {d: list(v) for d, v in rec.relative_cars.items()},
        "distance": {vid: round(d, 6) for vid, d in sorted(rec.distances.items())},
    }


def record_from_dict(d: dict) -> AnnotationRecord:
    return AnnotationRecord(
        scene_id=d["scene_id"],
        vehicle_id=d["vehicle_id"],
        timestep=int(d["timestep"]),
        area_type=AreaType(d["area_type"]),
        lane_type=LaneType(d["lane_type"]),
        current_lane=d["current_lane"],
        trajectory_category=TrajectoryCategory(d["trajectory"]),
        trajectory_lanes=tuple(d["trajectory_lane"]),
        relative_cars={k: tuple(v) for k, v in d["relative_cars"].items()},
        distances={k: float(v) for k, v in d["distance"].items()},
    )


def write_annotations_jsonl(records: Iterable[AnnotationRecord], path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(record_to_dict(rec), sort_keys=True, separators=(",", ":")) + "\n")


def read_annotations_jsonl(path) -> list[AnnotationRecord]:
    out = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(record_from_dict(json.loads(line)))
    return out
