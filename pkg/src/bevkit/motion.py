"""Vehicle kinematics and trajectory tooling.

Explicit-Euler unicycle dynamics over (x, y, v, yaw) with (accel, yaw_rate)
actions, exact inverse dynamics for recorded trajectories, ground-truth map
understanding extraction (area/lane one-hots plus candidate centerlines in
the ego frame), a text describer for trajectories, condition-tensor
assembly/export, and a deterministic lane-following planner.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import geometry
from .annotator import AnnotatorConfig, DEFAULT_CONFIG, MapIndex, classify_motion, lanes_along
from .errors import DegenerateInput, ParseError, UnknownVehicle
from .scenemodel import (
    AreaType,
    LaneType,
    Scene,
    TrajectoryCategory,
    Vec2,
    VehicleAction,
    VehicleState,
    DEFAULT_ACCEL_LIMIT,
    DEFAULT_DT,
    DEFAULT_YAW_RATE_LIMIT,
)

HISTORY_LEN = 10  # previous states kept per vehicle (current state included)
NAV_LANES = 4  # candidate centerlines per vehicle
NAV_POINTS = 20  # resampled points per centerline

MANEUVER_PHRASES = {
    TrajectoryCategory.STATIONARY: "remain stationary",
    TrajectoryCategory.STRAIGHT: "go straight",
    TrajectoryCategory.LEFT_TURN: "turn left",
    TrajectoryCategory.RIGHT_TURN: "turn right",
    TrajectoryCategory.U_TURN: "make a U-turn",
}

_AREA_ORDER = tuple(AreaType)
_LANE_ORDER = tuple(LaneType)


@dataclass(frozen=True)
class StateSeq:
    states: tuple[VehicleState, ...]
    dt: float = DEFAULT_DT

    def __len__(self) -> int:
        return len(self.states)

    def xy(self) -> np.ndarray:
        return np.array([(s.x, s.y) for s in self.states])


@dataclass(frozen=True)
class ActionSeq:
    actions: tuple[VehicleAction, ...]
    dt: float = DEFAULT_DT

    def __len__(self) -> int:
        return len(self.actions)


@dataclass(frozen=True)
class GlobalUnderstanding:
    """One-hot area (4) and lane (5) type vectors for a vehicle's position."""

    area_onehot: tuple[float, ...]
    lane_onehot: tuple[float, ...]

    def vector(self) -> np.ndarray:
        return np.array(self.area_onehot + self.lane_onehot, dtype=np.float32)


@dataclass(eq=False)
class NavigationReasoning:
    """Up to NAV_LANES candidate centerlines in the ego frame; padded rows invalid."""

    points: np.ndarray  # (NAV_LANES, NAV_POINTS, 2) float32
    valid: np.ndarray  # (NAV_LANES,) bool
    lane_ids: tuple[str, ...] = ()

    @classmethod
    def empty(cls, n_lanes: int = NAV_LANES, n_points: int = NAV_POINTS) -> "NavigationReasoning":
        return cls(
            points=np.zeros((n_lanes, n_points, 2), dtype=np.float32),
            valid=np.zeros(n_lanes, dtype=bool),
        )


@dataclass(eq=False)
class ConditionBundle:
    vehicle_ids: tuple[str, ...]
    history: np.ndarray  # (N, H, 4) float32: x, y, v, yaw
    descriptions: tuple[str, ...]
    global_understanding: np.ndarray  # (N, 9) float32
    navigation: np.ndarray  # (N, NAV_LANES, NAV_POINTS, 2) float32
    navigation_valid: np.ndarray  # (N, NAV_LANES) float32 0/1


# ---------------------------------------------------------------------------
# dynamics


def step_unicycle(s: VehicleState, a: VehicleAction, dt: float = DEFAULT_DT) -> VehicleState:
    """One explicit-Euler step; the position advances with the pre-update speed and yaw."""
    x = s.x + s.speed * math.cos(s.yaw) * dt
    y = s.y + s.speed * math.sin(s.yaw) * dt
    v = max(0.0, s.speed + a.accel * dt)
    yaw = geometry.wrap_angle(s.yaw + a.yaw_rate * dt)
    return VehicleState(position=Vec2(x, y), speed=v, yaw=yaw)


def rollout(s0: VehicleState, actions: ActionSeq) -> StateSeq:
    states = [s0]
    for a in actions.actions:
        states.append(step_unicycle(states[-1], a, actions.dt))
    return StateSeq(states=tuple(states), dt=actions.dt)


def inverse_dynamics(traj: StateSeq) -> ActionSeq:
    """Per-step (accel, yaw_rate) whose rollout reproduces an Euler-generated input."""
    if len(traj.states) < 2:
        raise DegenerateInput("need at least 2 states to recover actions")
    actions = []
    for prev, cur in zip(traj.states, traj.states[1:]):
        accel = (cur.speed - prev.speed) / traj.dt
        yaw_rate = geometry.angle_diff(cur.yaw, prev.yaw) / traj.dt
        actions.append(VehicleAction(accel=accel, yaw_rate=yaw_rate))
    return ActionSeq(actions=tuple(actions), dt=traj.dt)


# ---------------------------------------------------------------------------
# map understanding (ground-truth mode)


def _onehot(index: int, size: int) -> tuple[float, ...]:
    return tuple(1.0 if i == index else 0.0 for i in range(size))


def to_ego_frame(points, origin: VehicleState) -> np.ndarray:
    """World points into the frame anchored at `origin` (x forward, y left)."""
    pts = geometry.as_xy(points) - np.array([origin.x, origin.y])
    c, s = math.cos(-origin.yaw), math.sin(-origin.yaw)
    return np.column_stack([pts[:, 0] * c - pts[:, 1] * s, pts[:, 0] * s + pts[:, 1] * c])


def from_ego_frame(points, origin: VehicleState) -> np.ndarray:
    pts = geometry.as_xy(points)
    c, s = math.cos(origin.yaw), math.sin(origin.yaw)
    return np.column_stack(
        [pts[:, 0] * c - pts[:, 1] * s + origin.x, pts[:, 0] * s + pts[:, 1] * c + origin.y]
    )


def extract_map_understanding_gt(
    scene: Scene,
    vehicle_id: str,
    t0: int,
    horizon: int = 50,
    n_lanes: int = NAV_LANES,
    n_points: int = NAV_POINTS,
    index: MapIndex | None = None,
) -> tuple[GlobalUnderstanding, NavigationReasoning]:
    """Area/lane one-hots at t0 plus future-route centerlines in the ego frame."""
    index = index or MapIndex(scene.map)
    track = scene.track(vehicle_id)
    if not track.has(t0):
        raise UnknownVehicle(f"vehicle {vehicle_id!r} has no state at t={t0}")
    state = track.state_at(t0)
    pt = np.array([[state.x, state.y]])
    area = index.area_types_batch(pt)[0]
    lane_id = index.lanes_batch(pt, np.array([state.yaw]))[0]
    lane_type = scene.map.lanes[lane_id].lane_type if lane_id is not None else LaneType.OTHER
    global_u = GlobalUnderstanding(
        area_onehot=_onehot(_AREA_ORDER.index(area), len(_AREA_ORDER)),
        lane_onehot=_onehot(_LANE_ORDER.index(lane_type), len(_LANE_ORDER)),
    )

    end = min(t0 + horizon, track.t1)
    lane_ids = lanes_along(scene.map, track, t0, end, index) if end > t0 else ()
    nav = NavigationReasoning.empty(n_lanes, n_points)
    kept = []
    for i, lid in enumerate(lane_ids[:n_lanes]):
        cl = geometry.resample_polyline_xy(scene.map.lanes[lid].centerline, n_points)
        nav.points[i] = to_ego_frame(cl, state).astype(np.float32)
        nav.valid[i] = True
        kept.append(lid)
    nav.lane_ids = tuple(kept)
    return global_u, nav


# ---------------------------------------------------------------------------
# trajectory-to-text


def _speed_phrase(mean_speed: float, category: TrajectoryCategory) -> str:
    if category is TrajectoryCategory.STATIONARY or mean_speed < 2.0:
        return "at slow speed"
    if mean_speed <= 8.0:
        return "at moderate speed"
    return "at fast speed"


def _accel_phrase(accels: np.ndarray, threshold: float = 0.2) -> str:
    labels = []
    for a in accels:
        if a > threshold:
            labels.append("accelerating")
        elif a < -threshold:
            labels.append("decelerating")
        else:
            labels.append("maintaining speed")
    segments = [labels[0]]
    for lab in labels[1:]:
        if lab != segments[-1]:
            segments.append(lab)
    return " then ".join(segments[:3])


def describe_trajectory(traj: StateSeq, config: AnnotatorConfig = DEFAULT_CONFIG) -> str:
    """One sentence: maneuver phrase, speed band, acceleration profile."""
    if len(traj.states) < 2:
        raise DegenerateInput("need at least 2 states to describe a trajectory")
    xy = traj.xy()
    yaws = [s.yaw for s in traj.states]
    category = classify_motion(xy, yaws, config)
    speeds = np.array([s.speed for s in traj.states])
    accels = np.diff(speeds) / traj.dt
    return (
        f"{MANEUVER_PHRASES[category]}, "
        f"{_speed_phrase(float(speeds.mean()), category)}, "
        f"{_accel_phrase(accels)}"
    )


# ---------------------------------------------------------------------------
# condition assembly and export


def assemble_condition(
    scene: Scene,
    t0: int,
    descriptions: Sequence[str] | None = None,
    mode: str = "gt",
    history_len: int = HISTORY_LEN,
    horizon: int = 50,
    n_lanes: int = NAV_LANES,
    n_points: int = NAV_POINTS,
) -> ConditionBundle:
    """Gather per-vehicle history, one-hots, navigation, and text at t0.

    History shorter than `history_len` is front-padded by repeating the
    earliest available state.
    """
    if mode != "gt":
        raise ValueError(f"only ground-truth extraction is supported, got mode={mode!r}")
    index = MapIndex(scene.map)
    tracks = sorted(scene.tracks, key=lambda tr: tr.vehicle_id)
    ids = tuple(tr.vehicle_id for tr in tracks)
    n = len(tracks)
    history = np.zeros((n, history_len, 4), dtype=np.float32)
    global_u = np.zeros((n, 9), dtype=np.float32)
    nav = np.zeros((n, n_lanes, n_points, 2), dtype=np.float32)
    nav_valid = np.zeros((n, n_lanes), dtype=np.float32)
    texts: list[str] = []
    for i, tr in enumerate(tracks):
        if not tr.has(t0):
            raise UnknownVehicle(f"vehicle {tr.vehicle_id!r} has no state at t={t0}")
        for j in range(history_len):
            t = max(tr.t0, t0 - history_len + 1 + j)
            st = tr.state_at(t)
            history[i, j] = (st.x, st.y, st.speed, st.yaw)
        gu, nv = extract_map_understanding_gt(scene, tr.vehicle_id, t0, horizon, n_lanes, n_points, index)
        global_u[i] = gu.vector()
        nav[i] = nv.points
        nav_valid[i] = nv.valid.astype(np.float32)
        if descriptions is None:
            end = min(t0 + horizon, tr.t1)
            window = tuple(tr.state_at(t) for t in range(t0, end + 1))
            texts.append(describe_trajectory(StateSeq(states=window, dt=scene.dt)))
    if descriptions is not None:
        if len(descriptions) != n:
            raise ValueError(f"need {n} descriptions, got {len(descriptions)}")
        texts = list(descriptions)
    return ConditionBundle(
        vehicle_ids=ids,
        history=history,
        descriptions=tuple(texts),
        global_understanding=global_u,
        navigation=nav,
        navigation_valid=nav_valid,
    )


_EXPORT_ARRAYS = ("history", "global_understanding", "navigation", "navigation_valid")


def export_condition(bundle: ConditionBundle, out_dir) -> None:
    """Manifest JSON + raw little-endian float32 arrays + aligned text lines."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest: dict = {"vehicle_ids": list(bundle.vehicle_ids), "arrays": {}}
    for name in _EXPORT_ARRAYS:
        arr = np.ascontiguousarray(getattr(bundle, name), dtype="<f4")
        fname = f"{name}.f32"
        (out / fname).write_bytes(arr.tobytes())
        manifest["arrays"][name] = {"file": fname, "shape": list(arr.shape), "dtype": "<f4"}
    (out / "descriptions.txt").write_text("\n".join(bundle.descriptions) + "\n", encoding="utf-8")
    (out / "manifest.json").write_text(
        json.dumps(manifest, sort_keys=True, separators=(",", ":")) + "\n", encoding="utf-8"
    )


def load_condition(in_dir) -> ConditionBundle:
    src = Path(in_dir)
    manifest = json.loads((src / "manifest.json").read_text(encoding="utf-8"))
    arrays = {}
    for name in _EXPORT_ARRAYS:
        meta = manifest["arrays"].get(name)
        if meta is None:
            raise ParseError(f"{src}: manifest missing array {name!r}")
        raw = (src / meta["file"]).read_bytes()
        arrays[name] = np.frombuffer(raw, dtype=meta["dtype"]).reshape(meta["shape"]).copy()
    lines = (src / "descriptions.txt").read_text(encoding="utf-8").splitlines()
    return ConditionBundle(
        vehicle_ids=tuple(manifest["vehicle_ids"]),
        history=arrays["history"],
        descriptions=tuple(lines),
        global_understanding=arrays["global_understanding"],
        navigation=arrays["navigation"],
        navigation_valid=arrays["navigation_valid"],
    )


# ---------------------------------------------------------------------------
# deterministic lane-following planner


def lane_follow_plan(
    s0: VehicleState,
    nav: NavigationReasoning,
    target_speed: float,
    horizon: int = 50,
    dt: float = DEFAULT_DT,
    lookahead: float = 6.0,
    accel_limit: float = DEFAULT_ACCEL_LIMIT,
    yaw_rate_limit: float = DEFAULT_YAW_RATE_LIMIT,
    speed_gain: float = 1.5,
    cross_track_gain: float = 0.25,
) -> ActionSeq:
    """Pure-pursuit tracking of the concatenated navigation centerlines.

    Navigation points are interpreted in the ego frame anchored at s0. A
    proportional cross-track term tightens tracking on curved paths. With no
    valid navigation the plan is zero-steer at constant speed.
    """
    segments = [nav.points[i] for i in range(len(nav.valid)) if nav.valid[i]]
    if not segments:
        return ActionSeq(actions=tuple(VehicleAction(0.0, 0.0) for _ in range(horizon)), dt=dt)
    ego_pts = np.concatenate([np.asarray(seg, dtype=float) for seg in segments])
    path = from_ego_frame(ego_pts, s0)
    # drop duplicate joint points, then extend along the end tangent so the
    # lookahead stays defined near the path end
    keep = np.concatenate([[True], np.linalg.norm(np.diff(path, axis=0), axis=1) > 1e-9])
    path = path[keep]
    if len(path) < 2:
        return ActionSeq(actions=tuple(VehicleAction(0.0, 0.0) for _ in range(horizon)), dt=dt)
    end_dir = path[-1] - path[-2]
    end_dir = end_dir / np.linalg.norm(end_dir)
    path = np.concatenate([path, [path[-1] + end_dir * 100.0]])
    cum = geometry.polyline_cumlen(path)

    state = s0
    actions: list[VehicleAction] = []
    for _ in range(horizon):
        pos = np.array([state.x, state.y])
        s_proj, _, tang = geometry.project_to_polyline(path, cum, pos)
        look_pt, _ = geometry.point_at_arclength(path, cum, s_proj + lookahead)
        vec = look_pt - pos
        dist = float(np.linalg.norm(vec))
        alpha = geometry.angle_diff(math.atan2(vec[1], vec[0]), state.yaw)
        kappa = 2.0 * math.sin(alpha) / max(dist, 0.5)
        # signed cross-track error: positive when the vehicle sits left of the path
        proj_pt, _ = geometry.point_at_arclength(path, cum, s_proj)
        rel = pos - proj_pt
        e_lat = math.cos(tang) * rel[1] - math.sin(tang) * rel[0]
        kappa -= cross_track_gain * e_lat
        yaw_rate = max(-yaw_rate_limit, min(yaw_rate_limit, state.speed * kappa))
        accel = max(-accel_limit, min(accel_limit, speed_gain * (target_speed - state.speed)))
        action = VehicleAction(accel=accel, yaw_rate=yaw_rate)
        actions.append(action)
        state = step_unicycle(state, action, dt)
    return ActionSeq(actions=tuple(actions), dt=dt)
