"""Scene data model: lane-graph maps, vehicle tracks, schema I/O, validation.

The on-disk format is canonical JSON (sorted keys, 6-decimal coordinates),
so saving the same scene twice is byte-identical and save/load round-trips
are exact for files already in canonical form.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import geometry
from .errors import ParseError, UnknownVehicle, ValidationError

SCHEMA_VERSION = 1
COORD_DECIMALS = 6

DEFAULT_DT = 0.1
DEFAULT_VEHICLE_LENGTH = 4.7
DEFAULT_VEHICLE_WIDTH = 2.0
DEFAULT_ACCEL_LIMIT = 6.0
DEFAULT_YAW_RATE_LIMIT = 1.5

# slack on the (-pi, pi] yaw interval: 6-decimal file rounding may push a
# yaw of exactly pi to 3.141593
YAW_TOL = 1e-6

# containment tolerance for "centerline inside boundary" style checks
CONTAIN_TOL = 1e-5


class LaneType(str, Enum):
    STRAIGHT = "straight"
    LEFT_TURN = "left_turn"
    RIGHT_TURN = "right_turn"
    U_TURN = "u_turn"
    OTHER = "other"


class AreaType(str, Enum):
    INTERSECTION = "intersection"
    ROUNDABOUT = "roundabout"
    PARKING_AREA = "parking_area"
    REGULAR_ROAD = "regular_road"


# containment ties between overlapping areas resolve in this order
AREA_PRIORITY = (
    AreaType.INTERSECTION,
    AreaType.ROUNDABOUT,
    AreaType.PARKING_AREA,
    AreaType.REGULAR_ROAD,
)


class TrajectoryCategory(str, Enum):
    STATIONARY = "stationary"
    STRAIGHT = "straight"
    LEFT_TURN = "left_turn"
    RIGHT_TURN = "right_turn"
    U_TURN = "u_turn"


@dataclass(frozen=True)
class Vec2:
    x: float
    y: float

    def __iter__(self):
        yield self.x
        yield self.y

    def distance_to(self, other: "Vec2") -> float:
        return math.hypot(self.x - other.x, self.y - other.y)


@dataclass(frozen=True)
class VehicleState:
    position: Vec2
    speed: float
    yaw: float

    @property
    def x(self) -> float:
        return self.position.x

    @property
    def y(self) -> float:
        return self.position.y


@dataclass(frozen=True)
class VehicleAction:
    accel: float
    yaw_rate: float


@dataclass(frozen=True)
class Lane:
    id: str
    centerline: tuple[Vec2, ...]
    boundary: tuple[Vec2, ...]
    lane_type: LaneType
    successors: tuple[str, ...] = ()
    width: float = 3.5


@dataclass(frozen=True)
class Area:
    id: str
    polygon: tuple[Vec2, ...]
    area_type: AreaType


@dataclass(frozen=True)
class MapGraph:
    lanes: dict[str, Lane]
    areas: dict[str, Area]


@dataclass(frozen=True)
class VehicleTrack:
    vehicle_id: str
    states: tuple[tuple[int, VehicleState], ...]
    length: float = DEFAULT_VEHICLE_LENGTH
    width: float = DEFAULT_VEHICLE_WIDTH

    @property
    def t0(self) -> int:
        return self.states[0][0]

    @property
    def t1(self) -> int:
        return self.states[-1][0]

    def has(self, t: int) -> bool:
        return self.t0 <= t <= self.t1

    def state_at(self, t: int) -> VehicleState:
        # timesteps are validated contiguous, so index by offset
        if not self.has(t):
            raise UnknownVehicle(f"vehicle {self.vehicle_id!r} has no state at t={t}")
        return self.states[t - self.t0][1]


@dataclass(frozen=True)
class Scene:
    scene_id: str
    map: MapGraph
    tracks: tuple[VehicleTrack, ...]
    dt: float = DEFAULT_DT
    ego_id: str = "ego"
    hidden_lane_boundaries: tuple[str, ...] = ()

    def find_track(self, vehicle_id: str) -> VehicleTrack | None:
        for tr in self.tracks:
            if tr.vehicle_id == vehicle_id:
                return tr
        return None

    def track(self, vehicle_id: str) -> VehicleTrack:
        tr = self.find_track(vehicle_id)
        if tr is None:
            raise UnknownVehicle(f"no track for vehicle {vehicle_id!r}")
        return tr

    @property
    def timesteps(self) -> range:
        if not self.tracks:
            return range(0)
        return range(self.tracks[0].t0, self.tracks[0].t1 + 1)


def make_polyline(points: Iterable[Sequence[float]]) -> tuple[Vec2, ...]:
    return tuple(Vec2(float(x), float(y)) for x, y in points)


# ---------------------------------------------------------------------------
# validation


def _finite(*values: float) -> bool:
    return all(math.isfinite(v) for v in values)


def validate_state(state: VehicleState, path: str) -> None:
    if not _finite(state.position.x, state.position.y, state.speed, state.yaw):
        raise ValidationError(f"{path}: non-finite component")
    if state.speed < 0.0:
        raise ValidationError(f"{path}.v: speed must be >= 0, got {state.speed}")
    if not (-math.pi - YAW_TOL <= state.yaw <= math.pi + YAW_TOL):
        raise ValidationError(f"{path}.yaw: {state.yaw} outside (-pi, pi]")


def validate_action(
    action: VehicleAction,
    accel_limit: float = DEFAULT_ACCEL_LIMIT,
    yaw_rate_limit: float = DEFAULT_YAW_RATE_LIMIT,
    path: str = "action",
) -> None:
    if not _finite(action.accel, action.yaw_rate):
        raise ValidationError(f"{path}: non-finite component")
    if abs(action.accel) > accel_limit:
        raise ValidationError(f"{path}.accel: |{action.accel}| > {accel_limit}")
    if abs(action.yaw_rate) > yaw_rate_limit:
        raise ValidationError(f"{path}.yaw_rate: |{action.yaw_rate}| > {yaw_rate_limit}")


def _validate_polygon(points: tuple[Vec2, ...], path: str) -> np.ndarray:
    if len(points) < 3:
        raise ValidationError(f"{path}: polygon needs >= 3 vertices")
    pts = geometry.as_xy(points)
    if not np.all(np.isfinite(pts)):
        raise ValidationError(f"{path}: non-finite vertex")
    if np.allclose(pts[0], pts[-1]):
        raise ValidationError(f"{path}: polygon must be open (first vertex not repeated)")
    area = geometry.signed_area(pts)
    if abs(area) < 1e-9:
        raise ValidationError(f"{path}: polygon has zero area")
    if area < 0.0:
        raise ValidationError(f"{path}: polygon must be CCW")
    if not geometry.polygon_is_simple(pts):
        raise ValidationError(f"{path}: polygon is self-intersecting")
    return pts


def validate_lane(lane: Lane, lane_ids: set[str], path: str) -> None:
    if len(lane.centerline) < 2:
        raise ValidationError(f"{path}.centerline: needs >= 2 points")
    cl = geometry.as_xy(lane.centerline)
    if not np.all(np.isfinite(cl)):
        raise ValidationError(f"{path}.centerline: non-finite point")
    if lane.width <= 0.0:
        raise ValidationError(f"{path}.width: must be > 0, got {lane.width}")
    bnd = _validate_polygon(lane.boundary, f"{path}.boundary")
    inside = geometry.points_in_polygon(cl, bnd, tol=CONTAIN_TOL)
    if not np.all(inside):
        bad = int(np.argmin(inside))
        raise ValidationError(f"{path}.centerline[{bad}]: point outside lane boundary")
    for succ in lane.successors:
        if succ not in lane_ids:
            raise ValidationError(f"{path}.successors: unknown lane id {succ!r}")


def validate_scene(scene: Scene) -> None:
    """Check every type invariant; raises ValidationError naming the field."""
    lane_ids = set(scene.map.lanes)
    for lid, lane in scene.map.lanes.items():
        if lane.id != lid:
            raise ValidationError(f"map.lanes[{lid!r}].id: key/id mismatch ({lane.id!r})")
        validate_lane(lane, lane_ids, f"map.lanes[{lid!r}]")
    area_polys = []
    for aid, area in scene.map.areas.items():
        if area.id != aid:
            raise ValidationError(f"map.areas[{aid!r}].id: key/id mismatch ({area.id!r})")
        area_polys.append(_validate_polygon(area.polygon, f"map.areas[{aid!r}].polygon"))
    for lid, lane in scene.map.lanes.items():
        bnd = geometry.as_xy(lane.boundary)
        if not any(geometry.polygons_intersect(bnd, poly) for poly in area_polys):
            raise ValidationError(f"map.lanes[{lid!r}].boundary: intersects no area polygon")
    for hid in scene.hidden_lane_boundaries:
        if hid not in lane_ids:
            raise ValidationError(f"hidden_lane_boundaries: unknown lane id {hid!r}")

    if scene.dt <= 0.0:
        raise ValidationError(f"dt: must be > 0, got {scene.dt}")
    seen = set()
    grid = None
    for i, tr in enumerate(scene.tracks):
        path = f"tracks[{i}]"
        if tr.vehicle_id in seen:
            raise ValidationError(f"{path}.vehicle_id: duplicate id {tr.vehicle_id!r}")
        seen.add(tr.vehicle_id)
        if tr.length <= 0.0 or tr.width <= 0.0:
            raise ValidationError(f"{path}: footprint dimensions must be > 0")
        if not tr.states:
            raise ValidationError(f"{path}.states: empty")
        ts = [t for t, _ in tr.states]
        for j, (t, st) in enumerate(tr.states):
            if j > 0 and t != ts[j - 1] + 1:
                raise ValidationError(f"{path}.states[{j}].t: timesteps not contiguous")
            validate_state(st, f"{path}.states[{j}]")
        this_grid = (ts[0], ts[-1])
        if grid is None:
            grid = this_grid
        elif this_grid != grid:
            raise ValidationError(f"{path}.states: timestep grid {this_grid} differs from {grid}")
    if scene.find_track(scene.ego_id) is None:
        raise ValidationError(f"ego_id: {scene.ego_id!r} does not match any track")


# ---------------------------------------------------------------------------
# canonical serialization


def _r6(v: float) -> float:
    return round(float(v), COORD_DECIMALS) + 0.0


def _points_list(points: tuple[Vec2, ...]) -> list[list[float]]:
    return [[_r6(p.x), _r6(p.y)] for p in points]


def scene_to_dict(scene: Scene) -> dict:
    d = {
        "schema_version": SCHEMA_VERSION,
        "scene_id": scene.scene_id,
        "dt": _r6(scene.dt),
        "ego_id": scene.ego_id,
        "map": {
            "lanes": [
                {
                    "id": lane.id,
                    "lane_type": lane.lane_type.value,
                    "width": _r6(lane.width),
                    "centerline": _points_list(lane.centerline),
                    "boundary": _points_list(lane.boundary),
                    "successors": list(lane.successors),
                }
                for lane in (scene.map.lanes[k] for k in sorted(scene.map.lanes))
            ],
            "areas": [
                {
                    "id": area.id,
                    "area_type": area.area_type.value,
                    "polygon": _points_list(area.polygon),
                }
                for area in (scene.map.areas[k] for k in sorted(scene.map.areas))
            ],
        },
        "tracks": [
            {
                "vehicle_id": tr.vehicle_id,
                "length": _r6(tr.length),
                "width": _r6(tr.width),
                "states": [
                    {"t": t, "x": _r6(s.x), "y": _r6(s.y), "v": _r6(s.speed), "yaw": _r6(s.yaw)}
                    for t, s in tr.states
                ],
            }
            for tr in sorted(scene.tracks, key=lambda tr: tr.vehicle_id)
        ],
    }
    if scene.hidden_lane_boundaries:
        d["hidden_lane_boundaries"] = sorted(scene.hidden_lane_boundaries)
    return d


def dumps_canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")) + "\n"


def _req(d: dict, key: str, kind, path: str):
    if not isinstance(d, dict) or key not in d:
        raise ParseError(f"{path}: missing key {key!r}")
    v = d[key]
    if kind is float:
        if not isinstance(v, (int, float)) or isinstance(v, bool):
            raise ParseError(f"{path}.{key}: expected number, got {type(v).__name__}")
        return float(v)
    if not isinstance(v, kind):
        raise ParseError(f"{path}.{key}: expected {kind.__name__}, got {type(v).__name__}")
    return v


def _parse_points(raw, path: str) -> tuple[Vec2, ...]:
    if not isinstance(raw, list):
        raise ParseError(f"{path}: expected list of [x, y]")
    out = []
    for i, pair in enumerate(raw):
        if (
            not isinstance(pair, list)
            or len(pair) != 2
            or not all(isinstance(c, (int, float)) and not isinstance(c, bool) for c in pair)
        ):
            raise ParseError(f"{path}[{i}]: expected [x, y]")
        out.append(Vec2(float(pair[0]), float(pair[1])))
    return tuple(out)


def _parse_enum(raw: str, enum_cls, path: str):
    try:
        return enum_cls(raw)
    except ValueError:
        valid = "|".join(e.value for e in enum_cls)
        raise ParseError(f"{path}: {raw!r} not one of {valid}") from None


def scene_from_dict(d: dict) -> Scene:
    version = _req(d, "schema_version", int, "scene")
    if version != SCHEMA_VERSION:
        raise ParseError(f"scene.schema_version: unsupported version {version}")
    scene_id = _req(d, "scene_id", str, "scene")
    dt = _req(d, "dt", float, "scene")
    ego_id = _req(d, "ego_id", str, "scene")
    m = _req(d, "map", dict, "scene")

    lanes: dict[str, Lane] = {}
    for i, ld in enumerate(_req(m, "lanes", list, "scene.map")):
        path = f"scene.map.lanes[{i}]"
        lid = _req(ld, "id", str, path)
        if lid in lanes:
            raise ValidationError(f"{path}.id: duplicate lane id {lid!r}")
        succ = _req(ld, "successors", list, path)
        if not all(isinstance(s, str) for s in succ):
            raise ParseError(f"{path}.successors: expected list of lane ids")
        lanes[lid] = Lane(
            id=lid,
            centerline=_parse_points(_req(ld, "centerline", list, path), f"{path}.centerline"),
            boundary=_parse_points(_req(ld, "boundary", list, path), f"{path}.boundary"),
            lane_type=_parse_enum(_req(ld, "lane_type", str, path), LaneType, f"{path}.lane_type"),
            successors=tuple(succ),
            width=_req(ld, "width", float, path),
        )
    areas: dict[str, Area] = {}
    for i, ad in enumerate(_req(m, "areas", list, "scene.map")):
        path = f"scene.map.areas[{i}]"
        aid = _req(ad, "id", str, path)
        if aid in areas:
            raise ValidationError(f"{path}.id: duplicate area id {aid!r}")
        areas[aid] = Area(
            id=aid,
            polygon=_parse_points(_req(ad, "polygon", list, path), f"{path}.polygon"),
            area_type=_parse_enum(_req(ad, "area_type", str, path), AreaType, f"{path}.area_type"),
        )

    tracks = []
    for i, td in enumerate(_req(d, "tracks", list, "scene")):
        path = f"scene.tracks[{i}]"
        states = []
        for j, sd in enumerate(_req(td, "states", list, path)):
            spath = f"{path}.states[{j}]"
            t = _req(sd, "t", int, spath)
            states.append(
                (
                    t,
                    VehicleState(
                        position=Vec2(_req(sd, "x", float, spath), _req(sd, "y", float, spath)),
                        speed=_req(sd, "v", float, spath),
                        yaw=_req(sd, "yaw", float, spath),
                    ),
                )
            )
        tracks.append(
            VehicleTrack(
                vehicle_id=_req(td, "vehicle_id", str, path),
                states=tuple(states),
                length=_req(td, "length", float, path),
                width=_req(td, "width", float, path),
            )
        )

    hidden = d.get("hidden_lane_boundaries", [])
    if not isinstance(hidden, list) or not all(isinstance(h, str) for h in hidden):
        raise ParseError("scene.hidden_lane_boundaries: expected list of lane ids")

    scene = Scene(
        scene_id=scene_id,
        map=MapGraph(lanes=lanes, areas=areas),
        tracks=tuple(tracks),
        dt=dt,
        ego_id=ego_id,
        hidden_lane_boundaries=tuple(sorted(hidden)),
    )
    validate_scene(scene)
    return scene


def save_scene(scene: Scene, path) -> None:
    validate_scene(scene)
    Path(path).write_text(dumps_canonical(scene_to_dict(scene)), encoding="utf-8")


def load_scene(path) -> Scene:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError:
        raise
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(raw, dict):
        raise ParseError(f"{path}: top level must be an object")
    return scene_from_dict(raw)


def canonicalize(scene: Scene) -> Scene:
    """The scene as it would read back after save/load (6-decimal floats)."""
    return scene_from_dict(scene_to_dict(scene))


# ---------------------------------------------------------------------------
# polyline resampling (public op; shared by navigation extraction)


def resample_polyline(line: Sequence[Vec2], n_points: int) -> list[Vec2]:
    """n_points points equally spaced by arclength; endpoints preserved exactly."""
    out = geometry.resample_polyline_xy(line, n_points)
    return [Vec2(float(x), float(y)) for x, y in out]
