"""Procedural synthetic scenes with construction-time ground truth.

Five layouts: straight_road, four_way, t_junction, roundabout, parking_lot.
Vehicles follow scripted routes along lane centerlines at constant speed, so
for every (vehicle, timestep) the generator knows the occupied lane, the
area, the future maneuver category, and the neighbor directions. Those
ground-truth labels are computed here with code kept separate from the
annotator, so they can serve as its test oracle.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import geometry
from .errors import ParseError, SpecError
from .scenemodel import (
    Area,
    AreaType,
    AREA_PRIORITY,
    Lane,
    LaneType,
    MapGraph,
    Scene,
    TrajectoryCategory,
    Vec2,
    VehicleState,
    VehicleTrack,
    dumps_canonical,
    make_polyline,
    validate_scene,
)

LAYOUTS = ("straight_road", "four_way", "t_junction", "roundabout", "parking_lot")

LANE_WIDTH = 3.5
ARC_STEP_DEG = 3.0

# annotation conventions, duplicated from the annotator defaults on purpose:
# the generator is the oracle the annotator is tested against
_GT_HORIZON = 50
_GT_MIN_FUTURE = 10
_GT_STATIONARY_DISP = 2.0
_GT_STRAIGHT_MAX_DEG = 15.0
_GT_UTURN_MIN_DEG = 120.0
_GT_NEIGHBOR_RANGE = 50.0

DIRECTIONS = ("front", "behind", "left", "right")


@dataclass(frozen=True)
class SynthSpec:
    """Request for one synthetic scene; horizon counts transitions (states = horizon + 1)."""

    layout: str
    n_vehicles: int
    horizon: int = 60
    dt: float = 0.1


@dataclass(frozen=True)
class GroundTruthEntry:
    vehicle_id: str
    timestep: int
    area_type: AreaType
    lane_id: str
    lane_type: LaneType
    trajectory_category: TrajectoryCategory | None
    relative_cars: dict[str, tuple[str, ...]]


@dataclass
class GroundTruth:
    scene_id: str
    entries: dict[tuple[str, int], GroundTruthEntry]

    def entry(self, vehicle_id: str, timestep: int) -> GroundTruthEntry:
        return self.entries[(vehicle_id, timestep)]

    def lane_sequence(self, vehicle_id: str, t0: int, horizon: int = _GT_HORIZON) -> tuple[str, ...]:
        """Constructed lane ids over [t0, t0+horizon], consecutive duplicates collapsed."""
        out: list[str] = []
        t = t0
        while (vehicle_id, t) in self.entries and t <= t0 + horizon:
            lid = self.entries[(vehicle_id, t)].lane_id
            if not out or out[-1] != lid:
                out.append(lid)
            t += 1
        return tuple(out)


# ---------------------------------------------------------------------------
# geometry builders (exact in axis-aligned pieces, rotated by exact 90-degree steps)


def _rot90(pts: np.ndarray, k: int) -> np.ndarray:
    out = pts.copy()
    for _ in range(k % 4):
        out = np.column_stack([-out[:, 1], out[:, 0]])
    return out


def _rect_boundary(p0: np.ndarray, p1: np.ndarray, width: float) -> np.ndarray:
    d = p1 - p0
    n = np.array([-d[1], d[0]]) / np.linalg.norm(d) * (width / 2.0)
    return geometry.ensure_ccw(np.array([p0 + n, p0 - n, p1 - n, p1 + n]))


def _arc_points(center, radius: float, a0_deg: float, a1_deg: float, step_deg: float = ARC_STEP_DEG) -> np.ndarray:
    n = max(2, int(round(abs(a1_deg - a0_deg) / step_deg)) + 1)
    ang = np.radians(np.linspace(a0_deg, a1_deg, n))
    return np.asarray(center, dtype=float) + radius * np.column_stack([np.cos(ang), np.sin(ang)])


def _arc_boundary(center, radius: float, a0_deg: float, a1_deg: float, width: float) -> np.ndarray:
    outer = _arc_points(center, radius + width / 2.0, a0_deg, a1_deg)
    inner = _arc_points(center, radius - width / 2.0, a1_deg, a0_deg)
    return geometry.ensure_ccw(np.concatenate([outer, inner]))


def _lane(
    lane_id: str,
    centerline: np.ndarray,
    boundary: np.ndarray,
    lane_type: LaneType,
    successors: Sequence[str] = (),
    width: float = LANE_WIDTH,
) -> Lane:
    # geometry is rounded to the canonical 6-decimal grid at construction so
    # synthesized scenes survive save/load unchanged
    return Lane(
        id=lane_id,
        centerline=make_polyline(np.round(centerline, 6)),
        boundary=make_polyline(np.round(boundary, 6)),
        lane_type=lane_type,
        successors=tuple(successors),
        width=width,
    )


def _straight(lane_id, p0, p1, lane_type=LaneType.STRAIGHT, successors=(), width=LANE_WIDTH) -> Lane:
    p0 = np.asarray(p0, dtype=float)
    p1 = np.asarray(p1, dtype=float)
    return _lane(lane_id, np.array([p0, p1]), _rect_boundary(p0, p1, width), lane_type, successors, width)


def _arc(lane_id, center, radius, a0_deg, a1_deg, lane_type, successors=(), width=LANE_WIDTH) -> Lane:
    return _lane(
        lane_id,
        _arc_points(center, radius, a0_deg, a1_deg),
        _arc_boundary(center, radius, a0_deg, a1_deg, width),
        lane_type,
        successors,
        width,
    )


def _area(area_id: str, polygon: np.ndarray, area_type: AreaType) -> Area:
    return Area(
        id=area_id,
        polygon=make_polyline(np.round(geometry.ensure_ccw(polygon), 6)),
        area_type=area_type,
    )


def _rect_poly(xmin, ymin, xmax, ymax) -> np.ndarray:
    return np.array([[xmin, ymin], [xmax, ymin], [xmax, ymax], [xmin, ymax]], dtype=float)


@dataclass(frozen=True)
class _Slot:
    lane_ids: tuple[str, ...]
    start_window: tuple[float, float]
    speed_range: tuple[float, float]
    parked_at: float | None = None  # arclength for parked vehicles (speed 0)


@dataclass(frozen=True)
class _Blueprint:
    lanes: tuple[Lane, ...]
    areas: tuple[Area, ...]
    slots: tuple[_Slot, ...]
    permute_from: int = 0  # slots before this index keep their priority order


def _build_straight_road() -> _Blueprint:
    lanes: list[Lane] = []
    slots: list[_Slot] = []
    for i, y in enumerate((-LANE_WIDTH, 0.0, LANE_WIDTH)):
        a, b = f"lane{i}_a", f"lane{i}_b"
        lanes.append(_straight(a, (-200.0, y), (0.0, y), successors=(b,)))
        lanes.append(_straight(b, (0.0, y), (200.0, y)))
        for k in range(3):
            slots.append(_Slot((a, b), (10.0 + 55.0 * k, 45.0 + 55.0 * k), (3.5, 9.0)))
    areas = (_area("road", _rect_poly(-200, -1.5 * LANE_WIDTH, 200, 1.5 * LANE_WIDTH), AreaType.REGULAR_ROAD),)
    return _Blueprint(tuple(lanes), areas, tuple(slots))


# cross layout constants: junction half-size, arm length, lane offset
_J = 12.0
_ARM = 100.0
_OFF = LANE_WIDTH / 2.0
_ARM_NAMES = ("w", "s", "e", "n")  # base arm rotated CCW by k * 90 deg


def _build_cross(arm_ks: Sequence[int]) -> _Blueprint:
    present = set(arm_ks)
    lanes: list[Lane] = []
    areas: list[Area] = [_area("junction", _rect_poly(-_J, -_J, _J, _J), AreaType.INTERSECTION)]
    slots: list[_Slot] = []

    def rot_pt(p, k):
        return _rot90(np.asarray([p], dtype=float), k)[0]

    maneuver_target = {"s": 2, "l": 3, "r": 1}  # arm index delta mod 4
    conn_geoms = {
        # base arm is west (k=0): incoming ends at (-J, -_OFF) heading +x
        "s": ("straight", None),
        "l": ("arc", ((-_J, _J), _J + _OFF, -90.0, 0.0, LaneType.LEFT_TURN)),
        "r": ("arc", ((-_J, -_J), _J - _OFF, 90.0, 0.0, LaneType.RIGHT_TURN)),
    }

    for k in arm_ks:
        name = _ARM_NAMES[k]
        in_pts = _rot90(np.array([[-_J - _ARM, -_OFF], [-_J, -_OFF]]), k)
        out_pts = _rot90(np.array([[-_J, _OFF], [-_J - _ARM, _OFF]]), k)
        conns = [m for m in ("s", "l", "r") if (k + maneuver_target[m]) % 4 in present]
        lanes.append(
            _lane(
                f"in_{name}",
                in_pts,
                _rect_boundary(in_pts[0], in_pts[1], LANE_WIDTH),
                LaneType.STRAIGHT,
                tuple(f"conn_{name}_{m}" for m in conns),
            )
        )
        lanes.append(_lane(f"out_{name}", out_pts, _rect_boundary(out_pts[0], out_pts[1], LANE_WIDTH), LaneType.STRAIGHT))
        areas.append(
            _area(
                f"arm_{name}",
                _rot90(_rect_poly(-_J - _ARM, -LANE_WIDTH, -_J, LANE_WIDTH), k),
                AreaType.REGULAR_ROAD,
            )
        )
        for m in conns:
            target = _ARM_NAMES[(k + maneuver_target[m]) % 4]
            kind, geom = conn_geoms[m]
            if kind == "straight":
                pts = _rot90(np.array([[-_J, -_OFF], [_J, -_OFF]]), k)
                lanes.append(
                    _lane(
                        f"conn_{name}_{m}",
                        pts,
                        _rect_boundary(pts[0], pts[1], LANE_WIDTH),
                        LaneType.STRAIGHT,
                        (f"out_{target}",),
                    )
                )
            else:
                center, radius, a0, a1, ltype = geom
                c = rot_pt(center, k)
                lanes.append(
                    _arc(f"conn_{name}_{m}", c, radius, a0 + 90.0 * k, a1 + 90.0 * k, ltype, (f"out_{target}",))
                )
            slots.append(
                _Slot((f"in_{name}", f"conn_{name}_{m}", f"out_{target}"), (70.0, 92.0), (4.5, 8.5))
            )
    return _Blueprint(tuple(lanes), tuple(areas), tuple(slots))


# roundabout constants (see entry/exit arc derivation in _build_roundabout)
_RB_RING_R = 15.0
_RB_ARC_R = 11.5
_RB_AREA_R = 19.0
_RB_IN_X = 1.75
_RB_Y_END = -(np.sqrt(3) / 2.0) * (_RB_RING_R + _RB_ARC_R)  # -22.9496...
_RB_FAR = 95.0


def _build_roundabout() -> _Blueprint:
    lanes: list[Lane] = []
    # ring points: per arm theta (E=0, N=90, W=180, S=270): exit at theta-30, entry at theta+30
    bounds = [-120.0, -60.0, -30.0, 30.0, 60.0, 120.0, 150.0, 210.0]
    for i, a0 in enumerate(bounds):
        a1 = bounds[(i + 1) % len(bounds)]
        if a1 <= a0:
            a1 += 360.0
        lanes.append(_arc(f"ring_{i}", (0.0, 0.0), _RB_RING_R, a0, a1, LaneType.LEFT_TURN))

    arm_entry = {}
    arm_exit = {}
    for k, name in enumerate(("s", "e", "n", "w")):  # base arm south, rotated CCW
        in_pts = _rot90(np.array([[_RB_IN_X, -_RB_FAR], [_RB_IN_X, _RB_Y_END]]), k)
        out_pts = _rot90(np.array([[-_RB_IN_X, _RB_Y_END], [-_RB_IN_X, -_RB_FAR]]), k)
        # entry arc: from incoming lane end, CW 60 deg onto the ring at arm_theta + 30
        c_in = _rot90(np.array([[_RB_IN_X + _RB_ARC_R, _RB_Y_END]]), k)[0]
        c_out = _rot90(np.array([[-_RB_IN_X - _RB_ARC_R, _RB_Y_END]]), k)[0]
        lanes.append(_lane(f"in_{name}", in_pts, _rect_boundary(in_pts[0], in_pts[1], LANE_WIDTH), LaneType.STRAIGHT, (f"entry_{name}",)))
        lanes.append(_arc(f"entry_{name}", c_in, _RB_ARC_R, 180.0 + 90.0 * k, 120.0 + 90.0 * k, LaneType.RIGHT_TURN))
        lanes.append(_arc(f"exit_{name}", c_out, _RB_ARC_R, 60.0 + 90.0 * k, 0.0 + 90.0 * k, LaneType.RIGHT_TURN, (f"out_{name}",)))
        lanes.append(_lane(f"out_{name}", out_pts, _rect_boundary(out_pts[0], out_pts[1], LANE_WIDTH), LaneType.STRAIGHT))
        arm_entry[name] = -60.0 + 90.0 * k
        arm_exit[name] = -120.0 + 90.0 * k

    def ring_index_starting(angle):
        a = ((angle + 120.0) % 360.0) - 120.0  # normalize into [-120, 240)
        return bounds.index(a)

    # successor wiring: entry -> first ring arc; ring arc -> next ring arc (+ exit when its end is an exit point)
    exits_at = {}
    for name in ("s", "e", "n", "w"):
        exits_at[((arm_exit[name] + 120.0) % 360.0) - 120.0] = f"exit_{name}"
    new_lanes = []
    for ln in lanes:
        if ln.id.startswith("ring_"):
            i = int(ln.id.split("_")[1])
            end_angle = bounds[(i + 1) % len(bounds)]
            succ = [f"ring_{(i + 1) % len(bounds)}"]
            if end_angle in exits_at:
                succ.append(exits_at[end_angle])
            new_lanes.append(Lane(ln.id, ln.centerline, ln.boundary, ln.lane_type, tuple(succ), ln.width))
        elif ln.id.startswith("entry_"):
            name = ln.id.split("_")[1]
            start = ring_index_starting(arm_entry[name])
            new_lanes.append(Lane(ln.id, ln.centerline, ln.boundary, ln.lane_type, (f"ring_{start}",), ln.width))
        else:
            new_lanes.append(ln)
    lanes = new_lanes

    circle = _arc_points((0.0, 0.0), _RB_AREA_R, 0.0, 360.0 - 360.0 / 48.0, 360.0 / 48.0)
    areas = [_area("circus", circle, AreaType.ROUNDABOUT)]
    for k, name in enumerate(("s", "e", "n", "w")):
        areas.append(
            _area(f"arm_{name}", _rot90(_rect_poly(-1.5 * LANE_WIDTH, -_RB_FAR, 1.5 * LANE_WIDTH, -13.0), k), AreaType.REGULAR_ROAD)
        )

    arm_order = ("s", "e", "n", "w")
    slots = []
    for i, name in enumerate(arm_order):
        for q in (1, 2):
            target = arm_order[(i + q) % 4]
            start = ring_index_starting(arm_entry[name])
            n_arcs = 2 * q - 1
            ring_path = tuple(f"ring_{(start + j) % len(bounds)}" for j in range(n_arcs))
            route = (f"in_{name}", f"entry_{name}") + ring_path + (f"exit_{target}", f"out_{target}")
            slots.append(_Slot(route, (45.0, 68.0), (4.5, 7.5)))
    return _Blueprint(tuple(lanes), tuple(areas), tuple(slots))


def _build_parking_lot() -> _Blueprint:
    lanes: list[Lane] = [
        _straight("aisle", (-30.0, 0.0), (30.0, 0.0), width=4.0),
    ]
    slots: list[_Slot] = [_Slot(("aisle",), (2.0, 6.0), (3.5, 7.0))]
    for i, xk in enumerate((-20.0, -12.0, -4.0, 4.0, 12.0, 20.0)):
        for side, y0, y1 in (("n", 3.0, 8.0), ("s", -3.0, -8.0)):
            sid = f"stall_{side}{i}"
            lanes.append(_straight(sid, (xk, y0), (xk, y1), lane_type=LaneType.OTHER, width=2.6))
            slots.append(_Slot((sid,), (2.5, 2.5), (0.0, 0.0), parked_at=2.5))
    areas = (_area("lot", _rect_poly(-32.0, -22.0, 32.0, 22.0), AreaType.PARKING_AREA),)
    # slot 0 (the aisle driver) is always assigned first; stalls are shuffled
    return _Blueprint(tuple(lanes), tuple(areas), tuple(slots), permute_from=1)


_BUILDERS = {
    "straight_road": _build_straight_road,
    "four_way": lambda: _build_cross((0, 1, 2, 3)),
    "t_junction": lambda: _build_cross((0, 1, 2)),
    "roundabout": _build_roundabout,
    "parking_lot": _build_parking_lot,
}

_BLUEPRINT_CACHE: dict[str, _Blueprint] = {}


def layout_blueprint(layout: str) -> _Blueprint:
    if layout not in _BUILDERS:
        raise SpecError(f"unknown layout {layout!r}; expected one of {', '.join(LAYOUTS)}")
    if layout not in _BLUEPRINT_CACHE:
        _BLUEPRINT_CACHE[layout] = _BUILDERS[layout]()
    return _BLUEPRINT_CACHE[layout]


def layout_capacity(layout: str) -> int:
    return len(layout_blueprint(layout).slots)


# ---------------------------------------------------------------------------
# ground-truth helpers (independent implementations of the annotation rules)


def _points_in_poly_rc(pts: np.ndarray, poly: np.ndarray, tol: float = geometry.ON_EDGE_TOL) -> np.ndarray:
    """Boundary-inclusive ray-casting membership for whole state sequences."""
    x = pts[:, 0][:, None]
    y = pts[:, 1][:, None]
    x1 = poly[:, 0][None, :]
    y1 = poly[:, 1][None, :]
    x2 = np.roll(poly[:, 0], -1)[None, :]
    y2 = np.roll(poly[:, 1], -1)[None, :]
    dx, dy = x2 - x1, y2 - y1
    len2 = dx * dx + dy * dy
    safe = np.where(len2 <= 0.0, 1.0, len2)
    t = np.clip(((x - x1) * dx + (y - y1) * dy) / safe, 0.0, 1.0)
    qx, qy = x1 + t * dx, y1 + t * dy
    on_edge = np.any((x - qx) ** 2 + (y - qy) ** 2 <= tol * tol, axis=1)
    crosses = (y1 > y) != (y2 > y)
    with np.errstate(divide="ignore", invalid="ignore"):
        x_int = x1 + (y - y1) * dx / dy
    inside = (np.sum(crosses & (x < x_int), axis=1) % 2).astype(bool)
    return inside | on_edge


def _gt_areas_batch(areas: Sequence[Area], pts: np.ndarray) -> list[AreaType]:
    ordered = sorted(
        ((AREA_PRIORITY.index(a.area_type), a.id, geometry.as_xy(a.polygon), a.area_type) for a in areas),
        key=lambda r: (r[0], r[1]),
    )
    out = [AreaType.REGULAR_ROAD] * len(pts)
    unresolved = np.ones(len(pts), dtype=bool)
    for _, _, poly, atype in ordered:
        if not unresolved.any():
            break
        idx = np.nonzero(unresolved)[0]
        hit = _points_in_poly_rc(pts[idx], poly)
        for i in idx[hit]:
            out[i] = atype
            unresolved[i] = False
    return out


def _gt_trajectory(xy: np.ndarray, yaws: np.ndarray) -> TrajectoryCategory:
    disp = float(np.hypot(*(xy[-1] - xy[0])))
    if disp < _GT_STATIONARY_DISP:
        return TrajectoryCategory.STATIONARY
    unwrapped = np.unwrap(yaws)
    deg = math.degrees(float(unwrapped[-1] - unwrapped[0]))
    if abs(deg) >= _GT_UTURN_MIN_DEG:
        return TrajectoryCategory.U_TURN
    if abs(deg) < _GT_STRAIGHT_MAX_DEG:
        return TrajectoryCategory.STRAIGHT
    return TrajectoryCategory.LEFT_TURN if deg > 0 else TrajectoryCategory.RIGHT_TURN


def _gt_relative(
    ids: Sequence[str], xy: np.ndarray, yaws: np.ndarray, ego_idx: int
) -> dict[str, tuple[str, ...]]:
    ex, ey = xy[ego_idx]
    heading = math.degrees(yaws[ego_idx])
    buckets: dict[str, list[tuple[float, str]]] = {d: [] for d in DIRECTIONS}
    for i, vid in enumerate(ids):
        if i == ego_idx:
            continue
        dx, dy = xy[i, 0] - ex, xy[i, 1] - ey
        dist = math.hypot(dx, dy)
        if dist > _GT_NEIGHBOR_RANGE:
            continue
        bearing = math.degrees(math.atan2(dy, dx)) - heading
        bearing = (bearing + 180.0) % 360.0 - 180.0
        if bearing == -180.0:
            bearing = 180.0
        if abs(bearing) <= 45.0:
            d = "front"
        elif abs(bearing) >= 135.0:
            d = "behind"
        elif bearing > 0:
            d = "left"
        else:
            d = "right"
        buckets[d].append((dist, vid))
    return {d: tuple(vid for _, vid in sorted(v)) for d, v in buckets.items()}


# ---------------------------------------------------------------------------
# scene synthesis


def _r6(v: float) -> float:
    return round(float(v), 6) + 0.0


def synth_scene(spec: SynthSpec, seed: int) -> tuple[Scene, GroundTruth]:
    """Deterministic scene + ground truth for (spec, seed)."""
    bp = layout_blueprint(spec.layout)
    if spec.n_vehicles < 1:
        raise SpecError(f"n_vehicles must be >= 1, got {spec.n_vehicles}")
    if spec.n_vehicles > len(bp.slots):
        raise SpecError(
            f"layout {spec.layout!r} holds at most {len(bp.slots)} vehicles, requested {spec.n_vehicles}"
        )
    if spec.horizon < 51:
        raise SpecError(f"horizon must be >= 51, got {spec.horizon}")
    if spec.dt <= 0.0:
        raise SpecError(f"dt must be > 0, got {spec.dt}")

    rng = np.random.default_rng(seed)
    fixed = list(range(bp.permute_from))
    shuffled = list(bp.permute_from + rng.permutation(len(bp.slots) - bp.permute_from))
    order = (fixed + shuffled)[: spec.n_vehicles]

    duration = spec.horizon * spec.dt
    tracks: list[VehicleTrack] = []
    lane_seq_per_vehicle: list[list[str]] = []
    for vi, slot_idx in enumerate(order):
        slot = bp.slots[slot_idx]
        vid = f"veh_{vi:02d}"
        route_pts, piece_ends, piece_ids = _route_geometry(bp, slot.lane_ids)
        total = float(piece_ends[-1])
        if slot.parked_at is not None:
            s0, speed = slot.parked_at, 0.0
        else:
            s0 = float(rng.uniform(*slot.start_window))
            speed = float(rng.uniform(*slot.speed_range))
            # keep the whole trajectory on the route with a safety margin
            max_speed = (total - 2.0 - s0) / duration
            speed = max(0.5, min(speed, max_speed))
        cum = geometry.polyline_cumlen(route_pts)
        states = []
        lane_ids = []
        for t in range(spec.horizon + 1):
            s = s0 + speed * t * spec.dt
            p, tang = geometry.point_at_arclength(route_pts, cum, s)
            states.append(
                (
                    t,
                    VehicleState(
                        position=Vec2(_r6(p[0]), _r6(p[1])),
                        speed=_r6(speed),
                        yaw=_r6(geometry.wrap_angle(tang)),
                    ),
                )
            )
            piece = int(np.searchsorted(piece_ends, s, side="right"))
            lane_ids.append(piece_ids[min(piece, len(piece_ids) - 1)])
        tracks.append(VehicleTrack(vehicle_id=vid, states=tuple(states)))
        lane_seq_per_vehicle.append(lane_ids)

    scene = Scene(
        scene_id=f"{spec.layout}_n{spec.n_vehicles}_h{spec.horizon}_s{seed}",
        map=MapGraph(lanes={ln.id: ln for ln in bp.lanes}, areas={a.id: a for a in bp.areas}),
        tracks=tuple(tracks),
        dt=spec.dt,
        ego_id="veh_00",
    )
    validate_scene(scene)

    gt = _build_ground_truth(scene, bp, lane_seq_per_vehicle)
    return scene, gt


def _route_geometry(bp: _Blueprint, lane_ids: Sequence[str]):
    lane_by_id = {ln.id: ln for ln in bp.lanes}
    pieces = []
    piece_ends = []
    total = 0.0
    pts_all: list[np.ndarray] = []
    counts: list[int] = []
    for i, lid in enumerate(lane_ids):
        pts = geometry.as_xy(lane_by_id[lid].centerline)
        if i > 0 and np.linalg.norm(pts[0] - pts_all[-1][-1]) < 1e-9:
            pts = pts[1:]  # joint point already present
        pts_all.append(pts)
        counts.append(len(pts))
    route = np.concatenate(pts_all)
    cum = geometry.polyline_cumlen(route)
    offset = 0
    for lid, n in zip(lane_ids, counts):
        offset += n
        piece_ends.append(float(cum[offset - 1]))
        pieces.append(lid)
    return route, np.asarray(piece_ends), pieces


def _build_ground_truth(scene: Scene, bp: _Blueprint, lane_seqs: list[list[str]]) -> GroundTruth:
    lane_by_id = scene.map.lanes
    ids = [tr.vehicle_id for tr in scene.tracks]
    t0 = scene.tracks[0].t0
    T = scene.tracks[0].t1
    n_steps = T - t0 + 1
    xy = np.zeros((len(ids), n_steps, 2))
    yaws = np.zeros((len(ids), n_steps))
    for i, tr in enumerate(scene.tracks):
        for j, (_, st) in enumerate(tr.states):
            xy[i, j] = (st.x, st.y)
            yaws[i, j] = st.yaw

    areas = list(scene.map.areas.values())
    entries: dict[tuple[str, int], GroundTruthEntry] = {}
    for i, vid in enumerate(ids):
        area_types = _gt_areas_batch(areas, xy[i])
        for j in range(n_steps):
            t = t0 + j
            lane_id = lane_seqs[i][j]
            end = min(j + _GT_HORIZON, n_steps - 1)
            category = None
            if end - j >= _GT_MIN_FUTURE:
                category = _gt_trajectory(xy[i, j : end + 1], yaws[i, j : end + 1])
            entries[(vid, t)] = GroundTruthEntry(
                vehicle_id=vid,
                timestep=t,
                area_type=area_types[j],
                lane_id=lane_id,
                lane_type=lane_by_id[lane_id].lane_type,
                trajectory_category=category,
                relative_cars=_gt_relative(ids, xy[:, j], yaws[:, j], i),
            )
    return GroundTruth(scene_id=scene.scene_id, entries=entries)


# ---------------------------------------------------------------------------
# ground-truth I/O


def ground_truth_to_dict(gt: GroundTruth) -> dict:
    return {
        "scene_id": gt.scene_id,
        "entries": [
            {
                "vehicle_id": e.vehicle_id,
                "timestep": e.timestep,
                "area_type": e.area_type.value,
                "lane_id": e.lane_id,
                "lane_type": e.lane_type.value,
                "trajectory": None if e.trajectory_category is None else e.trajectory_category.value,
                "relative_cars": {d: list(v) for d, v in e.relative_cars.items()},
            }
            for (vid, t), e in sorted(gt.entries.items())
        ],
    }


def save_ground_truth(gt: GroundTruth, path) -> None:
    Path(path).write_text(dumps_canonical(ground_truth_to_dict(gt)), encoding="utf-8")


def load_ground_truth(path) -> GroundTruth:
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(raw, dict) or "entries" not in raw or "scene_id" not in raw:
        raise ParseError(f"{path}: not a ground-truth file")
    entries = {}
    for e in raw["entries"]:
        entry = GroundTruthEntry(
            vehicle_id=e["vehicle_id"],
            timestep=int(e["timestep"]),
            area_type=AreaType(e["area_type"]),
            lane_id=e["lane_id"],
            lane_type=LaneType(e["lane_type"]),
            trajectory_category=None if e["trajectory"] is None else TrajectoryCategory(e["trajectory"]),
            relative_cars={d: tuple(v) for d, v in e["relative_cars"].items()},
        )
        entries[(entry.vehicle_id, entry.timestep)] = entry
    return GroundTruth(scene_id=raw["scene_id"], entries=entries)
