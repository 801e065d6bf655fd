import math

import numpy as np
import pytest

from bevkit.scenemodel import (
    Area,
    AreaType,
    Lane,
    LaneType,
    MapGraph,
    Scene,
    Vec2,
    VehicleState,
    VehicleTrack,
    make_polyline,
)


def rect_polygon(xmin, ymin, xmax, ymax):
    return make_polyline([(xmin, ymin), (xmax, ymin), (xmax, ymax), (xmin, ymax)])


def straight_lane(lane_id="L", y=0.0, x0=-50.0, x1=50.0, width=3.5, lane_type=LaneType.STRAIGHT, successors=()):
    h = width / 2.0
    return Lane(
        id=lane_id,
        centerline=make_polyline([(x0, y), (x1, y)]),
        boundary=rect_polygon(x0, y - h, x1, y + h),
        lane_type=lane_type,
        successors=tuple(successors),
        width=width,
    )


def straight_states(n, x0=0.0, y0=0.0, v=5.0, yaw=0.0, dt=0.1, t_start=0):
    """n states driving in a straight line at constant speed."""
    states = []
    for k in range(n):
        s = v * k * dt
        states.append(
            (
                t_start + k,
                VehicleState(
                    position=Vec2(x0 + s * math.cos(yaw), y0 + s * math.sin(yaw)),
                    speed=v,
                    yaw=yaw,
                ),
            )
        )
    return tuple(states)


def constant_states(n, x=0.0, y=0.0, yaw=0.0, t_start=0):
    return tuple(
        (t_start + k, VehicleState(position=Vec2(x, y), speed=0.0, yaw=yaw)) for k in range(n)
    )


def build_scene(lanes, areas, tracks, scene_id="test", ego_id=None, dt=0.1):
    return Scene(
        scene_id=scene_id,
        map=MapGraph(lanes={l.id: l for l in lanes}, areas={a.id: a for a in areas}),
        tracks=tuple(tracks),
        dt=dt,
        ego_id=ego_id or tracks[0].vehicle_id,
    )


@pytest.fixture
def single_lane_scene():
    """One straight lane heading +x, one moving vehicle on the centerline."""
    lane = straight_lane("L0")
    area = Area(id="road", polygon=rect_polygon(-50, -2, 50, 2), area_type=AreaType.REGULAR_ROAD)
    track = VehicleTrack(vehicle_id="ego", states=straight_states(61, x0=-30.0))
    return build_scene([lane], [area], [track])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def make_raster_ref(scene, vehicle_id, timestep, extent=50.0, resolution=0.25):
    """RasterRef with the real transform but no rendered image on disk."""
    from bevkit.bevrender import RasterRef, compute_transform

    st = scene.track(vehicle_id).state_at(timestep)
    return RasterRef(
        image=f"{scene.scene_id}__{vehicle_id}__t{timestep:04d}.png",
        scene_id=scene.scene_id,
        ego_id=vehicle_id,
        timestep=timestep,
        extent=extent,
        resolution=resolution,
        transform=compute_transform(st, extent, resolution),
    )


def rederive_answer(item, scene, ref, index=None):
    """Recompute a QA item's answer from the clean scene alone.

    Uses only the item's question parameters (ego, timestep, direction, rank,
    choice boxes); all scene facts are freshly recomputed through the
    annotation operations.
    """
    from bevkit.annotator import (
        MapIndex,
        classify_area,
        current_lane,
        relative_cars,
        trajectory_lanes,
    )
    from bevkit.scenemodel import LaneType
    from bevkit.vqagen import QType, bbox_iou, lane_bbox, orientation_label, _union_bbox

    track = scene.track(item.ego_id)
    state = track.state_at(item.timestep)
    index = index or MapIndex(scene.map)

    if item.qtype is QType.AREA_TYPE:
        return classify_area(scene.map, state.position, index=index).value
    if item.qtype is QType.LANE_TYPE:
        lid = current_lane(scene.map, state, index=index)
        return (scene.map.lanes[lid].lane_type if lid else LaneType.OTHER).value
    if item.qtype is QType.LOCATION:
        lid = current_lane(scene.map, state, index=index)
        box = lane_bbox(scene.map.lanes[lid].boundary, ref)
        assert bbox_iou(item.choices["A"], item.choices["B"]) == 0.0
        matches = [k for k, v in item.choices.items() if v == box]
        assert len(matches) == 1
        return matches[0]
    if item.qtype is QType.NAVIGATION:
        lanes = trajectory_lanes(scene.map, track, item.timestep, index=index)
        boxes = [b for b in (lane_bbox(scene.map.lanes[l].boundary, ref) for l in lanes) if b]
        box = _union_bbox(boxes)
        assert bbox_iou(item.choices["A"], item.choices["B"]) == 0.0
        matches = [k for k, v in item.choices.items() if v == box]
        assert len(matches) == 1
        return matches[0]
    if item.qtype is QType.EXISTENCE:
        rel = relative_cars(scene, item.ego_id, item.timestep)
        return "yes" if rel[item.meta["direction"]] else "no"
    if item.qtype is QType.ORIENTATION:
        rel = relative_cars(scene, item.ego_id, item.timestep)
        ids = rel[item.meta["direction"]]
        if not ids:
            return "none"
        target = ids[0] if item.meta["rank"] == "closest" else ids[-1]
        other = scene.track(target).state_at(item.timestep)
        return orientation_label(other.yaw - state.yaw)
    raise AssertionError(f"unhandled qtype {item.qtype}")
