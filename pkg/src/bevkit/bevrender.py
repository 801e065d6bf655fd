"""Ego-centric bird's-eye-view rasterization and scene-level noise regimes.

Rasters are drawn in an ego-centered, ego-heading-up metric frame. The
world-to-pixel transform is affine ([a, b, c, d, e, f] with
u = a*x + b*y + c, v = d*x + e*y + f) and is written to a JSON sidecar next
to every image so downstream consumers can convert boxes back to world
coordinates. Rendering is fully deterministic.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping

import numpy as np
from PIL import Image, ImageDraw

from . import geometry
from .errors import ConfigError, ParseError
from .scenemodel import AREA_PRIORITY, LaneType, Scene, VehicleState

ARROW_SPEED_THRESHOLD = 0.5  # m/s; slower egos are drawn without a heading arrow

DEFAULT_PALETTE: dict[str, tuple[int, int, int]] = {
    "background": (247, 247, 247),
    "road": (208, 208, 208),
    "lane_boundary": (70, 70, 70),
    "area_intersection": (252, 226, 173),
    "area_roundabout": (221, 204, 246),
    "area_parking_area": (197, 225, 247),
    "area_regular_road": (228, 228, 228),
    "vehicle": (46, 94, 188),
    "ego": (217, 30, 24),
    "arrow": (25, 25, 25),
}


@dataclass(frozen=True)
class RenderConfig:
    extent: float = 50.0  # half-width of the square window, meters
    resolution: float = 0.25  # meters per pixel
    palette: Mapping[str, tuple[int, int, int]] = field(default_factory=lambda: dict(DEFAULT_PALETTE))

    def side(self) -> int:
        if self.extent <= 0 or self.resolution <= 0:
            raise ConfigError(f"extent and resolution must be > 0, got {self.extent}, {self.resolution}")
        side = 2.0 * self.extent / self.resolution
        if abs(side - round(side)) > 1e-9 or round(side) < 1:
            raise ConfigError(f"2*extent/resolution must be a positive integer, got {side}")
        return int(round(side))


@dataclass(eq=False)
class BevRaster:
    pixels: np.ndarray  # (H, W, 3) uint8
    world_to_pixel: tuple[float, float, float, float, float, float]
    scene_id: str
    ego_id: str
    timestep: int
    extent: float
    resolution: float


@dataclass(frozen=True)
class RasterRef:
    """Lightweight pointer to a rendered image plus its transform metadata."""

    image: str
    scene_id: str
    ego_id: str
    timestep: int
    extent: float
    resolution: float
    transform: tuple[float, float, float, float, float, float]

    def side(self) -> int:
        return int(round(2.0 * self.extent / self.resolution))


def compute_transform(ego: VehicleState, extent: float, resolution: float):
    """Affine world->pixel coefficients for an ego-centered, heading-up window."""
    sin_y, cos_y = math.sin(ego.yaw), math.cos(ego.yaw)
    a = sin_y / resolution
    b = -cos_y / resolution
    c = (-sin_y * ego.x + cos_y * ego.y + extent) / resolution
    d = -cos_y / resolution
    e = -sin_y / resolution
    f = (cos_y * ego.x + sin_y * ego.y + extent) / resolution
    return (a, b, c, d, e, f)


def apply_transform(transform, points) -> np.ndarray:
    a, b, c, d, e, f = transform
    pts = geometry.as_xy(points)
    return np.column_stack([a * pts[:, 0] + b * pts[:, 1] + c, d * pts[:, 0] + e * pts[:, 1] + f])


def invert_transform(transform, pixels) -> np.ndarray:
    a, b, c, d, e, f = transform
    px = np.asarray(pixels, dtype=float).reshape(-1, 2)
    det = a * e - b * d
    u = px[:, 0] - c
    v = px[:, 1] - f
    return np.column_stack([(e * u - b * v) / det, (-d * u + a * v) / det])


def vehicle_corners(x: float, y: float, yaw: float, length: float, width: float) -> np.ndarray:
    hl, hw = length / 2.0, width / 2.0
    cos_y, sin_y = math.cos(yaw), math.sin(yaw)
    local = np.array([(-hl, -hw), (hl, -hw), (hl, hw), (-hl, hw)])
    return np.column_stack(
        [x + local[:, 0] * cos_y - local[:, 1] * sin_y, y + local[:, 0] * sin_y + local[:, 1] * cos_y]
    )


def render_bev(scene: Scene, ego_id: str, timestep: int, cfg: RenderConfig | None = None) -> BevRaster:
    """Rasterize the scene around one vehicle at one timestep."""
    cfg = cfg or RenderConfig()
    side = cfg.side()
    pal = cfg.palette
    ego_state = scene.track(ego_id).state_at(timestep)
    transform = compute_transform(ego_state, cfg.extent, cfg.resolution)

    img = Image.new("RGB", (side, side), pal["background"])
    draw = ImageDraw.Draw(img)

    def px(points) -> list[tuple[float, float]]:
        return [tuple(p) for p in apply_transform(transform, points)]

    # areas, lowest priority first so higher-priority fills end up on top
    areas = sorted(
        scene.map.areas.values(), key=lambda a: (-AREA_PRIORITY.index(a.area_type), a.id)
    )
    for area in areas:
        draw.polygon(px(area.polygon), fill=pal[f"area_{area.area_type.value}"])

    lanes = [scene.map.lanes[k] for k in sorted(scene.map.lanes)]
    for lane in lanes:
        draw.polygon(px(lane.boundary), fill=pal["road"])
    hidden = set(scene.hidden_lane_boundaries)
    for lane in lanes:
        if lane.id in hidden:
            continue
        ring = px(lane.boundary)
        draw.line(ring + ring[:1], fill=pal["lane_boundary"], width=1)

    for tr in sorted(scene.tracks, key=lambda tr: tr.vehicle_id):
        if tr.vehicle_id == ego_id or not tr.has(timestep):
            continue
        st = tr.state_at(timestep)
        draw.polygon(px(vehicle_corners(st.x, st.y, st.yaw, tr.length, tr.width)), fill=pal["vehicle"])

    ego_track = scene.track(ego_id)
    draw.polygon(
        px(vehicle_corners(ego_state.x, ego_state.y, ego_state.yaw, ego_track.length, ego_track.width)),
        fill=pal["ego"],
    )
    if ego_state.speed > ARROW_SPEED_THRESHOLD:
        # heading-up frame: the arrow points straight up from the front bumper,
        # leaving the ego rectangle (and the image center) untouched
        cx = cy = side / 2.0
        base_y = cy - (ego_track.length / 2.0) / cfg.resolution - 1.0
        tip_y = base_y - 2.5 / cfg.resolution
        half_head = 0.6 / cfg.resolution
        draw.line([(cx, base_y), (cx, tip_y + half_head)], fill=pal["arrow"], width=2)
        draw.polygon(
            [(cx, tip_y), (cx - half_head, tip_y + 2 * half_head), (cx + half_head, tip_y + 2 * half_head)],
            fill=pal["arrow"],
        )

    return BevRaster(
        pixels=np.asarray(img),
        world_to_pixel=transform,
        scene_id=scene.scene_id,
        ego_id=ego_id,
        timestep=timestep,
        extent=cfg.extent,
        resolution=cfg.resolution,
    )


def raster_ref(raster: BevRaster, image_path: str) -> RasterRef:
    return RasterRef(
        image=str(image_path),
        scene_id=raster.scene_id,
        ego_id=raster.ego_id,
        timestep=raster.timestep,
        extent=raster.extent,
        resolution=raster.resolution,
        transform=raster.world_to_pixel,
    )


def save_raster(raster: BevRaster, png_path) -> RasterRef:
    """Write the PNG and its JSON sidecar (same stem, .json suffix)."""
    png_path = Path(png_path)
    Image.fromarray(raster.pixels).save(png_path, format="PNG")
    sidecar = {
        "scene_id": raster.scene_id,
        "ego_id": raster.ego_id,
        "timestep": raster.timestep,
        "extent": raster.extent,
        "resolution": raster.resolution,
        "transform": list(raster.world_to_pixel),
    }
    png_path.with_suffix(".json").write_text(
        json.dumps(sidecar, sort_keys=True, separators=(",", ":")) + "\n", encoding="utf-8"
    )
    return raster_ref(raster, str(png_path))


def load_sidecar(path) -> RasterRef:
    path = Path(path)
    raw = json.loads(path.read_text(encoding="utf-8"))
    try:
        return RasterRef(
            image=str(path.with_suffix(".png")),
            scene_id=raw["scene_id"],
            ego_id=raw["ego_id"],
            timestep=int(raw["timestep"]),
            extent=float(raw["extent"]),
            resolution=float(raw["resolution"]),
            transform=tuple(float(v) for v in raw["transform"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"{path}: invalid raster sidecar ({exc})") from exc


# ---------------------------------------------------------------------------
# noise regimes


def derive_subseeds(seed: int, n: int) -> list[int]:
    """Stable child seeds for composing independently seeded perturbations."""
    return [int(s) for s in np.random.SeedSequence(seed).generate_state(n, dtype=np.uint64)]


def perturb_vehicles(scene: Scene, rate: float = 0.10, max_shift: float = 0.20, seed: int = 0) -> Scene:
    """Per vehicle at `rate`: remove its track (p=0.5) or shift it by <= max_shift.

    The ego is never removed; when sampled for removal it is shifted instead.
    Untouched tracks are shared with the input scene.
    """
    if not 0.0 <= rate <= 1.0:
        raise ValueError(f"rate must be in [0, 1], got {rate}")
    rng = np.random.default_rng(seed)
    tracks = []
    for tr in scene.tracks:
        if rng.random() >= rate:
            tracks.append(tr)
            continue
        remove = rng.random() < 0.5
        if remove and tr.vehicle_id != scene.ego_id:
            continue
        ang = rng.uniform(0.0, 2.0 * math.pi)
        radius = max_shift * math.sqrt(rng.random())
        dx, dy = radius * math.cos(ang), radius * math.sin(ang)
        shifted = tuple(
            (t, replace(st, position=replace(st.position, x=st.position.x + dx, y=st.position.y + dy)))
            for t, st in tr.states
        )
        tracks.append(replace(tr, states=shifted))
    return replace(scene, tracks=tuple(tracks))


def perturb_lanes(scene: Scene, rate: float = 0.10, seed: int = 0) -> Scene:
    """Per lane at `rate`: hide its boundary stroke (p=0.5) or relabel its type.

    Geometry is untouched so annotations computed from the clean scene remain
    comparable; hidden strokes only affect rendering.
    """
    if not 0.0 <= rate <= 1.0:
        raise ValueError(f"rate must be in [0, 1], got {rate}")
    rng = np.random.default_rng(seed)
    lanes = dict(scene.map.lanes)
    hidden = set(scene.hidden_lane_boundaries)
    for lid in sorted(lanes):
        if rng.random() >= rate:
            continue
        if rng.random() < 0.5:
            hidden.add(lid)
        else:
            others = [t for t in LaneType if t != lanes[lid].lane_type]
            new_type = others[int(rng.integers(len(others)))]
            lanes[lid] = replace(lanes[lid], lane_type=new_type)
    return replace(
        scene,
        map=replace(scene.map, lanes=lanes),
        hidden_lane_boundaries=tuple(sorted(hidden)),
    )


def perturb_combined(scene: Scene, rate: float = 0.10, seed: int = 0) -> Scene:
    """perturb_vehicles then perturb_lanes, with independent derived sub-seeds."""
    veh_seed, lane_seed = derive_subseeds(seed, 2)
    return perturb_lanes(perturb_vehicles(scene, rate=rate, seed=veh_seed), rate=rate, seed=lane_seed)
