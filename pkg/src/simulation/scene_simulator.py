"""
Synthetic urban scene: layout generation, geometric path tracing and depth
rendering from the vehicle's six cameras.

Buildings are axis-aligned boxes. Paths are the line of sight plus one
image-method specular reflection per visible building facade (and optionally
the ground plane). Depth views are rasterized with ray-box slab tests.
"""

import hashlib
import json
import logging
from typing import List, Optional, Tuple

import numpy as np

from models.channel import SPEED_OF_LIGHT, PathComponent, PathKind
from models.config import RenderConfig, SceneConfig
from models.errors import GenerationError
from models.scene import Building, DepthView, Lane, Scene, VehiclePose

logger = logging.getLogger(__name__)

DEFAULT_WAVELENGTH = SPEED_OF_LIGHT / 28e9
SETBACK = 2.0  # meters between a road corridor and a building
BOX_GAP = 2.0  # meters between boxes of one building complex
MIN_CELL = 6.0

# front, front-left, front-right, back, back-left, back-right
CAMERA_OFFSETS = (0.0, np.pi / 3, -np.pi / 3, np.pi, 2 * np.pi / 3, -2 * np.pi / 3)


# ---------------------------------------------------------------------------
# Layout
# ---------------------------------------------------------------------------

def _road_centers(extent: float, count: int, rng: np.random.Generator) -> List[float]:
    if count == 0:
        return []
    spacing = extent / (count + 1)
    jitter = rng.uniform(-0.1, 0.1, size=count) * spacing
    return [float(spacing * (i + 1) + jitter[i]) for i in range(count)]


def _free_intervals(extent: float, centers: List[float], road_width: float) -> List[Tuple[float, float]]:
    """Stretches of one axis not covered by road corridors."""
    edges = [0.0]
    for c in sorted(centers):
        edges.extend([c - road_width / 2, c + road_width / 2])
    edges.append(extent)
    intervals = []
    for lo, hi in zip(edges[0::2], edges[1::2]):
        lo, hi = max(lo, 0.0) + SETBACK, min(hi, extent) - SETBACK
        if hi - lo >= MIN_CELL - 2 * SETBACK:
            intervals.append((lo, hi))
    return intervals


def _split_complex(
    x: Tuple[float, float], y: Tuple[float, float], parts: int,
    heights: Tuple[float, float], rng: np.random.Generator,
) -> List[Building]:
    along_x = (x[1] - x[0]) >= (y[1] - y[0])
    lo, hi = x if along_x else y
    parts = max(1, min(parts, int((hi - lo + BOX_GAP) // (1.0 + BOX_GAP))))
    size = (hi - lo - BOX_GAP * (parts - 1)) / parts
    boxes = []
    for i in range(parts):
        a = lo + i * (size + BOX_GAP)
        b = a + size
        height = float(rng.uniform(*heights))
        if along_x:
            boxes.append(Building(a, y[0], b, y[1], height))
        else:
            boxes.append(Building(x[0], a, x[1], b, height))
    return boxes


def build_scene(config: SceneConfig, seed: int = 0) -> Scene:
    """
    Generate a deterministic grid-road urban layout.

    Roads alternate between vertical and horizontal lanes spanning the scene;
    building complexes occupy randomly chosen blocks between road corridors,
    each split into ``boxes_per_building`` boxes of random height.

    Args:
        config: Scene dimensions and counts
        seed: Layout seed

    Returns:
        Scene with buildings, lanes and the roadside base station
    """
    rng = np.random.default_rng(seed)
    n_vertical = config.n_roads - config.n_roads // 2
    n_horizontal = config.n_roads // 2
    xs = _road_centers(config.length, n_vertical, rng)
    ys = _road_centers(config.width, n_horizontal, rng)

    lanes = [Lane((x, 0.0), (x, config.width)) for x in xs]
    lanes += [Lane((0.0, y), (config.length, y)) for y in ys]

    cells = [
        (cx, cy)
        for cx in _free_intervals(config.length, xs, config.road_width)
        for cy in _free_intervals(config.width, ys, config.road_width)
    ]
    if config.n_buildings > len(cells):
        raise GenerationError(
            f"{config.n_buildings} building complexes requested but only {len(cells)} blocks fit"
        )

    buildings: List[Building] = []
    if config.n_buildings:
        chosen = sorted(rng.choice(len(cells), size=config.n_buildings, replace=False))
        for index in chosen:
            cx, cy = cells[index]
            buildings.extend(
                _split_complex(cx, cy, config.boxes_per_building, config.building_height, rng)
            )

    if config.bs_xy is not None:
        bs_xy = config.bs_xy
    elif xs:
        bs_xy = (xs[0] + config.road_width / 2 - 1.0, config.width / 2)
    else:
        bs_xy = (config.length / 2, config.width / 2)
    bs = np.array([bs_xy[0], bs_xy[1], config.bs_height], dtype=np.float64)

    scene = Scene(
        length=config.length,
        width=config.width,
        buildings=buildings,
        lanes=lanes,
        bs_position=bs,
        reflection_loss=config.reflection_loss,
        road_width=config.road_width,
        ms_height=config.ms_height,
        ground_reflection=config.ground_reflection,
        max_paths=config.max_paths,
        phase_jitter=config.phase_jitter,
    )
    if not scene.contains(bs):
        raise GenerationError(f"base station {bs_xy} lies outside the scene")
    if any(_inside(bs, b) for b in buildings):
        raise GenerationError(f"base station {bs_xy} lies inside a building")
    logger.info("Built scene with %d boxes and %d lanes", len(buildings), len(lanes))
    return scene


def _inside(point: np.ndarray, b: Building) -> bool:
    return bool(np.all(point > b.box_min) and np.all(point < b.box_max))


def scene_hash(scene: Scene) -> str:
    """Fingerprint of the scene geometry."""
    payload = {
        "extent": [scene.length, scene.width],
        "buildings": [[b.x_min, b.y_min, b.x_max, b.y_max, b.height] for b in scene.buildings],
        "lanes": [[*lane.start, *lane.end] for lane in scene.lanes],
        "bs": [float(v) for v in scene.bs_position],
        "reflection_loss": scene.reflection_loss,
        "ground_reflection": scene.ground_reflection,
    }
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:16]


# ---------------------------------------------------------------------------
# Path tracing
# ---------------------------------------------------------------------------

def segment_blocked(a: np.ndarray, b: np.ndarray, scene: Scene, tol: float = 1e-9) -> bool:
    """
    Whether the open segment a-b passes through the interior of any building.

    Endpoints are put in a canonical order first, so the answer does not depend
    on the direction of travel. Touching a face only at an endpoint is not a hit.
    """
    box_min, box_max = scene.box_arrays()
    if len(box_min) == 0:
        return False
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if tuple(b) < tuple(a):
        a, b = b, a
    d = b - a
    t_near = np.zeros(len(box_min))
    t_far = np.ones(len(box_min))
    for axis in range(3):
        if d[axis] == 0.0:
            outside = (a[axis] <= box_min[:, axis]) | (a[axis] >= box_max[:, axis])
            t_far = np.where(outside, -1.0, t_far)
            continue
        t1 = (box_min[:, axis] - a[axis]) / d[axis]
        t2 = (box_max[:, axis] - a[axis]) / d[axis]
        t_near = np.maximum(t_near, np.minimum(t1, t2))
        t_far = np.minimum(t_far, np.maximum(t1, t2))
    return bool(np.any(t_far - t_near > tol))


def _departure_angles(direction: np.ndarray) -> Tuple[float, float]:
    """(azimuth, elevation) with d = (sin phi cos theta, sin phi sin theta, cos phi)."""
    unit = direction / np.linalg.norm(direction)
    return float(np.arctan2(unit[1], unit[0])), float(np.arccos(np.clip(unit[2], -1.0, 1.0)))


def _geometry_phase(length: float, wavelength: float, jitter: float, key: str) -> float:
    digest = hashlib.sha256(f"{key}:{length:.9f}".encode()).digest()
    rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
    offset = rng.uniform(0.0, jitter) if jitter > 0 else 0.0
    return float((2 * np.pi * length / wavelength + offset) % (2 * np.pi))


def _make_path(
    scene: Scene, length: float, first_leg: np.ndarray, bounces: int,
    kind: PathKind, wavelength: float, key: str,
) -> PathComponent:
    azimuth, elevation = _departure_angles(first_leg)
    return PathComponent(
        attenuation=wavelength / (4 * np.pi * length) * scene.reflection_loss ** bounces,
        delay=length / SPEED_OF_LIGHT,
        phase=_geometry_phase(length, wavelength, scene.phase_jitter, key),
        azimuth=azimuth,
        elevation=elevation,
        bounces=bounces,
        kind=kind,
    )


def _facade_reflections(scene: Scene, bs: np.ndarray, ms: np.ndarray) -> List[Tuple[np.ndarray, np.ndarray, str]]:
    """Mirror points and reflection points of every valid facade bounce."""
    found = []
    for index, building in enumerate(scene.buildings):
        lo, hi = building.box_min, building.box_max
        for axis in (0, 1):
            other = 1 - axis
            for side, plane in ((-1.0, lo[axis]), (1.0, hi[axis])):
                if (bs[axis] - plane) * side <= 0 or (ms[axis] - plane) * side <= 0:
                    continue
                mirror = bs.copy()
                mirror[axis] = 2 * plane - bs[axis]
                t = (plane - mirror[axis]) / (ms[axis] - mirror[axis])
                point = mirror + t * (ms - mirror)
                point[axis] = plane
                if not (lo[other] <= point[other] <= hi[other] and 0.0 <= point[2] <= hi[2]):
                    continue
                found.append((mirror, point, f"facade:{index}:{axis}:{int(side)}"))
    return found


def trace_paths(
    scene: Scene, pose: VehiclePose, wavelength: float = DEFAULT_WAVELENGTH, seed: int = 0
) -> List[PathComponent]:
    """
    Trace line-of-sight and first-order specular paths from BS to vehicle.

    Args:
        scene: Scene geometry
        pose: Vehicle pose; its position is the receive antenna
        wavelength: Carrier wavelength in meters
        seed: Mixed into the per-path phase jitter

    Returns:
        Up to ``scene.max_paths`` strongest paths, ordered by delay
    """
    bs = np.asarray(scene.bs_position, dtype=np.float64)
    ms = np.asarray(pose.position, dtype=np.float64)
    paths: List[PathComponent] = []

    if not segment_blocked(bs, ms, scene):
        paths.append(_make_path(
            scene, float(np.linalg.norm(ms - bs)), ms - bs, 0, PathKind.LOS, wavelength, f"{seed}:los",
        ))

    for mirror, point, key in _facade_reflections(scene, bs, ms):
        if segment_blocked(bs, point, scene) or segment_blocked(point, ms, scene):
            continue
        paths.append(_make_path(
            scene, float(np.linalg.norm(ms - mirror)), point - bs, 1, PathKind.FACADE, wavelength, f"{seed}:{key}",
        ))

    if scene.ground_reflection and bs[2] > 0 and ms[2] > 0:
        mirror = bs * np.array([1.0, 1.0, -1.0])
        point = mirror + (-mirror[2] / (ms[2] - mirror[2])) * (ms - mirror)
        point[2] = 0.0
        if not (segment_blocked(bs, point, scene) or segment_blocked(point, ms, scene)):
            paths.append(_make_path(
                scene, float(np.linalg.norm(ms - mirror)), point - bs, 1, PathKind.GROUND, wavelength, f"{seed}:ground",
            ))

    if len(paths) > scene.max_paths:
        paths = sorted(paths, key=lambda p: -p.attenuation)[:scene.max_paths]
    return sorted(paths, key=lambda p: p.delay)


# ---------------------------------------------------------------------------
# Depth rendering
# ---------------------------------------------------------------------------

def _ray_box_depth(origin: np.ndarray, dirs: np.ndarray, box_min: np.ndarray, box_max: np.ndarray) -> np.ndarray:
    """Smallest non-negative ray parameter hitting any box, inf on a miss."""
    if len(box_min) == 0:
        return np.full(len(dirs), np.inf)
    d = dirs[:, None, :]
    zero = d == 0.0
    safe = np.where(zero, 1.0, d)
    t1 = (box_min[None] - origin) / safe
    t2 = (box_max[None] - origin) / safe
    inside_slab = (origin > box_min[None]) & (origin < box_max[None])
    lo = np.where(zero, np.where(inside_slab, -np.inf, np.inf), np.minimum(t1, t2))
    hi = np.where(zero, np.where(inside_slab, np.inf, -np.inf), np.maximum(t1, t2))
    t_near = lo.max(axis=2)
    t_far = hi.min(axis=2)
    hit = (t_near <= t_far) & (t_far > 0.0)
    t = np.where(hit, np.maximum(t_near, 0.0), np.inf)
    return t.min(axis=1)


def render_depth_views(
    scene: Scene,
    pose: VehiclePose,
    width: int = 32,
    height: int = 32,
    fov: float = np.pi / 2,
    max_range: float = 100.0,
) -> List[DepthView]:
    """
    Render the six vehicle cameras as normalized planar-depth images.

    Cameras look front, front-left, front-right, back, back-left and back-right
    relative to the heading. A pixel holds the camera-axis distance of the
    nearest box hit divided by ``max_range``, clamped to 1.

    Args:
        scene: Scene geometry
        pose: Camera center and vehicle heading
        width, height: Resolution of each view
        fov: Horizontal field of view in radians
        max_range: Distance mapped to 1.0
    """
    if width < 1 or height < 1:
        raise ValueError(f"render resolution must be positive, got {width}x{height}")
    origin = np.asarray(pose.position, dtype=np.float64)
    box_min, box_max = scene.box_arrays()
    tan_h = np.tan(fov / 2)
    tan_v = tan_h * height / width
    u = (2 * (np.arange(width) + 0.5) / width - 1) * tan_h
    v = (1 - 2 * (np.arange(height) + 0.5) / height) * tan_v
    uu, vv = np.meshgrid(u, v)

    views = []
    for offset in CAMERA_OFFSETS:
        yaw = pose.heading + offset
        forward = np.array([np.cos(yaw), np.sin(yaw), 0.0])
        right = np.array([np.sin(yaw), -np.cos(yaw), 0.0])
        up = np.array([0.0, 0.0, 1.0])
        # forward has unit length and is orthogonal to right/up, so t is planar depth.
        dirs = forward + uu.reshape(-1, 1) * right + vv.reshape(-1, 1) * up
        depth = _ray_box_depth(origin, dirs, box_min, box_max)
        pixels = np.minimum(depth / max_range, 1.0).reshape(height, width)
        views.append(DepthView(pixels=pixels))
    return views


def nlos_fraction(paths_per_sample: List[List[PathComponent]]) -> float:
    """Share of samples without a line-of-sight path."""
    if not paths_per_sample:
        return 0.0
    blocked = sum(1 for paths in paths_per_sample if not any(p.kind == PathKind.LOS for p in paths))
    return blocked / len(paths_per_sample)


class SceneSimulator:
    """
    Drives a vehicle through one scene: traces its propagation paths and
    renders its six depth views at every pose.
    """

    def __init__(
        self,
        scene: Scene,
        wavelength: float = DEFAULT_WAVELENGTH,
        render: Optional[RenderConfig] = None,
        seed: int = 0,
    ):
        self.scene = scene
        self.wavelength = wavelength
        self.render_config = render or RenderConfig()
        self.seed = seed

    @classmethod
    def from_config(
        cls, config: SceneConfig, seed: int = 0, wavelength: float = DEFAULT_WAVELENGTH,
        render: Optional[RenderConfig] = None,
    ) -> "SceneSimulator":
        """Build the scene for ``seed`` and wrap it."""
        return cls(build_scene(config, seed), wavelength, render, seed)

    @property
    def scene_hash(self) -> str:
        return scene_hash(self.scene)

    def trace(self, pose: VehiclePose) -> List[PathComponent]:
        return trace_paths(self.scene, pose, self.wavelength, self.seed)

    def render(self, pose: VehiclePose) -> np.ndarray:
        """Six depth views stacked into a float32 array of shape (6, H, W)."""
        cfg = self.render_config
        views = render_depth_views(
            self.scene, pose, cfg.width, cfg.height, np.deg2rad(cfg.fov_deg), cfg.max_range,
        )
        return np.stack([v.pixels for v in views]).astype(np.float32)

    def capture(self, pose: VehiclePose) -> Tuple[List[PathComponent], np.ndarray]:
        """Paths and depth views of one pose."""
        return self.trace(pose), self.render(pose)
