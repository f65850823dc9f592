"""Procedural urban scenes and top-down RGB / depth rendering.

A scene is a square height field on a regular grid of ``width_cells`` cells,
each ``cell_size`` meters wide. Row index follows +y and column index
follows +x, so cell ``(i, j)`` covers ``[j*cs, (j+1)*cs) x [i*cs, (i+1)*cs)``.
Rendered images use the same orientation: pixel row 0 is the lowest y in
the footprint.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, FootprintError

SCENARIOS = ("crossroad", "widelane")

# per-family generator parameters
_FAMILIES = {
    "crossroad": dict(
        height_range=(5.0, 40.0),
        lot_range=(8, 15),
        empty_prob=0.25,
        road_fraction=0.12,
    ),
    "widelane": dict(
        height_range=(20.0, 120.0),
        lot_range=(6, 11),
        empty_prob=0.05,
        road_fraction=0.22,
    ),
}

ROAD_RGB = (128, 128, 128)
GROUND_RGB = (92, 140, 72)
# roof palette anchors, low to high; red always dominates green so roofs
# never collide with the road gray or ground green even after jitter
_ROOF_HEIGHTS = np.array([0.0, 40.0, 80.0, 120.0])
_ROOF_COLORS = np.array(
    [[214, 150, 110], [196, 112, 96], [170, 80, 110], [140, 60, 130]], dtype=float
)
_ROOF_JITTER = 12


@dataclass(eq=False)
class SceneSpec:
    scenario: str
    cell_size: float
    grid: np.ndarray  # (W, W) float64 heights in meters
    road_mask: np.ndarray  # (W, W) bool
    seed: int
    building_ids: np.ndarray  # (W, W) int32, 0 = no building

    @property
    def width_cells(self) -> int:
        return self.grid.shape[0]

    @property
    def side(self) -> float:
        """Scene side length in meters."""
        return self.width_cells * self.cell_size

    def height_at(self, x, y):
        """Surface elevation under ground coordinates ``(x, y)`` (vectorized)."""
        i, j = self.cell_index(x, y)
        return self.grid[i, j]

    def cell_index(self, x, y):
        w = self.width_cells
        j = np.clip(np.floor(np.asarray(x, dtype=float) / self.cell_size), 0, w - 1).astype(np.intp)
        i = np.clip(np.floor(np.asarray(y, dtype=float) / self.cell_size), 0, w - 1).astype(np.intp)
        return i, j


@dataclass(frozen=True)
class UavPose:
    x: float
    y: float
    z: float


@dataclass(eq=False)
class SensingImage:
    kind: str  # "rgb" or "depth"
    payload: np.ndarray  # rgb: (r, r, 3) uint8, depth: (r, r) float32 meters

    @property
    def resolution(self) -> int:
        return self.payload.shape[0]

    @property
    def channels(self) -> int:
        return 3 if self.kind == "rgb" else 1


def _scene_rng(scenario: str, seed: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), SCENARIOS.index(scenario)]))


def _lot_edges(rng, width, lot_range):
    edges = [0]
    while edges[-1] < width:
        edges.append(edges[-1] + int(rng.integers(lot_range[0], lot_range[1] + 1)))
    edges[-1] = width
    return edges


def generate_scene(scenario: str, seed: int, width_cells: int, cell_size: float) -> SceneSpec:
    """Build a procedural city block layout for one scenario family.

    Buildings are axis-aligned boxes placed on a randomly sized lot lattice,
    inset by one cell so neighbouring buildings are separated by alleys.
    ``crossroad`` cuts two orthogonal road bands through the centre;
    ``widelane`` cuts one broad band and uses taller, denser buildings.
    """
    if scenario not in _FAMILIES:
        raise ConfigError(f"unknown scenario {scenario!r}; expected one of {SCENARIOS}")
    if width_cells < 16:
        raise ConfigError(f"width_cells must be >= 16, got {width_cells}")
    if not cell_size > 0:
        raise ConfigError(f"cell_size must be positive, got {cell_size}")

    fam = _FAMILIES[scenario]
    rng = _scene_rng(scenario, seed)
    w = int(width_cells)

    grid = np.zeros((w, w), dtype=np.float64)
    ids = np.zeros((w, w), dtype=np.int32)
    xs = _lot_edges(rng, w, fam["lot_range"])
    ys = _lot_edges(rng, w, fam["lot_range"])
    lo, hi = fam["height_range"]
    next_id = 1
    for i0, i1 in zip(ys[:-1], ys[1:]):
        for j0, j1 in zip(xs[:-1], xs[1:]):
            empty = rng.random() < fam["empty_prob"]
            height = rng.uniform(lo, hi)
            if empty or i1 - i0 < 3 or j1 - j0 < 3:
                continue
            grid[i0 + 1 : i1 - 1, j0 + 1 : j1 - 1] = height
            ids[i0 + 1 : i1 - 1, j0 + 1 : j1 - 1] = next_id
            next_id += 1

    road = np.zeros((w, w), dtype=bool)
    band = max(2, int(round(fam["road_fraction"] * w)))
    start = (w - band) // 2
    road[:, start : start + band] = True
    if scenario == "crossroad":
        road[start : start + band, :] = True

    grid[road] = 0.0
    ids[road] = 0
    return SceneSpec(
        scenario=scenario,
        cell_size=float(cell_size),
        grid=grid,
        road_mask=road,
        seed=int(seed),
        building_ids=ids,
    )


def check_footprint(scene: SceneSpec, pose: UavPose) -> None:
    """Raise FootprintError unless the 2z x 2z footprint lies inside the scene."""
    side = scene.side
    eps = 1e-9 * side
    if not (
        pose.z > 0
        and pose.x - pose.z >= -eps
        and pose.y - pose.z >= -eps
        and pose.x + pose.z <= side + eps
        and pose.y + pose.z <= side + eps
    ):
        raise FootprintError(
            f"footprint of side {2 * pose.z:g} m around ({pose.x:g}, {pose.y:g}) "
            f"leaves the {side:g} m scene"
        )


def _walk_polyline(points, step, n):
    """Place ``n`` points along a closed polyline, consecutive ones exactly
    ``step`` apart in Euclidean distance (the first crossing along the route)."""
    m = len(points)
    out = [points[0].copy()]
    seg, u = 0, 0.0
    p = points[0].copy()
    for _ in range(n - 1):
        found = False
        for hop in range(2 * m + 1):
            a = points[(seg + hop) % m]
            b = points[(seg + hop + 1) % m]
            d = b - a
            f = a - p
            qa = d @ d
            qb = 2.0 * (f @ d)
            qc = f @ f - step * step
            disc = qb * qb - 4 * qa * qc
            if qa == 0 or disc < 0:
                continue
            root = math.sqrt(disc)
            u_min = u if hop == 0 else 0.0
            for cand in sorted(((-qb - root) / (2 * qa), (-qb + root) / (2 * qa))):
                if u_min < cand <= 1.0:
                    seg, u = (seg + hop) % m, cand
                    p = a + cand * d
                    found = True
                    break
            if found:
                break
        if not found:
            raise FootprintError("trajectory walk failed to advance; route too short")
        out.append(p.copy())
    return np.array(out)


def sample_trajectory(scene: SceneSpec, altitude: float, n_snapshots: int, seed: int) -> list[UavPose]:
    """Poses at uniform spacing along a closed, seed-determined route.

    The route lives in the central half of the scene and does not depend on
    ``altitude``, so every altitude flies over the same ground track.
    """
    if n_snapshots < 1:
        raise ConfigError(f"n_snapshots must be >= 1, got {n_snapshots}")
    top = float(scene.grid.max())
    if not altitude > top:
        raise ConfigError(f"altitude {altitude} m does not clear the tallest building ({top} m)")
    side = scene.side
    margin = side / 4.0
    if altitude > margin + 1e-9 * side:
        raise FootprintError(
            f"altitude {altitude} m needs a {2 * altitude} m footprint; "
            f"the route region of a {side} m scene only allows altitudes <= {margin}"
        )

    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x7A11]))
    n_way = 6
    center = side / 2.0
    radius = side / 4.0
    angles = 2 * np.pi * (np.arange(n_way) + rng.uniform(-0.3, 0.3, n_way)) / n_way
    radii = radius * rng.uniform(0.6, 1.0, n_way)
    pts = np.stack([center + radii * np.cos(angles), center + radii * np.sin(angles)], axis=1)

    perimeter = float(np.sum(np.linalg.norm(np.roll(pts, -1, axis=0) - pts, axis=1)))
    step = perimeter / max(n_snapshots, 32)
    xy = _walk_polyline(pts, step, n_snapshots)
    poses = [UavPose(float(x), float(y), float(altitude)) for x, y in xy]
    for pose in poses:
        check_footprint(scene, pose)
    return poses


def footprint_coords(pose: UavPose, resolution: int):
    """Ground (x, y) coordinates of pixel centres, each shaped (r, r)."""
    size = 2.0 * pose.z / resolution
    offs = (np.arange(resolution) + 0.5) * size
    gx = pose.x - pose.z + offs
    gy = pose.y - pose.z + offs
    return np.meshgrid(gx, gy)  # xx varies along columns, yy along rows


def _roof_colors(scene: SceneSpec, heights, ids):
    base = np.stack([np.interp(heights, _ROOF_HEIGHTS, _ROOF_COLORS[:, c]) for c in range(3)], axis=-1)
    n_ids = int(scene.building_ids.max()) + 1
    rng = np.random.default_rng(np.random.SeedSequence([scene.seed, 0xA1BED0]))
    jitter = rng.integers(-_ROOF_JITTER, _ROOF_JITTER + 1, size=(n_ids, 3))
    return np.clip(np.round(base) + jitter[ids], 0, 255)


def render_rgb(scene: SceneSpec, pose: UavPose, resolution: int) -> SensingImage:
    check_footprint(scene, pose)
    xx, yy = footprint_coords(pose, resolution)
    i, j = scene.cell_index(xx, yy)
    heights = scene.grid[i, j]
    img = np.empty((resolution, resolution, 3), dtype=np.uint8)
    img[...] = GROUND_RGB
    img[scene.road_mask[i, j]] = ROAD_RGB
    roof = heights > 0
    img[roof] = _roof_colors(scene, heights[roof], scene.building_ids[i, j][roof]).astype(np.uint8)
    return SensingImage("rgb", img)


def render_depth(scene: SceneSpec, pose: UavPose, resolution: int) -> SensingImage:
    """Orthographic distance from the camera plane down to the surface."""
    check_footprint(scene, pose)
    xx, yy = footprint_coords(pose, resolution)
    depth = pose.z - scene.height_at(xx, yy)
    return SensingImage("depth", depth.astype(np.float32))
