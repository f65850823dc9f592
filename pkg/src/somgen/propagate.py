"""Desk-scale pathloss oracle: free-space loss plus single knife-edge diffraction.

Line-of-sight is decided by walking the segment through the height grid in
2D: the segment is cut at every grid-line crossing, and a cell blocks the
path when its building height exceeds the lowest point of the segment
inside that cell.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, FootprintError
from .scene import SceneSpec, UavPose, check_footprint

SPEED_OF_LIGHT = 299_792_458.0


@dataclass
class PropagationConfig:
    frequency_hz: float = 28e9
    rx_height: float = 1.5
    max_pathloss_db: float = 255.0
    diffraction: bool = True

    def validate(self):
        if not self.frequency_hz > 0:
            raise ConfigError(f"frequency must be positive, got {self.frequency_hz}")
        if not self.rx_height >= 0:
            raise ConfigError(f"rx_height must be >= 0, got {self.rx_height}")


@dataclass(eq=False)
class PathlossMap:
    values: np.ndarray  # (G, G) dB, row index follows +y
    grid_origin: tuple[float, float]  # ground (x, y) of node [0, 0]
    grid_spacing: float
    frequency_hz: float
    tx_pose: UavPose


def fspl_db(distance, frequency_hz):
    """Free-space pathloss 20*log10(4*pi*d*f/c) in dB."""
    d = np.asarray(distance, dtype=float)
    return 20.0 * np.log10(4.0 * np.pi * d * frequency_hz / SPEED_OF_LIGHT)


def knife_edge_loss(nu):
    """Excess loss J(nu) of a single knife edge; zero for nu <= -0.78."""
    nu = np.asarray(nu, dtype=float)
    with np.errstate(invalid="ignore"):
        j = 6.9 + 20.0 * np.log10(np.sqrt((nu - 0.1) ** 2 + 1.0) + nu - 0.1)
    return np.where(nu > -0.78, j, 0.0)


def _check_inside(scene: SceneSpec, pts: np.ndarray):
    side = scene.side
    xy = pts[..., :2]
    if np.any(xy < 0) or np.any(xy > side):
        raise FootprintError(f"point outside the {side:g} m scene")


def trace(scene: SceneSpec, tx, rx, wavelength=None):
    """Ray-march segments from one ``tx`` to many ``rx`` points.

    Returns ``(blocked, nu)``: a boolean per receiver and, when
    ``wavelength`` is given, the largest Fresnel parameter among the
    obstructing cells (``-inf`` when clear).
    """
    tx = np.asarray(tx, dtype=float).reshape(3)
    rx = np.atleast_2d(np.asarray(rx, dtype=float))
    _check_inside(scene, tx[None])
    _check_inside(scene, rx)

    cs = scene.cell_size
    w = scene.width_cells
    p0 = tx[:2] / cs
    p1 = rx[:, :2] / cs
    delta = p1 - p0  # (M, 2)

    lines = np.arange(1, w, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        tx_cross = (lines[None, :] - p0[0]) / delta[:, :1]
        ty_cross = (lines[None, :] - p0[1]) / delta[:, 1:]
    cuts = np.concatenate([tx_cross, ty_cross], axis=1)
    cuts = np.where(np.isfinite(cuts), np.clip(cuts, 0.0, 1.0), 0.0)
    m = rx.shape[0]
    ts = np.concatenate([np.zeros((m, 1)), cuts, np.ones((m, 1))], axis=1)
    ts.sort(axis=1)

    ta, tb = ts[:, :-1], ts[:, 1:]
    tm = 0.5 * (ta + tb)
    cx = np.clip(np.floor(p0[0] + tm * delta[:, :1]), 0, w - 1).astype(np.intp)
    cy = np.clip(np.floor(p0[1] + tm * delta[:, 1:]), 0, w - 1).astype(np.intp)
    heights = scene.grid[cy, cx]

    dz = rx[:, 2:] - tx[2]
    za = tx[2] + ta * dz
    zb = tx[2] + tb * dz
    low_at_a = za <= zb
    zmin = np.where(low_at_a, za, zb)
    excess = heights - zmin
    blocked = np.any(excess > 0, axis=1)
    if wavelength is None:
        return blocked, None

    t_low = np.where(low_at_a, ta, tb)
    dist = np.linalg.norm(rx - tx, axis=1)[:, None]
    tiny = 1e-9
    d1 = np.maximum(t_low, tiny) * dist
    d2 = np.maximum(1.0 - t_low, tiny) * dist
    nu = excess * np.sqrt(2.0 * (d1 + d2) / (wavelength * d1 * d2))
    nu = np.where(excess > 0, nu, -np.inf)
    return blocked, nu.max(axis=1)


def los_blocked(scene: SceneSpec, tx, rx) -> bool:
    blocked, _ = trace(scene, tx, rx)
    return bool(blocked[0])


def _pathloss(scene, tx, rx, cfg: PropagationConfig):
    cfg.validate()
    tx = np.asarray(tx, dtype=float)
    rx = np.atleast_2d(np.asarray(rx, dtype=float))
    dist = np.linalg.norm(rx - tx, axis=1)
    if np.any(dist <= 0):
        raise ConfigError("transmitter and receiver coincide (zero distance)")
    loss = fspl_db(dist, cfg.frequency_hz)
    if cfg.diffraction:
        blocked, nu = trace(scene, tx, rx, wavelength=SPEED_OF_LIGHT / cfg.frequency_hz)
        loss = loss + np.where(blocked, knife_edge_loss(np.where(blocked, nu, 0.0)), 0.0)
    return loss


def pathloss_point(scene: SceneSpec, tx, rx, cfg: PropagationConfig) -> float:
    return float(_pathloss(scene, tx, rx, cfg)[0])


def receiver_grid(scene: SceneSpec, pose: UavPose, grid_size: int, rx_height: float):
    """Node positions (G, G, 3) of the receiver grid covering the footprint.

    Nodes sit at the centres of a G x G subdivision of the 2z x 2z footprint,
    ``rx_height`` above the local surface.
    """
    check_footprint(scene, pose)
    spacing = 2.0 * pose.z / grid_size
    offs = (np.arange(grid_size) + 0.5) * spacing
    xx, yy = np.meshgrid(pose.x - pose.z + offs, pose.y - pose.z + offs)
    zz = scene.height_at(xx, yy) + rx_height
    origin = (float(xx[0, 0]), float(yy[0, 0]))
    return np.stack([xx, yy, zz], axis=-1), origin, spacing


def pathloss_map(scene: SceneSpec, tx_pose: UavPose, grid_size: int, cfg: PropagationConfig) -> PathlossMap:
    if grid_size < 1:
        raise FootprintError(f"grid size must be >= 1, got {grid_size}")
    nodes, origin, spacing = receiver_grid(scene, tx_pose, grid_size, cfg.rx_height)
    tx = np.array([tx_pose.x, tx_pose.y, tx_pose.z])
    values = _pathloss(scene, tx, nodes.reshape(-1, 3), cfg).reshape(grid_size, grid_size)
    return PathlossMap(
        values=values,
        grid_origin=origin,
        grid_spacing=spacing,
        frequency_hz=float(cfg.frequency_hz),
        tx_pose=tx_pose,
    )


def quantize_map(pmap) -> np.ndarray:
    """Round dB values half-up to integers and clamp into [0, 255]."""
    values = pmap.values if isinstance(pmap, PathlossMap) else np.asarray(pmap)
    return np.clip(np.floor(np.asarray(values, dtype=float) + 0.5), 0, 255).astype(np.uint8)
