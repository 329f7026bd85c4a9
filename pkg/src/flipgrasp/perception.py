"""Height-map rendering, observation noise, rotation stacks and primitive masks.

Pixel (x, y) is column x, row y of a 64x64 grid covering the walled square;
its center sits at ((x + 0.5) * res, (y + 0.5) * res) in workspace metres.
Rotated map i shows the scene such that world direction theta_i = 2*pi*i/K
points along the image +x axis, so one Q-map pixel fixes a start pose
(x, y, theta_i).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import ndimage

from .config import WORKSPACE_SIZE, NoiseSpec, PerceptionParams
from .sim import WorkspaceState, surface_height

PRIMITIVES = ("push", "flip", "grasp")
PUSH, FLIP, GRASP = range(3)


class PerceptionError(ValueError):
    pass


@dataclass
class HeightMap:
    grid: np.ndarray  # (H, W) metres above the table
    resolution: float = WORKSPACE_SIZE / 64
    origin: tuple[float, float] = (0.0, 0.0)

    @property
    def shape(self) -> tuple[int, int]:
        return self.grid.shape


@dataclass
class StartPose:
    x: float
    y: float
    z: float
    yaw: float


def pixel_centers(n: int = 64, res: float = WORKSPACE_SIZE / 64):
    c = (np.arange(n) + 0.5) * res
    return np.meshgrid(c, c)  # (X, Y) each (rows, cols)


def render_height_map(state: WorkspaceState, params: PerceptionParams | None = None) -> HeightMap:
    """Orthographic top-down heights of the object; the end effector is not drawn."""
    params = params or PerceptionParams()
    X, Y = pixel_centers(params.grid, params.resolution)
    grid = surface_height(state.object, X, Y)
    return HeightMap(np.asarray(grid, dtype=float), params.resolution)


def corrupt(hmap: HeightMap, spec: NoiseSpec, seed) -> HeightMap:
    """Gaussian depth noise plus rectangular dropouts (fake reflections)."""
    rng = np.random.default_rng(seed)
    grid = hmap.grid.copy()
    if spec.gaussian_sigma > 0:
        grid = np.maximum(grid + rng.normal(0.0, spec.gaussian_sigma, grid.shape), 0.0)
    n_regions = int(rng.integers(spec.n_dropout_min, spec.n_dropout_max + 1))
    h, w = grid.shape
    for _ in range(n_regions):
        sy = int(rng.integers(spec.dropout_size_min, spec.dropout_size_max + 1))
        sx = int(rng.integers(spec.dropout_size_min, spec.dropout_size_max + 1))
        y0 = int(rng.integers(0, h - sy + 1))
        x0 = int(rng.integers(0, w - sx + 1))
        grid[y0:y0 + sy, x0:x0 + sx] = 0.0
    return HeightMap(grid, hmap.resolution, hmap.origin)


def rotation_angle(i: int, k: int = 16) -> float:
    return 2.0 * math.pi * i / k


@lru_cache(maxsize=64)
def _source_coords(i: int, k: int, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Source (row, col) sample coordinates for every pixel of rotated map i."""
    theta = rotation_angle(i, k)
    c, s = math.cos(theta), math.sin(theta)
    center = (n - 1) / 2.0
    v, u = np.mgrid[0:n, 0:n].astype(float)
    du, dv = u - center, v - center
    src_u = center + c * du - s * dv
    src_v = center + s * du + c * dv
    # exact quarter turns must not pick up rounding noise
    for arr in (src_u, src_v):
        r = np.round(arr)
        near = np.abs(arr - r) < 1e-9
        arr[near] = r[near]
    src_u.flags.writeable = False
    src_v.flags.writeable = False
    return src_v, src_u


def rotate_map(grid: np.ndarray, i: int, k: int = 16) -> np.ndarray:
    """Rotated copy i of ``grid`` (bilinear, zero outside, clamped at 0)."""
    if i % k == 0:
        return grid.copy()
    src_v, src_u = _source_coords(i % k, k, grid.shape[0])
    out = ndimage.map_coordinates(grid, [src_v, src_u], order=1, mode="constant", cval=0.0)
    return np.maximum(out, 0.0)


def rotate_stack(hmap: HeightMap, k: int = 16) -> np.ndarray:
    """(K, H, W) stack of rotated height maps; stack[0] is the source map."""
    return np.stack([rotate_map(hmap.grid, i, k) for i in range(k)])


@lru_cache(maxsize=8)
def valid_stack(k: int = 16, n: int = 64) -> np.ndarray:
    """Pixels of each rotated map whose source point lies inside the workspace."""
    out = np.empty((k, n, n), dtype=bool)
    for i in range(k):
        src_v, src_u = _source_coords(i, k, n)
        out[i] = (src_u >= -0.5) & (src_u <= n - 0.5) & (src_v >= -0.5) & (src_v <= n - 0.5)
    out.flags.writeable = False
    return out


@lru_cache(maxsize=8)
def wall_distance_stack(k: int = 16, n: int = 64) -> np.ndarray:
    """Free distance ahead to the boundary along theta_i, normalised by the side.

    Used as a second network input channel; zero outside the workspace.
    """
    res = WORKSPACE_SIZE / n
    out = np.zeros((k, n, n))
    for i in range(k):
        theta = rotation_angle(i, k)
        dx, dy = math.cos(theta), math.sin(theta)
        src_v, src_u = _source_coords(i, k, n)
        px, py = (src_u + 0.5) * res, (src_v + 0.5) * res
        dist = np.full(px.shape, np.inf)
        for comp, pos in ((dx, px), (dy, py)):
            if comp > 1e-12:
                dist = np.minimum(dist, (WORKSPACE_SIZE - pos) / comp)
            elif comp < -1e-12:
                dist = np.minimum(dist, -pos / comp)
        inside = valid_stack(k, n)[i]
        out[i] = np.where(inside, np.clip(dist, 0.0, None) / WORKSPACE_SIZE, 0.0)
    out.flags.writeable = False
    return out


def pixel_to_pose(x: int, y: int, i: int, hmap: HeightMap, k: int = 16,
                  clearance: float = 0.02) -> StartPose:
    """Start pose of rotated-map pixel (x, y) in rotation i."""
    n = hmap.grid.shape[0]
    if not (0 <= x < n and 0 <= y < n):
        raise PerceptionError("pixel out of bounds")
    src_v, src_u = _source_coords(i % k, k, n)
    u, v = float(src_u[y, x]), float(src_v[y, x])
    res = hmap.resolution
    wx, wy = (u + 0.5) * res, (v + 0.5) * res
    if not (0.0 <= wx <= WORKSPACE_SIZE and 0.0 <= wy <= WORKSPACE_SIZE):
        raise PerceptionError("unreachable")
    ui = min(max(int(round(u)), 0), n - 1)
    vi = min(max(int(round(v)), 0), n - 1)
    z = float(hmap.grid[vi, ui]) + clearance
    return StartPose(wx, wy, z, rotation_angle(i, k))


def pose_to_pixel(wx: float, wy: float, i: int, k: int = 16, n: int = 64) -> tuple[float, float]:
    """Inverse of :func:`pixel_to_pose` (continuous rotated-map coordinates)."""
    res = WORKSPACE_SIZE / n
    center = (n - 1) / 2.0
    u, v = wx / res - 0.5, wy / res - 0.5
    theta = rotation_angle(i, k)
    c, s = math.cos(theta), math.sin(theta)
    du, dv = u - center, v - center
    return center + c * du + s * dv, center - s * du + c * dv


_DISKS: dict[int, np.ndarray] = {}


def disk(radius: int) -> np.ndarray:
    if radius not in _DISKS:
        r = np.arange(-radius, radius + 1)
        _DISKS[radius] = (r[:, None] ** 2 + r[None, :] ** 2) <= radius * radius
    return _DISKS[radius]


def compute_masks(stack: np.ndarray, params: PerceptionParams | None = None) -> np.ndarray:
    """Admissibility masks, shape (K, 3, H, W) indexed [rotation, primitive, y, x].

    Grasp: pixels above the height threshold.  Push and flip: a band of radius
    ``mask_radius`` around the grasp region, excluding the region itself.
    """
    params = params or PerceptionParams()
    k = stack.shape[0]
    valid = valid_stack(k, stack.shape[1])
    out = np.zeros((k, 3) + stack.shape[1:], dtype=bool)
    structure = disk(params.mask_radius)
    for i in range(k):
        grasp = stack[i] > params.mask_height
        if grasp.any():
            band = ndimage.binary_dilation(grasp, structure=structure) & ~grasp
        else:
            band = grasp
        out[i, GRASP] = grasp & valid[i]
        out[i, PUSH] = band & valid[i]
        out[i, FLIP] = band & valid[i]
    return out


def masks_for_map(hmap: HeightMap, params: PerceptionParams | None = None) -> np.ndarray:
    params = params or PerceptionParams()
    return compute_masks(rotate_stack(hmap, params.n_rotations), params)
