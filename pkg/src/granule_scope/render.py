"""Deterministic software renderer: perspective camera, sphere ray tracing
through a uniform-grid acceleration structure, scalar color mapping.

One primary ray per pixel, nearest hit, Lambertian shading with a single
fixed directional light. Pixel values depend only on scene content, so images
are byte-identical across runs and across render thread counts.
"""

from __future__ import annotations

import itertools
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .frames import ParticleFrame

_BACKGROUND = np.array([0.93, 0.93, 0.95])
_LIGHT_DIR = np.array([0.45, 0.8, 0.35]) / np.linalg.norm([0.45, 0.8, 0.35])
_AMBIENT = 0.25


@dataclass
class Camera:
    name: str
    eye: np.ndarray
    look_at: np.ndarray
    up: np.ndarray
    fov_deg: float = 40.0
    width: int = 320
    height: int = 240

    def __post_init__(self):
        self.eye = np.asarray(self.eye, dtype=np.float64)
        self.look_at = np.asarray(self.look_at, dtype=np.float64)
        self.up = np.asarray(self.up, dtype=np.float64)
        if self.width <= 0 or self.height <= 0:
            raise ValueError("image dimensions must be positive")
        if not 0.0 < self.fov_deg < 180.0:
            raise ValueError("field of view must lie in (0, 180)")
        view = self.look_at - self.eye
        norm = np.linalg.norm(view)
        if norm == 0:
            raise ValueError("eye and look_at coincide")
        cross = np.cross(view / norm, self.up / np.linalg.norm(self.up))
        if np.linalg.norm(cross) < 1e-9:
            raise ValueError("up vector is parallel to the view direction")

    def basis(self):
        forward = self.look_at - self.eye
        forward = forward / np.linalg.norm(forward)
        right = np.cross(forward, self.up)
        right = right / np.linalg.norm(right)
        true_up = np.cross(right, forward)
        return forward, right, true_up

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "eye": [float(v) for v in self.eye],
            "look_at": [float(v) for v in self.look_at],
            "up": [float(v) for v in self.up],
            "fov_deg": float(self.fov_deg),
            "width": int(self.width),
            "height": int(self.height),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Camera":
        return cls(
            name=d["name"], eye=d["eye"], look_at=d["look_at"], up=d["up"],
            fov_deg=d["fov_deg"], width=d["width"], height=d["height"],
        )


@dataclass
class Colormap:
    name: str
    stops: np.ndarray  # (k, 3) RGB in [0, 1], evenly spaced over [lo, hi]
    lo: float
    hi: float

    def __post_init__(self):
        self.stops = np.asarray(self.stops, dtype=np.float64)
        if self.stops.ndim != 2 or self.stops.shape[0] < 2 or self.stops.shape[1] != 3:
            raise ValueError("colormap needs at least two RGB stops")
        if np.any(self.stops < 0) or np.any(self.stops > 1):
            raise ValueError("stop components must lie in [0, 1]")
        if not self.lo < self.hi:
            raise ValueError("colormap range must have lo < hi")

    def with_range(self, lo: float, hi: float) -> "Colormap":
        return Colormap(self.name, self.stops.copy(), lo, hi)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "stops": [[float(c) for c in s] for s in self.stops],
            "lo": float(self.lo),
            "hi": float(self.hi),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Colormap":
        return cls(d["name"], d["stops"], d["lo"], d["hi"])


_PRESET_STOPS = {
    # coarse viridis-style ramp: dark violet to yellow
    "viridis": [
        [0.267, 0.005, 0.329], [0.283, 0.141, 0.458], [0.254, 0.265, 0.530],
        [0.207, 0.372, 0.553], [0.164, 0.471, 0.558], [0.128, 0.567, 0.551],
        [0.135, 0.659, 0.518], [0.267, 0.749, 0.441], [0.478, 0.821, 0.318],
        [0.741, 0.873, 0.150], [0.993, 0.906, 0.144],
    ],
    "coolwarm": [
        [0.230, 0.299, 0.754], [0.552, 0.690, 0.996], [0.865, 0.865, 0.865],
        [0.958, 0.603, 0.482], [0.706, 0.016, 0.150],
    ],
    "grayscale": [[0.0, 0.0, 0.0], [1.0, 1.0, 1.0]],
}


def preset_colormap(name: str, lo: float = 0.0, hi: float = 1.0) -> Colormap:
    if name not in _PRESET_STOPS:
        raise ValueError(f"unknown colormap {name!r}; have {sorted(_PRESET_STOPS)}")
    return Colormap(name, np.array(_PRESET_STOPS[name]), lo, hi)


def map_color(colormap: Colormap, value: float) -> np.ndarray:
    """Clamp to [lo, hi] and interpolate linearly between evenly spaced stops."""
    return map_colors(colormap, np.array([value]))[0]


def map_colors(colormap: Colormap, values: np.ndarray) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64)
    t = np.clip((values - colormap.lo) / (colormap.hi - colormap.lo), 0.0, 1.0)
    k = colormap.stops.shape[0]
    scaled = t * (k - 1)
    idx = np.minimum(scaled.astype(np.int64), k - 2)
    frac = scaled - idx
    return (1.0 - frac[:, None]) * colormap.stops[idx] + frac[:, None] * colormap.stops[idx + 1]


# ---------------------------------------------------------------------------
# Uniform-grid acceleration structure


@dataclass
class AccelGrid:
    lo: np.ndarray
    cell: float
    shape: tuple
    cell_start: np.ndarray  # (ncells+1,) CSR offsets
    entries: np.ndarray  # particle indices, grouped by cell
    build_seconds: float = 0.0

    @property
    def hi(self) -> np.ndarray:
        return self.lo + self.cell * np.asarray(self.shape)


def build_accel(positions: np.ndarray, radius: float, cell_factor: float = 2.0) -> AccelGrid:
    """Bin sphere AABBs into a uniform grid (cell = cell_factor * radius).

    Every particle index is listed in every cell its sphere's AABB overlaps.
    A degenerate bounding box (coincident particles) is inflated by epsilon.
    """
    if radius <= 0:
        raise ValueError("particle radius must be positive")
    t0 = time.perf_counter()
    positions = np.asarray(positions, dtype=np.float64)
    n = positions.shape[0]
    cell = cell_factor * radius
    if n == 0:
        grid = AccelGrid(np.zeros(3), cell, (1, 1, 1), np.zeros(2, dtype=np.int64),
                         np.zeros(0, dtype=np.int64))
        grid.build_seconds = time.perf_counter() - t0
        return grid
    lo = positions.min(axis=0) - radius
    hi = positions.max(axis=0) + radius
    extent = np.maximum(hi - lo, 1e-9)
    shape = tuple(int(np.ceil(e / cell)) for e in extent)
    lo_idx = np.clip(((positions - radius - lo) / cell).astype(np.int64), 0,
                     np.array(shape) - 1)
    hi_idx = np.clip(np.floor((positions + radius - lo) / cell).astype(np.int64), 0,
                     np.array(shape) - 1)
    counts = hi_idx - lo_idx  # per-axis span minus 1 (usually 0 or 1)
    max_span = counts.max(axis=0) + 1
    cells = []
    parts = []
    for offset in itertools.product(*(range(int(m)) for m in max_span)):
        offset = np.asarray(offset)
        mask = np.all(offset <= counts, axis=1)
        if not mask.any():
            continue
        idx3 = lo_idx[mask] + offset
        cells.append(np.ravel_multi_index(tuple(idx3.T), shape))
        parts.append(np.nonzero(mask)[0])
    cell_ids = np.concatenate(cells)
    particle_ids = np.concatenate(parts).astype(np.int64)
    order = np.lexsort((particle_ids, cell_ids))
    cell_ids = cell_ids[order]
    particle_ids = particle_ids[order]
    ncells = int(np.prod(shape))
    cell_start = np.zeros(ncells + 1, dtype=np.int64)
    np.add.at(cell_start, cell_ids + 1, 1)
    np.cumsum(cell_start, out=cell_start)
    grid = AccelGrid(lo, cell, shape, cell_start, particle_ids)
    grid.build_seconds = time.perf_counter() - t0
    return grid


# ---------------------------------------------------------------------------
# Ray traversal kernels


@njit(cache=True, nogil=True)
def _traverse(ox, oy, oz, dx, dy, dz, glo, cell, nx, ny, nz, cell_start, entries,
              px, py, pz, radius):
    """3-D DDA through the uniform grid; returns (hit index or -1, hit t)."""
    eps = 1e-12
    inf = 1e300
    # slab test against the grid bounding box
    t_enter = 0.0
    t_exit = inf
    gx1 = glo[0] + cell * nx
    gy1 = glo[1] + cell * ny
    gz1 = glo[2] + cell * nz
    for axis in range(3):
        o = (ox, oy, oz)[axis]
        d = (dx, dy, dz)[axis]
        lo = glo[axis]
        hi = (gx1, gy1, gz1)[axis]
        if abs(d) < eps:
            if o < lo or o > hi:
                return -1, 0.0
        else:
            ta = (lo - o) / d
            tb = (hi - o) / d
            if ta > tb:
                ta, tb = tb, ta
            if ta > t_enter:
                t_enter = ta
            if tb < t_exit:
                t_exit = tb
    if t_exit < t_enter:
        return -1, 0.0

    t0 = t_enter + 1e-9
    x = ox + t0 * dx
    y = oy + t0 * dy
    z = oz + t0 * dz
    ix = int((x - glo[0]) / cell)
    iy = int((y - glo[1]) / cell)
    iz = int((z - glo[2]) / cell)
    if ix < 0:
        ix = 0
    if iy < 0:
        iy = 0
    if iz < 0:
        iz = 0
    if ix > nx - 1:
        ix = nx - 1
    if iy > ny - 1:
        iy = ny - 1
    if iz > nz - 1:
        iz = nz - 1

    step_x = 1 if dx > 0 else -1
    step_y = 1 if dy > 0 else -1
    step_z = 1 if dz > 0 else -1
    tdx = cell / abs(dx) if abs(dx) > eps else inf
    tdy = cell / abs(dy) if abs(dy) > eps else inf
    tdz = cell / abs(dz) if abs(dz) > eps else inf
    # parametric distance to the next cell boundary per axis
    if abs(dx) > eps:
        nxbound = glo[0] + (ix + (1 if dx > 0 else 0)) * cell
        tmx = (nxbound - ox) / dx
    else:
        tmx = inf
    if abs(dy) > eps:
        nybound = glo[1] + (iy + (1 if dy > 0 else 0)) * cell
        tmy = (nybound - oy) / dy
    else:
        tmy = inf
    if abs(dz) > eps:
        nzbound = glo[2] + (iz + (1 if dz > 0 else 0)) * cell
        tmz = (nzbound - oz) / dz
    else:
        tmz = inf

    best_id = -1
    best_t = inf
    r2 = radius * radius
    while True:
        c = (ix * ny + iy) * nz + iz
        for k in range(cell_start[c], cell_start[c + 1]):
            p = entries[k]
            ocx = ox - px[p]
            ocy = oy - py[p]
            ocz = oz - pz[p]
            b = ocx * dx + ocy * dy + ocz * dz
            disc = b * b - (ocx * ocx + ocy * ocy + ocz * ocz - r2)
            if disc < 0.0:
                continue
            sq = np.sqrt(disc)
            t = -b - sq
            if t < 1e-9:
                t = -b + sq
            if 1e-9 < t < best_t:
                best_t = t
                best_id = p
        t_cell_exit = min(tmx, min(tmy, tmz))
        if best_t <= t_cell_exit:
            return best_id, best_t
        if tmx <= tmy and tmx <= tmz:
            ix += step_x
            if ix < 0 or ix >= nx:
                break
            tmx += tdx
        elif tmy <= tmz:
            iy += step_y
            if iy < 0 or iy >= ny:
                break
            tmy += tdy
        else:
            iz += step_z
            if iz < 0 or iz >= nz:
                break
            tmz += tdz
    if best_id >= 0:
        return best_id, best_t
    return -1, 0.0


@njit(cache=True, nogil=True)
def _trace_batch(origins, directions, glo, cell, nx, ny, nz, cell_start, entries,
                 px, py, pz, radius, out_ids, out_ts):
    for i in range(origins.shape[0]):
        hit, t = _traverse(
            origins[i, 0], origins[i, 1], origins[i, 2],
            directions[i, 0], directions[i, 1], directions[i, 2],
            glo, cell, nx, ny, nz, cell_start, entries, px, py, pz, radius,
        )
        out_ids[i] = hit
        out_ts[i] = t


@njit(cache=True, nogil=True)
def _render_rows(img, row0, row1, width, height, eye, forward, right, true_up,
                 tan_half, aspect, glo, cell, nx, ny, nz, cell_start, entries,
                 px, py, pz, radius, colors, light, ambient, background):
    for j in range(row0, row1):
        py_ndc = (1.0 - 2.0 * (j + 0.5) / height) * tan_half
        for i in range(width):
            px_ndc = (2.0 * (i + 0.5) / width - 1.0) * tan_half * aspect
            dx = forward[0] + px_ndc * right[0] + py_ndc * true_up[0]
            dy = forward[1] + px_ndc * right[1] + py_ndc * true_up[1]
            dz = forward[2] + px_ndc * right[2] + py_ndc * true_up[2]
            norm = np.sqrt(dx * dx + dy * dy + dz * dz)
            dx /= norm
            dy /= norm
            dz /= norm
            hit, t = _traverse(
                eye[0], eye[1], eye[2], dx, dy, dz,
                glo, cell, nx, ny, nz, cell_start, entries, px, py, pz, radius,
            )
            if hit < 0:
                r, g, b = background[0], background[1], background[2]
            else:
                hx = eye[0] + t * dx
                hy = eye[1] + t * dy
                hz = eye[2] + t * dz
                nx_ = (hx - px[hit]) / radius
                ny_ = (hy - py[hit]) / radius
                nz_ = (hz - pz[hit]) / radius
                diff = nx_ * light[0] + ny_ * light[1] + nz_ * light[2]
                if diff < 0.0:
                    diff = 0.0
                shade = ambient + (1.0 - ambient) * diff
                r = colors[hit, 0] * shade
                g = colors[hit, 1] * shade
                b = colors[hit, 2] * shade
            img[j, i, 0] = np.uint8(min(255.0, r * 255.0 + 0.5))
            img[j, i, 1] = np.uint8(min(255.0, g * 255.0 + 0.5))
            img[j, i, 2] = np.uint8(min(255.0, b * 255.0 + 0.5))


def _grid_args(grid: AccelGrid, centers: np.ndarray):
    return (
        np.ascontiguousarray(grid.lo),
        float(grid.cell),
        int(grid.shape[0]), int(grid.shape[1]), int(grid.shape[2]),
        np.ascontiguousarray(grid.cell_start),
        np.ascontiguousarray(grid.entries),
        np.ascontiguousarray(centers[:, 0]),
        np.ascontiguousarray(centers[:, 1]),
        np.ascontiguousarray(centers[:, 2]),
    )


def trace_nearest(grid: AccelGrid, centers: np.ndarray, radius: float,
                  origins: np.ndarray, directions: np.ndarray):
    """Nearest-hit ids and distances for a batch of rays (id -1 on miss)."""
    origins = np.ascontiguousarray(np.atleast_2d(origins), dtype=np.float64)
    directions = np.asarray(np.atleast_2d(directions), dtype=np.float64)
    directions = np.ascontiguousarray(
        directions / np.linalg.norm(directions, axis=1, keepdims=True)
    )
    ids = np.empty(origins.shape[0], dtype=np.int64)
    ts = np.empty(origins.shape[0])
    if centers.shape[0] == 0:
        ids.fill(-1)
        ts.fill(0.0)
        return ids, ts
    _trace_batch(origins, directions, *_grid_args(grid, centers), float(radius), ids, ts)
    return ids, ts


def render_scene(grid: AccelGrid, centers: np.ndarray, colors: np.ndarray,
                 camera: Camera, radius: float, threads: int = 1) -> np.ndarray:
    """Trace one primary ray per pixel against a prebuilt grid."""
    h, w = camera.height, camera.width
    img = np.empty((h, w, 3), dtype=np.uint8)
    if centers.shape[0] == 0:
        img[:] = np.uint8(np.minimum(255.0, _BACKGROUND * 255.0 + 0.5))
        return img
    forward, right, true_up = camera.basis()
    tan_half = np.tan(np.radians(camera.fov_deg) / 2.0)
    aspect = w / h
    args = _grid_args(grid, centers)
    colors = np.ascontiguousarray(colors, dtype=np.float64)

    def render_band(r0, r1):
        _render_rows(
            img, r0, r1, w, h,
            np.ascontiguousarray(camera.eye), np.ascontiguousarray(forward),
            np.ascontiguousarray(right), np.ascontiguousarray(true_up),
            float(tan_half), float(aspect), *args, float(radius), colors,
            np.ascontiguousarray(_LIGHT_DIR), float(_AMBIENT),
            np.ascontiguousarray(_BACKGROUND),
        )

    if threads <= 1:
        render_band(0, h)
    else:
        # disjoint row bands; assembly order fixed by the shared output array
        bands = np.linspace(0, h, threads + 1, dtype=int)
        with ThreadPoolExecutor(max_workers=threads) as pool:
            futures = [
                pool.submit(render_band, int(r0), int(r1))
                for r0, r1 in zip(bands[:-1], bands[1:])
                if r1 > r0
            ]
            for f in futures:
                f.result()
    return img


def render(frame: ParticleFrame, camera: Camera, colormap: Colormap, radius: float,
           field: str = "displacement", threads: int = 1,
           grid: AccelGrid | None = None) -> np.ndarray:
    """Render a particle frame, coloring by the named scalar field."""
    centers = frame.positions3()
    if frame.num_particles == 0:
        return render_scene(
            build_accel(centers, radius), centers, np.zeros((0, 3)), camera, radius
        )
    values = frame.scalars.get(field)
    if values is None:
        raise KeyError(f"frame has no scalar field {field!r}")
    if grid is None:
        grid = build_accel(centers, radius)
    colors = map_colors(colormap, values)
    return render_scene(grid, centers, colors, camera, radius, threads=threads)


# ---------------------------------------------------------------------------
# Image output


def write_ppm(image: np.ndarray, path) -> None:
    """Binary PPM (P6), the bit-exact baseline format."""
    h, w = image.shape[:2]
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(image, dtype=np.uint8).tobytes())


def read_ppm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        magic = fh.readline().strip()
        if magic != b"P6":
            raise ValueError("not a binary PPM file")
        dims = fh.readline().split()
        maxval = fh.readline().strip()
        w, h = int(dims[0]), int(dims[1])
        if maxval != b"255":
            raise ValueError("unsupported PPM depth")
        data = fh.read(w * h * 3)
        if len(data) != w * h * 3:
            raise ValueError("truncated PPM payload")
        return np.frombuffer(data, dtype=np.uint8).reshape(h, w, 3)


def write_png(image: np.ndarray, path) -> None:
    from PIL import Image

    Image.fromarray(np.ascontiguousarray(image, dtype=np.uint8), "RGB").save(path)


# ---------------------------------------------------------------------------
# Camera presets for the three standard views


def preset_cameras(bounds: np.ndarray, width: int = 320, height: int = 240,
                   fov_deg: float = 40.0) -> list[Camera]:
    """side / top / aerial presets framing the given (dim, 2) domain."""
    bounds = np.asarray(bounds, dtype=np.float64)
    lo = np.zeros(3)
    hi = np.zeros(3)
    lo[: bounds.shape[0]] = bounds[:, 0]
    hi[: bounds.shape[0]] = bounds[:, 1]
    if bounds.shape[0] == 2:
        # planar data: give the scene a token depth for framing
        lo[2], hi[2] = -0.05, 0.05
    center = 0.5 * (lo + hi)
    extent = float(np.max(hi - lo))
    dist = 1.25 * extent / (2.0 * np.tan(np.radians(fov_deg) / 2.0)) + extent
    return [
        Camera("side", center + np.array([0.0, 0.0, dist]), center,
               np.array([0.0, 1.0, 0.0]), fov_deg, width, height),
        Camera("top", center + np.array([0.0, dist, 1e-6 * extent]), center,
               np.array([0.0, 0.0, -1.0]), fov_deg, width, height),
        Camera("aerial", center + dist * np.array([0.55, 0.65, 0.55]), center,
               np.array([0.0, 1.0, 0.0]), fov_deg, width, height),
    ]
