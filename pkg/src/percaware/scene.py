"""Ground-truth scenes, the robot's discovered voxel map, and view synthesis.

Both world representations expose the same small surface used by the rest of
the package:

* ``bounds`` -- the :class:`Bounds` of the workspace,
* ``cast(origins, dirs)`` -- batched nearest-hit distance and intensity,
* ``segments_free(a, b, c)`` -- batched clearance checks.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from . import _voxel
from .camera import Intrinsics, View, pixel_rays, read_pgm, write_pgm
from .lie import Pose

UNKNOWN, FREE, OCCUPIED = 0, 1, 2


@dataclass(frozen=True)
class Bounds:
    xmin: float
    xmax: float
    ymin: float
    ymax: float
    zmax: float

    def __post_init__(self):
        if not (self.xmax > self.xmin and self.ymax > self.ymin and self.zmax > 0):
            raise ValueError("empty world bounds")

    def contains(self, p, tol: float = 1e-9) -> np.ndarray:
        p = np.asarray(p, dtype=float)
        return ((p[..., 0] >= self.xmin - tol) & (p[..., 0] <= self.xmax + tol)
                & (p[..., 1] >= self.ymin - tol) & (p[..., 1] <= self.ymax + tol)
                & (p[..., 2] >= -tol) & (p[..., 2] <= self.zmax + tol))

    def to_dict(self) -> dict:
        return {"xmin": self.xmin, "xmax": self.xmax, "ymin": self.ymin,
                "ymax": self.ymax, "zmax": self.zmax}


def _tiled_bilinear(tex: np.ndarray, s: np.ndarray, t: np.ndarray) -> np.ndarray:
    """Bilinear lookup at texel coordinates with wrap-around tiling."""
    h, w = tex.shape
    s0 = np.floor(s)
    t0 = np.floor(t)
    a = s - s0
    b = t - t0
    i0 = s0.astype(np.intp) % w
    j0 = t0.astype(np.intp) % h
    i1 = (i0 + 1) % w
    j1 = (j0 + 1) % h
    top = tex[j0, i0] * (1 - a) + tex[j0, i1] * a
    bot = tex[j1, i0] * (1 - a) + tex[j1, i1] * a
    return top * (1 - b) + bot * b


def _check_texture(tex) -> np.ndarray:
    tex = np.asarray(tex, dtype=float)
    if tex.ndim != 2 or tex.shape[0] < 2 or tex.shape[1] < 2:
        raise ValueError("textures must be 2-D with at least 2x2 texels")
    if not np.all(np.isfinite(tex)) or tex.min() < 0 or tex.max() > 1:
        raise ValueError("texture intensities must lie in [0, 1]")
    return tex


@dataclass(frozen=True, eq=False)
class TextureRegion:
    """Texture tiled over the ground rectangle ``(xmin, ymin, xmax, ymax)``.

    Texel ``[row, col]`` is centred at ``(xmin + (col + .5) m, ymin + (row + .5) m)``.
    """

    rect: tuple
    texture: np.ndarray
    m_per_px: float
    source: str | None = None

    def __post_init__(self):
        if self.m_per_px <= 0:
            raise ValueError("m_per_px must be positive")
        x0, y0, x1, y1 = (float(v) for v in self.rect)
        if not (x1 > x0 and y1 > y0):
            raise ValueError("empty texture rectangle")
        object.__setattr__(self, "rect", (x0, y0, x1, y1))
        object.__setattr__(self, "texture", _check_texture(self.texture))

    def covers(self, x, y) -> np.ndarray:
        x0, y0, x1, y1 = self.rect
        return (x >= x0) & (x <= x1) & (y >= y0) & (y <= y1)

    def sample(self, x, y) -> np.ndarray:
        x0, y0, _, _ = self.rect
        return _tiled_bilinear(self.texture, (x - x0) / self.m_per_px - 0.5,
                               (y - y0) / self.m_per_px - 0.5)


@dataclass(frozen=True, eq=False)
class Box:
    """Axis-aligned cuboid; sides use ``intensity``, the top may be textured."""

    min: np.ndarray
    max: np.ndarray
    intensity: float = 0.5
    texture: np.ndarray | None = None
    m_per_px: float = 0.01
    source: str | None = None

    def __post_init__(self):
        lo = np.asarray(self.min, dtype=float)
        hi = np.asarray(self.max, dtype=float)
        if lo.shape != (3,) or hi.shape != (3,) or np.any(hi <= lo):
            raise ValueError("box needs min < max corners")
        if not 0.0 <= self.intensity <= 1.0:
            raise ValueError("box intensity must lie in [0, 1]")
        object.__setattr__(self, "min", lo)
        object.__setattr__(self, "max", hi)
        if self.texture is not None:
            object.__setattr__(self, "texture", _check_texture(self.texture))

    def top_intensity(self, x, y) -> np.ndarray:
        if self.texture is None:
            return np.full(np.shape(x), self.intensity)
        return _tiled_bilinear(self.texture, (x - self.min[0]) / self.m_per_px - 0.5,
                               (y - self.min[1]) / self.m_per_px - 0.5)

    def distance(self, p: np.ndarray) -> np.ndarray:
        """Euclidean distance from points ``(..., 3)`` to the solid box."""
        d = np.maximum(np.maximum(self.min - p, p - self.max), 0.0)
        return np.linalg.norm(d, axis=-1)


def _ray_box(box: Box, o: np.ndarray, d: np.ndarray):
    """Slab test: entry distance (inf on miss) and whether entry is the top face."""
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / d
        t1 = (box.min - o) * inv
        t2 = (box.max - o) * inv
    t1 = np.where(np.isnan(t1), -np.inf, t1)
    t2 = np.where(np.isnan(t2), np.inf, t2)
    lo = np.minimum(t1, t2)
    hi = np.maximum(t1, t2)
    t_near = lo.max(axis=-1)
    t_far = hi.min(axis=-1)
    hit = (t_near <= t_far) & (t_near > 1e-9)
    top = (lo.argmax(axis=-1) == 2) & (d[..., 2] < 0)
    return np.where(hit, t_near, np.inf), top


@dataclass(frozen=True, eq=False)
class SceneModel:
    bounds: Bounds
    ground_intensity: float = 0.8
    regions: tuple = ()
    boxes: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "regions", tuple(self.regions))
        object.__setattr__(self, "boxes", tuple(self.boxes))
        if not 0.0 <= self.ground_intensity <= 1.0:
            raise ValueError("ground intensity must lie in [0, 1]")
        b = self.bounds
        for reg in self.regions:
            x0, y0, x1, y1 = reg.rect
            if x0 < b.xmin - 1e-9 or y0 < b.ymin - 1e-9 or x1 > b.xmax + 1e-9 or y1 > b.ymax + 1e-9:
                raise ValueError("texture region outside world bounds")
        for box in self.boxes:
            if not (b.contains(box.min) and b.contains(box.max)):
                raise ValueError("box outside world bounds")

    @property
    def is_uniform(self) -> bool:
        """True when every visible surface has the ground intensity."""
        return not self.regions and all(
            bx.texture is None and bx.intensity == self.ground_intensity for bx in self.boxes)

    def ground_intensity_at(self, x, y) -> np.ndarray:
        out = np.full(np.shape(x), self.ground_intensity, dtype=float)
        for reg in self.regions:
            m = reg.covers(x, y)
            if np.any(m):
                out[m] = reg.sample(x[m], y[m])
        return out

    def cast(self, origins, dirs):
        """Nearest hit for each ray: ``(distance, intensity)``; misses are ``inf``."""
        o = np.asarray(origins, dtype=float)
        d = np.asarray(dirs, dtype=float)
        o, d = np.broadcast_arrays(o, d)
        n = d.shape[0]
        t_best = np.full(n, np.inf)
        kind = np.full(n, -1)  # -1 miss, 0 ground, 1 + 2*i box side, 2 + 2*i box top
        with np.errstate(divide="ignore", invalid="ignore"):
            tg = np.where((d[:, 2] < 0) & (o[:, 2] > 0), -o[:, 2] / d[:, 2], np.inf)
            gx = o[:, 0] + tg * d[:, 0]
            gy = o[:, 1] + tg * d[:, 1]
        b = self.bounds
        inside = (gx >= b.xmin) & (gx <= b.xmax) & (gy >= b.ymin) & (gy <= b.ymax)
        tg = np.where(inside, tg, np.inf)
        better = tg < t_best
        t_best[better] = tg[better]
        kind[better] = 0
        for i, box in enumerate(self.boxes):
            tb, top = _ray_box(box, o, d)
            better = tb < t_best
            t_best[better] = tb[better]
            kind[better] = np.where(top[better], 2 + 2 * i, 1 + 2 * i)
        intensity = np.zeros(n)
        hitp = o + np.where(np.isfinite(t_best), t_best, 0.0)[:, None] * d
        m = kind == 0
        intensity[m] = self.ground_intensity_at(hitp[m, 0], hitp[m, 1])
        for i, box in enumerate(self.boxes):
            side = kind == 1 + 2 * i
            intensity[side] = box.intensity
            topm = kind == 2 + 2 * i
            if np.any(topm):
                intensity[topm] = box.top_intensity(hitp[topm, 0], hitp[topm, 1])
        return t_best, intensity

    def clearance(self, p: np.ndarray) -> np.ndarray:
        """Distance from points to the nearest box (inf without boxes)."""
        out = np.full(p.shape[:-1], np.inf)
        for box in self.boxes:
            out = np.minimum(out, box.distance(p))
        return out

    def segments_free(self, a, b, c: float) -> np.ndarray:
        return _segments_free(self, np.atleast_2d(a), np.atleast_2d(b), c)


# --- rays ----------------------------------------------------------------------


@dataclass(frozen=True)
class Ray:
    origin: np.ndarray
    direction: np.ndarray

    def __post_init__(self):
        o = np.asarray(self.origin, dtype=float)
        d = np.asarray(self.direction, dtype=float)
        if abs(np.linalg.norm(d) - 1.0) > 1e-9:
            raise ValueError("ray direction must be normalized")
        object.__setattr__(self, "origin", o)
        object.__setattr__(self, "direction", d)


@dataclass(frozen=True)
class Hit:
    point: np.ndarray
    depth: float  # range along the ray, i.e. z-depth for a ray on the optical axis
    intensity: float


def raycast(world, ray: Ray) -> Hit | None:
    t, inten = world.cast(ray.origin[None], ray.direction[None])
    if not np.isfinite(t[0]):
        return None
    return Hit(ray.origin + t[0] * ray.direction, float(t[0]), float(inten[0]))


def render_view(world, pose: Pose, K: Intrinsics) -> View:
    """Synthesize image and z-depth map at camera pose ``pose`` (world-from-camera)."""
    px, dc = pixel_rays(K)
    norm = np.linalg.norm(dc, axis=1)
    dirs = (dc / norm[:, None]) @ pose.C.T
    t, inten = world.cast(pose.r[None, :], dirs)
    hit = np.isfinite(t) & (t > 0)
    depth = np.where(hit, t / norm, np.nan)
    image = np.where(hit, inten, 0.0)
    shape = (K.height, K.width)
    return View(image.reshape(shape), depth.reshape(shape), pose, K)


# --- clearance -------------------------------------------------------------------


def _segment_samples(a: np.ndarray, b: np.ndarray, spacing: float):
    length = np.linalg.norm(b - a, axis=1)
    nseg = np.maximum(np.ceil(length / spacing).astype(np.intp), 1)
    counts = nseg + 1
    seg = np.repeat(np.arange(len(a)), counts)
    starts = np.cumsum(counts) - counts
    local = np.arange(counts.sum()) - np.repeat(starts, counts)
    frac = local / np.repeat(nseg, counts)
    pts = a[seg] + frac[:, None] * (b - a)[seg]
    return pts, seg, frac, length, counts


def _segments_free(world, a: np.ndarray, b: np.ndarray, c: float) -> np.ndarray:
    if c <= 0:
        raise ValueError("collision radius must be positive")
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    inside = world.bounds.contains(a) & world.bounds.contains(b)
    spacing = c / 2.0
    pts, seg, frac, length, counts = _segment_samples(a, b, spacing)
    clear = world.clearance(pts)
    blocked = np.zeros(len(a), dtype=bool)
    np.logical_or.at(blocked, seg, clear <= c)
    if isinstance(world, SceneModel) and world.boxes:
        blocked |= _refine_between_samples(world, a, b, c, seg, frac, clear, length, blocked)
    return inside & ~blocked


def _refine_between_samples(world, a, b, c, seg, frac, clear, length, blocked):
    """Exact check between samples: per-box distance along a segment is convex."""
    out = np.zeros(len(a), dtype=bool)
    same = seg[1:] == seg[:-1]
    i = np.nonzero(same & ~blocked[seg[:-1]])[0]
    if len(i) == 0:
        return out
    s = seg[i]
    gap = (frac[i + 1] - frac[i]) * length[s]
    lower = 0.5 * (clear[i] + clear[i + 1] - gap)
    cand = lower <= c
    i, s = i[cand], s[cand]
    if len(i) == 0:
        return out
    lo, hi = frac[i].copy(), frac[i + 1].copy()
    d = b[s] - a[s]
    for box in world.boxes:
        l, h = lo.copy(), hi.copy()
        g = (np.sqrt(5.0) - 1.0) / 2.0
        for _ in range(60):
            m1 = h - g * (h - l)
            m2 = l + g * (h - l)
            f1 = box.distance(a[s] + m1[:, None] * d)
            f2 = box.distance(a[s] + m2[:, None] * d)
            left = f1 < f2
            h = np.where(left, m2, h)
            l = np.where(left, l, m1)
        fmin = box.distance(a[s] + (0.5 * (l + h))[:, None] * d)
        np.logical_or.at(out, s, fmin <= c)
    return out


def segment_free(world, a, b, c: float) -> bool:
    """True when segment ``ab`` stays in bounds and keeps clearance ``c``."""
    return bool(world.segments_free(np.asarray(a, float)[None], np.asarray(b, float)[None], c)[0])


# --- discovered map ----------------------------------------------------------------


@dataclass
class RevealResult:
    changed: np.ndarray  # (M, 3) voxel indices whose state or intensity moved
    newly_occupied: np.ndarray  # (K, 3) voxel indices that became Occupied


class DiscoveredMap:
    """Uniform voxel grid of Unknown / Free / Occupied cells with mean intensity.

    Voxel ``(i, j, k)`` spans ``origin + res * [i, i+1) x [j, j+1) x [k, k+1)``.
    The grid starts one voxel below z = 0 so the ground plane occupies layer 0.
    """

    def __init__(self, bounds: Bounds, resolution: float = 0.05, unknown_is_free: bool = True):
        if resolution <= 0:
            raise ValueError("resolution must be positive")
        self.bounds = bounds
        self.resolution = float(resolution)
        self.unknown_is_free = unknown_is_free
        self.origin = np.array([bounds.xmin, bounds.ymin, -self.resolution])
        self.dims = (int(np.ceil((bounds.xmax - bounds.xmin) / resolution - 1e-9)),
                     int(np.ceil((bounds.ymax - bounds.ymin) / resolution - 1e-9)),
                     int(np.ceil(bounds.zmax / resolution - 1e-9)) + 1)
        self.state = np.zeros(self.dims, dtype=np.uint8)
        self.mean = np.zeros(self.dims)
        self.count = np.zeros(self.dims, dtype=np.int64)
        self._clearance = None

    # geometry
    def index_of(self, p) -> np.ndarray:
        return np.floor((np.asarray(p, float) - self.origin) / self.resolution).astype(np.intp)

    def center_of(self, idx) -> np.ndarray:
        return self.origin + (np.asarray(idx, float) + 0.5) * self.resolution

    @property
    def unknown_count(self) -> int:
        return int(np.count_nonzero(self.state == UNKNOWN))

    def copy(self) -> "DiscoveredMap":
        m = DiscoveredMap(self.bounds, self.resolution, self.unknown_is_free)
        m.state = self.state.copy()
        m.mean = self.mean.copy()
        m.count = self.count.copy()
        return m

    # world protocol
    def cast(self, origins, dirs):
        o, d = np.broadcast_arrays(np.asarray(origins, float), np.asarray(dirs, float))
        o = np.ascontiguousarray(o)
        d = np.ascontiguousarray(d)
        t = np.empty(len(d))
        inten = np.empty(len(d))
        _voxel.cast_rays(self.state, self.mean, self.origin, self.resolution, o, d, t, inten)
        return t, inten

    def _obstacle_distance(self) -> np.ndarray:
        if self._clearance is None:
            obstacle = self.state == OCCUPIED
            if not self.unknown_is_free:
                obstacle |= self.state == UNKNOWN
            if not obstacle.any():
                self._clearance = np.full(self.dims, np.inf)
            else:
                self._clearance = ndimage.distance_transform_edt(
                    ~obstacle, sampling=self.resolution)
        return self._clearance

    def clearance(self, p: np.ndarray) -> np.ndarray:
        """Conservative distance from points to the nearest obstacle voxel."""
        dist = self._obstacle_distance()
        idx = self.index_of(p)
        for a in range(3):
            idx[..., a] = np.clip(idx[..., a], 0, self.dims[a] - 1)
        d = dist[idx[..., 0], idx[..., 1], idx[..., 2]]
        return d - np.sqrt(3.0) * self.resolution

    def segments_free(self, a, b, c: float) -> np.ndarray:
        return _segments_free(self, np.atleast_2d(a), np.atleast_2d(b), c)

    # exploration
    def reveal(self, scene: SceneModel, pose: Pose, K: Intrinsics, max_range: float = 7.0,
               stride: int = 4) -> RevealResult:
        """Integrate what a camera at ``pose`` would observe of ``scene``."""
        _, dc = pixel_rays(K, stride=stride, offset=stride // 2)
        dirs = dc / np.linalg.norm(dc, axis=1)[:, None] @ pose.C.T
        dirs = np.ascontiguousarray(dirs)
        origins = np.ascontiguousarray(np.broadcast_to(pose.r, dirs.shape))
        t, inten = scene.cast(origins, dirs)
        hit = np.isfinite(t) & (t <= max_range)
        t_free = np.where(hit, t, max_range)
        old_state = self.state.copy()
        old_mean = self.mean.copy()
        touched = np.zeros(self.dims, dtype=np.uint8)
        _voxel.reveal_rays(self.state, self.mean, self.count, touched, self.origin,
                           self.resolution, origins, dirs, t_free, hit, inten)
        idx = np.argwhere(touched)
        i, j, k = idx.T
        moved = (old_state[i, j, k] != self.state[i, j, k]) | (
            np.abs(old_mean[i, j, k] - self.mean[i, j, k]) > 1e-9)
        changed = idx[moved]
        occ = changed[(self.state[tuple(changed.T)] == OCCUPIED)
                      & (old_state[tuple(changed.T)] != OCCUPIED)]
        if len(changed):
            self._clearance = None
        return RevealResult(changed=changed, newly_occupied=occ)

    # persistence
    def dump(self, stem) -> tuple[Path, Path]:
        """Write ``<stem>.bin`` (state u8, mean f64, count i64; C order) and ``<stem>.json``."""
        stem = Path(stem)
        binp = stem.with_suffix(".bin")
        with open(binp, "wb") as fh:
            fh.write(self.state.tobytes(order="C"))
            fh.write(self.mean.astype("<f8").tobytes(order="C"))
            fh.write(self.count.astype("<i8").tobytes(order="C"))
        header = {"dims": list(self.dims), "resolution": self.resolution,
                  "origin": self.origin.tolist(), "bounds": self.bounds.to_dict(),
                  "unknown_is_free": self.unknown_is_free,
                  "layout": ["state:uint8", "mean:float64le", "count:int64le"],
                  "states": {"unknown": UNKNOWN, "free": FREE, "occupied": OCCUPIED},
                  "data": binp.name}
        jsonp = stem.with_suffix(".json")
        jsonp.write_text(json.dumps(header, indent=2))
        return binp, jsonp

    @classmethod
    def load(cls, header_path) -> "DiscoveredMap":
        header_path = Path(header_path)
        h = json.loads(header_path.read_text())
        m = cls(Bounds(**h["bounds"]), h["resolution"], h.get("unknown_is_free", True))
        if tuple(h["dims"]) != m.dims:
            raise ValueError("map header dims disagree with bounds/resolution")
        raw = (header_path.parent / h["data"]).read_bytes()
        n = int(np.prod(m.dims))
        m.state = np.frombuffer(raw, np.uint8, n, 0).reshape(m.dims).copy()
        m.mean = np.frombuffer(raw, "<f8", n, n).reshape(m.dims).copy()
        m.count = np.frombuffer(raw, "<i8", n, 9 * n).reshape(m.dims).copy()
        return m


# --- scene files -----------------------------------------------------------------


def load_scene(path) -> SceneModel:
    path = Path(path)
    doc = json.loads(path.read_text())
    base = path.parent
    ground = doc.get("ground", {})
    regions = []
    for r in ground.get("regions", []):
        regions.append(TextureRegion(tuple(r["rect"]), read_pgm(base / r["pgm_path"]),
                                     float(r["m_per_px"]), r["pgm_path"]))
    boxes = []
    for bx in doc.get("boxes", []):
        tex = read_pgm(base / bx["pgm_path"]) if "pgm_path" in bx else None
        boxes.append(Box(bx["min"], bx["max"], float(bx.get("intensity", 0.5)), tex,
                         float(bx.get("m_per_px", 0.01)), bx.get("pgm_path")))
    return SceneModel(Bounds(**doc["bounds"]), float(ground.get("intensity", 0.8)),
                      tuple(regions), tuple(boxes))


def save_scene(scene: SceneModel, path, texture_prefix: str | None = None) -> Path:
    """Write ``scene`` as JSON plus one PGM per texture next to it."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    prefix = texture_prefix or path.stem
    regions = []
    for i, reg in enumerate(scene.regions):
        name = f"{prefix}_region{i}.pgm"
        write_pgm(path.parent / name, reg.texture)
        regions.append({"rect": list(reg.rect), "pgm_path": name, "m_per_px": reg.m_per_px})
    boxes = []
    for i, bx in enumerate(scene.boxes):
        entry = {"min": bx.min.tolist(), "max": bx.max.tolist(), "intensity": bx.intensity}
        if bx.texture is not None:
            name = f"{prefix}_box{i}.pgm"
            write_pgm(path.parent / name, bx.texture)
            entry["pgm_path"] = name
            entry["m_per_px"] = bx.m_per_px
        boxes.append(entry)
    doc = {"bounds": scene.bounds.to_dict(),
           "ground": {"intensity": scene.ground_intensity, "regions": regions},
           "boxes": boxes}
    path.write_text(json.dumps(doc, indent=2))
    return path
