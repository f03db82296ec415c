"""Perception-aware RRT*.

Each vertex carries a pose covariance propagated along its incoming edge and
fused with the photometric information predicted at the vertex.  Edge cost is
``alpha * Dist + (1 - alpha) * WTr(Sigma)``, where ``WTr`` is the covariance
trace with the rotation block weighted by ``w_rot``.  Because the covariance at
a vertex depends on the whole path that reaches it, costs do not have optimal
substructure; the tree still follows the sample / choose-parent / rewire rule
order exactly.

States are stored as ``(x, y, z, yaw)``.  With ``dim=3`` the yaw of every
sampled state is the start heading.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .camera import DEFAULT_INTRINSICS, Intrinsics, camera_pose
from .lie import adjoint_from, compound_covariance, repair_psd
from .photometric import DEFAULT_SIGMA_I, fisher_information, measurement_update
from .scene import Bounds

DEFAULT_SIGMA_ODO = np.diag([0.01, 0.01, 0.01, 0.001, 0.001, 0.003])


class NoPath(RuntimeError):
    pass


def wrap_angle(a):
    return (np.asarray(a) + np.pi) % (2.0 * np.pi) - np.pi


def _rot_z(yaw: np.ndarray) -> np.ndarray:
    c, s = np.cos(yaw), np.sin(yaw)
    R = np.zeros(np.shape(yaw) + (3, 3))
    R[..., 0, 0] = c
    R[..., 0, 1] = -s
    R[..., 1, 0] = s
    R[..., 1, 1] = c
    R[..., 2, 2] = 1.0
    return R


# --- configuration ---------------------------------------------------------------


@dataclass(frozen=True)
class PlanState:
    position: tuple
    yaw: float = 0.0

    def __post_init__(self):
        p = tuple(float(v) for v in self.position)
        if len(p) != 3 or not all(math.isfinite(v) for v in p):
            raise ValueError("position must be a finite 3-vector")
        object.__setattr__(self, "position", p)
        object.__setattr__(self, "yaw", float(self.yaw))

    def vector(self) -> np.ndarray:
        return np.array([*self.position, self.yaw])

    @classmethod
    def from_vector(cls, v) -> "PlanState":
        return cls(tuple(v[:3]), float(v[3]) if len(v) > 3 else 0.0)


@dataclass(frozen=True)
class StateSpace:
    """Axis-aligned sampling box over positions; ``lo == hi`` pins an axis."""

    lo: tuple
    hi: tuple

    def __post_init__(self):
        lo = tuple(float(v) for v in self.lo)
        hi = tuple(float(v) for v in self.hi)
        if len(lo) != 3 or len(hi) != 3 or any(h < l for l, h in zip(lo, hi)):
            raise ValueError("state space needs lo <= hi on three axes")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @classmethod
    def from_bounds(cls, bounds: Bounds, z: float | tuple) -> "StateSpace":
        zlo, zhi = (z, z) if np.isscalar(z) else z
        return cls((bounds.xmin, bounds.ymin, zlo), (bounds.xmax, bounds.ymax, zhi))

    def contains(self, p, tol: float = 1e-9) -> bool:
        p = np.asarray(p, float)[:3]
        return bool(np.all(p >= np.array(self.lo) - tol) and np.all(p <= np.array(self.hi) + tol))

    def intersect(self, lo, hi) -> "StateSpace":
        lo = np.maximum(np.array(self.lo), lo)
        hi = np.minimum(np.array(self.hi), hi)
        return StateSpace(tuple(lo), tuple(np.maximum(hi, lo)))


@dataclass(frozen=True)
class CameraConfig:
    intrinsics: Intrinsics = DEFAULT_INTRINSICS
    pitch_deg: float = 0.0
    sigma_i: float = DEFAULT_SIGMA_I
    stride: int = 2

    def to_dict(self) -> dict:
        return {"intrinsics": self.intrinsics.to_dict(), "pitch_deg": self.pitch_deg,
                "sigma_i": self.sigma_i, "stride": self.stride}


@dataclass(frozen=True)
class PlannerConfig:
    alpha: float = 0.5
    iterations: int = 2500
    collision_radius: float = 0.3
    gamma: float = 12.0
    dim: int = 3
    delta: float = 0.5
    sigma_odo: np.ndarray = field(default_factory=lambda: DEFAULT_SIGMA_ODO.copy())
    w_rot: float = 1.0
    w_yaw: float = 0.5
    seed: int = 0
    goal_tolerance: float = 0.25
    goal_bias: float = 0.05
    order: int = 4
    max_edge: float | None = None

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        if self.dim not in (3, 4):
            raise ValueError("dim must be 3 or 4")
        if self.max_edge is not None and self.max_edge <= 0:
            raise ValueError("max_edge must be positive or None")
        for name in ("collision_radius", "gamma", "delta", "goal_tolerance"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.iterations < 0 or not 0.0 <= self.goal_bias < 1.0:
            raise ValueError("invalid iteration count or goal bias")
        S = np.asarray(self.sigma_odo, dtype=float)
        if S.shape != (6, 6) or np.linalg.eigvalsh(0.5 * (S + S.T)).min() < -1e-12:
            raise ValueError("sigma_odo must be a 6x6 PSD matrix")
        object.__setattr__(self, "sigma_odo", S)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["sigma_odo"] = self.sigma_odo.tolist()
        return d


# --- metric, sampling and neighbourhoods -------------------------------------------


def distance(a: np.ndarray, b: np.ndarray, cfg: PlannerConfig) -> np.ndarray:
    """Euclidean position distance, plus ``w_yaw * |dyaw|`` when ``dim == 4``."""
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    d = np.linalg.norm(a[..., :3] - b[..., :3], axis=-1)
    if cfg.dim == 4:
        d = d + cfg.w_yaw * np.abs(wrap_angle(a[..., 3] - b[..., 3]))
    return d


def near_radius(n: int, gamma: float, dim: int) -> float:
    if n <= 1:
        return 0.0
    return gamma * (math.log(n) / n) ** (1.0 / dim)


def sample_state(space: StateSpace, rng: np.random.Generator, dim: int = 3,
                 yaw: float = 0.0) -> np.ndarray:
    """Uniform sample over ``space``; yaw uniform in ``[-pi, pi)`` when ``dim == 4``."""
    lo = np.array(space.lo)
    hi = np.array(space.hi)
    p = lo + rng.random(3) * (hi - lo)
    if dim == 4:
        yaw = -np.pi + 2.0 * np.pi * rng.random()
    return np.array([p[0], p[1], p[2], yaw])


def steer(x_from: np.ndarray, x_to: np.ndarray, cfg: PlannerConfig) -> np.ndarray:
    """Move from ``x_from`` towards ``x_to`` by at most ``cfg.max_edge``."""
    if cfg.max_edge is None:
        return x_to
    d = float(distance(x_from, x_to, cfg))
    if d <= cfg.max_edge:
        return x_to
    f = cfg.max_edge / d
    out = x_from + f * (x_to - x_from)
    out[3] = wrap_angle(x_from[3] + f * wrap_angle(x_to[3] - x_from[3]))
    return out


def weighted_trace(cov: np.ndarray, w_rot: float = 1.0) -> np.ndarray:
    cov = np.asarray(cov)
    return (np.trace(cov[..., :3, :3], axis1=-2, axis2=-1)
            + w_rot * np.trace(cov[..., 3:, 3:], axis1=-2, axis2=-1))


def position_covariance(cov: np.ndarray, position) -> np.ndarray:
    """3x3 covariance of the position implied by a left-perturbation pose covariance.

    A twist ``(rho, phi)`` moves the position ``r`` by ``rho + phi x r``.
    """
    r = np.asarray(position, float)
    G = np.hstack([np.eye(3), -np.array([[0, -r[2], r[1]], [r[2], 0, -r[0]], [-r[1], r[0], 0]])])
    return G @ np.asarray(cov) @ G.T


# --- belief propagation along edges ---------------------------------------------------


def propagate_edges(x0: np.ndarray, cov0: np.ndarray, x1: np.ndarray, cfg: PlannerConfig):
    """Propagate stacked beliefs along straight edges ``x0 -> x1``.

    Each edge is split into ``ceil(len / delta)`` equal sub-steps with yaw
    interpolated along the shorter arc; every sub-step adds odometry noise
    ``sigma_odo * step_length``.  Returns covariances before any measurement
    update and the edge lengths.
    """
    x0 = np.atleast_2d(x0)
    x1 = np.atleast_2d(x1)
    cov = np.array(cov0, dtype=float).reshape(-1, 6, 6)
    m = max(len(x0), len(x1), len(cov))
    x0 = np.broadcast_to(x0, (m, 4))
    x1 = np.broadcast_to(x1, (m, 4))
    cov = np.array(np.broadcast_to(cov, (m, 6, 6)))
    dp = x1[:, :3] - x0[:, :3]
    length = np.linalg.norm(dp, axis=1)
    steps = np.ceil(length / cfg.delta - 1e-9).astype(np.intp)
    steps[length == 0.0] = 0
    steps = np.maximum(steps, (length > 0).astype(np.intp))
    dyaw = wrap_angle(x1[:, 3] - x0[:, 3])
    for k in range(int(steps.max(initial=0))):
        a = np.nonzero(steps > k)[0]
        f = (k / steps[a])[:, None]
        pos = x0[a, :3] + f * dp[a]
        yaw = x0[a, 3] + f[:, 0] * dyaw[a]
        Ad = adjoint_from(_rot_z(yaw), pos)
        S = cfg.sigma_odo[None] * (length[a] / steps[a])[:, None, None]
        cov[a] = compound_covariance(cov[a], Ad @ S @ np.swapaxes(Ad, -1, -2), cfg.order)
    return repair_psd(cov), length


def propagate_edge(x0, cov0, x1, lam1, cfg: PlannerConfig):
    """Belief at ``x1`` reached from ``x0``: propagation then fusion of ``lam1``.

    Returns ``(Sigma_t, edge length)``.
    """
    cov, length = propagate_edges(np.asarray(x0, float), cov0, np.asarray(x1, float), cfg)
    return measurement_update(cov, np.asarray(lam1)[None])[0], float(length[0])


# --- information -------------------------------------------------------------------


class InformationModel:
    """Fisher information at planner states, cached per exact state."""

    def __init__(self, world, camera: CameraConfig = CameraConfig()):
        self.world = world
        self.camera = camera
        self._cache: dict[bytes, np.ndarray] = {}
        self.evaluations = 0

    def pose(self, state):
        s = np.asarray(state, float)
        return camera_pose(s[:3], float(s[3]), self.camera.pitch_deg)

    def compute(self, state) -> np.ndarray:
        self.evaluations += 1
        return fisher_information(self.world, self.pose(state), self.camera.intrinsics,
                                  self.camera.sigma_i, self.camera.stride)

    def at(self, state) -> np.ndarray:
        key = np.asarray(state, float).tobytes()
        lam = self._cache.get(key)
        if lam is None:
            lam = self.compute(state)
            self._cache[key] = lam
        return lam

    def clear(self) -> None:
        self._cache.clear()


# --- tree ---------------------------------------------------------------------------


class Tree:
    """Array-backed tree; vertex ids are insertion indices and never reused."""

    def __init__(self, capacity: int = 1024):
        self.n = 0
        self.state = np.zeros((capacity, 4))
        self.cov = np.zeros((capacity, 6, 6))
        self.lam = np.zeros((capacity, 6, 6))
        self.cost = np.zeros(capacity)
        self.parent = np.full(capacity, -1, dtype=np.intp)
        self.valid = np.zeros(capacity, dtype=bool)
        self.children: list[list[int]] = []
        self.root = 0
        self._active = None

    def _grow(self):
        cap = 2 * len(self.cost)
        for name in ("state", "cov", "lam", "cost", "parent", "valid"):
            old = getattr(self, name)
            new = np.zeros((cap,) + old.shape[1:], dtype=old.dtype)
            if name == "parent":
                new[:] = -1
            new[: self.n] = old[: self.n]
            setattr(self, name, new)

    def add(self, state, cov, lam, cost: float, parent: int) -> int:
        if self.n == len(self.cost):
            self._grow()
        i = self.n
        self.n += 1
        self.state[i] = state
        self.cov[i] = cov
        self.lam[i] = lam
        self.cost[i] = cost
        self.parent[i] = parent
        self.valid[i] = True
        self.children.append([])
        if parent >= 0:
            self.children[parent].append(i)
        self._active = None
        return i

    def set_parent(self, v: int, p: int) -> None:
        old = self.parent[v]
        if old >= 0:
            self.children[old].remove(v)
        self.parent[v] = p
        if p >= 0:
            self.children[p].append(v)

    @property
    def active(self) -> np.ndarray:
        if self._active is None:
            self._active = np.nonzero(self.valid[: self.n])[0]
        return self._active

    def subtree(self, v: int) -> list[int]:
        out = [v]
        i = 0
        while i < len(out):
            out.extend(self.children[out[i]])
            i += 1
        return out

    def levels(self, v: int) -> list[list[int]]:
        """Descendants of ``v`` grouped by depth below it (``v`` excluded)."""
        out = []
        frontier = list(self.children[v])
        while frontier:
            out.append(frontier)
            frontier = [c for u in frontier for c in self.children[u]]
        return out

    def ancestors(self, v: int) -> set[int]:
        out = set()
        p = self.parent[v]
        while p >= 0:
            out.add(int(p))
            p = self.parent[p]
        return out

    def path_to(self, v: int) -> list[int]:
        out = [v]
        while self.parent[out[-1]] >= 0:
            out.append(int(self.parent[out[-1]]))
            if len(out) > self.n:
                raise RuntimeError("cycle in tree")
        return out[::-1]

    def invalidate(self, roots) -> list[int]:
        """Drop every subtree rooted at ``roots``; returns the removed ids."""
        removed = []
        for r in roots:
            if not self.valid[r]:
                continue
            sub = self.subtree(int(r))
            p = self.parent[r]
            if p >= 0:
                self.children[p].remove(int(r))
            for v in sub:
                self.valid[v] = False
                self.children[v] = []
                self.parent[v] = -1
            removed.extend(sub)
        self._active = None
        return removed

    def to_dict(self, w_rot: float = 1.0) -> dict:
        ids = self.active
        verts = [{"id": int(i), "state": self.state[i].tolist(), "cost": float(self.cost[i]),
                  "trace": float(weighted_trace(self.cov[i], w_rot)),
                  "parent": int(self.parent[i])} for i in ids]
        edges = [[int(self.parent[i]), int(i)] for i in ids if self.parent[i] >= 0]
        return {"root": int(self.root), "vertices": verts, "edges": edges}

    def dumps(self, w_rot: float = 1.0) -> str:
        return json.dumps(self.to_dict(w_rot), indent=1)


# --- planner ------------------------------------------------------------------------


@dataclass
class PlannedPath:
    ids: list
    states: np.ndarray
    covs: np.ndarray
    traces: np.ndarray
    cum_cost: np.ndarray
    cum_length: np.ndarray

    @property
    def length(self) -> float:
        return float(self.cum_length[-1])

    @property
    def mean_trace(self) -> float:
        return float(np.mean(self.traces))

    @property
    def goal_trace(self) -> float:
        return float(self.traces[-1])

    @property
    def cost(self) -> float:
        return float(self.cum_cost[-1])

    def summary(self) -> dict:
        return {"length": self.length, "mean_wtr": self.mean_trace, "goal_wtr": self.goal_trace,
                "cost": self.cost, "waypoints": len(self.ids)}

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x", "y", "z", "yaw", "trace", "cum_cost", "cum_length"])
            for s, t, c, l in zip(self.states, self.traces, self.cum_cost, self.cum_length):
                w.writerow([repr(float(v)) for v in (*s, t, c, l)])

    def write_covariances(self, path) -> None:
        """One row per waypoint: the 21 upper-triangular covariance entries."""
        iu = np.triu_indices(6)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"c{i}{j}" for i, j in zip(*iu)])
            for c in self.covs:
                w.writerow([repr(float(v)) for v in c[iu]])



class Planner:
    """Incremental perception-aware RRT* over a fixed world view."""

    def __init__(self, start, cov0, world, info: InformationModel, cfg: PlannerConfig,
                 space: StateSpace, goal=None):
        self.world = world
        self.info = info
        self.cfg = cfg
        self.space = space
        self.rng = np.random.default_rng(cfg.seed)
        x0 = start.vector() if isinstance(start, PlanState) else np.asarray(start, float)
        if len(x0) == 3:
            x0 = np.append(x0, 0.0)
        self.heading = float(x0[3])
        self.goal = None
        if goal is not None:
            g = goal.vector() if isinstance(goal, PlanState) else np.asarray(goal, float)
            self.goal = np.append(g[:3], self.heading if (len(g) < 4 or cfg.dim == 3) else g[3])
        if not world.bounds.contains(x0[:3]):
            raise ValueError("start outside the world")
        if not world.segments_free(x0[None, :3], x0[None, :3], cfg.collision_radius)[0]:
            raise ValueError("start is in collision")
        self.tree = Tree()
        self.tree.add(x0, cov0, info.at(x0), 0.0, -1)
        self.iteration = 0

    # neighbourhoods
    def nearest(self, x) -> int:
        ids = self.tree.active
        d = distance(self.tree.state[ids], x, self.cfg)
        return int(ids[np.argmin(d)])

    def near_set(self, x, exclude: int = -1) -> np.ndarray:
        ids = self.tree.active
        rho = near_radius(len(ids), self.cfg.gamma, self.cfg.dim)
        d = distance(self.tree.state[ids], x, self.cfg)
        m = d <= rho
        if exclude >= 0:
            m &= ids != exclude
        return ids[m]

    # costs
    def _edge_costs(self, base: np.ndarray, dist: np.ndarray, covs) -> np.ndarray:
        a = self.cfg.alpha
        wtr = 0.0 if covs is None else weighted_trace(covs, self.cfg.w_rot)
        return base + a * dist + (1.0 - a) * wtr

    def _beliefs(self, src: np.ndarray, dst: np.ndarray, lam: np.ndarray) -> np.ndarray:
        """Fused covariances at ``dst`` for edges from existing vertices ``src``."""
        t = self.tree
        cov, _ = propagate_edges(t.state[src], t.cov[src], dst, self.cfg)
        return measurement_update(cov, lam)

    def _sample(self, space: StateSpace) -> np.ndarray:
        if self.goal is not None and self.rng.random() < self.cfg.goal_bias:
            near_goal = self._goal_candidates(self.cfg.goal_tolerance)
            if len(near_goal) == 0 and space.contains(self.goal):
                return self.goal.copy()
        return sample_state(space, self.rng, self.cfg.dim, self.heading)

    # one sample-extend-rewire iteration
    def iterate(self, space: StateSpace | None = None) -> int | None:
        """Sample, connect and rewire once; returns the new vertex id or ``None``."""
        self.iteration += 1
        cfg, t = self.cfg, self.tree
        x_new = self._sample(space or self.space)
        nst = self.nearest(x_new)
        x_new = steer(t.state[nst], x_new, cfg)
        c = cfg.collision_radius
        if not self.world.segments_free(t.state[nst, :3][None], x_new[None, :3], c)[0]:
            return None
        lam = self.info.at(x_new)
        v = t.add(x_new, np.zeros((6, 6)), lam, np.inf, -1)
        near = self.near_set(x_new, exclude=v)
        nst_near = bool(np.any(near == nst))
        near = near[near != nst]
        if len(near):
            free = self.world.segments_free(t.state[near, :3],
                                            np.broadcast_to(x_new[:3], (len(near), 3)), c)
            near_free = near[free]
        else:
            near_free = near
        # choose parent: v_nst first, then the free neighbours in id order, strict "<"
        cands = np.concatenate([[nst], near_free]).astype(np.intp)
        dist = distance(t.state[cands], x_new, cfg)
        if cfg.alpha == 1.0:
            costs = self._edge_costs(t.cost[cands], dist, None)
            best = int(np.argmin(costs))
            cov = self._beliefs(cands[best:best + 1], x_new, lam[None])[0]
        else:
            covs = self._beliefs(cands, x_new, lam[None])
            costs = self._edge_costs(t.cost[cands], dist, covs)
            best = int(np.argmin(costs))
            cov = covs[best]
        parent = int(cands[best])
        t.cov[v] = cov
        t.cost[v] = float(self._edge_costs(t.cost[parent], dist[best], cov))
        t.set_parent(v, parent)
        self.rewire(v, near_free[near_free != parent] if len(near_free) else near_free,
                    extra=[nst] if (nst_near and nst != parent) else [])
        return v

    def rewire(self, v: int, near, extra=()) -> list[int]:
        """Re-parent neighbours through ``v`` when that lowers their cost.

        ``near`` must already be collision-checked against ``v``.  Returns the
        re-parented vertex ids.
        """
        cfg, t = self.cfg, self.tree
        cands = np.concatenate([np.asarray(extra, dtype=np.intp), np.asarray(near, dtype=np.intp)])
        cands = np.sort(cands)
        if len(cands) == 0:
            return []
        dist = distance(t.state[cands], t.state[v], cfg)
        src = np.full(len(cands), v)
        if cfg.alpha == 1.0:
            new_cost = self._edge_costs(t.cost[v], dist, None)
            covs = None
        else:
            covs = self._beliefs(src, t.state[cands], t.lam[cands])
            new_cost = self._edge_costs(t.cost[v], dist, covs)
        banned = t.ancestors(v) | {v}
        changed = []
        for k, u in enumerate(cands):
            u = int(u)
            if u in banned or not new_cost[k] < t.cost[u]:
                continue
            if covs is None:
                cov = self._beliefs(src[:1], t.state[u][None], t.lam[u][None])[0]
                cost = float(self._edge_costs(t.cost[v], dist[k], cov))
            else:
                cov, cost = covs[k], float(new_cost[k])
            t.set_parent(u, v)
            t.cov[u] = cov
            t.cost[u] = cost
            self.repropagate(u)
            changed.append(u)
        return changed

    def repropagate(self, v: int) -> None:
        """Recompute covariance and cost of every descendant of ``v``, level by level."""
        t = self.tree
        for level in self.tree.levels(v):
            ids = np.asarray(level, dtype=np.intp)
            par = t.parent[ids]
            covs = self._beliefs(par, t.state[ids], t.lam[ids])
            dist = distance(t.state[par], t.state[ids], self.cfg)
            t.cov[ids] = covs
            t.cost[ids] = self._edge_costs(t.cost[par], dist, covs)

    def recost(self, v: int) -> None:
        """Recompute ``v`` from its current parent, then its subtree."""
        t = self.tree
        p = int(t.parent[v])
        if p < 0:
            self.repropagate(v)
            return
        cov = self._beliefs(np.array([p]), t.state[v][None], t.lam[v][None])[0]
        t.cov[v] = cov
        t.cost[v] = float(self._edge_costs(t.cost[p], distance(t.state[p], t.state[v], self.cfg), cov))
        self.repropagate(v)

    def run(self, iterations: int | None = None, space: StateSpace | None = None,
            callback=None) -> None:
        for _ in range(self.cfg.iterations if iterations is None else iterations):
            v = self.iterate(space)
            if callback is not None:
                callback(self, v)

    # goal and paths
    def _goal_candidates(self, tol: float) -> np.ndarray:
        ids = self.tree.active
        d = np.linalg.norm(self.tree.state[ids, :3] - self.goal[:3], axis=1)
        return ids[d <= tol]

    def goal_vertex(self, goal=None) -> int:
        if goal is not None:
            g = goal.vector() if isinstance(goal, PlanState) else np.asarray(goal, float)
            saved, self.goal = self.goal, np.append(g[:3], 0.0)
            try:
                return self.goal_vertex()
            finally:
                self.goal = saved
        if self.goal is None:
            raise NoPath("no goal set")
        ids = self._goal_candidates(self.cfg.goal_tolerance)
        if len(ids) == 0:
            raise NoPath("no vertex within the goal tolerance")
        return int(ids[np.argmin(self.tree.cost[ids])])

    def path(self, v: int | None = None) -> PlannedPath:
        t = self.tree
        ids = t.path_to(self.goal_vertex() if v is None else v)
        states = t.state[ids].copy()
        steps = np.linalg.norm(np.diff(states[:, :3], axis=0), axis=1)
        return PlannedPath(ids, states, t.cov[ids].copy(), weighted_trace(t.cov[ids], self.cfg.w_rot),
                     t.cost[ids].copy(), np.concatenate([[0.0], np.cumsum(steps)]))

    def best_cost(self) -> float:
        try:
            return float(self.tree.cost[self.goal_vertex()])
        except NoPath:
            return math.inf

    def split_edge(self, v: int, fraction: float) -> int:
        """Insert a vertex ``fraction`` of the way along the edge into ``v``."""
        t = self.tree
        p = int(t.parent[v])
        if p < 0 or not 0.0 < fraction < 1.0:
            raise ValueError("can only split a proper fraction of an existing edge")
        a, b = t.state[p], t.state[v]
        x = a + fraction * (b - a)
        x[3] = wrap_angle(a[3] + fraction * wrap_angle(b[3] - a[3]))
        m = t.add(x, np.zeros((6, 6)), self.info.at(x), 0.0, p)
        t.set_parent(v, m)
        self.recost(m)
        return m

    # re-rooting for execution
    def reroot(self, v: int, cov) -> None:
        """Make ``v`` the root with covariance ``cov`` and zero cost, then re-propagate."""
        t = self.tree
        chain = t.path_to(v)
        for a, b in zip(chain[:-1], chain[1:]):
            t.set_parent(a, b)
        t.set_parent(v, -1)
        t.root = v
        t.cov[v] = cov
        t.cost[v] = 0.0
        self.repropagate(v)


@dataclass
class PlanResult:
    planner: Planner
    path: PlannedPath | None

    @property
    def tree(self) -> Tree:
        return self.planner.tree


def plan(start, cov0, goal, world, cfg: PlannerConfig, camera: CameraConfig = CameraConfig(),
         space: StateSpace | None = None, info: InformationModel | None = None,
         callback=None) -> PlanResult:
    """Grow a tree for ``cfg.iterations`` iterations and extract the path to ``goal``.

    Raises :class:`NoPath` when no vertex lies within the goal tolerance.
    ``space`` defaults to the world's x-y extent at the start height.
    """
    s = start.vector() if isinstance(start, PlanState) else np.asarray(start, float)
    if space is None:
        space = StateSpace.from_bounds(world.bounds, float(s[2]))
    if info is None:
        info = InformationModel(world, camera)
    p = Planner(start, cov0, world, info, cfg, space, goal)
    p.run(callback=callback)
    return PlanResult(p, p.path())


# --- audits -----------------------------------------------------------------------


def audit_tree(planner: Planner, tol: float = 1e-9) -> list[str]:
    """Structural violations of the tree; empty when every invariant holds."""
    t, cfg = planner.tree, planner.cfg
    errors = []
    ids = t.active
    par = t.parent[ids]
    roots = ids[par < 0].tolist()
    if roots != [t.root]:
        errors.append(f"expected single root {t.root}, found {roots}")
    inner = ids[par >= 0]
    pinner = t.parent[inner]
    if not np.all(t.valid[pinner]):
        errors.append(f"vertices with invalid parents: {inner[~t.valid[pinner]].tolist()[:5]}")
    n_children = 0
    for i in ids:
        for ch in t.children[i]:
            n_children += 1
            if t.parent[ch] != i:
                errors.append(f"child {ch} of {i} points elsewhere")
    if n_children != len(inner):
        errors.append(f"{len(inner)} parent links but {n_children} child links")
    # every active vertex reached exactly once from the root <=> a single acyclic tree
    seen = np.zeros(t.n, dtype=bool)
    stack = [t.root] if t.valid[t.root] else []
    while stack:
        v = stack.pop()
        if seen[v]:
            errors.append(f"vertex {v} reached twice")
            break
        seen[v] = True
        stack.extend(t.children[v])
    if not np.array_equal(np.flatnonzero(seen), ids):
        errors.append("active vertices unreachable from the root (cycle or orphan)")
    if len(inner):
        expect = (t.cost[pinner] + cfg.alpha * distance(t.state[pinner], t.state[inner], cfg)
                  + (1.0 - cfg.alpha) * weighted_trace(t.cov[inner], cfg.w_rot))
        off = np.abs(expect - t.cost[inner]) > tol * np.maximum(1.0, np.abs(expect))
        for i in inner[off][:5]:
            errors.append(f"cost of vertex {i} inconsistent")
    if len(ids):
        C = t.cov[ids]
        if not np.allclose(C, np.swapaxes(C, -1, -2), atol=1e-12):
            errors.append("asymmetric covariance")
        wmin = np.linalg.eigvalsh(C).min(axis=1)
        bad = ids[wmin < -tol]
        if len(bad):
            errors.append(f"covariances not PSD at {bad.tolist()[:5]}")
    return errors


def audit_path_collisions(world, states: np.ndarray, c: float) -> bool:
    """True when every consecutive segment of ``states`` is collision-free."""
    if len(states) < 2:
        return True
    return bool(np.all(world.segments_free(states[:-1, :3], states[1:, :3], c)))


def write_tree_json(path, tree: Tree, w_rot: float = 1.0) -> None:
    Path(path).write_text(tree.dumps(w_rot))
