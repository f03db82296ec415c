"""Closed-loop mission execution with in-place tree repair.

Every cycle reveals what the camera sees, invalidates subtrees whose edges now
collide, regrows inside the invalidated region, refreshes the information of
vertices that could see the change and rewires from them.  The robot then
advances one waypoint; the tree is re-rooted at the executed waypoint so the
remaining plan always starts at the current belief.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .camera import camera_pose
from .lie import GaussianPose, Pose
from .photometric import measurement_update
from .planner import (CameraConfig, InformationModel, NoPath, Planner, PlannerConfig, PlanState,
                      StateSpace, audit_path_collisions, near_radius, propagate_edges,
                      weighted_trace)
from .scene import Bounds, DiscoveredMap, RevealResult, SceneModel


class GoalUnreachable(RuntimeError):
    pass


class StepCapExceeded(RuntimeError):
    pass


@dataclass(frozen=True)
class DirtyRegion:
    """Axis-aligned box of changed space, in meters; ``lo > hi`` when empty."""

    lo: np.ndarray
    hi: np.ndarray

    @classmethod
    def empty(cls) -> "DirtyRegion":
        return cls(np.full(3, np.inf), np.full(3, -np.inf))

    @property
    def is_empty(self) -> bool:
        return bool(np.any(self.lo > self.hi))

    def union(self, other: "DirtyRegion") -> "DirtyRegion":
        return DirtyRegion(np.minimum(self.lo, other.lo), np.maximum(self.hi, other.hi))

    def inflate(self, r: float) -> "DirtyRegion":
        if self.is_empty:
            return self
        return DirtyRegion(self.lo - r, self.hi + r)

    def overlaps(self, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
        """Vectorized AABB overlap test against stacked boxes ``(N, 3)``."""
        if self.is_empty:
            return np.zeros(len(lo), dtype=bool)
        return np.all((lo <= self.hi) & (hi >= self.lo), axis=-1)

    def clipped(self, bounds: Bounds) -> "DirtyRegion":
        if self.is_empty:
            return self
        blo = np.array([bounds.xmin, bounds.ymin, 0.0])
        bhi = np.array([bounds.xmax, bounds.ymax, bounds.zmax])
        return DirtyRegion(np.maximum(self.lo, blo), np.minimum(self.hi, bhi))


def voxel_region(dmap: DiscoveredMap, idx: np.ndarray) -> DirtyRegion:
    if len(idx) == 0:
        return DirtyRegion.empty()
    lo = dmap.origin + idx.min(axis=0) * dmap.resolution
    hi = dmap.origin + (idx.max(axis=0) + 1) * dmap.resolution
    return DirtyRegion(lo, hi).clipped(dmap.bounds)


@dataclass(frozen=True)
class MissionConfig:
    planner: PlannerConfig = PlannerConfig()
    camera: CameraConfig = CameraConfig()
    map_resolution: float = 0.05
    reveal_stride: int = 4
    max_range: float = 7.0
    max_steps: int = 200
    exec_step: float = 1.0
    regrow_factor: int = 10
    regrow_min: int = 200
    info_threshold: float = 0.01
    space_z: tuple | None = None
    snapshot_every: int = 0

    def to_dict(self) -> dict:
        return {"planner": self.planner.to_dict(), "camera": self.camera.to_dict(),
                "map_resolution": self.map_resolution, "reveal_stride": self.reveal_stride,
                "max_range": self.max_range, "max_steps": self.max_steps, "exec_step": self.exec_step,
                "regrow_factor": self.regrow_factor, "regrow_min": self.regrow_min,
                "info_threshold": self.info_threshold, "space_z": self.space_z,
                "snapshot_every": self.snapshot_every}


@dataclass
class MissionState:
    belief: GaussianPose
    vertex: int
    dmap: DiscoveredMap
    planner: Planner
    step: int = 0
    path: list = field(default_factory=list)
    trajectory: list = field(default_factory=list)


@dataclass
class RegrowResult:
    removed: list
    added: list
    space: StateSpace | None
    iterations: int


# --- map and tree maintenance ---------------------------------------------------------


def update_maps(mission: MissionState, reveal: RevealResult) -> DirtyRegion:
    """Dirty box of a reveal already applied to ``mission.dmap``.

    The planner's information cache is dropped whenever the map changed, since
    any cached prediction may now be stale.
    """
    region = voxel_region(mission.dmap, reveal.changed)
    if not region.is_empty:
        mission.planner.info.clear()
    return region


def colliding_vertices(planner: Planner, world, region: DirtyRegion) -> list[int]:
    """Vertices whose incoming edge passes within ``c`` of the changed region and now collides."""
    t = planner.tree
    c = planner.cfg.collision_radius
    ids = t.active
    ids = ids[t.parent[ids] >= 0]
    if len(ids) == 0 or region.is_empty:
        return []
    a = t.state[t.parent[ids], :3]
    b = t.state[ids, :3]
    margin = c + getattr(world, "resolution", 0.0) * 2.0
    near = region.inflate(margin).overlaps(np.minimum(a, b), np.maximum(a, b))
    ids, a, b = ids[near], a[near], b[near]
    if len(ids) == 0:
        return []
    free = world.segments_free(a, b, c)
    return [int(i) for i in ids[~free]]


def invalidate_and_regrow(planner: Planner, world, region: DirtyRegion, cfg: MissionConfig,
                          require_goal: bool = True) -> RegrowResult:
    """Drop subtrees that now collide and resample inside their bounding box.

    The sampling box is the AABB of the removed vertices inflated by the
    current neighbour radius.  Regrowth stops once as many vertices were added
    as were removed or the iteration cap is hit.
    """
    t = planner.tree
    roots = colliding_vertices(planner, world, region)
    had_goal = planner.goal is not None and len(planner._goal_candidates(planner.cfg.goal_tolerance)) > 0
    positions = {int(v): t.state[v, :3].copy() for r in roots for v in t.subtree(r)}
    removed = t.invalidate(roots)
    if not removed:
        return RegrowResult([], [], None, 0)
    pts = np.array([positions[v] for v in removed])
    rho = near_radius(len(t.active), planner.cfg.gamma, planner.cfg.dim)
    space = planner.space.intersect(pts.min(axis=0) - rho, pts.max(axis=0) + rho)
    cap = max(cfg.regrow_min, cfg.regrow_factor * len(removed))
    added = []
    it = 0
    while len(added) < len(removed) and it < cap:
        v = planner.iterate(space)
        it += 1
        if v is not None:
            added.append(v)
    if require_goal and had_goal and len(planner._goal_candidates(planner.cfg.goal_tolerance)) == 0:
        # the goal region lay outside the regrow box: keep growing over the whole space
        extra = 0
        while extra < cap and len(planner._goal_candidates(planner.cfg.goal_tolerance)) == 0:
            v = planner.iterate()
            extra += 1
            if v is not None:
                added.append(v)
        it += extra
        if len(planner._goal_candidates(planner.cfg.goal_tolerance)) == 0:
            raise GoalUnreachable("goal region could not be regrown within the iteration cap")
    return RegrowResult(removed, added, space, it)


def frustum_boxes(states: np.ndarray, camera: CameraConfig, max_range: float):
    """Bounding boxes of the view frusta at ``states``.

    Corner rays stop at ``max_range`` or at the ground plane, whichever is nearer.
    """
    K = camera.intrinsics
    corners = np.array([[(u - K.cx) / K.fx, (v - K.cy) / K.fy, 1.0]
                        for u in (0.0, K.width - 1.0) for v in (0.0, K.height - 1.0)])
    corners /= np.linalg.norm(corners, axis=1)[:, None]
    lo = np.empty((len(states), 3))
    hi = np.empty((len(states), 3))
    for i, s in enumerate(states):
        pose = camera_pose(s[:3], float(s[3]), camera.pitch_deg)
        dirs = corners @ pose.C.T
        reach = np.full(len(dirs), max_range)
        down = dirs[:, 2] < 0
        reach[down] = np.minimum(reach[down], -pose.r[2] / dirs[down, 2])
        pts = np.vstack([pose.r, pose.r + reach[:, None] * dirs])
        lo[i] = pts.min(axis=0)
        hi[i] = pts.max(axis=0)
    return lo, hi


def rewire_on_info(planner: Planner, region: DirtyRegion, cfg: MissionConfig) -> list[int]:
    """Refresh the information of vertices that can see ``region``; rewire from changed ones.

    Returns the ids whose information changed by more than the relative trace
    threshold.
    """
    t = planner.tree
    if region.is_empty:
        return []
    ids = t.active
    lo, hi = frustum_boxes(t.state[ids], cfg.camera, cfg.max_range)
    ids = ids[region.overlaps(lo, hi)]
    changed = []
    for v in ids:
        v = int(v)
        new = planner.info.at(t.state[v])
        old_tr = float(np.trace(t.lam[v]))
        new_tr = float(np.trace(new))
        if abs(new_tr - old_tr) <= cfg.info_threshold * max(abs(old_tr), 1e-300):
            continue
        t.lam[v] = new
        changed.append(v)
    c = planner.cfg.collision_radius
    before = t.cost[: t.n].copy()
    for v in changed:
        if not t.valid[v]:
            continue
        if v != t.root:
            planner.recost(v)
            # new information only matters through cost; an unchanged cost leaves every choice intact
            if abs(t.cost[v] - before[v]) <= 1e-12 * max(1.0, abs(before[v])):
                continue
        near = planner.near_set(t.state[v], exclude=v)
        near = near[near != t.parent[v]]
        if len(near):
            free = planner.world.segments_free(t.state[near, :3],
                                               np.broadcast_to(t.state[v, :3], (len(near), 3)), c)
            planner.rewire(v, near[free])
    return changed


def tree_digest(planner: Planner) -> str:
    t = planner.tree
    h = hashlib.sha256()
    for arr in (t.state[: t.n], t.cov[: t.n], t.lam[: t.n], t.cost[: t.n], t.parent[: t.n],
                t.valid[: t.n]):
        h.update(np.ascontiguousarray(arr).tobytes())
    return h.hexdigest()


# --- mission loop ---------------------------------------------------------------------


def _upper(cov: np.ndarray) -> list:
    return [float(v) for v in cov[np.triu_indices(6)]]


def execute_step(planner: Planner, truth: InformationModel, belief_cov: np.ndarray, v_from: int,
                 v_to: int) -> np.ndarray:
    """Belief after flying ``v_from -> v_to`` and fusing the real view at ``v_to``."""
    t = planner.tree
    cov, _ = propagate_edges(t.state[v_from], belief_cov, t.state[v_to], planner.cfg)
    return measurement_update(cov, truth.at(t.state[v_to])[None])[0]


def _pose_of(state: np.ndarray) -> Pose:
    return Pose.from_xyz_yaw(state[:3], float(state[3]))


def run_mission(scene: SceneModel, start, cov0, goal, cfg: MissionConfig, log_path=None,
                snapshot_dir=None, dmap: DiscoveredMap | None = None,
                on_cycle=None) -> MissionState:
    """Plan on the discovered map, then alternate reveal / repair / execute until the goal.

    Raises :class:`GoalUnreachable` when the goal cannot be reconnected and
    :class:`StepCapExceeded` after ``cfg.max_steps`` executed waypoints.
    """
    x0 = start.vector() if isinstance(start, PlanState) else np.append(np.asarray(start, float)[:3], 0.0)
    g = goal.vector() if isinstance(goal, PlanState) else np.asarray(goal, float)
    z = cfg.space_z if cfg.space_z is not None else float(x0[2])
    space = StateSpace.from_bounds(scene.bounds, z)
    if dmap is None:
        dmap = DiscoveredMap(scene.bounds, cfg.map_resolution)
    planner = Planner(x0, cov0, dmap, InformationModel(dmap, cfg.camera), cfg.planner, space, g)
    truth = InformationModel(scene, cfg.camera)
    planner.run()
    state = MissionState(GaussianPose(_pose_of(x0), np.asarray(cov0, float)), planner.tree.root,
                         dmap, planner)
    log = open(log_path, "w") if log_path else None
    try:
        try:
            state.path = planner.path().ids
        except NoPath as exc:
            raise GoalUnreachable(str(exc)) from exc
        state.trajectory.append((x0.copy(), np.asarray(cov0, float).copy()))
        while True:
            events = []
            pose = planner.info.pose(planner.tree.state[state.vertex])
            reveal = dmap.reveal(scene, pose, cfg.camera.intrinsics, cfg.max_range,
                                 cfg.reveal_stride)
            region = update_maps(state, reveal)
            if not region.is_empty:
                events.append("map_changed")
                before = tree_digest(planner)
                regrow = invalidate_and_regrow(planner, dmap, region, cfg)
                if regrow.removed:
                    events.append(f"invalidated:{len(regrow.removed)}")
                    events.append(f"regrown:{len(regrow.added)}")
                changed = rewire_on_info(planner, region, cfg)
                if changed:
                    events.append(f"info_updated:{len(changed)}")
                if tree_digest(planner) != before:
                    events.append("tree_changed")
            try:
                state.path = planner.path().ids
            except NoPath as exc:
                raise GoalUnreachable(str(exc)) from exc
            path_states = planner.tree.state[state.path]
            if not audit_path_collisions(dmap, path_states, cfg.planner.collision_radius):
                raise RuntimeError("remaining path collides with the discovered map")
            at_goal = np.linalg.norm(planner.tree.state[state.vertex, :3] - g[:3]) <= \
                cfg.planner.goal_tolerance
            rec = {"step": state.step,
                   "pose": planner.tree.state[state.vertex].tolist(),
                   "cov": _upper(state.belief.cov),
                   "trace": float(weighted_trace(state.belief.cov, cfg.planner.w_rot)),
                   "path_len": float(np.sum(np.linalg.norm(np.diff(path_states[:, :3], axis=0),
                                                           axis=1))),
                   "tree_size": int(len(planner.tree.active)),
                   "unknown_voxels": dmap.unknown_count,
                   "events": events + (["goal_reached"] if at_goal else [])}
            if log:
                log.write(json.dumps(rec) + "\n")
            if snapshot_dir and cfg.snapshot_every and state.step % cfg.snapshot_every == 0:
                Path(snapshot_dir).mkdir(parents=True, exist_ok=True)
                (Path(snapshot_dir) / f"tree_{state.step:04d}.json").write_text(
                    planner.tree.dumps(cfg.planner.w_rot))
            if on_cycle is not None:
                on_cycle(state, rec)
            if at_goal:
                return state
            if state.step >= cfg.max_steps:
                raise StepCapExceeded(f"goal not reached after {cfg.max_steps} steps")
            nxt = state.path[1]
            t = planner.tree
            hop = float(np.linalg.norm(t.state[nxt, :3] - t.state[state.vertex, :3]))
            if hop > cfg.exec_step:
                nxt = planner.split_edge(nxt, cfg.exec_step / hop)
                events.append("edge_split")
            cov = execute_step(planner, truth, state.belief.cov, state.vertex, nxt)
            planner.reroot(nxt, cov)
            state.vertex = nxt
            state.belief = GaussianPose(_pose_of(planner.tree.state[nxt]), cov)
            state.trajectory.append((planner.tree.state[nxt].copy(), cov.copy()))
            state.step += 1
    finally:
        if log:
            log.close()


def write_trajectory_csv(path, state: MissionState, w_rot: float = 1.0) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "x", "y", "z", "yaw", "trace"])
        for k, (s, cov) in enumerate(state.trajectory):
            w.writerow([k, *(repr(float(v)) for v in s), repr(float(weighted_trace(cov, w_rot)))])
