"""Command-line experiment runner.

Subcommands: ``scene`` writes a bundled scenario, ``plan`` runs the planner on
a known scene, ``heatmap`` maps information gain, ``mission`` runs the online
loop and ``validate`` runs an oracle suite.  Every command writes a
``config.json`` sidecar holding the fully resolved configuration.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import scenarios, validation
from .camera import DEFAULT_INTRINSICS
from .photometric import information_heatmap, save_fisher_csv, write_heatmap
from .planner import (CameraConfig, NoPath, PlannerConfig, PlanState, StateSpace,
                      plan, write_tree_json)
from .scene import load_scene, save_scene

EXIT_NO_PATH = 2
EXIT_UNREACHABLE = 3
EXIT_VALIDATION = 1


def _vector(text: str, sizes=(3, 4)) -> tuple:
    try:
        vals = tuple(float(v) for v in text.split(","))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"not a comma-separated vector: {text!r}") from exc
    if len(vals) not in sizes:
        raise argparse.ArgumentTypeError(f"expected {' or '.join(map(str, sizes))} values")
    return vals


def _state(text: str) -> PlanState:
    v = _vector(text)
    return PlanState(v[:3], v[3] if len(v) == 4 else 0.0)


def _alpha(text: str) -> float:
    a = float(text)
    if not 0.0 <= a <= 1.0:
        raise argparse.ArgumentTypeError("alpha must lie in [0, 1]")
    return a


def _camera_pitch(text: str) -> float:
    if text == "down":
        return 0.0
    if text.startswith("pitch:"):
        return float(text.split(":", 1)[1])
    raise argparse.ArgumentTypeError("camera must be 'down' or 'pitch:<deg>'")


def _camera(args) -> CameraConfig:
    return CameraConfig(DEFAULT_INTRINSICS.scaled(args.image_scale), args.camera,
                        args.sigma_i, args.fisher_stride)


def _planner_cfg(args) -> PlannerConfig:
    kw = {}
    if args.sigma_odo is not None:
        kw["sigma_odo"] = np.diag(_vector(args.sigma_odo, (6,)))
    return PlannerConfig(alpha=args.alpha, iterations=args.iters, seed=args.seed,
                         collision_radius=args.collision_radius, gamma=args.gamma,
                         dim=4 if args.with_yaw else 3, max_edge=args.max_edge, **kw)


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _space(args, scene, start: PlanState) -> StateSpace:
    z = tuple(args.z_range) if args.z_range else start.position[2]
    return StateSpace.from_bounds(scene.bounds, z)


# --- commands --------------------------------------------------------------------


def cmd_scene(args) -> int:
    sc = scenarios.GENERATORS[args.name]()
    out = _out(args)
    path = save_scene(sc.scene, out / f"{sc.name}.json")
    _write_json(out / f"{sc.name}.meta.json",
                {"start": list(sc.start), "goal": list(sc.goal), "height": sc.height})
    print(path)
    return 0


def cmd_plan(args) -> int:
    scene = load_scene(args.scene)
    cfg, cam = _planner_cfg(args), _camera(args)
    out = _out(args)
    space = _space(args, scene, args.start)
    config = {"command": "plan", "scene": str(args.scene), "start": args.start.vector().tolist(),
              "goal": args.goal.vector().tolist(), "planner": cfg.to_dict(),
              "camera": cam.to_dict(), "space": {"lo": space.lo, "hi": space.hi}}
    _write_json(out / "config.json", config)
    try:
        res = plan(args.start, np.zeros((6, 6)), args.goal, scene, cfg, cam, space)
    except NoPath as exc:
        print(f"no path: {exc}", file=sys.stderr)
        return EXIT_NO_PATH
    res.path.write_csv(out / "path.csv")
    res.path.write_covariances(out / "covariance.csv")
    write_tree_json(out / "tree.json", res.tree, cfg.w_rot)
    save_fisher_csv(out / "goal_fisher.csv", res.tree.lam[res.path.ids[-1]])
    summary = res.path.summary()
    _write_json(out / "summary.json", summary)
    print(json.dumps(summary))
    return 0


def cmd_heatmap(args) -> int:
    scene = load_scene(args.scene)
    cam = _camera(args)
    out = _out(args)
    _write_json(out / "config.json", {"command": "heatmap", "scene": str(args.scene),
                                      "height": args.height, "resolution": args.resolution,
                                      "yaw": args.yaw, "camera": cam.to_dict()})
    hm = information_heatmap(scene, scene.bounds, args.height, cam.intrinsics, args.resolution,
                             args.yaw, cam.pitch_deg, cam.sigma_i, cam.stride)
    pgm, side = write_heatmap(out / "heatmap", hm)
    print(pgm)
    return 0


def cmd_mission(args) -> int:
    from .online import (GoalUnreachable, MissionConfig, StepCapExceeded, run_mission,
                         write_trajectory_csv)

    scene = load_scene(args.scene)
    cfg = MissionConfig(planner=_planner_cfg(args), camera=_camera(args),
                        map_resolution=args.resolution, max_steps=args.max_steps,
                        space_z=tuple(args.z_range) if args.z_range else None)
    out = _out(args)
    _write_json(out / "config.json", {"command": "mission", "scene": str(args.scene),
                                      "start": args.start.vector().tolist(),
                                      "goal": args.goal.vector().tolist(),
                                      "mission": cfg.to_dict()})
    try:
        state = run_mission(scene, args.start, np.zeros((6, 6)), args.goal, cfg,
                            log_path=out / "mission.jsonl", snapshot_dir=out / "snapshots")
    except (GoalUnreachable, StepCapExceeded) as exc:
        print(f"mission failed: {exc}", file=sys.stderr)
        return EXIT_UNREACHABLE
    write_trajectory_csv(out / "trajectory.csv", state, cfg.planner.w_rot)
    state.dmap.dump(out / "map")
    print(out / "mission.jsonl")
    return 0


def cmd_validate(args) -> int:
    if args.case in ("fig3a", "fig3b"):
        report = validation.propagation_case(args.case, samples=args.samples, seed=args.seed)
    elif args.case == "jacobians":
        report = validation.jacobian_case(seed=args.seed)
    else:
        report = validation.trend_case(seeds=range(args.seeds), iterations=args.iters)
    print(json.dumps(report, indent=2))
    print(f"{args.case}: {'PASS' if report['passed'] else 'FAIL'}")
    return 0 if report["passed"] else EXIT_VALIDATION


# --- parser ----------------------------------------------------------------------


def _add_common(p: argparse.ArgumentParser, plan_args: bool = True) -> None:
    p.add_argument("--scene", required=True, type=Path)
    p.add_argument("--out", required=True)
    p.add_argument("--camera", type=_camera_pitch, default=0.0, help="down | pitch:<deg>")
    p.add_argument("--image-scale", type=float, default=1.0,
                   help="resample the default 188x120 camera by this factor")
    p.add_argument("--sigma-i", type=float, default=0.05)
    p.add_argument("--fisher-stride", type=int, default=2)
    if not plan_args:
        return
    p.add_argument("--start", type=_state, required=True, help="x,y,z[,yaw]")
    p.add_argument("--goal", type=_state, required=True, help="x,y,z[,yaw]")
    p.add_argument("--alpha", type=_alpha, default=0.5)
    p.add_argument("--iters", type=int, default=2500)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--collision-radius", type=float, default=0.3)
    p.add_argument("--gamma", type=float, default=12.0)
    p.add_argument("--max-edge", type=float, default=None)
    p.add_argument("--sigma-odo", default=None, help="six diagonal entries, comma separated")
    p.add_argument("--with-yaw", action="store_true", help="plan over (x, y, z, yaw)")
    p.add_argument("--z-range", type=float, nargs=2, default=None, metavar=("ZMIN", "ZMAX"))


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="percaware", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("scene", help="write a bundled scenario")
    p.add_argument("--name", choices=sorted(scenarios.GENERATORS), required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_scene)

    p = sub.add_parser("plan", help="plan on a fully known scene")
    _add_common(p)
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("heatmap", help="information gain over an x-y grid")
    _add_common(p, plan_args=False)
    p.add_argument("--height", type=float, default=2.0)
    p.add_argument("--resolution", type=float, default=0.5, help="grid spacing in meters")
    p.add_argument("--yaw", type=float, default=0.0)
    p.set_defaults(func=cmd_heatmap)

    p = sub.add_parser("mission", help="run the online exploration loop")
    _add_common(p)
    p.add_argument("--resolution", type=float, default=0.05, help="voxel size in meters")
    p.add_argument("--max-steps", type=int, default=200)
    p.set_defaults(func=cmd_mission)

    p = sub.add_parser("validate", help="run an oracle suite")
    p.add_argument("--case", choices=["fig3a", "fig3b", "jacobians", "table1-trend"],
                   required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--samples", type=int, default=100_000)
    p.add_argument("--seeds", type=int, default=10)
    p.add_argument("--iters", type=int, default=1000)
    p.set_defaults(func=cmd_validate)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
