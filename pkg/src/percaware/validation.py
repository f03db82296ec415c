"""Oracle harnesses behind ``percaware validate``."""

from __future__ import annotations

import time

import numpy as np
from scipy import stats

from .camera import DEFAULT_INTRINSICS, Intrinsics, project, projection_jacobian
from .lie import (GaussianPose, Pose, exp_map, mc_propagate, propagate_chain,
                  relative_frobenius_error)
from .photometric import pixel_jacobian
from .planner import (CameraConfig, InformationModel, PlannerConfig, PlanState, plan)
from .scenarios import two_texture

# odometry covariance for the climbing-turn propagation case and the alpha sweep
DRIFT_SIGMA_ODO = np.diag([0.01, 0.01, 0.01, 0.001, 0.001, 0.03])
TOLERANCE_MC = 0.15


def propagation_case(case: str, samples: int = 100_000, seed: int = 0, steps: int = 100) -> dict:
    """Analytic (orders 2 and 4) versus Monte Carlo covariance after ``steps`` motions."""
    if case == "fig3a":
        prior = GaussianPose(Pose.identity(), np.zeros((6, 6)))
        motion = GaussianPose(Pose.from_xyz_yaw([1.0, 0.0, 0.0]),
                              np.diag([0, 0, 0, 0, 0, 0.03]))
    elif case == "fig3b":
        prior = GaussianPose(Pose.from_xyz_yaw([0.0, 0.0, 0.0], np.pi / 8), np.zeros((6, 6)))
        motion = GaussianPose(Pose.from_xyz_yaw([1.0, 0.0, 0.1]), DRIFT_SIGMA_ODO)
    else:
        raise ValueError(f"unknown propagation case {case!r}")
    motions = [motion] * steps
    t0 = time.perf_counter()
    mc = mc_propagate(prior, motions, samples=samples, seed=seed)
    a2 = propagate_chain(prior, motions, order=2).cov
    a4 = propagate_chain(prior, motions, order=4).cov
    runtime = time.perf_counter() - t0
    out = {"case": case, "err_order2": relative_frobenius_error(a2, mc.cov),
           "err_order4": relative_frobenius_error(a4, mc.cov), "runtime_s": runtime,
           "corr_y_yaw": float(np.corrcoef(mc.positions[:, 1], mc.samples[:, 5])[0, 1])}
    out["passed"] = bool(out["err_order4"] <= TOLERANCE_MC and out["err_order4"] <= out["err_order2"]
                         and runtime < 60.0
                         and (case == "fig3a" or abs(out["corr_y_yaw"]) > 0.5))
    return out


class SmoothField:
    """Analytic intensity ``I(u, v)`` with exact gradient, for derivative checks."""

    def __init__(self, rng: np.random.Generator, terms: int = 4):
        self.k = rng.uniform(0.02, 0.3, size=(terms, 2)) * rng.choice([-1, 1], size=(terms, 2))
        self.phase = rng.uniform(0, 2 * np.pi, terms)
        self.amp = rng.uniform(0.05, 0.2, terms)

    def __call__(self, px):
        px = np.asarray(px, float)
        return 0.5 + np.sum(self.amp * np.sin(px @ self.k.T + self.phase), axis=-1)

    def gradient(self, px):
        px = np.asarray(px, float)
        return np.cos(px @ self.k.T + self.phase) * self.amp @ self.k


def jacobian_case(trials: int = 200, seed: int = 0, K: Intrinsics = DEFAULT_INTRINSICS) -> dict:
    """Worst relative error of the analytic Jacobians against central differences."""
    rng = np.random.default_rng(seed)
    worst_pix = 0.0
    worst_proj = 0.0
    for _ in range(trials):
        field = SmoothField(rng)
        z = rng.uniform(0.5, 5.0)
        px = rng.uniform([10, 10], [K.width - 10, K.height - 10])
        p = np.array([(px[0] - K.cx) * z / K.fx, (px[1] - K.cy) * z / K.fy, z])
        J = pixel_jacobian(field.gradient(project(K, p)), K, p)
        h = 1e-5
        fd = np.empty(6)
        for i in range(6):
            e = np.zeros(6)
            e[i] = h
            fp = field(project(K, exp_map(e).C @ p + exp_map(e).r))
            fm = field(project(K, exp_map(-e).C @ p + exp_map(-e).r))
            fd[i] = (fp - fm) / (2 * h)
        worst_pix = max(worst_pix, np.linalg.norm(J - fd) / max(np.linalg.norm(fd), 1e-12))
        P = projection_jacobian(K, p)
        fdp = np.empty((2, 3))
        for i in range(3):
            e = np.zeros(3)
            e[i] = 1e-6
            fdp[:, i] = (project(K, p + e) - project(K, p - e)) / 2e-6
        worst_proj = max(worst_proj, np.linalg.norm(P - fdp) / np.linalg.norm(fdp))
    return {"case": "jacobians", "trials": trials, "pixel_rel_err": float(worst_pix),
            "projection_rel_err": float(worst_proj),
            "passed": bool(worst_pix < 1e-3 and worst_proj < 1e-3)}


SWEEP_ALPHAS = tuple(round(0.05 + 0.1 * i, 2) for i in range(10))


def alpha_sweep(seeds=range(10), alphas=SWEEP_ALPHAS, iterations: int = 1000,
                camera: CameraConfig | None = None, sigma_odo=DRIFT_SIGMA_ODO,
                progress=None) -> dict:
    """Mean path length, mean WTr and goal WTr per alpha on the two-texture scene."""
    sc = two_texture()
    camera = camera or CameraConfig(DEFAULT_INTRINSICS.scaled(0.5))
    rows = {a: [] for a in alphas}
    for seed in seeds:
        info = InformationModel(sc.scene, camera)  # the vertex set does not depend on alpha
        for a in alphas:
            cfg = PlannerConfig(alpha=a, iterations=iterations, seed=seed, sigma_odo=sigma_odo)
            res = plan(PlanState(sc.start), np.zeros((6, 6)), PlanState(sc.goal), sc.scene, cfg,
                       camera, info=info)
            rows[a].append(res.path.summary())
            if progress:
                progress(seed, a, rows[a][-1])
    table = {a: {k: float(np.mean([r[k] for r in rs])) for k in ("length", "mean_wtr", "goal_wtr")}
             for a, rs in rows.items()}
    return {"table": table, "runs": rows}


def trend_case(seeds=range(10), iterations: int = 1000, camera: CameraConfig | None = None,
               progress=None) -> dict:
    alphas = tuple(sorted(set(SWEEP_ALPHAS) | {0.1, 0.9}))
    sweep = alpha_sweep(seeds, alphas, iterations, camera, progress=progress)
    tab = sweep["table"]
    xs = list(SWEEP_ALPHAS)
    rho_len = stats.spearmanr(xs, [tab[a]["length"] for a in xs]).statistic
    rho_wtr = stats.spearmanr(xs, [tab[a]["mean_wtr"] for a in xs]).statistic
    ratio = tab[0.1]["mean_wtr"] / tab[0.9]["mean_wtr"]
    return {"case": "table1-trend", "spearman_length": float(rho_len),
            "spearman_wtr": float(rho_wtr), "wtr_ratio_0.1_over_0.9": float(ratio),
            "table": {str(a): v for a, v in tab.items()},
            "passed": bool(rho_len <= -0.8 and rho_wtr >= 0.8 and ratio <= 0.5)}
