"""Dense photometric alignment and per-viewpoint Fisher information.

Pose perturbations follow the left convention on the camera-from-world
transform, ``T_cw <- exp(xi^) T_cw``, so a camera-frame point moves as
``p' = p + rho + phi x p``.  :func:`fisher_information` can also express the
result as a left perturbation of the world-from-camera pose, which is the
frame the planner's beliefs live in.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .camera import (Intrinsics, View, backproject, bilinear, camera_pose, grid_gradient,
                     project, projection_jacobian, write_pgm)
from .lie import Pose, adjoint, exp_map, repair_psd, skew
from .scene import Bounds, SceneModel, render_view

DEFAULT_SIGMA_I = 0.05


class NoValidPixels(ValueError):
    pass


class NotObservable(RuntimeError):
    pass


class Diverged(RuntimeError):
    pass


# --- residuals and Jacobians ---------------------------------------------------


def _warp(synth: View, T_est: Pose):
    """Synth pixels and their camera-frame points mapped into the estimate's camera."""
    K = synth.intrinsics
    v, u = np.nonzero(synth.valid)
    px = np.stack([u, v], axis=-1).astype(float)
    p_s = backproject(K, px, synth.depth[v, u])
    world = p_s @ synth.pose.C.T + synth.pose.r
    p_e = (world - T_est.r) @ T_est.C
    return px, p_e


def residuals(observed: np.ndarray, synth: View, T_est: Pose) -> np.ndarray:
    """``I_obs(px') - I_synth(px)`` over valid synth pixels landing inside the guard band."""
    K = synth.intrinsics
    if observed.shape != synth.image.shape:
        raise ValueError("observed and synthetic images differ in size")
    px, p = _warp(synth, T_est)
    front = p[:, 2] > 1e-6
    px, p = px[front], p[front]
    if len(p) == 0:
        raise NoValidPixels("no synthetic pixel is visible from the estimate")
    q = project(K, p)
    h, w = observed.shape
    inside = (q[:, 0] >= 1) & (q[:, 0] <= w - 2) & (q[:, 1] >= 1) & (q[:, 1] <= h - 2)
    if not inside.any():
        raise NoValidPixels("no warped pixel lands inside the image")
    q, px = q[inside], px[inside].astype(np.intp)
    return bilinear(observed, q[:, 0], q[:, 1]) - synth.image[px[:, 1], px[:, 0]]


def pixel_jacobians(grad: np.ndarray, K: Intrinsics, p_cam: np.ndarray) -> np.ndarray:
    """Stacked rows ``grad^T d(pi)/dp [I | -p^]`` for ``(N, 2)`` gradients and ``(N, 3)`` points."""
    grad = np.asarray(grad, dtype=float)
    p_cam = np.asarray(p_cam, dtype=float)
    g = np.einsum("ni,nij->nj", grad, projection_jacobian(K, p_cam))
    return np.concatenate([g, np.einsum("ni,nij->nj", g, -skew(p_cam))], axis=-1)


def pixel_jacobian(grad, K: Intrinsics, p_cam) -> np.ndarray:
    """Intensity Jacobian of one pixel with respect to the camera twist, shape ``(6,)``."""
    return pixel_jacobians(np.asarray(grad, float)[None], K, np.asarray(p_cam, float)[None])[0]


# --- Fisher information ----------------------------------------------------------


def _information_pixels(view: View, stride: int):
    """Pixels with a valid depth and four valid neighbours, inside the guard band."""
    valid = view.valid
    ok = np.zeros_like(valid)
    ok[1:-1, 1:-1] = (valid[1:-1, 1:-1] & valid[:-2, 1:-1] & valid[2:, 1:-1]
                      & valid[1:-1, :-2] & valid[1:-1, 2:])
    sub = np.zeros_like(ok)
    off = stride // 2
    sub[off::stride, off::stride] = True
    v, u = np.nonzero(ok & sub)
    return u, v


def view_jacobians(view: View, stride: int = 1):
    """Per-pixel Jacobian rows of a view's own intensities (camera frame)."""
    u, v = _information_pixels(view, stride)
    gu, gv = grid_gradient(view.image)
    grad = np.stack([gu[v, u], gv[v, u]], axis=-1)
    px = np.stack([u, v], axis=-1).astype(float)
    p = backproject(view.intrinsics, px, view.depth[v, u])
    return pixel_jacobians(grad, view.intrinsics, p), u, v


def fisher_from_view(view: View, sigma_i: float = DEFAULT_SIGMA_I, stride: int = 2,
                     frame: str = "world") -> np.ndarray:
    """``(stride^2 / sigma_i^2) J^T J`` over the informative pixels of ``view``."""
    if sigma_i <= 0:
        raise ValueError("sigma_i must be positive")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    if frame not in ("world", "camera"):
        raise ValueError("frame must be 'world' or 'camera'")
    J, _, _ = view_jacobians(view, stride)
    lam = (stride * stride / (sigma_i * sigma_i)) * (J.T @ J)
    if frame == "world":
        Ad = adjoint(view.pose.inverse())
        lam = Ad.T @ lam @ Ad
    return 0.5 * (lam + lam.T)


def fisher_information(world, pose: Pose, K: Intrinsics, sigma_i: float = DEFAULT_SIGMA_I,
                       stride: int = 2, frame: str = "world") -> np.ndarray:
    """Fisher information of the view synthesized from ``world`` at camera pose ``pose``.

    ``frame="world"`` (default) returns it for a left perturbation of the
    world-from-camera pose; ``"camera"`` keeps the camera-frame twist.
    """
    if sigma_i <= 0:
        raise ValueError("sigma_i must be positive")
    if isinstance(world, SceneModel) and world.is_uniform:
        return np.zeros((6, 6))
    return fisher_from_view(render_view(world, pose, K), sigma_i, stride, frame)


def information_gain(lam: np.ndarray) -> float:
    return float(np.trace(lam))


def measurement_update(prior: np.ndarray, info: np.ndarray) -> np.ndarray:
    """Information-form fusion ``(Sigma^-1 + Lambda)^-1``.

    Evaluated as ``(I + Sigma Lambda)^-1 Sigma`` which is algebraically the same
    and stays defined for singular priors.
    """
    prior = np.asarray(prior, dtype=float)
    info = np.asarray(info, dtype=float)
    empty = ~np.any(info != 0.0, axis=(-2, -1))
    if np.all(empty):
        return np.array(np.broadcast_to(prior, np.broadcast_shapes(prior.shape, info.shape)))
    n = prior.shape[-1]
    post = repair_psd(np.linalg.solve(np.eye(n) + prior @ info, prior))
    return np.where(empty[..., None, None], prior, post)


def save_fisher_csv(path, lam: np.ndarray) -> None:
    np.savetxt(path, np.asarray(lam).reshape(6, 6), delimiter=",", fmt="%.17g")


def load_fisher_csv(path) -> np.ndarray:
    return np.loadtxt(path, delimiter=",").reshape(6, 6)


# --- alignment -----------------------------------------------------------------


@dataclass(frozen=True)
class AlignmentResult:
    pose: Pose  # world-from-camera
    iterations: int
    cost: float
    info: np.ndarray
    converged: bool
    costs: tuple = ()


def _linearize(observed: np.ndarray, synth: View):
    J, u, v = view_jacobians(View(observed, synth.depth, synth.pose, synth.intrinsics))
    r = observed[v, u] - synth.image[v, u]
    return J, r


def align(observed: np.ndarray, world, K: Intrinsics, T_init: Pose, max_iters: int = 30,
          tol: float = 1e-8, sigma_i: float = DEFAULT_SIGMA_I) -> AlignmentResult:
    """Gauss-Newton image-to-model alignment of ``observed`` starting at ``T_init``.

    Each iteration re-synthesizes the model at the current estimate and
    linearizes the photometric error there, using the gradient of the observed
    image.  A step that raises the mean squared residual is halved once; a second
    consecutive increase raises :class:`Diverged`.
    """
    T_cw = T_init.inverse()
    costs = []
    J, r = _linearize(observed, render_view(world, T_cw.inverse(), K))
    if len(r) == 0:
        raise NoValidPixels("no informative pixels at the initial estimate")
    cost = float(np.mean(r * r))
    costs.append(cost)
    converged = False
    it = 0
    rejected = 0
    scale = 1.0
    while it < max_iters:
        H = J.T @ J
        w = np.linalg.eigvalsh(H)
        if w[-1] <= 0 or w[0] / w[-1] < 1e-12:
            raise NotObservable("photometric error does not constrain every pose direction")
        xi = -np.linalg.solve(H, J.T @ r) * scale
        it += 1
        if np.linalg.norm(xi) < tol:
            converged = True
            break
        cand = exp_map(xi) @ T_cw
        Jc, rc = _linearize(observed, render_view(world, cand.inverse(), K))
        new_cost = float(np.mean(rc * rc)) if len(rc) else np.inf
        if new_cost > cost:
            rejected += 1
            if rejected >= 2:
                raise Diverged("cost increased on two consecutive steps")
            scale *= 0.5
            continue
        rejected = 0
        scale = 1.0
        T_cw, J, r, cost = cand, Jc, rc, new_cost
        costs.append(cost)
    lam = (1.0 / sigma_i**2) * (J.T @ J)
    return AlignmentResult(T_cw.inverse(), it, cost, 0.5 * (lam + lam.T), converged, tuple(costs))


# --- heatmaps ------------------------------------------------------------------


@dataclass(frozen=True)
class Heatmap:
    gain: np.ndarray  # [row = y, col = x]
    xs: np.ndarray
    ys: np.ndarray
    height: float
    resolution: float


def information_heatmap(world, bounds: Bounds, height: float, K: Intrinsics,
                        resolution: float = 0.5, yaw: float = 0.0, pitch_deg: float = 0.0,
                        sigma_i: float = DEFAULT_SIGMA_I, stride: int = 2) -> Heatmap:
    """``Tr(Lambda)`` on an x-y grid of camera positions at fixed height and attitude."""
    if resolution <= 0:
        raise ValueError("grid resolution must be positive")
    xs = np.arange(bounds.xmin, bounds.xmax + 1e-9, resolution)
    ys = np.arange(bounds.ymin, bounds.ymax + 1e-9, resolution)
    gain = np.zeros((len(ys), len(xs)))
    for j, y in enumerate(ys):
        for i, x in enumerate(xs):
            pose = camera_pose([x, y, height], yaw, pitch_deg)
            gain[j, i] = np.trace(fisher_information(world, pose, K, sigma_i, stride))
    return Heatmap(gain, xs, ys, height, resolution)


def write_heatmap(stem, hm: Heatmap) -> tuple[Path, Path]:
    """Normalized PGM (row 0 = lowest y) and a JSON sidecar with the raw range."""
    stem = Path(stem)
    lo, hi = float(hm.gain.min()), float(hm.gain.max())
    norm = (hm.gain - lo) / (hi - lo) if hi > lo else np.zeros_like(hm.gain)
    pgm = stem.with_suffix(".pgm")
    write_pgm(pgm, norm)
    side = stem.with_suffix(".json")
    side.write_text(json.dumps({
        "min": lo, "max": hi, "resolution": hm.resolution, "height": hm.height,
        "x0": float(hm.xs[0]), "y0": float(hm.ys[0]),
        "shape": list(hm.gain.shape)}, indent=2))
    return pgm, side


__all__ = ["AlignmentResult", "Diverged", "Heatmap", "NoValidPixels", "NotObservable",
           "align", "fisher_from_view", "fisher_information",
           "information_gain", "information_heatmap", "load_fisher_csv",
           "measurement_update", "pixel_jacobian", "pixel_jacobians", "residuals",
           "save_fisher_csv", "write_heatmap"]
