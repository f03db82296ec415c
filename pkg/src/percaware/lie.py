"""SE(3)/SO(3) algebra and Gaussian pose compounding.

Conventions used throughout the package:

* Twists are 6-vectors ordered ``(rho, phi)``: translation part first, then
  rotation part.  Every 6x6 covariance or information matrix uses this order.
* A :class:`Pose` is the world-from-body transform ``T = [C r; 0 1]``.
* Uncertain poses are left-perturbed, ``T = exp(xi^) T_mean`` with
  ``xi ~ N(0, cov)``, so covariances live in the world-frame tangent space.

Most array helpers accept stacked inputs (``(..., 3)``, ``(..., 6)``,
``(..., 6, 6)``) so the planner and the Monte Carlo oracle can work on whole
batches at once.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import _compound

_SMALL_ANGLE = 1e-6


class AngleAtPi(ValueError):
    """Raised by :func:`log_map` when the rotation angle is (numerically) pi."""


class NotPSD(ValueError):
    """Raised when a covariance is not symmetric positive semi-definite."""


def _frozen(a) -> np.ndarray:
    out = np.array(a, dtype=float)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class Rotation:
    matrix: np.ndarray

    def __post_init__(self):
        C = _frozen(self.matrix)
        if C.shape != (3, 3) or not np.all(np.isfinite(C)):
            raise ValueError("rotation must be a finite 3x3 matrix")
        if np.linalg.norm(C @ C.T - np.eye(3)) > 1e-9 or abs(np.linalg.det(C) - 1.0) > 1e-9:
            raise ValueError("matrix is not in SO(3)")
        object.__setattr__(self, "matrix", C)

    @classmethod
    def identity(cls) -> "Rotation":
        return cls(np.eye(3))

    @classmethod
    def about_z(cls, angle: float) -> "Rotation":
        c, s = np.cos(angle), np.sin(angle)
        return cls(np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]]))


@dataclass(frozen=True)
class Twist:
    rho: np.ndarray
    phi: np.ndarray

    def __post_init__(self):
        rho, phi = _frozen(self.rho), _frozen(self.phi)
        if rho.shape != (3,) or phi.shape != (3,):
            raise ValueError("rho and phi must be 3-vectors")
        if not (np.all(np.isfinite(rho)) and np.all(np.isfinite(phi))):
            raise ValueError("twist entries must be finite")
        object.__setattr__(self, "rho", rho)
        object.__setattr__(self, "phi", phi)

    @classmethod
    def from_vector(cls, xi) -> "Twist":
        xi = np.asarray(xi, dtype=float)
        return cls(xi[:3], xi[3:])

    @property
    def vector(self) -> np.ndarray:
        return np.concatenate([self.rho, self.phi])


@dataclass(frozen=True)
class Pose:
    """Rigid transform; ``rotation`` and ``translation`` are world-from-body."""

    rotation: Rotation
    translation: np.ndarray

    def __post_init__(self):
        if not isinstance(self.rotation, Rotation):
            object.__setattr__(self, "rotation", Rotation(self.rotation))
        r = _frozen(self.translation)
        if r.shape != (3,) or not np.all(np.isfinite(r)):
            raise ValueError("translation must be a finite 3-vector")
        object.__setattr__(self, "translation", r)

    @classmethod
    def identity(cls) -> "Pose":
        return cls(Rotation.identity(), np.zeros(3))

    @classmethod
    def from_matrix(cls, T) -> "Pose":
        T = np.asarray(T, dtype=float)
        if T.shape != (4, 4) or np.abs(T[3] - [0, 0, 0, 1]).max() > 1e-9:
            raise ValueError("not a homogeneous 4x4 transform")
        return cls(Rotation(T[:3, :3]), T[:3, 3])

    @classmethod
    def from_xyz_yaw(cls, xyz, yaw: float = 0.0) -> "Pose":
        return cls(Rotation.about_z(yaw), xyz)

    @property
    def C(self) -> np.ndarray:
        return self.rotation.matrix

    @property
    def r(self) -> np.ndarray:
        return self.translation

    @property
    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.C
        T[:3, 3] = self.r
        return T

    def inverse(self) -> "Pose":
        Ct = self.C.T
        return Pose(Rotation(Ct), -Ct @ self.r)

    def __matmul__(self, other: "Pose") -> "Pose":
        return Pose(Rotation(self.C @ other.C), self.C @ other.r + self.r)


def check_covariance(cov, tol: float = 1e-9) -> np.ndarray:
    """Validate a 6x6 (or any square) covariance and return it as float array."""
    cov = np.asarray(cov, dtype=float)
    if cov.ndim != 2 or cov.shape[0] != cov.shape[1] or not np.all(np.isfinite(cov)):
        raise NotPSD("covariance must be a finite square matrix")
    scale = max(1.0, float(np.abs(cov).max()))
    if np.abs(cov - cov.T).max() > tol * scale:
        raise NotPSD("covariance is not symmetric")
    if np.linalg.eigvalsh(0.5 * (cov + cov.T)).min() < -tol * scale:
        raise NotPSD("covariance has negative eigenvalues")
    return cov


def repair_psd(cov: np.ndarray) -> np.ndarray:
    """Symmetrize and clamp negative eigenvalues to zero.

    Stacked inputs are repaired element by element, so a matrix that is already
    PSD comes back as its exact symmetric part whatever else is in the batch.
    """
    sym = 0.5 * (cov + np.swapaxes(cov, -1, -2))
    bad = np.linalg.eigvalsh(sym).min(axis=-1) < 0.0
    if not np.any(bad):
        return sym
    w, V = np.linalg.eigh(sym[bad])
    w = np.clip(w, 0.0, None)
    fixed = (V * w[..., None, :]) @ np.swapaxes(V, -1, -2)
    out = sym.copy()
    out[bad] = 0.5 * (fixed + np.swapaxes(fixed, -1, -2))
    return out


@dataclass(frozen=True)
class GaussianPose:
    mean: Pose
    cov: np.ndarray

    def __post_init__(self):
        cov = check_covariance(self.cov)
        if cov.shape != (6, 6):
            raise ValueError("pose covariance must be 6x6")
        object.__setattr__(self, "cov", _frozen(cov))


# --- hat / vee ---------------------------------------------------------------


def skew(v) -> np.ndarray:
    """so(3) hat for stacked 3-vectors: (..., 3) -> (..., 3, 3)."""
    v = np.asarray(v, dtype=float)
    out = np.zeros(v.shape[:-1] + (3, 3))
    out[..., 0, 1] = -v[..., 2]
    out[..., 0, 2] = v[..., 1]
    out[..., 1, 0] = v[..., 2]
    out[..., 1, 2] = -v[..., 0]
    out[..., 2, 0] = -v[..., 1]
    out[..., 2, 1] = v[..., 0]
    return out


def hat(v) -> np.ndarray:
    """Map a 3-vector to so(3) or a 6-vector / Twist to se(3)."""
    if isinstance(v, Twist):
        v = v.vector
    v = np.asarray(v, dtype=float)
    if not np.all(np.isfinite(v)):
        raise ValueError("hat requires finite input")
    if v.shape[-1] == 3:
        return skew(v)
    if v.shape[-1] == 6:
        out = np.zeros(v.shape[:-1] + (4, 4))
        out[..., :3, :3] = skew(v[..., 3:])
        out[..., :3, 3] = v[..., :3]
        return out
    raise ValueError("hat expects a 3- or 6-vector")


def vee(M, tol: float = 1e-9) -> np.ndarray:
    """Inverse of :func:`hat` for 3x3 skew or 4x4 twist matrices."""
    M = np.asarray(M, dtype=float)
    if M.shape == (3, 3):
        if np.abs(M + M.T).max() > tol:
            raise ValueError("matrix is not skew-symmetric")
        return np.array([M[2, 1], M[0, 2], M[1, 0]])
    if M.shape == (4, 4):
        if np.abs(M[3]).max() > tol:
            raise ValueError("bottom row of a twist matrix must be zero")
        return np.concatenate([M[:3, 3], vee(M[:3, :3], tol)])
    raise ValueError("vee expects a 3x3 or 4x4 matrix")


# --- exponential / logarithm -------------------------------------------------


def _so3_coeffs(theta: np.ndarray):
    """Return sin(t)/t, (1-cos t)/t^2, (t - sin t)/t^3 with series near zero."""
    small = theta < _SMALL_ANGLE
    t = np.where(small, 1.0, theta)
    t2 = theta * theta
    a = np.where(small, 1.0 - t2 / 6.0, np.sin(t) / t)
    b = np.where(small, 0.5 - t2 / 24.0, (1.0 - np.cos(t)) / (t * t))
    c = np.where(small, 1.0 / 6.0 - t2 / 120.0, (t - np.sin(t)) / (t * t * t))
    return a, b, c


def so3_exp(phi) -> np.ndarray:
    """Rodrigues formula for stacked rotation vectors."""
    phi = np.asarray(phi, dtype=float)
    theta = np.linalg.norm(phi, axis=-1)
    a, b, _ = _so3_coeffs(theta)
    K = skew(phi)
    return np.eye(3) + a[..., None, None] * K + b[..., None, None] * (K @ K)


def so3_left_jacobian(phi) -> np.ndarray:
    phi = np.asarray(phi, dtype=float)
    theta = np.linalg.norm(phi, axis=-1)
    _, b, c = _so3_coeffs(theta)
    K = skew(phi)
    return np.eye(3) + b[..., None, None] * K + c[..., None, None] * (K @ K)


def so3_left_jacobian_inv(phi) -> np.ndarray:
    phi = np.asarray(phi, dtype=float)
    theta = np.linalg.norm(phi, axis=-1)
    small = theta < 1e-4
    t = np.where(small, 1.0, theta)
    # (1 - (t/2) cot(t/2)) / t^2
    d = np.where(small, 1.0 / 12.0 + theta**2 / 720.0,
                 (1.0 - 0.5 * t * np.cos(0.5 * t) / np.sin(0.5 * t)) / (t * t))
    K = skew(phi)
    return np.eye(3) - 0.5 * K + d[..., None, None] * (K @ K)


def so3_log(C, strict: bool = True) -> np.ndarray:
    """Rotation vector of stacked rotation matrices.

    With ``strict`` an :class:`AngleAtPi` error is raised for angles within
    about 1e-5 rad of pi; otherwise the axis is recovered from the symmetric
    part (the branch sign there is arbitrary).
    """
    C = np.asarray(C, dtype=float)
    shape = C.shape[:-2]
    C = C.reshape(-1, 3, 3)
    tr = np.trace(C, axis1=-2, axis2=-1)
    w = np.stack([C[..., 2, 1] - C[..., 1, 2],
                  C[..., 0, 2] - C[..., 2, 0],
                  C[..., 1, 0] - C[..., 0, 1]], axis=-1)
    near_pi = (tr + 1.0) < 1e-10
    if strict and np.any(near_pi):
        raise AngleAtPi("rotation angle is pi; logarithm is not unique")
    sin_t = 0.5 * np.linalg.norm(w, axis=-1)
    cos_t = np.clip(0.5 * (tr - 1.0), -1.0, 1.0)
    theta = np.arctan2(sin_t, cos_t)
    small = theta < _SMALL_ANGLE
    scale = np.where(small, 0.5 + theta**2 / 12.0,
                     theta / (2.0 * np.where(small, 1.0, np.maximum(sin_t, 1e-300))))
    phi = scale[..., None] * w
    # near pi the antisymmetric part vanishes; take the axis from C + C^T
    hard = cos_t < -0.99
    if np.any(hard):
        idx = np.nonzero(hard)
        Ch = C[idx]
        S = 0.5 * (Ch + np.swapaxes(Ch, -1, -2)) + np.eye(3)
        S = S - (1.0 + cos_t[idx])[..., None, None] * np.eye(3)
        cols = np.argmax(np.linalg.norm(S, axis=-2), axis=-1)
        axis = np.take_along_axis(S, cols[:, None, None], axis=-1)[..., 0]
        axis /= np.linalg.norm(axis, axis=-1, keepdims=True)
        sign = np.sign(np.einsum("ni,ni->n", axis, w[idx]))
        sign = np.where(sign == 0, 1.0, sign)
        phi[idx] = (theta[idx] * sign)[:, None] * axis
    return phi.reshape(shape + (3,))


def exp_batch(xi) -> tuple[np.ndarray, np.ndarray]:
    """Stacked SE(3) exponential returning ``(C, r)`` arrays."""
    xi = np.asarray(xi, dtype=float)
    rho, phi = xi[..., :3], xi[..., 3:]
    C = so3_exp(phi)
    r = np.einsum("...ij,...j->...i", so3_left_jacobian(phi), rho)
    return C, r


def log_batch(C, r, strict: bool = False) -> np.ndarray:
    phi = so3_log(C, strict=strict)
    rho = np.einsum("...ij,...j->...i", so3_left_jacobian_inv(phi), r)
    return np.concatenate([rho, phi], axis=-1)


def exp_map(xi) -> Pose:
    if isinstance(xi, Twist):
        xi = xi.vector
    C, r = exp_batch(np.asarray(xi, dtype=float))
    return Pose(Rotation(C), r)


def log_map(T: Pose) -> Twist:
    return Twist.from_vector(log_batch(T.C, T.r, strict=True))


# --- adjoint -----------------------------------------------------------------


def adjoint_from(C, r) -> np.ndarray:
    """Stacked SE(3) adjoint ``[C, r^C; 0, C]``."""
    C = np.asarray(C, dtype=float)
    r = np.asarray(r, dtype=float)
    out = np.zeros(C.shape[:-2] + (6, 6))
    out[..., :3, :3] = C
    out[..., 3:, 3:] = C
    out[..., :3, 3:] = skew(r) @ C
    return out


def adjoint(T: Pose) -> np.ndarray:
    return adjoint_from(T.C, T.r)


def act_on_point(T: Pose, q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    if not np.all(np.isfinite(q)):
        raise ValueError("point must be finite")
    return q @ T.C.T + T.r


# --- compounding -------------------------------------------------------------


def _dbl(A: np.ndarray) -> np.ndarray:
    """<<A>> = -tr(A) 1 + A for stacked 3x3 blocks."""
    tr = np.trace(A, axis1=-2, axis2=-1)
    return A - tr[..., None, None] * np.eye(3)


def _dbl2(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """<<A, B>> = <<A>><<B>> + <<BA>>."""
    return _dbl(A) @ _dbl(B) + _dbl(B @ A)


def _dbl6(S: np.ndarray) -> np.ndarray:
    """The 6x6 operator built from the blocks of ``S``."""
    out = np.zeros(S.shape)
    d22 = _dbl(S[..., 3:, 3:])
    out[..., :3, :3] = d22
    out[..., 3:, 3:] = d22
    out[..., :3, 3:] = _dbl(S[..., :3, 3:] + S[..., 3:, :3])
    return out


def compound_covariance(cov1: np.ndarray, cov2_world: np.ndarray, order: int = 4) -> np.ndarray:
    """Covariance of ``exp(xi1^) exp(xi2'^)`` with ``xi2' = Ad(T1) xi2``.

    ``cov2_world`` must already be transported by the adjoint of the first mean.
    Works on stacked ``(..., 6, 6)`` inputs; no PSD repair is applied here.
    """
    if order == 2:
        return cov1 + cov2_world
    if order != 4:
        raise ValueError("order must be 2 or 4")
    return _compound.compound4_any(cov1, cov2_world)


def compound_covariance_reference(cov1: np.ndarray, cov2_world: np.ndarray,
                                  order: int = 4) -> np.ndarray:
    """Plain numpy evaluation of :func:`compound_covariance`, kept as the oracle."""
    out = cov1 + cov2_world
    if order == 2:
        return out
    if order != 4:
        raise ValueError("order must be 2 or 4")
    S1, S2 = cov1, cov2_world
    s1_rr, s1_rp, s1_pp = S1[..., :3, :3], S1[..., :3, 3:], S1[..., 3:, 3:]
    s2_rr, s2_rp, s2_pp = S2[..., :3, :3], S2[..., :3, 3:], S2[..., 3:, 3:]
    s1_pr = np.swapaxes(s1_rp, -1, -2)
    s2_pr = np.swapaxes(s2_rp, -1, -2)

    B = np.zeros(S1.shape)
    B_rr = (_dbl2(s1_pp, s2_rr) + _dbl2(s1_pr, s2_rp)
            + _dbl2(s1_rp, s2_pr) + _dbl2(s1_rr, s2_pp))
    B_rp = _dbl2(s1_pp, s2_pr) + _dbl2(s1_pr, s2_pp)
    B[..., :3, :3] = B_rr
    B[..., :3, 3:] = B_rp
    B[..., 3:, :3] = np.swapaxes(B_rp, -1, -2)
    B[..., 3:, 3:] = _dbl2(s1_pp, s2_pp)

    A1 = _dbl6(S1)
    A2 = _dbl6(S2)
    t = lambda M: np.swapaxes(M, -1, -2)  # noqa: E731
    corr = (A1 @ S2 + S2 @ t(A1) + A2 @ S1 + S1 @ t(A2)) / 12.0
    return out + 0.25 * B + corr


def propagate(prior: GaussianPose, motion: GaussianPose, order: int = 4) -> GaussianPose:
    """Compose a world pose belief with a relative motion belief."""
    mean = prior.mean @ motion.mean
    Ad = adjoint(prior.mean)
    cov2 = Ad @ motion.cov @ Ad.T
    cov = compound_covariance(np.asarray(prior.cov), cov2, order)
    return GaussianPose(mean, repair_psd(cov))


def propagate_chain(prior: GaussianPose, motions: Sequence[GaussianPose],
                    order: int = 4) -> GaussianPose:
    belief = prior
    for m in motions:
        belief = propagate(belief, m, order)
    return belief


# --- Monte Carlo oracle ------------------------------------------------------


def _sqrt_psd(cov: np.ndarray) -> np.ndarray:
    w, V = np.linalg.eigh(0.5 * (cov + cov.T))
    return V * np.sqrt(np.clip(w, 0.0, None))


@dataclass(frozen=True)
class MonteCarloResult:
    cov: np.ndarray
    samples: np.ndarray  # tangent-space samples about the analytic mean, (N, 6)
    positions: np.ndarray  # sampled final positions, (N, 3)
    mean: Pose
    snapshots: dict  # step -> (N, 3) sampled positions


def mc_propagate(prior: GaussianPose, motions: Sequence[GaussianPose], samples: int = 100_000,
                 seed: int = 0, record_every: int | None = None) -> MonteCarloResult:
    """Sample-based compounding used to validate :func:`propagate`.

    Each sample draws ``xi ~ N(0, cov)`` for the prior and every motion and
    chains ``exp(xi^) T_mean`` factors.  The returned covariance is the second
    moment of ``log(T_sample T_mean^-1)`` about the analytic mean.
    """
    if samples < 10_000:
        raise ValueError("mc_propagate needs at least 1e4 samples")
    rng = np.random.default_rng(seed)

    def draw(cov):
        return rng.standard_normal((samples, 6)) @ _sqrt_psd(np.asarray(cov)).T

    dC, dr = exp_batch(draw(prior.cov))
    C = dC @ prior.mean.C
    r = np.einsum("nij,j->ni", dC, prior.mean.r) + dr
    mean = prior.mean
    snapshots = {}
    for k, m in enumerate(motions, start=1):
        eC, er = exp_batch(draw(m.cov))
        mC = eC @ m.mean.C
        mr = np.einsum("nij,j->ni", eC, m.mean.r) + er
        r = np.einsum("nij,nj->ni", C, mr) + r
        C = C @ mC
        mean = mean @ m.mean
        if record_every and k % record_every == 0:
            snapshots[k] = r.copy()
    # T T_mean^-1 = [C Cm^T, r - C Cm^T rm]
    Cm_t = mean.C.T
    dC = C @ Cm_t
    d_r = r - np.einsum("nij,j->ni", dC, mean.r)
    xi = log_batch(dC, d_r, strict=False)
    cov = xi.T @ xi / samples
    return MonteCarloResult(cov=0.5 * (cov + cov.T), samples=xi, positions=r, mean=mean,
                            snapshots=snapshots)


def relative_frobenius_error(estimate, reference) -> float:
    return float(np.linalg.norm(np.asarray(estimate) - reference) / np.linalg.norm(reference))
