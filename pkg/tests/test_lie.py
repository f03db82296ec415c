import numpy as np
import pytest

from percaware.lie import (AngleAtPi, GaussianPose, NotPSD, Pose, Rotation, adjoint,
                           act_on_point, check_covariance, compound_covariance,
                           compound_covariance_reference, exp_map, hat, log_map, mc_propagate,
                           propagate, propagate_chain, relative_frobenius_error, repair_psd,
                           so3_exp, so3_left_jacobian, so3_log, vee)


def random_pose(rng):
    return exp_map(rng.normal(size=6))


def random_cov(rng, scale=0.1):
    A = rng.normal(size=(6, 6)) * scale
    return A @ A.T


def test_exp_log_roundtrip():
    rng = np.random.default_rng(1)
    for _ in range(50):
        xi = rng.normal(size=6)
        xi[3:] *= 2.5 / max(np.linalg.norm(xi[3:]), 1.0)
        np.testing.assert_allclose(log_map(exp_map(xi)).vector, xi, atol=1e-9)


def test_exp_matches_matrix_exponential():
    from scipy.linalg import expm

    rng = np.random.default_rng(2)
    for _ in range(10):
        xi = rng.normal(size=6)
        np.testing.assert_allclose(exp_map(xi).matrix, expm(hat(xi)), atol=1e-10)


def test_small_angle_branch_is_smooth():
    for th in (1e-12, 1e-9, 1e-6, 1e-3):
        phi = np.array([th, 0.0, 0.0])
        np.testing.assert_allclose(so3_log(so3_exp(phi)), phi, rtol=1e-6, atol=1e-15)


def test_log_at_pi_raises_in_strict_mode():
    C = so3_exp([np.pi, 0.0, 0.0])
    with pytest.raises(AngleAtPi):
        so3_log(C)
    assert abs(np.linalg.norm(so3_log(C, strict=False)) - np.pi) < 1e-6


def test_hat_vee_roundtrip():
    xi = np.arange(1.0, 7.0)
    np.testing.assert_array_equal(vee(hat(xi)), xi)
    np.testing.assert_array_equal(vee(hat(xi[:3])), xi[:3])


def test_adjoint_identity():
    # T exp(xi) = exp(Ad(T) xi) T
    rng = np.random.default_rng(3)
    T = random_pose(rng)
    xi = rng.normal(size=6) * 0.3
    left = T @ exp_map(xi)
    right = exp_map(adjoint(T) @ xi) @ T
    np.testing.assert_allclose(left.matrix, right.matrix, atol=1e-10)


def test_left_jacobian_finite_difference():
    rng = np.random.default_rng(4)
    phi = rng.normal(size=3)
    J = so3_left_jacobian(phi)
    h = 1e-6
    for i in range(3):
        d = np.zeros(3)
        d[i] = h
        # exp(phi + d) ~ exp(J d) exp(phi)
        fd = so3_log(so3_exp(phi + d) @ so3_exp(phi).T) / h
        np.testing.assert_allclose(fd, J[:, i], atol=1e-5)


def test_act_on_point():
    T = Pose.from_xyz_yaw([1.0, 2.0, 3.0], np.pi / 2)
    np.testing.assert_allclose(act_on_point(T, [1.0, 0.0, 0.0]), [1.0, 3.0, 3.0], atol=1e-12)


def test_rotation_validation():
    with pytest.raises(ValueError):
        Rotation(np.diag([1.0, 1.0, -1.0]))
    with pytest.raises(ValueError):
        Pose.from_xyz_yaw([np.nan, 0.0, 0.0])


def test_check_covariance_rejects_bad_input():
    with pytest.raises(NotPSD):
        check_covariance(np.diag([1.0, -1.0]))
    with pytest.raises(NotPSD):
        check_covariance(np.array([[1.0, 0.5], [0.0, 1.0]]))


def test_repair_psd_per_element():
    good = np.diag(np.arange(1.0, 7.0))
    bad = good.copy()
    bad[0, 0] = -1.0
    out = repair_psd(np.stack([good, bad]))
    np.testing.assert_array_equal(out[0], good)
    assert np.linalg.eigvalsh(out[1]).min() >= -1e-15


def test_compound_kernel_matches_reference():
    rng = np.random.default_rng(5)
    a = np.stack([random_cov(rng) for _ in range(8)])
    b = np.stack([random_cov(rng) for _ in range(8)])
    ref = compound_covariance_reference(a, b, order=4)
    np.testing.assert_allclose(compound_covariance(a, b, order=4), ref, rtol=1e-12, atol=1e-15)
    # a single prior broadcast against a batch of motions
    np.testing.assert_allclose(compound_covariance(a[0], b, order=4),
                               compound_covariance_reference(np.repeat(a[:1], 8, 0), b, 4),
                               rtol=1e-12, atol=1e-15)


def test_order2_is_plain_sum():
    rng = np.random.default_rng(6)
    a, b = random_cov(rng), random_cov(rng)
    np.testing.assert_allclose(compound_covariance(a, b, order=2), a + b)


def test_zero_motion_noise_only_transports():
    rng = np.random.default_rng(7)
    prior = GaussianPose(random_pose(rng), random_cov(rng))
    motion = GaussianPose(random_pose(rng), np.zeros((6, 6)))
    out = propagate(prior, motion)
    np.testing.assert_allclose(out.cov, prior.cov, atol=1e-14)
    np.testing.assert_allclose(out.mean.matrix, (prior.mean @ motion.mean).matrix)


def test_fourth_order_beats_second_order_small_noise():
    # mild noise keeps the truncation regime; the oracle is Monte Carlo
    prior = GaussianPose(Pose.identity(), np.diag([0.01, 0.01, 0.01, 0.002, 0.002, 0.01]))
    motion = GaussianPose(Pose.from_xyz_yaw([1.0, 0.0, 0.0], 0.1),
                          np.diag([0.01, 0.01, 0.01, 0.001, 0.001, 0.01]))
    mc = mc_propagate(prior, [motion] * 10, samples=100_000, seed=3)
    e2 = relative_frobenius_error(propagate_chain(prior, [motion] * 10, 2).cov, mc.cov)
    e4 = relative_frobenius_error(propagate_chain(prior, [motion] * 10, 4).cov, mc.cov)
    assert e4 < e2
    assert e4 < 0.05


def test_mc_requires_enough_samples():
    g = GaussianPose(Pose.identity(), np.eye(6) * 0.01)
    with pytest.raises(ValueError):
        mc_propagate(g, [g], samples=100)
