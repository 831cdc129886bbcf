import numpy as np
import pytest

from conftest import random_frame
from dimenet.bpnp import (
    NotStationary,
    bpnp_backward,
    bpnp_forward,
    loss_reprojection,
    pnp_layer_gradient,
    pose_hessians,
)
from dimenet.geometry import Correspondences, PnpConfig, solve_pnp


def perturbed_frame(rng, n=80, noise=2.0, dk=40.0):
    """Frame observed with one K, solved with another, so both residual and gradient are non-trivial."""
    k_true, pose, corrs = random_frame(rng, n=n, noise=noise)
    return k_true.shifted(rng.normal(0, dk, 4)), pose, corrs


def test_loss_examples(rng):
    k, pose, corrs = random_frame(rng, n=10)
    L, gk, gp = loss_reprojection(k, pose, corrs)
    assert L < 1e-18 and np.allclose(gk, 0, atol=1e-7) and np.allclose(gp, 0, atol=1e-7)
    px = corrs.pixels.copy()
    px[0] += [3.0, -4.0]
    L, _, _ = loss_reprojection(k, pose, Correspondences(px, corrs.points))
    assert L == pytest.approx(25.0, rel=1e-9)


def test_loss_gradients_finite_differences(rng):
    k, pose, corrs = perturbed_frame(rng, n=30)
    cfg = PnpConfig(pixel_covariance=[[1.5, 0.2], [0.2, 0.8]])
    L, gk, gp = loss_reprojection(k, pose, corrs, cfg)
    for j in range(4):
        e = np.zeros(4)
        e[j] = 1e-3
        fd = (loss_reprojection(k.shifted(e), pose, corrs, cfg)[0] - loss_reprojection(k.shifted(-e), pose, corrs, cfg)[0]) / 2e-3
        assert abs(fd - gk[j]) <= 1e-6 * max(abs(fd), 1.0)
    for j in range(6):
        e = np.zeros(6)
        e[j] = 1e-6
        fd = (loss_reprojection(k, pose.retract(e), corrs, cfg)[0] - loss_reprojection(k, pose.retract(-e), corrs, cfg)[0]) / 2e-6
        assert abs(fd - gp[j]) <= 1e-6 * max(abs(fd), abs(gp).max())


def test_forward_is_solve_pnp(rng):
    k, _, corrs = perturbed_frame(rng)
    pose, ctx = bpnp_forward(k, corrs)
    ref = solve_pnp(k, corrs)
    assert np.array_equal(pose.R, ref.R) and np.array_equal(pose.t, ref.t)
    assert ctx["pose"] is pose


def test_zero_upstream_gives_zero(rng):
    k, _, corrs = perturbed_frame(rng)
    pose = solve_pnp(k, corrs)
    assert bpnp_backward(k, corrs, pose, np.zeros(6)).tolist() == [0.0] * 4


def test_rejects_non_stationary_pose(rng):
    k, pose_true, corrs = perturbed_frame(rng)
    with pytest.raises(NotStationary):
        bpnp_backward(k, corrs, pose_true.retract([0.01, 0, 0, 0, 0, 0]), np.ones(6))


def _fd_total(k, corrs, j, eps=1e-4, init=None):
    e = np.zeros(4)
    e[j] = eps
    lp = pnp_layer_gradient(k.shifted(e), corrs, init=init)[0]
    lm = pnp_layer_gradient(k.shifted(-e), corrs, init=init)[0]
    return (lp - lm) / (2 * eps)


@pytest.mark.parametrize("exact", [False, True])
def test_total_derivative_through_solver(rng, exact):
    for _ in range(5):
        k, _, corrs = perturbed_frame(rng, noise=3.0)
        _, g, pose = pnp_layer_gradient(k, corrs, exact=exact)
        fd = np.array([_fd_total(k, corrs, j, init=pose) for j in range(4)])
        assert np.all(np.abs(g - fd) <= 1e-3 * np.abs(fd) + 1e-9)


def test_implicit_pose_derivative_matches_resolve(rng):
    # dpose/dK itself, not just the loss: compare -H^-1 H_pK with re-solved poses
    k, _, corrs = perturbed_frame(rng, noise=2.0)
    pose = solve_pnp(k, corrs)
    _, H, HpK = pose_hessians(k, pose, corrs, exact=True)
    J = -np.linalg.solve(H, HpK)
    for j in range(4):
        e = np.zeros(4)
        e[j] = 1e-3
        p1 = solve_pnp(k.shifted(e), corrs, init=pose)
        p0 = solve_pnp(k.shifted(-e), corrs, init=pose)
        fd = (pose.local(p1) - pose.local(p0)) / 2e-3
        assert np.allclose(J[:, j], fd, rtol=1e-4, atol=1e-9 * np.abs(fd).max() + 1e-12)


def test_gauss_newton_equals_exact_at_zero_residual(rng):
    for _ in range(5):
        k, _, corrs = random_frame(rng, n=50)
        pose = solve_pnp(k, corrs)
        g = rng.normal(0, 1, 6)
        a = bpnp_backward(k, corrs, pose, g, exact=False)
        b = bpnp_backward(k, corrs, pose, g, exact=True)
        assert np.allclose(a, b, rtol=1e-6, atol=1e-6 * np.abs(b).max())


def test_exact_hessian_matches_finite_differences(rng):
    k, _, corrs = perturbed_frame(rng, n=20, noise=3.0)
    pose = solve_pnp(k, corrs).retract(rng.normal(0, 1e-3, 6))
    _, H, HpK = pose_hessians(k, pose, corrs, exact=True)
    # Hessian of δ -> L(retract(pose, δ)) at δ = 0 by second differences of the scalar loss
    f = lambda d: loss_reprojection(k, pose.retract(d), corrs)[0]
    h = 1e-4
    E = np.eye(6) * h
    fd = np.array([[(f(E[a] + E[b]) - f(E[a] - E[b]) - f(E[b] - E[a]) + f(-E[a] - E[b])) / (4 * h * h)
                    for b in range(6)] for a in range(6)])
    assert np.allclose(H, fd, rtol=1e-4, atol=1e-5 * np.abs(H).max())
    for j in range(4):
        e = np.zeros(4)
        e[j] = 1e-3
        fd = (loss_reprojection(k.shifted(e), pose, corrs)[2] - loss_reprojection(k.shifted(-e), pose, corrs)[2]) / 2e-3
        assert np.allclose(HpK[:, j], fd, rtol=1e-5, atol=1e-6 * np.abs(fd).max())


def test_duplicated_correspondences_keep_mean_gradient(rng):
    k, _, corrs = perturbed_frame(rng, n=40)
    L1, g1, _ = pnp_layer_gradient(k, corrs)
    dup = Correspondences(np.vstack([corrs.pixels] * 2), np.vstack([corrs.points] * 2))
    L2, g2, _ = pnp_layer_gradient(k, dup)
    assert L2 == pytest.approx(L1, rel=1e-9)
    assert np.allclose(g1, g2, rtol=1e-9, atol=1e-9 * np.abs(g1).max())


def test_covariance_scaling(rng):
    # Σ = s·I scales the loss and its K-gradient by 1/s and leaves the pose alone
    k, _, corrs = perturbed_frame(rng, n=40)
    L1, g1, p1 = pnp_layer_gradient(k, corrs)
    L2, g2, p2 = pnp_layer_gradient(k, corrs, PnpConfig(pixel_covariance=4 * np.eye(2)))
    assert L2 == pytest.approx(L1 / 4, rel=1e-9)
    assert np.allclose(g2, g1 / 4, rtol=1e-6)
    assert np.allclose(p1.t, p2.t, atol=1e-8)
