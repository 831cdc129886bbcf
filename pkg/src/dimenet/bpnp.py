"""Reprojection loss and a PnP layer differentiable with respect to the intrinsics.

The pose returned by PnP is a stationary point of the reprojection objective,
``grad_pose L(pose*(K), K) = 0``. Differentiating that condition gives

    d pose* / dK = -H_pp^{-1} H_pK

with ``H_pp`` the 6x6 pose Hessian and ``H_pK`` the 6x4 mixed block, both in
the left-perturbation chart used by :mod:`dimenet.geometry`.
"""
from __future__ import annotations

import numpy as np

from .errors import DimeError, SingularHessian
from .geometry import (
    DEFAULT_PNP,
    Correspondences,
    Intrinsics,
    PnpConfig,
    Pose,
    _check_depth,
    _residuals_and_jacobians,
    _scaled_condition,
    solve_pnp,
)


class NotStationary(DimeError, ArithmeticError):
    """The pose handed to the backward pass is not a PnP stationary point."""


def loss_reprojection(k: Intrinsics, pose: Pose, corrs: Correspondences, cfg: PnpConfig = DEFAULT_PNP):
    """Summed squared Mahalanobis reprojection error.

    Returns ``(L, grad_k, grad_pose)``; ``grad_pose`` is in the pose chart ``(w, t)``.
    """
    r, J_pose, J_k = _residuals_and_jacobians(k, pose, corrs, cfg.whitener)
    return float(r @ r), 2.0 * J_k.T @ r, 2.0 * J_pose.T @ r


def pose_second_derivatives(k: Intrinsics, pose: Pose, corrs: Correspondences, cfg: PnpConfig = DEFAULT_PNP):
    """Whitened residuals with first and second derivatives.

    Returns ``(r, J_pose, J_k, d2_pose, d2_mixed)`` where ``d2_pose`` has shape
    ``(2n, 6, 6)`` and ``d2_mixed`` (pose, K) has shape ``(2n, 6, 4)``.
    """
    W = cfg.whitener
    r, J_pose, J_k = _residuals_and_jacobians(k, pose, corrs, W)
    Q = corrs.points @ pose.R.T
    P = Q + pose.t
    _check_depth(P)
    n = len(P)
    iz = 1.0 / P[:, 2]
    # dP/dxi = [-hat(Q) | I]
    dP = np.zeros((n, 3, 6))
    dP[:, 0, 1], dP[:, 0, 2] = Q[:, 2], -Q[:, 1]
    dP[:, 1, 0], dP[:, 1, 2] = -Q[:, 2], Q[:, 0]
    dP[:, 2, 0], dP[:, 2, 1] = Q[:, 1], -Q[:, 0]
    dP[:, :, 3:] = np.eye(3)
    # d2P/dw_a dw_b, component c: (d_cb Q_a + d_ca Q_b)/2 - Q_c d_ab
    eye = np.eye(3)
    d2P = np.zeros((n, 3, 6, 6))
    d2P[:, :, :3, :3] = 0.5 * (
        np.einsum("cb,na->ncab", eye, Q) + np.einsum("ca,nb->ncab", eye, Q)
    ) - np.einsum("nc,ab->ncab", Q, eye)
    # projection derivatives for u (row 0) and v (row 1)
    f = np.array([k.fx, k.fy])
    grad_pi = np.zeros((n, 2, 3))
    hess_pi = np.zeros((n, 2, 3, 3))
    for m in range(2):
        grad_pi[:, m, m] = f[m] * iz
        grad_pi[:, m, 2] = -f[m] * P[:, m] * iz**2
        hess_pi[:, m, m, 2] = hess_pi[:, m, 2, m] = -f[m] * iz**2
        hess_pi[:, m, 2, 2] = 2.0 * f[m] * P[:, m] * iz**3
    d2r = np.einsum("npa,nmpq,nqb->nmab", dP, hess_pi, dP) + np.einsum("nmc,ncab->nmab", grad_pi, d2P)
    # mixed: d/dxi of (P_m / P_z) for fx (m=0) and fy (m=1); cx, cy terms vanish
    d2m = np.zeros((n, 2, 6, 4))
    for m in range(2):
        g = np.zeros((n, 3))
        g[:, m] = iz
        g[:, 2] = -P[:, m] * iz**2
        d2m[:, m, :, m] = np.einsum("nc,nca->na", g, dP)
    d2r = np.einsum("ij,njab->niab", W, d2r).reshape(2 * n, 6, 6)
    d2m = np.einsum("ij,njab->niab", W, d2m).reshape(2 * n, 6, 4)
    return r, J_pose, J_k, d2r, d2m


def pose_hessians(k: Intrinsics, pose: Pose, corrs: Correspondences, cfg: PnpConfig = DEFAULT_PNP, exact=False):
    """``(grad_pose, H_pp, H_pK)`` of the summed reprojection objective."""
    if exact:
        r, J_pose, J_k, d2r, d2m = pose_second_derivatives(k, pose, corrs, cfg)
        H_pp = 2.0 * (J_pose.T @ J_pose + np.einsum("i,iab->ab", r, d2r))
        H_pK = 2.0 * (J_pose.T @ J_k + np.einsum("i,iab->ab", r, d2m))
    else:
        r, J_pose, J_k = _residuals_and_jacobians(k, pose, corrs, cfg.whitener)
        H_pp = 2.0 * J_pose.T @ J_pose
        H_pK = 2.0 * J_pose.T @ J_k
    return 2.0 * J_pose.T @ r, H_pp, H_pK


def bpnp_forward(k: Intrinsics, corrs: Correspondences, cfg: PnpConfig = DEFAULT_PNP, init: Pose | None = None):
    """Solve PnP and keep what the backward pass needs. Returns ``(pose, ctx)``."""
    pose = solve_pnp(k, corrs, cfg, init=init)
    return pose, {"k": k, "corrs": corrs, "pose": pose, "cfg": cfg}


def bpnp_backward(
    k: Intrinsics,
    corrs: Correspondences,
    pose_star: Pose,
    grad_pose,
    cfg: PnpConfig = DEFAULT_PNP,
    exact: bool = False,
    stationarity_tol: float = 1e-6,
    max_cond: float = 1e12,
) -> np.ndarray:
    """Pull a pose-chart gradient back onto ``(fx, fy, cx, cy)`` via the implicit function theorem.

    Stationarity is measured as the length of the Newton step ``H_pp^{-1} grad``
    (rad / mm), which is independent of point count and pixel scale.
    """
    grad_pose = np.asarray(grad_pose, dtype=float).reshape(6)
    g, H_pp, H_pK = pose_hessians(k, pose_star, corrs, cfg, exact=exact)
    if _scaled_condition(H_pp) > max_cond:
        raise SingularHessian("pose Hessian is ill-conditioned")
    newton = np.linalg.solve(H_pp, g)
    if np.linalg.norm(newton) > stationarity_tol:
        raise NotStationary(f"pose is not stationary (Newton step {np.linalg.norm(newton):.3g})")
    if not np.any(grad_pose):
        return np.zeros(4)
    v = np.linalg.solve(H_pp.T, grad_pose)
    return -H_pK.T @ v


def pnp_layer_gradient(k: Intrinsics, corrs: Correspondences, cfg: PnpConfig = DEFAULT_PNP, init=None, exact=False):
    """Mean per-point reprojection loss after re-solving the pose, with its total derivative wrt K.

    Returns ``(loss, grad_k, pose)``.
    """
    pose, _ = bpnp_forward(k, corrs, cfg, init=init)
    n = len(corrs)
    L, gk, gp = loss_reprojection(k, pose, corrs, cfg)
    total = gk / n + bpnp_backward(k, corrs, pose, gp / n, cfg, exact=exact)
    return L / n, total, pose
