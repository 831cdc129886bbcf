"""Pinhole geometry: projection, reprojection error, PnP and joint intrinsics refinement.

Poses map world (or rig) coordinates into the camera frame, ``P = R @ X + t``.
Rotations are updated by a left perturbation ``R <- expm(hat(w)) @ R`` so the
optimizers always work in a 3-parameter local chart around the current estimate.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.transform import Rotation

from .errors import DegenerateConfiguration, NonPositiveDepth, NotConverged

MIN_DEPTH = 1e-6  # mm


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Intrinsics:
    """4-DoF pinhole intrinsics in pixels."""

    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")

    @classmethod
    def from_array(cls, a) -> Intrinsics:
        fx, fy, cx, cy = (float(v) for v in np.asarray(a, dtype=float).reshape(4))
        return cls(fx, fy, cx, cy)

    def as_array(self) -> np.ndarray:
        return np.array([self.fx, self.fy, self.cx, self.cy])

    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def shifted(self, delta) -> Intrinsics:
        """Return ``K + dK`` for a 4-vector ``(dfx, dfy, dcx, dcy)``."""
        return Intrinsics.from_array(self.as_array() + np.asarray(delta, dtype=float))

    def scaled(self, s: float) -> Intrinsics:
        return Intrinsics.from_array(self.as_array() * s)


def hat(w) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    return np.array([[0.0, -w[2], w[1]], [w[2], 0.0, -w[0]], [-w[1], w[0], 0.0]])


def so3_exp(w) -> np.ndarray:
    return Rotation.from_rotvec(np.asarray(w, dtype=float)).as_matrix()


def so3_log(R) -> np.ndarray:
    return Rotation.from_matrix(R).as_rotvec()


@dataclass(frozen=True, eq=False)
class Pose:
    """Rigid transform from world to camera: ``P = R X + t`` (mm)."""

    R: np.ndarray = field(default_factory=lambda: np.eye(3))
    t: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "R", np.asarray(self.R, dtype=float).reshape(3, 3))
        object.__setattr__(self, "t", np.asarray(self.t, dtype=float).reshape(3))

    @classmethod
    def identity(cls) -> Pose:
        return cls()

    @classmethod
    def from_rotvec(cls, rotvec, t) -> Pose:
        return cls(so3_exp(rotvec), t)

    def rotvec(self) -> np.ndarray:
        return so3_log(self.R)

    def apply(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        return X @ self.R.T + self.t

    def compose(self, other: Pose) -> Pose:
        """``self ∘ other``: apply ``other`` first."""
        return Pose(self.R @ other.R, self.R @ other.t + self.t)

    def inverse(self) -> Pose:
        return Pose(self.R.T, -self.R.T @ self.t)

    def retract(self, delta) -> Pose:
        """Left perturbation by ``delta = (w, dt)``."""
        delta = np.asarray(delta, dtype=float)
        return Pose(so3_exp(delta[:3]) @ self.R, self.t + delta[3:])

    def local(self, other: Pose) -> np.ndarray:
        """Chart coordinates of ``other`` around ``self`` (inverse of :meth:`retract`)."""
        return np.concatenate([so3_log(other.R @ self.R.T), other.t - self.t])

    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.R
        T[:3, 3] = self.t
        return T

    def __repr__(self):
        return f"Pose(rotvec={np.round(self.rotvec(), 9).tolist()}, t={np.round(self.t, 9).tolist()})"


@dataclass(frozen=True, eq=False)
class Correspondences:
    """Paired pixel observations ``(n, 2)`` and 3D points ``(n, 3)``."""

    pixels: np.ndarray
    points: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=float).reshape(-1, 2)
        pt = np.asarray(self.points, dtype=float).reshape(-1, 3)
        if len(px) != len(pt):
            raise ValueError(f"{len(px)} pixels vs {len(pt)} points")
        object.__setattr__(self, "pixels", px)
        object.__setattr__(self, "points", pt)

    def __len__(self):
        return len(self.pixels)

    def subset(self, idx) -> Correspondences:
        return Correspondences(self.pixels[idx], self.points[idx])

    def transformed(self, pose: Pose) -> Correspondences:
        """Same observations with the 3D points moved through ``pose``."""
        return Correspondences(self.pixels, pose.apply(self.points))


@dataclass(frozen=True, eq=False)
class PnpConfig:
    pixel_covariance: np.ndarray = field(default_factory=lambda: np.eye(2))
    max_iterations: int = 100
    convergence_tol: float = 1e-10
    damping_init: float = 1e-3

    def __post_init__(self):
        cov = np.asarray(self.pixel_covariance, dtype=float).reshape(2, 2)
        if not np.allclose(cov, cov.T):
            raise ValueError("pixel covariance must be symmetric")
        try:
            chol = np.linalg.cholesky(cov)
        except np.linalg.LinAlgError:
            raise ValueError("pixel covariance must be positive definite") from None
        object.__setattr__(self, "pixel_covariance", cov)
        # whitened residual r_w = L^{-1} r gives ||r||_Sigma = ||r_w||
        object.__setattr__(self, "_whitener", np.linalg.inv(chol))

    @property
    def whitener(self) -> np.ndarray:
        return self._whitener


DEFAULT_PNP = PnpConfig()


# ---------------------------------------------------------------------------
# Projection
# ---------------------------------------------------------------------------


def _check_depth(P):
    bad = np.flatnonzero(P[:, 2] <= MIN_DEPTH)
    if bad.size:
        i = int(bad[0])
        raise NonPositiveDepth(i, float(P[i, 2]))


def project_camera(k: Intrinsics, P) -> np.ndarray:
    """Project camera-frame points ``(n, 3)`` to pixels."""
    P = np.atleast_2d(np.asarray(P, dtype=float))
    _check_depth(P)
    return np.column_stack([k.fx * P[:, 0] / P[:, 2] + k.cx, k.fy * P[:, 1] / P[:, 2] + k.cy])


def project(k: Intrinsics, pose: Pose, point3d) -> np.ndarray:
    """Pixel of a world point (or ``(n, 3)`` array of points) under ``K [R|t]``."""
    X = np.asarray(point3d, dtype=float)
    uv = project_camera(k, pose.apply(np.atleast_2d(X)))
    return uv[0] if X.ndim == 1 else uv


def reprojection_errors(k: Intrinsics, pose: Pose, corrs: Correspondences, cfg: PnpConfig = DEFAULT_PNP):
    """Per-point Mahalanobis reprojection errors and their mean."""
    if len(corrs) == 0:
        return np.zeros(0), 0.0
    r = project(k, pose, corrs.points) - corrs.pixels
    e = np.linalg.norm(r @ cfg.whitener.T, axis=1)
    return e, float(e.mean())


def _residuals_and_jacobians(k: Intrinsics, pose: Pose, corrs: Correspondences, W):
    """Whitened residuals ``(2n,)`` with Jacobians wrt the pose chart ``(2n, 6)`` and K ``(2n, 4)``.

    Rows alternate u, v per point. Under ``P = expm(hat(w)) Q + t`` with ``Q = R X``,
    ``dP/dw = -hat(Q)`` and ``dP/dt = I``.
    """
    Q = corrs.points @ pose.R.T
    P = Q + pose.t
    _check_depth(P)
    iz = 1.0 / P[:, 2]
    xn, yn = P[:, 0] * iz, P[:, 1] * iz
    n = len(P)
    r = np.empty((n, 2))
    r[:, 0] = k.fx * xn + k.cx - corrs.pixels[:, 0]
    r[:, 1] = k.fy * yn + k.cy - corrs.pixels[:, 1]
    a, b = k.fx * iz, -k.fx * xn * iz  # du/dPx, du/dPz
    c, d = k.fy * iz, -k.fy * yn * iz  # dv/dPy, dv/dPz
    J_pose = np.empty((n, 2, 6))
    J_pose[:, 0, 0] = b * Q[:, 1]
    J_pose[:, 0, 1] = a * Q[:, 2] - b * Q[:, 0]
    J_pose[:, 0, 2] = -a * Q[:, 1]
    J_pose[:, 0, 3] = a
    J_pose[:, 0, 4] = 0.0
    J_pose[:, 0, 5] = b
    J_pose[:, 1, 0] = d * Q[:, 1] - c * Q[:, 2]
    J_pose[:, 1, 1] = -d * Q[:, 0]
    J_pose[:, 1, 2] = c * Q[:, 0]
    J_pose[:, 1, 3] = 0.0
    J_pose[:, 1, 4] = c
    J_pose[:, 1, 5] = d
    J_k = np.zeros((n, 2, 4))
    J_k[:, 0, 0], J_k[:, 0, 2] = xn, 1.0
    J_k[:, 1, 1], J_k[:, 1, 3] = yn, 1.0
    if not _is_identity(W):
        r = r @ W.T
        J_pose = np.einsum("ij,njk->nik", W, J_pose)
        J_k = np.einsum("ij,njk->nik", W, J_k)
    return r.reshape(-1), J_pose.reshape(-1, 6), J_k.reshape(-1, 4)


def _is_identity(W):
    return W[0, 0] == 1.0 and W[1, 1] == 1.0 and W[0, 1] == 0.0 and W[1, 0] == 0.0


# ---------------------------------------------------------------------------
# Levenberg-Marquardt
# ---------------------------------------------------------------------------


def _scaled_condition(A):
    d = np.sqrt(np.diag(A))
    if np.any(d <= 0):
        return np.inf
    return np.linalg.cond(A / np.outer(d, d))


def _levenberg_marquardt(evaluate, state, update, cfg: PnpConfig, max_cond=1e12):
    """Minimize ``||r(state)||^2`` with Marquardt-scaled damping (x10 / ÷10).

    ``evaluate(state) -> (r, J)``; ``update(state, delta) -> state``.
    Returns ``(state, cost, iterations)``; raises :class:`NotConverged` with the
    best state when the iteration budget runs out.
    """
    r, J = evaluate(state)
    cost = float(r @ r)
    lam = cfg.damping_init
    for it in range(1, cfg.max_iterations + 1):
        A = J.T @ J
        g = J.T @ r
        if _scaled_condition(A) > max_cond:
            raise DegenerateConfiguration("rank-deficient normal equations")
        D = np.diag(np.diag(A))
        while True:
            delta = np.linalg.solve(A + lam * D, -g)
            try:
                cand = update(state, delta)
                r_new, J_new = evaluate(cand)
                cost_new = float(r_new @ r_new)
            except ValueError:  # depth guard or non-positive focal length
                cost_new = np.inf
            small = np.linalg.norm(delta) < cfg.convergence_tol
            if cost_new < cost:
                state, r, J, cost = cand, r_new, J_new, cost_new
                lam = max(lam / 10.0, 1e-12)
                if small:
                    return state, cost, it
                break
            if small or cost_new == cost:
                return state, cost, it
            lam *= 10.0
            if lam > 1e16:
                return state, cost, it
    raise NotConverged(f"LM did not converge in {cfg.max_iterations} iterations", best=state)


# ---------------------------------------------------------------------------
# PnP
# ---------------------------------------------------------------------------


def _kabsch(X, Pc) -> Pose:
    mw, mc = X.mean(axis=0), Pc.mean(axis=0)
    H = (Pc - mc).T @ (X - mw)
    U, _, Vt = np.linalg.svd(H)
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(U @ Vt)) or 1.0])
    R = U @ D @ Vt
    return Pose(R, mc - R @ mw)


def _planar_init(k: Intrinsics, corrs: Correspondences) -> Pose:
    """Homography-based pose for (near-)coplanar points."""
    X = corrs.points
    mw = X.mean(axis=0)
    _, _, Vt = np.linalg.svd(X - mw)
    B = Vt[:2]
    q = (X - mw) @ B.T
    un = (corrs.pixels - [k.cx, k.cy]) / [k.fx, k.fy]
    # normalized DLT for the plane -> normalized-image homography
    s = np.sqrt(2) / np.mean(np.linalg.norm(q, axis=1))
    qs = q * s
    A = np.zeros((2 * len(q), 9))
    A[0::2, 0:2], A[0::2, 2] = qs, 1.0
    A[0::2, 6:8], A[0::2, 8] = -un[:, :1] * qs, -un[:, 0]
    A[1::2, 3:5], A[1::2, 5] = qs, 1.0
    A[1::2, 6:8], A[1::2, 8] = -un[:, 1:] * qs, -un[:, 1]
    H = np.linalg.svd(A)[2][-1].reshape(3, 3) @ np.diag([s, s, 1.0])
    scale = 2.0 / (np.linalg.norm(H[:, 0]) + np.linalg.norm(H[:, 1]))
    H = H * scale
    if H[2, 2] < 0:
        H = -H
    r1, r2, tp = H[:, 0], H[:, 1], H[:, 2]
    U, _, Wt = np.linalg.svd(np.column_stack([r1, r2, np.cross(r1, r2)]))
    Rp = U @ np.diag([1, 1, np.linalg.det(U @ Wt)]) @ Wt
    # plane frame -> world: X = mw + B.T q ; camera: P = Rp [q; 0] + tp
    Bw = np.vstack([B, np.cross(B[0], B[1])])
    R = Rp @ Bw
    return Pose(R, tp - R @ mw)


def epnp(k: Intrinsics, corrs: Correspondences) -> Pose:
    """Closed-form pose from four virtual control points (EPnP, kernel sizes 1-3)."""
    X = corrs.points
    n = len(X)
    c0 = X.mean(axis=0)
    _, s, Vt = np.linalg.svd(X - c0, full_matrices=False)
    if s[2] < 1e-6 * s[0]:
        return _planar_init(k, corrs)
    ctrl = np.vstack([c0, c0 + (s[:, None] / np.sqrt(n)) * Vt])
    a123 = np.linalg.solve((ctrl[1:] - c0).T, (X - c0).T).T
    alphas = np.column_stack([1.0 - a123.sum(axis=1), a123])
    un = (corrs.pixels - [k.cx, k.cy]) / [k.fx, k.fy]
    M = np.zeros((2 * n, 12))
    M[0::2, 0::3] = alphas
    M[0::2, 2::3] = -alphas * un[:, :1]
    M[1::2, 1::3] = alphas
    M[1::2, 2::3] = -alphas * un[:, 1:]
    _, vecs = np.linalg.eigh(M.T @ M)
    V = vecs[:, :4].T.reshape(4, 4, 3)  # kernel k, control point j, xyz

    pairs = [(i, j) for i in range(4) for j in range(i + 1, 4)]
    d2 = np.array([np.sum((ctrl[i] - ctrl[j]) ** 2) for i, j in pairs])
    dV = np.array([V[:, i] - V[:, j] for i, j in pairs])  # (6, 4, 3)

    def betas_n(N):
        dv = dV[:, :N]
        if N == 1:
            nv = np.linalg.norm(dv[:, 0], axis=1)
            return np.array([nv @ np.sqrt(d2) / (nv @ nv)])
        idx = [(a, b) for a in range(N) for b in range(a, N)]
        L = np.column_stack([(1.0 if a == b else 2.0) * np.sum(dv[:, a] * dv[:, b], axis=1) for a, b in idx])
        bb = np.linalg.lstsq(L, d2, rcond=None)[0]
        beta = np.zeros(N)
        beta[0] = np.sqrt(abs(bb[0]))
        for a in range(1, N):
            beta[a] = bb[idx.index((0, a))] / beta[0] if beta[0] > 0 else np.sqrt(abs(bb[idx.index((a, a))]))
        return beta

    def refine(beta):
        beta = np.concatenate([beta, np.zeros(4 - len(beta))])
        for _ in range(5):
            diff = np.einsum("k,pkj->pj", beta, dV)
            res = np.sum(diff**2, axis=1) - d2
            Jb = 2.0 * np.einsum("pj,pkj->pk", diff, dV)
            step = np.linalg.lstsq(Jb, -res, rcond=None)[0]
            beta = beta + step
        return beta

    best, best_err = None, np.inf
    for N in (1, 2, 3):
        beta = refine(betas_n(N))
        ctrl_c = np.einsum("k,kjc->jc", beta, V)
        Pc = alphas @ ctrl_c
        if np.mean(Pc[:, 2]) < 0:
            Pc = -Pc
        pose = _kabsch(X, Pc)
        P = pose.apply(X)
        if np.any(P[:, 2] <= MIN_DEPTH):
            continue
        err = np.sum((project_camera(k, P) - corrs.pixels) ** 2)
        if err < best_err:
            best, best_err = pose, err
    if best is None:
        raise DegenerateConfiguration("EPnP found no solution in front of the camera")
    return best


def _polish(evaluate, state, update, steps=3):
    """Undamped Gauss-Newton steps on the stationarity condition ``J^T r = 0``.

    Cost comparisons stop resolving progress near the optimum long before the
    gradient does; a step is kept only while it shrinks the gradient norm.
    """
    r, J = evaluate(state)
    g = J.T @ r
    for _ in range(steps):
        if not np.any(g):
            break
        try:
            cand = update(state, np.linalg.solve(J.T @ J, -g))
            r_new, J_new = evaluate(cand)
        except (ValueError, np.linalg.LinAlgError):
            break
        g_new = J_new.T @ r_new
        if np.linalg.norm(g_new) >= np.linalg.norm(g):
            break
        state, J, g = cand, J_new, g_new
    return state


def refine_pose(k: Intrinsics, corrs: Correspondences, init: Pose, cfg: PnpConfig = DEFAULT_PNP, polish=True):
    """LM refinement of the pose only. Returns ``(pose, cost, iterations)``."""
    W = cfg.whitener

    def evaluate(pose):
        r, J_pose, _ = _residuals_and_jacobians(k, pose, corrs, W)
        return r, J_pose

    _check_depth(init.apply(corrs.points))
    pose, cost, it = _levenberg_marquardt(evaluate, init, Pose.retract, cfg)
    if polish:
        pose = _polish(evaluate, pose, Pose.retract)
        r, _ = evaluate(pose)
        cost = float(r @ r)
    return pose, cost, it


def solve_pnp(k: Intrinsics, corrs: Correspondences, cfg: PnpConfig = DEFAULT_PNP, init: Pose | None = None) -> Pose:
    """Pose minimizing the Mahalanobis reprojection error for fixed intrinsics.

    Without ``init`` the LM refinement starts from :func:`epnp`.
    """
    n_min = 4 if init is not None else 6
    if len(corrs) < n_min:
        raise DegenerateConfiguration(f"need at least {n_min} correspondences, got {len(corrs)}")
    if init is None:
        init = epnp(k, corrs)
    pose, _, _ = refine_pose(k, corrs, init, cfg)
    return pose


def mle_refine_intrinsics(k_init: Intrinsics, corrs: Correspondences, cfg: PnpConfig = DEFAULT_PNP):
    """Joint LM over ``(fx, fy, cx, cy)`` and the pose.

    Returns ``(K*, pose*, mean reprojection error)``.
    """
    if len(corrs) < 8:
        raise DegenerateConfiguration(f"need at least 8 correspondences, got {len(corrs)}")
    W = cfg.whitener
    pose0 = solve_pnp(k_init, corrs, cfg)

    def evaluate(state):
        k, pose = state
        r, J_pose, J_k = _residuals_and_jacobians(k, pose, corrs, W)
        return r, np.hstack([J_k, J_pose])

    def update(state, delta):
        k, pose = state
        return k.shifted(delta[:4]), pose.retract(delta[4:])

    (k, pose), _, _ = _levenberg_marquardt(evaluate, (k_init, pose0), update, cfg)
    _, mean = reprojection_errors(k, pose, corrs, cfg)
    return k, pose, mean
