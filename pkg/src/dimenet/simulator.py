"""Synthetic OIS calibration-rig data.

A four-board checkerboard rig is imaged by a hand-held camera whose lens
state (two tilts plus an axial shift) perturbs the intrinsics through a
smooth surrogate map. Frames carry correspondences expressed in the
reference camera frame {C0}, i.e. after a PnP solve with the prior K_c.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .errors import InvalidKeep, OutOfRange, RetryExhausted
from .geometry import (
    DEFAULT_PNP,
    Correspondences,
    Intrinsics,
    PnpConfig,
    Pose,
    project,
    solve_pnp,
    so3_exp,
)

IMAGE_SIZE = (4032, 3024)
NEUTRAL_K = Intrinsics(2900.0, 2900.0, 2016.0, 1512.0)


@dataclass(frozen=True)
class RigSpec:
    """Four planar checkerboards on distinct planes; boards given as (rotvec, center) in mm."""

    rows: int = 8
    cols: int = 10
    cell: float = 22.0
    boards: tuple = (
        ((0.0, np.radians(25.0), np.radians(4.0)), (-170.0, -125.0, 0.0)),
        ((np.radians(-20.0), np.radians(-20.0), 0.0), (170.0, -125.0, 25.0)),
        ((np.radians(22.0), np.radians(18.0), np.radians(-3.0)), (-170.0, 125.0, 30.0)),
        ((np.radians(-15.0), np.radians(-28.0), 0.0), (170.0, 125.0, -10.0)),
    )

    @property
    def n_points(self) -> int:
        return len(self.boards) * self.rows * self.cols

    def vertices(self) -> np.ndarray:
        """Inner-vertex positions in the rig frame, board by board, row-major."""
        jj, ii = np.meshgrid(np.arange(self.cols), np.arange(self.rows))
        local = np.column_stack([
            (jj.ravel() - (self.cols - 1) / 2) * self.cell,
            (ii.ravel() - (self.rows - 1) / 2) * self.cell,
            np.zeros(self.rows * self.cols),
        ])
        out = [local @ so3_exp(rv).T + np.asarray(c) for rv, c in self.boards]
        return np.vstack(out)

    def digest(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True, default=float).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass(frozen=True)
class ManifoldConfig:
    """Surrogate lens-state -> K map and the sampling box of lens states.

    ``cx = cx0 + gain*fx0*tan(tilt_y)``, ``cy = cy0 + gain*fy0*tan(tilt_x)``,
    ``f = f0 * (1 + shift_z / z0)``.
    """

    gain: float = 1.0
    z0: float = 4.0  # mm
    # box sized so that PnP with K_c leaves ~3.5 px mean residual
    tilt_max: float = 0.028  # rad
    shift_max: float = 0.14  # mm


@dataclass(frozen=True)
class LensState:
    tilt_x: float = 0.0
    tilt_y: float = 0.0
    shift_z: float = 0.0

    def as_array(self):
        return np.array([self.tilt_x, self.tilt_y, self.shift_z])


@dataclass(frozen=True)
class ViewConfig:
    """Camera placement: spherical shell around the rig centroid."""

    radius: tuple = (400.0, 650.0)
    max_polar: float = np.radians(35.0)
    max_roll: float = np.radians(20.0)
    lookat_jitter: float = 25.0  # mm
    margin: float = 2.0  # px kept clear of the image border
    max_tries: int = 200


@dataclass(frozen=True)
class NoiseRecord:
    sigma_2d: float = 0.0
    sigma_3d: float = 0.0
    drop_ratio: float = 0.0  # fraction of correspondences removed
    eta: float = 0.0  # fraction of occupied grid cells emptied


@dataclass(frozen=True, eq=False)
class SimFrame:
    corrs: Correspondences  # pixels + points in {C0}
    k_true: Intrinsics
    kc: Intrinsics
    pose: Pose  # rig -> true camera
    pose_c: Pose  # rig -> {C0}
    lens: LensState = field(default_factory=LensState)
    noise: NoiseRecord = field(default_factory=NoiseRecord)


def k_manifold(k0: Intrinsics, lens: LensState, mcfg: ManifoldConfig = ManifoldConfig()) -> Intrinsics:
    """Intrinsics produced by lens state ``lens`` around the neutral intrinsics ``k0``."""
    if abs(lens.tilt_x) > mcfg.tilt_max or abs(lens.tilt_y) > mcfg.tilt_max or abs(lens.shift_z) > mcfg.shift_max:
        raise OutOfRange(f"lens state {lens} outside the configured box")
    s = 1.0 + lens.shift_z / mcfg.z0
    return Intrinsics(
        k0.fx * s,
        k0.fy * s,
        k0.cx + mcfg.gain * k0.fx * float(np.tan(lens.tilt_y)),
        k0.cy + mcfg.gain * k0.fy * float(np.tan(lens.tilt_x)),
    )


def sample_lens(mcfg: ManifoldConfig, rng: np.random.Generator) -> LensState:
    t = rng.uniform(-mcfg.tilt_max, mcfg.tilt_max, 2)
    return LensState(float(t[0]), float(t[1]), float(rng.uniform(-mcfg.shift_max, mcfg.shift_max)))


def average_k(k0: Intrinsics, mcfg: ManifoldConfig, rng: np.random.Generator, n: int = 1000) -> Intrinsics:
    """Prior K_c as the mean over ``n`` lens states, drawn in antithetic pairs."""
    ks = []
    for _ in range(n // 2):
        lens = sample_lens(mcfg, rng)
        ks.append(k_manifold(k0, lens, mcfg).as_array())
        ks.append(k_manifold(k0, LensState(*(-lens.as_array())), mcfg).as_array())
    return Intrinsics.from_array(np.mean(ks, axis=0))


def _look_at(center, target, roll) -> Pose:
    f = target - center
    f /= np.linalg.norm(f)
    x = np.cross([0.0, 1.0, 0.0], f)
    x /= np.linalg.norm(x)
    y = np.cross(f, x)
    R = so3_exp([0.0, 0.0, roll]) @ np.vstack([x, y, f])
    return Pose(R, -R @ center)


def sample_camera_pose(rig_points: np.ndarray, vcfg: ViewConfig, rng: np.random.Generator) -> Pose:
    centroid = rig_points.mean(axis=0)
    r = rng.uniform(*vcfg.radius)
    polar = np.arccos(rng.uniform(np.cos(vcfg.max_polar), 1.0))
    azim = rng.uniform(0.0, 2 * np.pi)
    d = np.array([np.sin(polar) * np.cos(azim), np.sin(polar) * np.sin(azim), np.cos(polar)])
    target = centroid + rng.normal(0.0, vcfg.lookat_jitter, 3)
    return _look_at(centroid - r * d, target, rng.uniform(-vcfg.max_roll, vcfg.max_roll))


def in_image(pixels, image_size=IMAGE_SIZE, margin=0.0) -> np.ndarray:
    w, h = image_size
    return (
        (pixels[:, 0] >= margin) & (pixels[:, 0] < w - margin)
        & (pixels[:, 1] >= margin) & (pixels[:, 1] < h - margin)
    )


def to_reference_frame(kc: Intrinsics, corrs: Correspondences, cfg: PnpConfig = DEFAULT_PNP):
    """Re-express the 3D points in {C0}: the camera frame recovered by PnP with ``kc``.

    Returns ``(corrs_c0, pose_c)`` where ``pose_c`` maps the input point frame to {C0}.
    """
    pose_c = solve_pnp(kc, corrs, cfg)
    return corrs.transformed(pose_c), pose_c


def sample_frame(
    rig: RigSpec,
    kc: Intrinsics,
    mcfg: ManifoldConfig,
    rng: np.random.Generator,
    k0: Intrinsics = NEUTRAL_K,
    vcfg: ViewConfig = ViewConfig(),
    image_size=IMAGE_SIZE,
    lens: LensState | None = None,
) -> SimFrame:
    """Draw one noiseless frame: camera pose, lens state, projection under the true K."""
    X = rig.vertices()
    if lens is None:
        lens = sample_lens(mcfg, rng)
    k_true = k_manifold(k0, lens, mcfg)
    for _ in range(vcfg.max_tries):
        pose = sample_camera_pose(X, vcfg, rng)
        P = pose.apply(X)
        if np.any(P[:, 2] <= 1.0):
            continue
        pixels = project(k_true, pose, X)
        if not np.all(in_image(pixels, image_size, vcfg.margin)):
            continue
        corrs_c0, pose_c = to_reference_frame(kc, Correspondences(pixels, X))
        return SimFrame(corrs_c0, k_true, kc, pose, pose_c, lens)
    raise RetryExhausted(f"no valid camera pose in {vcfg.max_tries} draws")


def _noise_record(frame) -> NoiseRecord:
    rec = getattr(frame, "noise", None)
    if rec is None:
        return NoiseRecord()
    return rec if isinstance(rec, NoiseRecord) else NoiseRecord(**rec)


def _rebuild(frame, corrs: Correspondences, **noise):
    """Re-anchor ``corrs`` in {C0} and update the noise record.

    Works for any frame dataclass carrying ``corrs``, ``kc`` and ``noise``
    (a :class:`NoiseRecord` or a plain dict, as read from dataset files).
    """
    corrs_c0, reanchor = to_reference_frame(frame.kc, corrs)
    rec = replace(_noise_record(frame), **noise)
    changes = {"corrs": corrs_c0, "noise": rec if isinstance(frame, SimFrame) else asdict(rec)}
    if isinstance(frame, SimFrame):
        changes["pose_c"] = reanchor.compose(frame.pose_c)
    return replace(frame, **changes)


def inject_noise(frame: SimFrame, sigma_2d: float, sigma_3d: float, rng: np.random.Generator) -> SimFrame:
    """Add i.i.d. zero-mean Gaussian noise to every pixel (px) and 3D (mm) coordinate.

    The noisy points are re-anchored in {C0} by a fresh PnP solve with K_c.
    """
    if sigma_2d < 0 or sigma_3d < 0:
        raise ValueError("noise levels must be non-negative")
    if sigma_2d == 0 and sigma_3d == 0:
        return frame
    c = frame.corrs
    noisy = Correspondences(
        c.pixels + rng.normal(0.0, sigma_2d, c.pixels.shape) if sigma_2d > 0 else c.pixels,
        c.points + rng.normal(0.0, sigma_3d, c.points.shape) if sigma_3d > 0 else c.points,
    )
    old = _noise_record(frame)
    return _rebuild(frame, noisy, sigma_2d=float(np.hypot(old.sigma_2d, sigma_2d)),
                    sigma_3d=float(np.hypot(old.sigma_3d, sigma_3d)))


def drop_points(frame: SimFrame, keep: int, rng: np.random.Generator) -> SimFrame:
    """Keep a uniform random subset of ``keep`` correspondences (original order preserved)."""
    n = len(frame.corrs)
    if not 1 <= keep <= n:
        raise InvalidKeep(f"keep must lie in [1, {n}], got {keep}")
    if keep == n:
        return frame
    idx = np.sort(rng.choice(n, size=keep, replace=False))
    kept = (1.0 - _noise_record(frame).drop_ratio) * keep / n
    return _rebuild(frame, frame.corrs.subset(idx), drop_ratio=1.0 - kept)


def drop_cells(frame: SimFrame, grid, eta: float, rng: np.random.Generator, min_points: int = 6) -> SimFrame:
    """Empty ``round(eta * m_p)`` uniformly chosen occupied grid cells.

    ``drop_ratio`` in the noise record stays relative to the original point count.
    """
    from .features import cell_indices

    cells = cell_indices(frame.corrs.pixels, grid)
    occupied = np.unique(cells)
    n_drop = int(round(eta * len(occupied)))
    if n_drop == 0:
        return frame
    if n_drop >= len(occupied):
        raise InvalidKeep("cannot empty every occupied cell")
    for _ in range(100):
        emptied = rng.choice(occupied, size=n_drop, replace=False)
        keep = ~np.isin(cells, emptied)
        if keep.sum() >= min_points:
            kept = (1.0 - _noise_record(frame).drop_ratio) * keep.mean()
            return _rebuild(frame, frame.corrs.subset(np.flatnonzero(keep)),
                            drop_ratio=1.0 - kept, eta=n_drop / len(occupied))
    raise RetryExhausted("could not keep enough points while emptying cells")


def simulate_dataset(
    n_frames: int,
    seed: int,
    rig: RigSpec = RigSpec(),
    mcfg: ManifoldConfig = ManifoldConfig(),
    k0: Intrinsics = NEUTRAL_K,
    vcfg: ViewConfig = ViewConfig(),
    kc: Intrinsics | None = None,
):
    """``(kc, frames)`` with per-frame generators spawned from ``seed``."""
    root = np.random.SeedSequence(seed)
    kc_seq, frames_seq = root.spawn(2)
    if kc is None:
        kc = average_k(k0, mcfg, np.random.default_rng(kc_seq))
    frames = [
        sample_frame(rig, kc, mcfg, np.random.default_rng(s), k0=k0, vcfg=vcfg)
        for s in frames_seq.spawn(n_frames)
    ]
    return kc, frames
