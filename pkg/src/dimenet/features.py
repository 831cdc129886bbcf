"""OIS discrepancy features: per-point PMD + 3D position, gridified and flattened."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptyBaseline, NonPositiveDepth, OutOfImageBounds
from .geometry import MIN_DEPTH, Correspondences, Intrinsics

N_CHANNELS = 5
CHANNELS = ("dx", "dy", "X", "Y", "inv_Z")

# Channel subsets for the feature ablation.
FEATURE_MASKS = {
    "A": (0, 1, 2, 3, 4),  # PMD + X, Y, 1/Z
    "B": (0, 1),  # PMD only
    "C": (0, 1, 4),  # PMD + 1/Z
    "D": (0, 1, 2, 3),  # PMD + X, Y
    "E": (2, 3, 4),  # 3D only
}


@dataclass(frozen=True)
class GridConfig:
    rows: int = 6
    cols: int = 8
    image_width: float = 4032
    image_height: float = 3024

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise ValueError("grid needs at least one row and one column")

    @classmethod
    def parse(cls, text: str, image_size=(4032, 3024)) -> GridConfig:
        """Parse ``"UxV"`` as written in the literature: ``8x6`` is 8 columns by 6 rows."""
        a, b = (int(s) for s in text.lower().split("x"))
        return cls(rows=b, cols=a, image_width=image_size[0], image_height=image_size[1])

    @property
    def n_cells(self) -> int:
        return self.rows * self.cols

    @property
    def feature_dim(self) -> int:
        return N_CHANNELS * self.n_cells

    def col_edges(self) -> np.ndarray:
        return np.arange(self.cols + 1) * (self.image_width / self.cols)

    def row_edges(self) -> np.ndarray:
        return np.arange(self.rows + 1) * (self.image_height / self.rows)

    def label(self) -> str:
        return f"{self.cols}x{self.rows}"


@dataclass(frozen=True, eq=False)
class PointFeatures:
    """``values[i] = (dx, dy, X, Y, 1/Z)`` with the pixel used for cell assignment."""

    values: np.ndarray
    pixels: np.ndarray

    def __len__(self):
        return len(self.values)

    @property
    def dmd(self):
        return self.values[:, :2]

    @property
    def inv_depth(self):
        return self.values[:, 4]


@dataclass(frozen=True, eq=False)
class GridFeatureMap:
    """Per-cell mean features ``(rows, cols, 5)`` and member counts ``(rows, cols)``."""

    means: np.ndarray
    counts: np.ndarray

    @property
    def occupancy_count(self) -> int:
        return int(np.count_nonzero(self.counts))

    def cell(self, j, k):
        return self.means[j, k] if self.counts[j, k] else None


def compute_pmd(kc: Intrinsics, pixel, point3d) -> np.ndarray:
    """Projection model discrepancy: K_c reprojection of a {C0} point minus its pixel."""
    X, Y, Z = (float(v) for v in point3d)
    if Z <= MIN_DEPTH:
        raise NonPositiveDepth(None, Z)
    return np.array([kc.fx * X / Z + kc.cx - pixel[0], kc.fy * Y / Z + kc.cy - pixel[1]])


def build_point_features(kc: Intrinsics, corrs: Correspondences) -> PointFeatures:
    P = corrs.points
    bad = np.flatnonzero(P[:, 2] <= MIN_DEPTH)
    if bad.size:
        raise NonPositiveDepth(int(bad[0]), float(P[bad[0], 2]))
    iz = 1.0 / P[:, 2]
    dx = kc.fx * P[:, 0] * iz + kc.cx - corrs.pixels[:, 0]
    dy = kc.fy * P[:, 1] * iz + kc.cy - corrs.pixels[:, 1]
    values = np.column_stack([dx, dy, P[:, 0], P[:, 1], iz]) if len(P) else np.zeros((0, N_CHANNELS))
    return PointFeatures(values, corrs.pixels.copy())


def cell_indices(pixels, grid: GridConfig) -> np.ndarray:
    """Flat row-major cell index ``j * cols + k`` per pixel.

    Cells are half-open ``[a_{k-1}, a_k)``; the last column/row also takes the image edge.
    """
    pixels = np.asarray(pixels, dtype=float).reshape(-1, 2)
    x, y = pixels[:, 0], pixels[:, 1]
    out = (x < 0) | (x > grid.image_width) | (y < 0) | (y > grid.image_height) | ~np.isfinite(x) | ~np.isfinite(y)
    if out.any():
        i = int(np.flatnonzero(out)[0])
        raise OutOfImageBounds(i, pixels[i])
    k = np.minimum(np.searchsorted(grid.col_edges(), x, side="right") - 1, grid.cols - 1)
    j = np.minimum(np.searchsorted(grid.row_edges(), y, side="right") - 1, grid.rows - 1)
    return j * grid.cols + k


def gridify(features: PointFeatures, grid: GridConfig) -> GridFeatureMap:
    idx = cell_indices(features.pixels, grid)
    counts = np.bincount(idx, minlength=grid.n_cells).astype(float)
    sums = np.zeros((grid.n_cells, N_CHANNELS))
    # sort first so the per-cell summation order does not depend on input order
    order = np.lexsort(features.values.T[::-1]) if len(features) else np.zeros(0, int)
    np.add.at(sums, idx[order], features.values[order])
    means = np.zeros_like(sums)
    nz = counts > 0
    means[nz] = sums[nz] / counts[nz, None]
    return GridFeatureMap(means.reshape(grid.rows, grid.cols, N_CHANNELS), counts.reshape(grid.rows, grid.cols).astype(int))


def flatten(fmap: GridFeatureMap) -> np.ndarray:
    """Row-major concatenation of cell means; empty cells are all zeros."""
    return fmap.means.reshape(-1).copy()


def occupancy_metrics(before: GridFeatureMap, after: GridFeatureMap, grid: GridConfig):
    """``(gamma, eta)``: occupancy ratio of ``before`` and the emptied-cell ratio."""
    m_p = before.occupancy_count
    if m_p == 0:
        raise EmptyBaseline("baseline grid has no occupied cells")
    return m_p / grid.n_cells, 1.0 - after.occupancy_count / m_p


def channel_mask(grid: GridConfig, keep) -> np.ndarray:
    """0/1 vector over the flat feature selecting channels ``keep`` in every cell."""
    m = np.zeros(N_CHANNELS)
    m[list(keep)] = 1.0
    return np.tile(m, grid.n_cells)


def feature_vector(kc: Intrinsics, corrs: Correspondences, grid: GridConfig, mask=None) -> np.ndarray:
    """Flat network input for one frame (optionally with ablated channels zeroed)."""
    y = flatten(gridify(build_point_features(kc, corrs), grid))
    if mask is not None:
        y = y * mask
    return y


def fit_channel_scaling(flat_features, grid: GridConfig) -> np.ndarray:
    """Per-channel multipliers ``1 / RMS`` over occupied cells, tiled to the flat layout.

    Pure scaling (no shift) so an all-zero input stays zero.
    """
    Y = np.asarray(flat_features, dtype=float).reshape(-1, grid.n_cells, N_CHANNELS)
    occupied = np.any(Y != 0, axis=2)
    vals = Y[occupied]
    rms = np.sqrt(np.mean(vals**2, axis=0)) if len(vals) else np.ones(N_CHANNELS)
    scale = np.where(rms > 0, 1.0 / np.where(rms > 0, rms, 1.0), 1.0)
    return np.tile(scale, grid.n_cells)
