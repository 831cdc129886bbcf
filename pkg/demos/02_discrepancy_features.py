"""From correspondences to the flat network input, and what dropping cells does to it.

Run: python3 demos/02_discrepancy_features.py
"""
import numpy as np

from dimenet.features import GridConfig, build_point_features, flatten, gridify, occupancy_metrics
from dimenet.simulator import drop_cells, simulate_dataset

kc, frames = simulate_dataset(1, seed=7)
f = frames[0]
print("K_c    :", kc.as_array())
print("K_true :", np.round(f.k_true.as_array(), 2))

# %% per-point features (dx, dy, X, Y, 1/Z); points already live in {C0}
pf = build_point_features(kc, f.corrs)
print("PMD magnitude: mean %.2f px, max %.2f px" % (np.linalg.norm(pf.dmd, axis=1).mean(), np.linalg.norm(pf.dmd, axis=1).max()))

# %% average into 504 px cells on an 8x6 grid, then flatten row-major
grid = GridConfig.parse("8x6")
fmap = gridify(pf, grid)
y = flatten(fmap)
print(f"grid {grid.label()}: {fmap.occupancy_count} of {grid.n_cells} cells occupied, len(y) = {len(y)}")
print("occupancy map (points per cell):")
print(fmap.counts)

# %% empty 40 % of the occupied cells and measure gamma / eta
g = drop_cells(f, grid, 0.4, np.random.default_rng(1))
gamma, eta = occupancy_metrics(fmap, gridify(build_point_features(kc, g.corrs), grid), grid)
print(f"gamma = {gamma:.3f}, eta = {eta:.3f}, points left = {len(g.corrs)}")
