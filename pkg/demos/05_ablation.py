"""Small-scale version of the grid / occupancy and feature-mask ablations.

Run: python3 demos/05_ablation.py [epochs]
"""
import sys

from dimenet.evaluation import AblationSpec, ablation_table, run_ablation
from dimenet.features import GridConfig
from dimenet.simulator import simulate_dataset
from dimenet.training import TrainConfig, TrainSample, default_model, train

epochs = int(sys.argv[1]) if len(sys.argv) > 1 else 10
kc, frames = simulate_dataset(140, seed=12)
train_set = [TrainSample(f.corrs, f.kc) for f in frames[:120]]
test = frames[120:]

spec = AblationSpec(grids=("12x9", "8x6"), etas=(0.0, 0.4, 0.8), masks=("A", "B", "E"))
models = {}
for label in spec.grids:
    g = GridConfig.parse(label)
    models[("grid", label)] = train(default_model(g), train_set, g, TrainConfig(epochs=epochs)).model
grid = GridConfig.parse(spec.mask_grid)
for name in spec.masks:
    models[("mask", name)] = train(default_model(grid), train_set, grid, TrainConfig(epochs=epochs, feature_mask=name)).model

print(ablation_table(run_ablation(spec, test, models)))
