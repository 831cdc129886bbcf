"""Train the ΔK regressor on simulated rig frames and report the error reduction.

A short run (a few minutes on one core). The acceptance suite uses the full schedule.
Run: python3 demos/04_train_and_evaluate.py [epochs]
"""
import sys
import time

from dimenet.evaluation import evaluate
from dimenet.features import GridConfig
from dimenet.simulator import simulate_dataset
from dimenet.training import TrainConfig, TrainSample, default_model, train

epochs = int(sys.argv[1]) if len(sys.argv) > 1 else 30
grid = GridConfig()
kc, frames = simulate_dataset(250, seed=11)
train_set = [TrainSample(f.corrs, f.kc) for f in frames[:200]]  # K_true is never used for training
test = frames[200:]

# %% baseline: keep the prior K_c
print(evaluate(None, test, grid).summary())

# %% train through the PnP layer
t0 = time.time()
res = train(default_model(grid, seed=0), train_set, grid, TrainConfig(epochs=epochs))
print(f"trained {epochs} epochs in {time.time() - t0:.0f} s, best epoch {res.best_epoch}")
for row in res.curve[:: max(1, epochs // 10)]:
    print("epoch %3d  train loss %8.3f  val Avg(e) %.3f" % (row[0], row[1], row[2]))

# %% held-out report
rep = evaluate(res.model, test, grid)
print(rep.summary())
