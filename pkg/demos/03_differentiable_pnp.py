"""The PnP layer's gradient with respect to K, checked against re-solving.

Run: python3 demos/03_differentiable_pnp.py
"""
import numpy as np

from dimenet.bpnp import pnp_layer_gradient
from dimenet.simulator import inject_noise, simulate_dataset

kc, frames = simulate_dataset(1, seed=3)
f = inject_noise(frames[0], 2.0, 0.0, np.random.default_rng(0))
k = kc.shifted([15.0, -10.0, 8.0, 5.0])

# %% loss = mean squared reprojection error after solving the pose for this K
loss, grad, pose = pnp_layer_gradient(k, f.corrs)
print(f"loss {loss:.4f} px^2")

# %% central differences, re-solving PnP at every probe
eps = 1e-4
fd = []
for j in range(4):
    d = np.zeros(4)
    d[j] = eps
    fd.append((pnp_layer_gradient(k.shifted(d), f.corrs, init=pose)[0] - pnp_layer_gradient(k.shifted(-d), f.corrs, init=pose)[0]) / (2 * eps))
for name, a, b in zip(("fx", "fy", "cx", "cy"), grad, fd):
    print(f"d loss / d {name}: implicit {a: .6e}   finite diff {b: .6e}   rel {abs(a - b) / abs(b):.1e}")

# %% at the PnP optimum the pose gradient vanishes, so most of the signal is the explicit K term
loss_exact, grad_exact, _ = pnp_layer_gradient(k, f.corrs, exact=True)
print("Gauss-Newton vs exact Hessian:", np.abs(grad - grad_exact).max())
