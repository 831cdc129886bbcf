"""Fully connected ΔK regressor with hand-written forward/backward passes.

The default network is bias-free with an odd activation, so an all-zero
feature vector maps to ``ΔK = 0`` and the prior intrinsics are kept.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch, InvalidDims, VersionMismatch

MODEL_FORMAT = "dimenet-mlp"
MODEL_VERSION = 1

ACTIVATIONS = {
    "tanh": (np.tanh, lambda z, a: 1.0 - a * a),
    "linear": (lambda z: z, lambda z, a: np.ones_like(z)),
    "relu": (lambda z: np.maximum(z, 0.0), lambda z, a: (z > 0).astype(z.dtype)),
}
ODD_ACTIVATIONS = {"tanh", "linear"}


@dataclass
class MLP:
    """Weights ``W_l`` have shape ``(out, in)``; ``biases`` is ``None`` in the default config."""

    weights: list
    biases: list | None = None
    activation: str = "tanh"
    input_scale: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.activation not in ODD_ACTIVATIONS and self.biases is None:
            raise ValueError(f"{self.activation} is only available with biases enabled")
        for a, b in zip(self.weights[:-1], self.weights[1:]):
            if b.shape[1] != a.shape[0]:
                raise InvalidDims("consecutive weight shapes do not chain")

    @property
    def layer_dims(self) -> list:
        return [self.weights[0].shape[1]] + [W.shape[0] for W in self.weights]

    @property
    def n_params(self) -> int:
        return sum(W.size for W in self.weights) + (sum(b.size for b in self.biases) if self.biases else 0)

    def copy(self) -> MLP:
        return MLP(
            [W.copy() for W in self.weights],
            None if self.biases is None else [b.copy() for b in self.biases],
            self.activation,
            None if self.input_scale is None else self.input_scale.copy(),
            dict(self.meta),
        )

    def params(self) -> list:
        """Parameter arrays in a fixed order (weights, then biases)."""
        return list(self.weights) + (list(self.biases) if self.biases else [])

    def forward(self, y):
        return mlp_forward(self, y)[0]


def mlp_init(layer_dims, seed, activation="tanh", use_bias=False) -> MLP:
    """Fan-in scaled uniform init: ``W ~ U(-a, a)`` with ``a = sqrt(3 / fan_in)`` (variance ``1/fan_in``)."""
    dims = [int(d) for d in layer_dims]
    if len(dims) < 2 or any(d < 1 for d in dims) or dims[-1] != 4:
        raise InvalidDims(f"layer dims must be positive and end in 4, got {layer_dims}")
    rng = np.random.default_rng(seed)
    weights = []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        a = np.sqrt(3.0 / fan_in)
        weights.append(rng.uniform(-a, a, size=(fan_out, fan_in)))
    biases = [np.zeros(d) for d in dims[1:]] if use_bias else None
    return MLP(weights, biases, activation)


def mlp_forward(model: MLP, y):
    """Return ``(ΔK, cache)``. Accepts one feature vector or a ``(batch, m_y)`` array."""
    y = np.asarray(y, dtype=float)
    single = y.ndim == 1
    Y = y[None, :] if single else y
    if Y.shape[1] != model.layer_dims[0]:
        raise DimensionMismatch(f"expected input of length {model.layer_dims[0]}, got {Y.shape[1]}")
    act = ACTIVATIONS[model.activation][0]
    h = Y * model.input_scale if model.input_scale is not None else Y
    inputs, pre, post = [], [], []
    n = len(model.weights)
    for l, W in enumerate(model.weights):
        inputs.append(h)
        z = h @ W.T
        if model.biases is not None:
            z = z + model.biases[l]
        if l < n - 1:
            a = act(z)
            pre.append(z)
            post.append(a)
            h = a
        else:
            h = z
    cache = {"inputs": inputs, "pre": pre, "post": post, "single": single}
    return (h[0] if single else h), cache


def mlp_backward(model: MLP, cache, grad_delta_k):
    """Reverse pass. Returns ``(param_grads, grad_y)`` with ``param_grads`` ordered like :meth:`MLP.params`.

    For batched input the parameter gradients are summed over the batch.
    """
    g = np.asarray(grad_delta_k, dtype=float)
    g = g[None, :] if cache["single"] else g
    if g.shape[1] != model.layer_dims[-1] or g.shape[0] != cache["inputs"][0].shape[0]:
        raise DimensionMismatch(f"gradient shape {g.shape} does not match the forward pass")
    dact = ACTIVATIONS[model.activation][1]
    n = len(model.weights)
    gW, gb = [None] * n, [None] * n
    for l in range(n - 1, -1, -1):
        gW[l] = g.T @ cache["inputs"][l]
        gb[l] = g.sum(axis=0)
        g = g @ model.weights[l]
        if l > 0:
            g = g * dact(cache["pre"][l - 1], cache["post"][l - 1])
    if model.input_scale is not None:
        g = g * model.input_scale
    grads = gW + (gb if model.biases is not None else [])
    return grads, (g[0] if cache["single"] else g)


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def model_to_dict(model: MLP) -> dict:
    return {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "layer_dims": model.layer_dims,
        "activation": model.activation,
        "use_bias": model.biases is not None,
        "input_scale": None if model.input_scale is None else model.input_scale.tolist(),
        "weights": [W.tolist() for W in model.weights],
        "biases": None if model.biases is None else [b.tolist() for b in model.biases],
        "meta": model.meta,
    }


def model_from_dict(d: dict) -> MLP:
    if d.get("format") != MODEL_FORMAT:
        raise VersionMismatch(f"not a model file (format={d.get('format')!r})")
    if d.get("version") != MODEL_VERSION:
        raise VersionMismatch(f"unsupported model version {d.get('version')!r}")
    weights = [np.array(W, dtype=float) for W in d["weights"]]
    biases = None if d.get("biases") is None else [np.array(b, dtype=float) for b in d["biases"]]
    scale = None if d.get("input_scale") is None else np.array(d["input_scale"], dtype=float)
    model = MLP(weights, biases, d["activation"], scale, dict(d.get("meta") or {}))
    if model.layer_dims != list(d["layer_dims"]):
        raise InvalidDims("stored layer_dims disagree with weight shapes")
    return model


def save_model(model: MLP, path) -> None:
    with open(path, "w") as fh:
        json.dump(model_to_dict(model), fh)


def load_model(path) -> MLP:
    with open(path) as fh:
        return model_from_dict(json.load(fh))
