"""Minimal dense-network core with shortcut connections.

Fixed architecture family: a stack of dense layers (relu or identity)
whose input is also passed through a linear projection and added to the
stack output, followed by one or more identity heads.  Reverse-mode
gradients are exact for this family and verified against central finite
differences by :func:`gradient_check`.  All math is 64-bit.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

ACTIVATIONS = ("relu", "identity")


@dataclass
class DenseLayer:
    weights: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)
    activation: str = "relu"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.weights.shape[0] != self.bias.shape[0]:
            raise ValueError("weights/bias shape mismatch")
        if not (np.all(np.isfinite(self.weights)) and np.all(np.isfinite(self.bias))):
            raise ValueError("parameters must be finite")

    def forward(self, x: np.ndarray):
        """x: (batch, in) -> ((batch, out), cache)."""
        if x.shape[1] != self.weights.shape[1]:
            raise ValueError(
                f"input width {x.shape[1]} != layer width {self.weights.shape[1]}"
            )
        pre = x @ self.weights.T + self.bias
        out = np.maximum(pre, 0.0) if self.activation == "relu" else pre
        return out, (x, pre)

    def backward(self, cache, grad_out: np.ndarray):
        """Returns (dW, db, dx).  ReLU subgradient at 0 is 0."""
        x, pre = cache
        g = grad_out * (pre > 0) if self.activation == "relu" else grad_out
        return g.T @ x, g.sum(axis=0), g @ self.weights


@dataclass
class ShortcutBlock:
    """Dense body plus a linear input projection added elementwise."""

    body: list[DenseLayer]
    projection: np.ndarray  # (out, in)

    def __post_init__(self):
        if self.projection.shape[0] != self.body[-1].weights.shape[0]:
            raise ValueError("projection output must match body output")
        if self.projection.shape[1] != self.body[0].weights.shape[1]:
            raise ValueError("projection input must match body input")

    def forward(self, x: np.ndarray):
        caches = []
        h = x
        for layer in self.body:
            h, c = layer.forward(h)
            caches.append(c)
        return h + x @ self.projection.T, (x, caches)

    def backward(self, cache, grad_out: np.ndarray):
        """Returns (param grads in declaration order, dx)."""
        x, caches = cache
        grads = [None] * len(self.body)
        g = grad_out
        for i in reversed(range(len(self.body))):
            dw, db, g = self.body[i].backward(caches[i], g)
            grads[i] = (dw, db)
        d_proj = grad_out.T @ x
        dx = g + grad_out @ self.projection
        return grads, d_proj, dx


@dataclass
class ResidualNet:
    """ShortcutBlock followed by one or more identity heads.

    Heads share the block output; the net's parameter order is the
    declaration order: body layers, projection, then heads.
    """

    block: ShortcutBlock
    heads: list[DenseLayer]

    def param_items(self):
        """(name, array) pairs in declaration order."""
        items = []
        for i, layer in enumerate(self.block.body):
            items.append((f"body{i}.W", layer.weights))
            items.append((f"body{i}.b", layer.bias))
        items.append(("projection", self.block.projection))
        for i, head in enumerate(self.heads):
            items.append((f"head{i}.W", head.weights))
            items.append((f"head{i}.b", head.bias))
        return items

    def set_param(self, name: str, value: np.ndarray) -> None:
        for key, arr in self.param_items():
            if key == name:
                arr[...] = value
                return
        raise KeyError(name)

    def forward(self, x: np.ndarray):
        h, block_cache = self.block.forward(x)
        outs, head_caches = [], []
        for head in self.heads:
            o, c = head.forward(h)
            outs.append(o)
            head_caches.append(c)
        return outs, (block_cache, head_caches)

    def backward(self, cache, grad_outs):
        """grad_outs: one upstream gradient per head.

        Returns (grads dict keyed like param_items, dx).
        """
        block_cache, head_caches = cache
        grads: dict[str, np.ndarray] = {}
        g_h = 0.0
        for i, (head, c, g) in enumerate(zip(self.heads, head_caches, grad_outs)):
            dw, db, dh = head.backward(c, g)
            grads[f"head{i}.W"] = dw
            grads[f"head{i}.b"] = db
            g_h = g_h + dh
        body_grads, d_proj, dx = self.block.backward(block_cache, g_h)
        for i, (dw, db) in enumerate(body_grads):
            grads[f"body{i}.W"] = dw
            grads[f"body{i}.b"] = db
        grads["projection"] = d_proj
        return grads, dx


def he_uniform(rng, fan_out, fan_in):
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=(fan_out, fan_in))


def xavier_uniform(rng, fan_out, fan_in):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_out, fan_in))


def build_residual_net(rng, input_dim: int, hidden: list[int], head_dims: list[int]) -> ResidualNet:
    """He-uniform relu body, Xavier-uniform heads and projection."""
    body = []
    fan_in = input_dim
    for width in hidden:
        body.append(
            DenseLayer(
                weights=he_uniform(rng, width, fan_in),
                bias=np.zeros(width),
                activation="relu",
            )
        )
        fan_in = width
    projection = xavier_uniform(rng, hidden[-1], input_dim)
    heads = [
        DenseLayer(
            weights=xavier_uniform(rng, d, hidden[-1]),
            bias=np.zeros(d),
            activation="identity",
        )
        for d in head_dims
    ]
    return ResidualNet(block=ShortcutBlock(body=body, projection=projection), heads=heads)


# --------------------------------------------------------------------------
# Adam
# --------------------------------------------------------------------------


@dataclass
class AdamState:
    learning_rate: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(state: AdamState, params: dict, grads: dict) -> None:
    """Bias-corrected Adam update, in place on ``params``."""
    for g in grads.values():
        if not np.all(np.isfinite(g)):
            raise FloatingPointError("non-finite gradient in Adam step")
    state.step += 1
    t = state.step
    for name, p in params.items():
        g = grads[name]
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        state.m[name] = state.beta1 * state.m[name] + (1 - state.beta1) * g
        state.v[name] = state.beta2 * state.v[name] + (1 - state.beta2) * g**2
        m_hat = state.m[name] / (1 - state.beta1**t)
        v_hat = state.v[name] / (1 - state.beta2**t)
        p -= state.learning_rate * m_hat / (np.sqrt(v_hat) + state.eps)


# --------------------------------------------------------------------------
# Gradient verification
# --------------------------------------------------------------------------


def gradient_check(net: ResidualNet, x: np.ndarray, loss_fn, tolerance: float = 1e-6,
                   h: float = 1e-5, max_entries_per_param: int | None = None, seed: int = 0):
    """Compare analytic parameter gradients against central differences.

    ``loss_fn(outputs) -> (scalar loss, list of dLoss/dOutput)``.  By
    default every partial is checked; ``max_entries_per_param`` subsamples
    entries for large nets.  Returns a report dict with the max relative
    error and the worst parameter.
    """
    outs, cache = net.forward(x)
    _, grad_outs = loss_fn(outs)
    analytic, _ = net.backward(cache, grad_outs)

    rng = np.random.default_rng(seed)
    worst = {"param": None, "index": None, "rel_err": 0.0}
    for name, arr in net.param_items():
        flat = arr.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries_per_param is not None and flat.size > max_entries_per_param:
            idx = rng.choice(flat.size, size=max_entries_per_param, replace=False)
        for k in idx:
            orig = flat[k]
            flat[k] = orig + h
            up, _ = loss_fn(net.forward(x)[0])
            flat[k] = orig - h
            down, _ = loss_fn(net.forward(x)[0])
            flat[k] = orig
            numeric = (up - down) / (2 * h)
            ana = analytic[name].reshape(-1)[k]
            denom = max(abs(numeric), abs(ana), 1e-8)
            rel = abs(numeric - ana) / denom
            if rel > worst["rel_err"]:
                worst = {"param": name, "index": int(k), "rel_err": float(rel)}
    worst["passed"] = worst["rel_err"] < tolerance
    worst["tolerance"] = tolerance
    return worst
