"""Dense numerical kernel: MLPs with hand-written VJPs, softmax / cross-entropy,
Adam and a central-difference gradient oracle.

Everything is float64 numpy. Batched inputs have shape ``(B, in)``; parameter
gradients returned by :func:`mlp_vjp` are summed over the batch axis.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import DivergenceError, LabelError, ShapeError, StaleCacheError

ACTIVATIONS = ("tanh", "relu", "identity")


def _act(name, x):
    if name == "tanh":
        return np.tanh(x)
    if name == "relu":
        return np.maximum(x, 0.0)
    return x


def _act_grad(name, pre, post):
    if name == "tanh":
        return 1.0 - post * post
    if name == "relu":
        return (pre > 0).astype(np.float64)
    return np.ones_like(pre)


@dataclass
class Layer:
    weight: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)


class MLP:
    """Feed-forward network; ``activation`` between layers, identity at the end."""

    def __init__(self, layers: Sequence[Layer], activation: str = "tanh"):
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        if not layers:
            raise ValueError("an MLP needs at least one layer")
        for k in range(len(layers) - 1):
            if layers[k].weight.shape[0] != layers[k + 1].weight.shape[1]:
                raise ShapeError(f"layer {k} output does not feed layer {k + 1}")
        for k, layer in enumerate(layers):
            if layer.bias.shape != (layer.weight.shape[0],):
                raise ShapeError(f"layer {k} bias shape {layer.bias.shape}")
        self.layers = list(layers)
        self.activation = activation
        self.version = 0

    @property
    def input_dim(self) -> int:
        return self.layers[0].weight.shape[1]

    @property
    def output_dim(self) -> int:
        return self.layers[-1].weight.shape[0]

    @property
    def sizes(self) -> list[int]:
        return [self.input_dim] + [layer.weight.shape[0] for layer in self.layers]

    @property
    def n_params(self) -> int:
        return sum(layer.weight.size + layer.bias.size for layer in self.layers)

    def touch(self):
        """Mark parameters as modified; caches from earlier forwards become stale."""
        self.version += 1

    def copy(self) -> "MLP":
        layers = [Layer(l.weight.copy(), l.bias.copy()) for l in self.layers]
        return MLP(layers, self.activation)

    def __call__(self, x):
        return mlp_forward(self, x)[0]


@dataclass
class MLPCache:
    net_id: int
    net_version: int
    inputs: list = field(default_factory=list)  # input to each layer
    outputs: list = field(default_factory=list)  # post-activation of each hidden layer
    pres: list = field(default_factory=list)
    squeeze: bool = False


def mlp_forward(net: MLP, x):
    """Evaluate ``net`` at ``x`` of shape ``(in,)`` or ``(B, in)``.

    Returns ``(y, cache)``; the cache is what :func:`mlp_vjp` needs.
    """
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != net.input_dim:
        raise ShapeError(f"expected input of width {net.input_dim}, got shape {x.shape}")
    cache = MLPCache(id(net), net.version, squeeze=squeeze)
    h = x
    last = len(net.layers) - 1
    for k, layer in enumerate(net.layers):
        cache.inputs.append(h)
        pre = h @ layer.weight.T + layer.bias
        cache.pres.append(pre)
        if k < last:
            h = _act(net.activation, pre)
            cache.outputs.append(h)
        else:
            h = pre
    return (h[0] if squeeze else h), cache


def mlp_vjp(net: MLP, cache: MLPCache, y_bar):
    """Pull ``y_bar`` back through ``net``.

    Returns ``(x_bar, grads)`` with ``grads`` a list of ``(dW, db)`` per layer,
    summed over the batch.
    """
    if cache.net_id != id(net) or cache.net_version != net.version:
        raise StaleCacheError("cache was produced by a different network or older parameters")
    g = np.asarray(y_bar, dtype=np.float64)
    if cache.squeeze:
        g = g[None, :]
    if g.shape != cache.pres[-1].shape:
        raise ShapeError(f"cotangent shape {g.shape} does not match output {cache.pres[-1].shape}")
    grads = [None] * len(net.layers)
    for k in range(len(net.layers) - 1, -1, -1):
        if k < len(net.layers) - 1:
            g = g * _act_grad(net.activation, cache.pres[k], cache.outputs[k])
        grads[k] = (g.T @ cache.inputs[k], g.sum(axis=0))
        g = g @ net.layers[k].weight
    return (g[0] if cache.squeeze else g), grads


def init_mlp(sizes: Sequence[int], activation: str = "tanh", seed=0) -> MLP:
    """Uniform fan-in initialisation, ``W ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in))``, zero biases.

    ``seed`` may be an int, a ``SeedSequence`` or a ``Generator``.
    """
    if len(sizes) < 2 or any(int(s) <= 0 for s in sizes):
        raise ValueError(f"layer sizes must be positive, got {list(sizes)}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    layers = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        layers.append(Layer(rng.uniform(-bound, bound, size=(fan_out, fan_in)), np.zeros(fan_out)))
    return MLP(layers, activation)


# Parameter vectors -------------------------------------------------------

@dataclass(frozen=True)
class Slot:
    net: str
    layer: int
    kind: str  # "W" or "b"
    shape: tuple
    start: int
    stop: int


class ParamLayout:
    """Deterministic map from named networks to slices of one flat vector."""

    def __init__(self, nets: dict[str, MLP]):
        slots = []
        pos = 0
        for name, net in nets.items():
            for k, layer in enumerate(net.layers):
                for kind, arr in (("W", layer.weight), ("b", layer.bias)):
                    slots.append(Slot(name, k, kind, arr.shape, pos, pos + arr.size))
                    pos += arr.size
        self.slots = tuple(slots)
        self.size = pos

    def __eq__(self, other):
        return isinstance(other, ParamLayout) and self.slots == other.slots

    def describe(self) -> list[dict]:
        return [
            {"net": s.net, "layer": s.layer, "kind": s.kind, "shape": list(s.shape), "start": s.start}
            for s in self.slots
        ]


def flatten(nets: dict[str, MLP]) -> tuple[np.ndarray, ParamLayout]:
    layout = ParamLayout(nets)
    flat = np.empty(layout.size)
    for s in layout.slots:
        layer = nets[s.net].layers[s.layer]
        flat[s.start:s.stop] = (layer.weight if s.kind == "W" else layer.bias).ravel()
    return flat, layout


def unflatten(flat, layout: ParamLayout, nets: dict[str, MLP]):
    """Write ``flat`` into ``nets`` in place (copies; no aliasing with ``flat``)."""
    flat = np.asarray(flat, dtype=np.float64)
    if flat.shape != (layout.size,):
        raise ShapeError(f"flat vector has shape {flat.shape}, layout expects ({layout.size},)")
    for s in layout.slots:
        layer = nets[s.net].layers[s.layer]
        value = flat[s.start:s.stop].reshape(s.shape).copy()
        if s.kind == "W":
            layer.weight = value
        else:
            layer.bias = value
    for net in nets.values():
        net.touch()


def flatten_grads(grads: dict[str, list], layout: ParamLayout) -> np.ndarray:
    """Pack per-network ``[(dW, db), ...]`` gradient lists using ``layout``."""
    flat = np.zeros(layout.size)
    for s in layout.slots:
        g = grads.get(s.net)
        if g is None:
            continue
        dW, db = g[s.layer]
        flat[s.start:s.stop] = (dW if s.kind == "W" else db).ravel()
    return flat


# Losses ------------------------------------------------------------------

def softmax(logits):
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits):
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def cross_entropy(logits, label):
    """Cross-entropy and its logit gradient.

    For a single ``(C,)`` vector returns ``(loss, softmax - onehot)``. For a
    batch ``(B, C)`` with ``label`` of shape ``(B,)`` the loss is the batch mean
    and the gradient is already divided by ``B``.
    """
    logits = np.asarray(logits, dtype=np.float64)
    single = logits.ndim == 1
    L = logits[None, :] if single else logits
    y = np.atleast_1d(np.asarray(label))
    C = L.shape[1]
    if y.shape != (L.shape[0],):
        raise ShapeError(f"{y.shape[0]} labels for {L.shape[0]} rows")
    if np.any(y < 0) or np.any(y >= C):
        raise LabelError(f"label outside [0, {C})")
    y = y.astype(np.intp)
    logp = log_softmax(L)
    rows = np.arange(L.shape[0])
    losses = -logp[rows, y]
    grad = np.exp(logp)
    grad[rows, y] -= 1.0
    if single:
        return float(losses[0]), grad[0]
    B = L.shape[0]
    return float(losses.mean()), grad / B


# Optimisation -------------------------------------------------------------

@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0

    @classmethod
    def zeros(cls, n: int) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n), 0)


def adam_step(params, grads, state: AdamState, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update. Returns ``(new_params, new_state)``."""
    params = np.asarray(params, dtype=np.float64)
    grads = np.asarray(grads, dtype=np.float64)
    if not (params.shape == grads.shape == state.m.shape == state.v.shape):
        raise ShapeError("params, grads and optimiser state differ in length")
    if not np.all(np.isfinite(grads)):
        bad = np.flatnonzero(~np.isfinite(grads))
        raise DivergenceError(f"non-finite gradient at {bad.size} coordinates (first: {bad[0]})")
    step = state.step + 1
    m = beta1 * state.m + (1.0 - beta1) * grads
    v = beta2 * state.v + (1.0 - beta2) * grads * grads
    m_hat = m / (1.0 - beta1 ** step)
    v_hat = v / (1.0 - beta2 ** step)
    new = params - lr * m_hat / (np.sqrt(v_hat) + eps)
    return new, AdamState(m, v, step)


def finite_diff_grad(loss_fn: Callable[[np.ndarray], float], params, eps: float = 1e-5) -> np.ndarray:
    """Central differences ``(f(p + eps e_i) - f(p - eps e_i)) / (2 eps)`` per coordinate."""
    p = np.array(params, dtype=np.float64)
    out = np.empty_like(p)
    for i in range(p.size):
        old = p[i]
        p[i] = old + eps
        up = loss_fn(p.copy())
        p[i] = old - eps
        down = loss_fn(p.copy())
        p[i] = old
        out[i] = (up - down) / (2.0 * eps)
    return out
