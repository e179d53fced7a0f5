"""Neural SDDE classifier, its no-delay (Langevin-type) ablation, losses and checkpoints."""
from __future__ import annotations

import base64
import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .errors import ShapeError
from .nn import (
    MLP,
    cross_entropy,
    flatten,
    flatten_grads,
    init_mlp,
    mlp_forward,
    mlp_vjp,
    softmax,
    unflatten,
)
from .path import IrregularSeries, path_on_grid
from .solver import SolverGrid, backward_adjoint, batch_noise, forward_integrate, make_grid

CHECKPOINT_FORMAT = "nsdde-checkpoint"
CHECKPOINT_VERSION = 1
NET_ORDER = ("h", "zeta", "gamma", "sigma", "readout")


@dataclass(frozen=True)
class ModelConfig:
    d_x: int
    n_classes: int
    d_z: int = 32
    width: int = 64
    depth: int = 2
    tau: float = 3.0
    activation: str = "tanh"
    delayed: bool = True

    def sizes(self, name: str) -> list[int]:
        hidden = [self.width] * self.depth
        d_z = self.d_z
        if name == "h":
            return [self.d_x, *hidden, d_z]
        if name == "zeta":
            return [1 + d_z + self.d_x, *hidden, d_z]
        if name == "gamma":
            return [(2 if self.delayed else 1) * d_z, *hidden, d_z]
        if name == "sigma":
            return [1, *hidden, d_z]
        if name == "readout":
            return [d_z, self.n_classes]
        raise KeyError(name)


class NeuralSDDEModel:
    """Encoder ``h``, extended-state net ``zeta``, drift ``gamma``, diffusion ``sigma``, affine readout."""

    delayed = True

    def __init__(self, config: ModelConfig, nets: dict[str, MLP] | None = None, seed=0):
        if config.delayed != self.delayed:
            config = ModelConfig(**{**asdict(config), "delayed": self.delayed})
        if config.tau <= 0:
            raise ValueError("tau must be positive")
        self.config = config
        if nets is None:
            children = np.random.SeedSequence(seed).spawn(len(NET_ORDER))
            nets = {
                name: init_mlp(config.sizes(name), config.activation if name != "readout" else "identity", ss)
                for name, ss in zip(NET_ORDER, children)
            }
        for name in NET_ORDER:
            net = nets[name]
            if net.input_dim != config.sizes(name)[0] or net.output_dim != config.sizes(name)[-1]:
                raise ShapeError(f"network {name!r} has dims {net.sizes}, config wants {config.sizes(name)}")
        self.nets = {name: nets[name] for name in NET_ORDER}
        _, self.layout = flatten(self.nets)

    h = property(lambda self: self.nets["h"])
    zeta = property(lambda self: self.nets["zeta"])
    gamma = property(lambda self: self.nets["gamma"])
    sigma = property(lambda self: self.nets["sigma"])
    readout = property(lambda self: self.nets["readout"])

    @property
    def tau(self) -> float:
        return self.config.tau

    def get_params(self) -> np.ndarray:
        return flatten(self.nets)[0]

    def set_params(self, flat):
        unflatten(flat, self.layout, self.nets)

    def copy(self):
        return type(self)(self.config, {k: v.copy() for k, v in self.nets.items()})

    def grid(self, T: float, steps_per_unit: int = 1) -> SolverGrid:
        return make_grid(T, max(1, int(round(T * steps_per_unit))), self.tau)


class NeuralLSDEModel(NeuralSDDEModel):
    """Same structure with a drift that only sees the current extended state."""

    delayed = False


@dataclass(frozen=True)
class Prediction:
    logits: np.ndarray
    probs: np.ndarray


def _seed_list(seeds, B):
    if np.ndim(seeds) == 0 or isinstance(seeds, int):
        return [(int(seeds), k) for k in range(B)]
    seeds = list(seeds)
    if len(seeds) != B:
        raise ShapeError(f"{len(seeds)} seeds for {B} instances")
    return seeds


def _as_controls(series_or_controls, grid):
    if isinstance(series_or_controls, IrregularSeries):
        return path_on_grid([series_or_controls], grid.times)
    if isinstance(series_or_controls, (list, tuple)) and series_or_controls and isinstance(series_or_controls[0], IrregularSeries):
        return path_on_grid(series_or_controls, grid.times)
    return np.asarray(series_or_controls, dtype=np.float64)


def predict_batch(model, controls, grid: SolverGrid, seeds, draws: int = 1):
    """Logits and probabilities for a batch of controls ``(B, N+1, d_x)``.

    Each instance uses its own noise seed. With ``draws > 1`` probabilities are
    averaged over independent draws and the logits are their logarithm.
    """
    X = _as_controls(controls, grid)
    if X.shape[-1] != model.config.d_x:
        raise ShapeError(f"series has {X.shape[-1]} channels, model expects {model.config.d_x}")
    seeds = _seed_list(seeds, X.shape[0])
    probs = 0.0
    logits = None
    for k in range(draws):
        draw_seeds = seeds if draws == 1 else [_extend(s, k) for s in seeds]
        dW = batch_noise(grid, model.config.d_z, draw_seeds)
        traj = forward_integrate(model, X, grid, dW, store=False)
        logits = mlp_forward(model.readout, traj.states[-1])[0]
        probs = probs + softmax(logits)
    if draws > 1:
        probs = probs / draws
        logits = np.log(probs)
    else:
        probs = softmax(logits)
    return logits, probs


def _extend(seed, k):
    base = list(seed) if isinstance(seed, (list, tuple)) else [int(seed)]
    return (*base, 1_000_003, k)


def predict(model, series, grid: SolverGrid, seed=0, draws: int = 1) -> Prediction:
    logits, probs = predict_batch(model, series, grid, [seed], draws)
    return Prediction(logits[0], probs[0])


predict_lsde = predict


def loss_and_grads(model, controls, labels, grid: SolverGrid, seeds):
    """Mean cross-entropy over a batch and its exact gradient as a flat vector."""
    X = _as_controls(controls, grid)
    labels = np.asarray(labels)
    if X.shape[0] == 0:
        raise ValueError("empty batch")
    seeds = _seed_list(seeds, X.shape[0])
    dW = batch_noise(grid, model.config.d_z, seeds)
    traj = forward_integrate(model, X, grid, dW)
    logits, rc = mlp_forward(model.readout, traj.states[-1])
    loss, logit_grad = cross_entropy(logits, labels)
    zT_bar, g_readout = mlp_vjp(model.readout, rc, logit_grad)
    adj = backward_adjoint(traj, zT_bar, model)
    grads = dict(adj.grads)
    grads["readout"] = g_readout
    return loss, flatten_grads(grads, model.layout)


def batch_loss(model, controls, labels, grid: SolverGrid, seeds) -> float:
    """Loss only; used by the finite-difference checks."""
    X = _as_controls(controls, grid)
    dW = batch_noise(grid, model.config.d_z, _seed_list(seeds, X.shape[0]))
    traj = forward_integrate(model, X, grid, dW, store=False)
    logits = mlp_forward(model.readout, traj.states[-1])[0]
    return cross_entropy(logits, np.asarray(labels))[0]


def msp_outlier_score(pred) -> float | np.ndarray:
    """``1 - max softmax probability``; accepts a Prediction or a ``(B, C)`` probability array."""
    probs = pred.probs if isinstance(pred, Prediction) else np.asarray(pred)
    out = 1.0 - probs.max(axis=-1)
    return float(out) if np.ndim(out) == 0 else out


# Checkpoints ---------------------------------------------------------------

def save_checkpoint(model, path, extra: dict | None = None):
    flat = model.get_params()
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "model": "sdde" if model.delayed else "lsde",
        "config": asdict(model.config),
        "layers": {name: model.nets[name].sizes for name in NET_ORDER},
        "n_params": int(flat.size),
        "params_float64_le": base64.b64encode(flat.astype("<f8").tobytes()).decode("ascii"),
        "extra": extra or {},
    }
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True))


def load_checkpoint(path):
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != CHECKPOINT_FORMAT or doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: not a version-{CHECKPOINT_VERSION} checkpoint")
    cls = NeuralSDDEModel if doc["model"] == "sdde" else NeuralLSDEModel
    model = cls(ModelConfig(**doc["config"]))
    flat = np.frombuffer(base64.b64decode(doc["params_float64_le"]), dtype="<f8").astype(np.float64)
    if flat.size != doc["n_params"]:
        raise ValueError(f"{path}: parameter count mismatch")
    model.set_params(flat)
    return model, doc["extra"]
