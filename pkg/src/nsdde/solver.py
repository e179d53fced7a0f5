"""Euler-Maruyama integration of the delayed latent SDE and its exact discrete adjoint.

The update, for ``i = 0 .. N-1`` on a uniform grid ``t_i = i * dt``::

    zbar_i  = zeta(t_i, z_i, X(t_i))
    zdel_i  = zbar_{i-d}            (zero vector while i < d)
    z_{i+1} = z_i + gamma(zbar_i, zdel_i) * dt + sigma(t_i / T) * dW_i

with ``z_0 = h(X(0))``. Models without delay call ``gamma(zbar_i)``.

:func:`backward_adjoint` reverses exactly these steps. The cotangent of each
extended state collects the current-slot contribution from its own step and the
delayed-slot contribution from step ``i + d``; diffusion gradients reuse the
stored increments ``dW_i``.

The solver only needs an object with MLP attributes ``h``, ``zeta``, ``gamma``,
``sigma`` and a boolean ``delayed``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DivergenceError, GridError, ShapeError, StaleCacheError
from .nn import mlp_forward, mlp_vjp
from .path import ControlPath, eval_path

STATE_BOUND = 1e6


@dataclass(frozen=True)
class SolverGrid:
    T: float
    N: int
    dt: float
    tau: float
    delay_steps: int

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.N + 1)


def make_grid(T: float, N: int, tau: float) -> SolverGrid:
    if not (T > 0 and N >= 1 and tau > 0):
        raise ValueError(f"need T > 0, N >= 1, tau > 0 (got T={T}, N={N}, tau={tau})")
    dt = T / N
    if dt > tau * (1 + 1e-12):
        raise GridError(f"step {dt:g} exceeds delay {tau:g}")
    d = max(1, int(round(tau / dt)))
    return SolverGrid(float(T), int(N), dt, float(tau), d)


@dataclass(frozen=True)
class NoiseRealization:
    increments: np.ndarray  # (N, d_z) or (B, N, d_z)
    seed: object = None


def sample_noise(grid: SolverGrid, d_z: int, seed) -> NoiseRealization:
    if d_z < 1:
        raise ValueError("d_z must be at least 1")
    rng = np.random.default_rng(seed)
    return NoiseRealization(rng.normal(0.0, np.sqrt(grid.dt), size=(grid.N, d_z)), seed)


def batch_noise(grid: SolverGrid, d_z: int, seeds) -> np.ndarray:
    """Stack per-instance increments, one independent stream per seed: ``(B, N, d_z)``."""
    return np.stack([sample_noise(grid, d_z, s).increments for s in seeds])


@dataclass
class LatentTrajectory:
    grid: SolverGrid
    states: np.ndarray  # (N+1, B, d_z)
    extended: np.ndarray  # (N, B, d_z)
    noise: np.ndarray  # (B, N, d_z)
    single: bool = False
    h_cache: object = None
    caches: list = field(default_factory=list)  # per step: (zeta, gamma, sigma) caches
    model_ref: object = None

    @property
    def final(self) -> np.ndarray:
        return self.states[-1][0] if self.single else self.states[-1]


@dataclass
class AdjointState:
    lambdas: np.ndarray  # (N+1, B, d_z); lambdas[i] = dL/dz_i
    grads: dict  # net name -> [(dW, db), ...]


def _controls(path_or_controls, grid: SolverGrid):
    if isinstance(path_or_controls, ControlPath):
        return eval_path(path_or_controls, grid.times)[None], True
    X = np.asarray(path_or_controls, dtype=np.float64)
    if X.ndim == 2:
        return X[None], True
    return X, False


def forward_integrate(model, path_or_controls, grid: SolverGrid, noise, store: bool = True) -> LatentTrajectory:
    """Integrate one path (``ControlPath`` or ``(N+1, d_x)`` array) or a batch ``(B, N+1, d_x)``.

    ``noise`` is a :class:`NoiseRealization` or an increment array matching the
    batch. With ``store=False`` no VJP caches are kept (inference only).
    """
    X, single = _controls(path_or_controls, grid)
    dW = noise.increments if isinstance(noise, NoiseRealization) else np.asarray(noise, dtype=np.float64)
    if dW.ndim == 2:
        dW = dW[None]
    B = X.shape[0]
    d_z = model.h.output_dim
    if X.shape[1] < grid.N + 1:
        raise ShapeError(f"controls cover {X.shape[1]} grid points, grid needs {grid.N + 1}")
    if dW.shape != (B, grid.N, d_z):
        raise ShapeError(f"noise shape {dW.shape}, expected {(B, grid.N, d_z)}")

    d = grid.delay_steps
    dt = grid.dt
    z, h_cache = mlp_forward(model.h, X[:, 0])
    states = np.empty((grid.N + 1, B, d_z))
    extended = np.empty((grid.N, B, d_z))
    states[0] = z
    zero = np.zeros((B, d_z))
    caches = []
    for i in range(grid.N):
        t = i * dt
        zin = np.concatenate([np.full((B, 1), t), z, X[:, i]], axis=1)
        zbar, zc = mlp_forward(model.zeta, zin)
        extended[i] = zbar
        if model.delayed:
            zdel = extended[i - d] if i >= d else zero
            gin = np.concatenate([zbar, zdel], axis=1)
        else:
            gin = zbar
        g, gc = mlp_forward(model.gamma, gin)
        s, sc = mlp_forward(model.sigma, np.array([[t / grid.T]]))
        z = z + g * dt + s * dW[:, i]
        if not np.all(np.isfinite(z)) or np.abs(z).max() > STATE_BOUND:
            raise DivergenceError(f"latent state left the bounded region at step {i + 1}")
        states[i + 1] = z
        if store:
            caches.append((zc, gc, sc))
    return LatentTrajectory(
        grid, states, extended, dW, single,
        h_cache if store else None, caches, model if store else None,
    )


def _add(acc, grads):
    if acc is None:
        return [(dW.copy(), db.copy()) for dW, db in grads]
    for k, (dW, db) in enumerate(grads):
        acc[k][0][...] += dW
        acc[k][1][...] += db
    return acc


def _zeros_like_net(net):
    return [(np.zeros_like(l.weight), np.zeros_like(l.bias)) for l in net.layers]


def backward_adjoint(trajectory: LatentTrajectory, loss_grad_at_T, model=None) -> AdjointState:
    """Exact reverse sweep of :func:`forward_integrate` for a cotangent at ``z_N``.

    Gradients are summed over the batch; pass a batch-mean cotangent to get
    gradients of a batch-mean loss.
    """
    model = model if model is not None else trajectory.model_ref
    grid = trajectory.grid
    if model is None or trajectory.h_cache is None or len(trajectory.caches) != grid.N:
        raise StaleCacheError("trajectory was integrated without stored caches")
    lam = np.asarray(loss_grad_at_T, dtype=np.float64)
    if lam.ndim == 1:
        lam = lam[None]
    B, d_z = trajectory.states.shape[1:]
    if lam.shape != (B, d_z):
        raise ShapeError(f"cotangent shape {lam.shape}, expected {(B, d_z)}")

    d = grid.delay_steps
    dt = grid.dt
    dW = trajectory.noise
    mu = np.zeros((grid.N, B, d_z))
    lambdas = np.empty((grid.N + 1, B, d_z))
    lambdas[grid.N] = lam
    acc = {name: _zeros_like_net(getattr(model, name)) for name in ("h", "zeta", "gamma", "sigma")}
    for i in range(grid.N - 1, -1, -1):
        zc, gc, sc = trajectory.caches[i]
        gin_bar, g_gamma = mlp_vjp(model.gamma, gc, lam * dt)
        _add(acc["gamma"], g_gamma)
        if model.delayed:
            mu[i] += gin_bar[:, :d_z]
            if i >= d:
                mu[i - d] += gin_bar[:, d_z:]
        else:
            mu[i] += gin_bar
        s_bar = (lam * dW[:, i]).sum(axis=0, keepdims=True)
        _, g_sigma = mlp_vjp(model.sigma, sc, s_bar)
        _add(acc["sigma"], g_sigma)
        zin_bar, g_zeta = mlp_vjp(model.zeta, zc, mu[i])
        _add(acc["zeta"], g_zeta)
        lam = lam + zin_bar[:, 1:1 + d_z]
        lambdas[i] = lam
    _, g_h = mlp_vjp(model.h, trajectory.h_cache, lam)
    _add(acc["h"], g_h)
    return AdjointState(lambdas, acc)
