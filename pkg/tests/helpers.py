"""Shared test helpers: hand-built models with known dynamics and fixture paths."""
from pathlib import Path

import numpy as np

from nsdde.model import ModelConfig, NeuralLSDEModel, NeuralSDDEModel
from nsdde.nn import MLP, Layer


def affine(W, b, activation="identity"):
    return MLP([Layer(np.atleast_2d(np.asarray(W, float)), np.atleast_1d(np.asarray(b, float)))], activation)


def linear_model(d_z=1, d_x=1, drift=-1.0, diffusion=0.5, z0=1.0, n_classes=2, tau=3.0, delayed=True):
    """zeta passes z through, gamma = drift * zbar (delayed slot ignored), constant sigma, constant z0."""
    zeta_W = np.zeros((d_z, 1 + d_z + d_x))
    zeta_W[:, 1:1 + d_z] = np.eye(d_z)
    g_in = 2 * d_z if delayed else d_z
    gamma_W = np.zeros((d_z, g_in))
    gamma_W[:, :d_z] = drift * np.eye(d_z)
    nets = {
        "h": affine(np.zeros((d_z, d_x)), np.full(d_z, z0)),
        "zeta": affine(zeta_W, np.zeros(d_z)),
        "gamma": affine(gamma_W, np.zeros(d_z)),
        "sigma": affine(np.zeros((d_z, 1)), np.full(d_z, diffusion)),
        "readout": affine(np.zeros((n_classes, d_z)), np.zeros(n_classes)),
    }
    cfg = ModelConfig(d_x=d_x, n_classes=n_classes, d_z=d_z, depth=0, tau=tau, activation="identity", delayed=delayed)
    cls = NeuralSDDEModel if delayed else NeuralLSDEModel
    return cls(cfg, nets)


def perturbed(model, scale=0.3, seed=0):
    rng = np.random.default_rng(seed)
    model.set_params(model.get_params() + rng.normal(scale=scale, size=model.layout.size))
    return model


def grad_mismatch(analytic, numeric, rel=1e-4, floor=1e-8):
    """Indices where ``|a - n| > max(rel * max(|a|, |n|), floor)``."""
    diff = np.abs(analytic - numeric)
    tol = np.maximum(rel * np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.flatnonzero(diff > tol)


def pairwise_auroc(s, p):
    pos, neg = s[p], s[~p]
    wins = sum((a > b) + 0.5 * (a == b) for a in pos for b in neg)
    return wins / (pos.size * neg.size)


def brute_ap(s, p):
    """Every positive contributes the precision among items scoring at least as high."""
    total = 0.0
    for i in np.flatnonzero(p):
        above = s >= s[i]
        total += p[above].sum() / above.sum()
    return total / p.sum()


def f1_oracle(cm):
    C = cm.shape[0]
    n = cm.sum()
    out = 0.0
    for c in range(C):
        tp = cm[c, c]
        fp = sum(cm[r, c] for r in range(C) if r != c)
        fn = sum(cm[c, k] for k in range(C) if k != c)
        prec = tp / (tp + fp) if tp + fp else 0.0
        rec = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * prec * rec / (prec + rec) if prec + rec else 0.0
        out += (tp + fn) / n * f1
    return out


FIXTURES = Path(__file__).parent / "fixtures"
LSST_MINI = FIXTURES / "lsst_mini.ts"
