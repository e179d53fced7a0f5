"""Irregular observation sequences and the continuous control path built from them.

Each channel gets a natural cubic spline through its own observed points,
clamped to the end values outside the observed span. A channel with a single
observation is constant, one with none is identically zero.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.interpolate import CubicSpline

from .errors import EmptyInputError, ShapeError


@dataclass(frozen=True)
class IrregularSeries:
    times: np.ndarray  # (n,)
    values: np.ndarray  # (n, d_x); entries where ``observed`` is False are ignored
    observed: np.ndarray  # (n, d_x) bool

    def __post_init__(self):
        t = np.asarray(self.times, dtype=np.float64)
        v = np.asarray(self.values, dtype=np.float64)
        m = np.asarray(self.observed, dtype=bool)
        if v.ndim != 2 or t.shape != (v.shape[0],) or m.shape != v.shape:
            raise ShapeError(f"times {t.shape}, values {v.shape}, mask {m.shape} do not agree")
        if t.size > 1 and np.any(np.diff(t) <= 0):
            raise ValueError("observation times must be strictly increasing")
        if not np.all(np.isfinite(v[m])):
            raise ValueError("observed values must be finite")
        v = np.where(m, v, 0.0)
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "observed", m)

    @classmethod
    def regular(cls, values, start=0.0, step=1.0) -> "IrregularSeries":
        values = np.asarray(values, dtype=np.float64)
        times = start + step * np.arange(values.shape[0])
        return cls(times, values, np.ones(values.shape, dtype=bool))

    @property
    def n_channels(self) -> int:
        return self.values.shape[1]

    def __len__(self):
        return self.times.shape[0]


@dataclass(frozen=True)
class ChannelPath:
    knots: np.ndarray  # (k,)
    coeffs: np.ndarray  # (4, k-1): cubic, quadratic, linear, constant per segment
    constant: float  # used when k < 2

    def __call__(self, t):
        t = np.asarray(t, dtype=np.float64)
        if self.knots.size < 2:
            return np.full(t.shape, self.constant)
        tc = np.clip(t, self.knots[0], self.knots[-1])
        seg = np.clip(np.searchsorted(self.knots, tc, side="right") - 1, 0, self.knots.size - 2)
        dx = tc - self.knots[seg]
        c = self.coeffs
        return ((c[0, seg] * dx + c[1, seg]) * dx + c[2, seg]) * dx + c[3, seg]


@dataclass(frozen=True)
class ControlPath:
    channels: tuple  # of ChannelPath
    domain: tuple  # (t_start, t_end) of the source series

    @property
    def n_channels(self) -> int:
        return len(self.channels)


def build_path(series: IrregularSeries) -> ControlPath:
    if not series.observed.any():
        raise EmptyInputError("series has no observed entries")
    channels = []
    for c in range(series.n_channels):
        mask = series.observed[:, c]
        t = series.times[mask]
        v = series.values[mask, c]
        if t.size >= 2:
            spline = CubicSpline(t, v, bc_type="natural")
            channels.append(ChannelPath(t, np.array(spline.c), float(v[0])))
        else:
            channels.append(ChannelPath(t, np.zeros((4, 0)), float(v[0]) if t.size else 0.0))
    return ControlPath(tuple(channels), (float(series.times[0]), float(series.times[-1])))


def eval_path(path: ControlPath, t):
    """``X(t)``; scalar ``t`` gives ``(d_x,)``, an array of times gives ``(len(t), d_x)``."""
    t_arr = np.asarray(t, dtype=np.float64)
    out = np.stack([ch(t_arr) for ch in path.channels], axis=-1)
    return out


def initial_input(path: ControlPath):
    return eval_path(path, 0.0)


def path_on_grid(series_list, times) -> np.ndarray:
    """Evaluate the control path of every series at ``times``: ``(B, len(times), d_x)``."""
    return np.stack([eval_path(build_path(s), times) for s in series_list])
