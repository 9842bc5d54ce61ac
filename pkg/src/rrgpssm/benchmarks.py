"""Ground-truth simulators for the two synthetic benchmark systems."""
from __future__ import annotations

import numpy as np

from .data import Dataset

__all__ = ["tanh_dynamics", "kink_dynamics", "gen_benchmark1", "gen_benchmark2"]


def tanh_dynamics(x):
    return np.tanh(2.0 * np.asarray(x, dtype=float))


def kink_dynamics(x):
    """``x + 1`` below 4, ``-4 x + 21`` from 4 on (continuous at 4)."""
    x = np.asarray(x, dtype=float)
    return np.where(x < 4.0, x + 1.0, -4.0 * x + 21.0)


def _simulate(f, T, seed, q, r, x1):
    if T < 1:
        raise ValueError(f"T must be at least 1, got {T}")
    rng = np.random.default_rng(seed)
    w = np.sqrt(q) * rng.standard_normal(T)
    e = np.sqrt(r) * rng.standard_normal(T)
    x = np.empty(T)
    x[0] = rng.standard_normal() if x1 is None else x1
    for t in range(T - 1):
        x[t + 1] = f(x[t]) + w[t]
    y = x + e
    ds = Dataset(y[:, None], t=np.arange(1, T + 1, dtype=float), x=x[:, None])
    return ds, x[:, None]


def gen_benchmark1(T: int = 500, seed: int | None = None, q: float = 0.1, r: float = 0.1, x1=None):
    """``x_{t+1} = tanh(2 x_t) + w_t``, ``y_t = x_t + e_t``; returns ``(dataset, states)``."""
    return _simulate(tanh_dynamics, T, seed, q, r, x1)


def gen_benchmark2(T: int = 500, seed: int | None = None, q: float = 1.0, r: float = 1.0, x1=None):
    """Piecewise-linear kink system with ``y_t = x_t + e_t``; returns ``(dataset, states)``."""
    return _simulate(kink_dynamics, T, seed, q, r, x1)
