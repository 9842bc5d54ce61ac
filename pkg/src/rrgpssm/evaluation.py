"""Posterior predictive summaries, error metrics and particle-filter forecasts.

Every chain record contributes its own predictive mean and variance per time
step; records are pooled with the law of total variance, so the pooled
variance is the average within-record variance plus the spread of the
record means.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Literal

import numpy as np

from .gibbs import GibbsChain
from .model import RRGPSSM
from .smc import conditional_particle_filter

__all__ = [
    "PredictiveSummary",
    "pool",
    "posterior_predictive",
    "simulate_predictive",
    "rmse",
    "mean_loglik",
    "forecast_k_step",
    "rolling_forecast",
    "write_predictive_csv",
    "VARIANCE_FLOOR",
]

VARIANCE_FLOOR = 1e-12


@dataclass(frozen=True, eq=False)
class PredictiveSummary:
    mean: np.ndarray  # (T_e, n_out)
    var: np.ndarray  # (T_e, n_out)
    count: int
    record_means: np.ndarray | None = None  # (n_records, T_e, n_out)
    record_vars: np.ndarray | None = None

    def __post_init__(self):
        if np.any(self.var < 0):
            raise ValueError("predictive variances must be nonnegative")

    def __len__(self) -> int:
        return self.mean.shape[0]

    def interval(self, z: float = 1.959963984540054):
        sd = np.sqrt(self.var)
        return self.mean - z * sd, self.mean + z * sd


def pool(record_means, record_vars, samples_per_record: int = 1) -> PredictiveSummary:
    """Combine per-record moments: ``E = mean(m_r)``, ``V = mean(v_r) + var(m_r)``."""
    m = np.asarray(record_means, dtype=float)
    v = np.asarray(record_vars, dtype=float)
    if m.shape[0] == 0:
        raise ValueError("no chain records to pool")
    mean = m.mean(axis=0)
    var = v.mean(axis=0) + m.var(axis=0)
    return PredictiveSummary(mean, var, m.shape[0] * samples_per_record, m, v)


def _records(chain: GibbsChain):
    if len(chain) == 0:
        raise ValueError("empty chain slice")
    return [chain.model_at(r) for r in chain.records]


def _obs_moments(model: RRGPSSM, x_mean, x_cov):
    """Moments of ``y = C x + e`` for ``x ~ N(x_mean, x_cov)`` (linear measurement)."""
    mean = x_mean @ model.C.T
    var = np.diag(model.C @ x_cov @ model.C.T + model.R)
    return mean, np.broadcast_to(var, mean.shape)


def posterior_predictive(
    chain: GibbsChain,
    x_eval,
    mode: Literal["one_step", "free_run"] = "one_step",
    S: int | None = None,
    rng: np.random.Generator | None = None,
    inputs=None,
    output: Literal["observation", "state"] = "observation",
) -> PredictiveSummary:
    """Predictive distribution under each chain record, pooled.

    ``one_step``: ``x_eval`` holds true states ``x_1..x_T``; the prediction
    for time ``t + 1`` uses the true ``x_t``, giving ``T - 1`` entries. With
    ``S=None`` the within-record moments are exact (Gaussian), otherwise they
    are estimated from ``S`` simulated draws per record.

    ``free_run``: closed-loop simulation from the initial state ``x_eval[0]``
    for ``len(x_eval)`` steps (``S`` paths per record, default 20).
    """
    models = _records(chain)
    x = np.asarray(x_eval, dtype=float)
    template = chain.template
    if x.ndim == 1:
        x = x[:, None] if template.n_x == 1 else x[None, :]
    if x.shape[-1] != template.n_x:
        raise ValueError(f"states have {x.shape[-1]} columns, model has {template.n_x}")
    if inputs is not None:
        inputs = np.asarray(inputs, dtype=float).reshape(x.shape[0], -1)
    if output not in ("observation", "state"):
        raise ValueError(f"unknown output {output!r}")
    if S is not None or mode == "free_run":
        rng = rng if rng is not None else np.random.default_rng()

    if mode == "one_step":
        if x.shape[0] < 2:
            raise ValueError("one-step prediction needs at least two states")
        u = None if inputs is None else inputs[:-1]
        # the basis does not depend on the hyperparameters: evaluate once
        Z = template.features(x[:-1], u)
        means, varis = [], []
        for mdl in models:
            fx = Z @ mdl.weights.T
            if S is None:
                if output == "state":
                    m, v = fx, np.broadcast_to(np.diag(mdl.Q), fx.shape)
                elif mdl.obs_on_features:
                    raise ValueError("exact moments need a linear measurement map; pass S")
                else:
                    m, v = _obs_moments(mdl, fx, mdl.Q)
            else:
                draws = fx[None] + rng.standard_normal((S,) + fx.shape) @ mdl.chol_Q.T
                if output == "observation":
                    draws = mdl.observation_mean(draws) + (
                        rng.standard_normal(draws.shape[:-1] + (mdl.n_y,)) @ mdl.chol_R.T
                    )
                m, v = draws.mean(axis=0), draws.var(axis=0)
            means.append(m)
            varis.append(v)
        return pool(means, varis, 1 if S is None else S)

    if mode != "free_run":
        raise ValueError(f"unknown mode {mode!r}")
    return simulate_predictive(chain, x.shape[0], S=20 if S is None else S, rng=rng,
                               inputs=inputs, x0=x[0], output=output)


def simulate_predictive(
    chain: GibbsChain,
    T: int,
    S: int = 20,
    rng: np.random.Generator | None = None,
    inputs=None,
    x0=None,
    output: Literal["observation", "state"] = "observation",
) -> PredictiveSummary:
    """Free-run (closed-loop) simulation of ``T`` steps, ``S`` paths per record.

    ``x0`` is the state at the first output step: one shared state ``(n_x,)``,
    one per record ``(n_records, n_x)``, or ``None`` to draw it from each
    model's initial-state distribution.
    """
    models = _records(chain)
    rng = rng if rng is not None else np.random.default_rng()
    n_x = chain.template.n_x
    if x0 is not None:
        x0 = np.asarray(x0, dtype=float)
        x0 = np.broadcast_to(x0.reshape(-1, n_x) if x0.ndim > 1 else x0, (len(models), n_x))
    if inputs is not None:
        inputs = np.asarray(inputs, dtype=float).reshape(T, -1)
    means, varis = [], []
    for r, mdl in enumerate(models):
        paths = np.empty((T, S, n_x))
        if x0 is None:
            paths[0] = mdl.x1_mean + rng.standard_normal((S, n_x)) @ mdl.chol_x1.T
        else:
            paths[0] = x0[r]
        for t in range(T - 1):
            u = None if inputs is None else inputs[t]
            paths[t + 1] = mdl.transition_mean(paths[t], u) + rng.standard_normal((S, n_x)) @ mdl.chol_Q.T
        out = paths
        if output == "observation":
            out = mdl.observation_mean(paths) + rng.standard_normal((T, S, mdl.n_y)) @ mdl.chol_R.T
        means.append(out.mean(axis=1))
        varis.append(out.var(axis=1))
    return pool(means, varis, S)


def _check_lengths(pred: PredictiveSummary, y_eval) -> np.ndarray:
    y = np.asarray(y_eval, dtype=float)
    if y.ndim == 1:
        y = y[:, None]
    if y.shape != pred.mean.shape:
        raise ValueError(f"evaluation data shape {y.shape} does not match predictions {pred.mean.shape}")
    return y


def rmse(pred: PredictiveSummary, y_eval) -> float:
    y = _check_lengths(pred, y_eval)
    return float(np.sqrt(np.mean(np.sum((pred.mean - y) ** 2, axis=1))))


def mean_loglik(pred: PredictiveSummary, y_eval) -> float:
    """Average Gaussian log-density of the data under the pooled (diagonal) predictive."""
    y = _check_lengths(pred, y_eval)
    v = np.maximum(pred.var, VARIANCE_FLOOR)
    lp = -0.5 * (np.log(2 * np.pi * v) + (y - pred.mean) ** 2 / v)
    return float(np.mean(np.sum(lp, axis=1)))


def _filter_final(model: RRGPSSM, y, N_f, rng, inputs):
    ps = conditional_particle_filter(model, y, N_f, rng, inputs=inputs)
    lw = ps.log_weights[-1]
    w = np.exp(lw - lw.max())
    return ps.particles[-1], w / w.sum()


def _propagate_moments(model, particles, w, k, rng, u_future):
    """Weighted moments of y (or x) over horizons 1..k from weighted particles."""
    xs = particles
    means, varis = [], []
    for h in range(k):
        u = None if u_future is None else u_future[h]
        xs = model.transition_mean(xs, u) + rng.standard_normal(xs.shape) @ model.chol_Q.T
        g = model.observation_mean(xs)
        m = w @ g
        v = w @ (g - m) ** 2 + np.diag(model.R)
        means.append(m)
        varis.append(v)
    return np.array(means), np.array(varis)


def forecast_k_step(
    chain: GibbsChain,
    y_history,
    k: int,
    N_f: int = 500,
    rng: np.random.Generator | None = None,
    u_history=None,
    u_future=None,
) -> PredictiveSummary:
    """Predict ``y_{T+1..T+k}`` given ``y_{1:T}``.

    Per record: a bootstrap filter over the history, then the weighted
    filter particles are propagated ``k`` steps without conditioning.
    """
    if k < 1:
        raise ValueError(f"horizon must be at least 1, got {k}")
    rng = rng if rng is not None else np.random.default_rng()
    y = np.asarray(y_history, dtype=float)
    if y.ndim == 1:
        y = y[:, None]
    if u_future is not None:
        u_future = np.asarray(u_future, dtype=float).reshape(k, -1)
    means, varis = [], []
    for mdl in _records(chain):
        if u_history is not None:
            # the last history input drives the first forecast step
            uh = np.asarray(u_history, dtype=float).reshape(y.shape[0], -1)
            uf = np.vstack([uh[-1:], u_future[:-1]]) if u_future is not None else None
        else:
            uh, uf = None, None
        x, w = _filter_final(mdl, y, N_f, rng, uh)
        m, v = _propagate_moments(mdl, x, w, k, rng, uf)
        means.append(m)
        varis.append(v)
    return pool(means, varis, N_f)


def rolling_forecast(
    chain: GibbsChain,
    y,
    k: int,
    N_f: int = 500,
    rng: np.random.Generator | None = None,
    inputs=None,
) -> PredictiveSummary:
    """``k``-step-ahead predictive of every ``y_{t+k}`` from filtering up to ``t``.

    Entry ``i`` of the result predicts ``y[i + k]``; there are ``T - k`` entries.
    """
    if k < 1:
        raise ValueError(f"horizon must be at least 1, got {k}")
    rng = rng if rng is not None else np.random.default_rng()
    y = np.asarray(y, dtype=float)
    if y.ndim == 1:
        y = y[:, None]
    T = y.shape[0]
    if T <= k:
        raise ValueError("series is shorter than the forecast horizon")
    if inputs is not None:
        inputs = np.asarray(inputs, dtype=float).reshape(T, -1)
    means, varis = [], []
    for mdl in _records(chain):
        ps = conditional_particle_filter(mdl, y, N_f, rng, inputs=inputs)
        m_r = np.empty((T - k, mdl.n_y))
        v_r = np.empty((T - k, mdl.n_y))
        for t in range(T - k):
            lw = ps.log_weights[t]
            w = np.exp(lw - lw.max())
            uf = None if inputs is None else inputs[t : t + k]
            m, v = _propagate_moments(mdl, ps.particles[t], w / w.sum(), k, rng, uf)
            m_r[t], v_r[t] = m[-1], v[-1]
        means.append(m_r)
        varis.append(v_r)
    return pool(means, varis, N_f)


def write_predictive_csv(path, pred: PredictiveSummary, t=None) -> None:
    lo, hi = pred.interval()
    n_out = pred.mean.shape[1]
    t = np.arange(1, len(pred) + 1) if t is None else np.asarray(t)
    cols = ["mean", "var", "lo95", "hi95"]
    if n_out == 1:
        header = ["t"] + cols
    else:
        header = ["t"] + [f"{c}{j + 1}" for j in range(n_out) for c in cols]
    with Path(path).open("w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(header)
        for i in range(len(pred)):
            row = [repr(float(t[i]))]
            for j in range(n_out):
                row += [repr(float(a[i, j])) for a in (pred.mean, pred.var, lo, hi)]
            wr.writerow(row)
