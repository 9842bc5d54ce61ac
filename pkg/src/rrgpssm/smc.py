"""Bootstrap and conditional particle filters.

The conditional filter with ancestor sampling keeps the reference trajectory
in the last particle slot and re-draws its ancestor at every step, which
gives a Markov kernel on trajectories that leaves the smoothing distribution
invariant for any N >= 2.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .model import RRGPSSM

__all__ = [
    "ParticleCollapseError",
    "ParticleSystem",
    "systematic_resampling",
    "conditional_particle_filter",
    "bootstrap_filter",
    "pgas_kernel",
]

_LOG_2PI = np.log(2.0 * np.pi)


class ParticleCollapseError(FloatingPointError):
    """All particle weights vanished at some time step."""

    def __init__(self, t: int):
        super().__init__(f"all particle weights are zero (log-weight -inf) at t={t}")
        self.t = t


def systematic_resampling(weights, n: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``n`` ancestor indices with one uniform and evenly spaced offsets.

    ``weights`` need not be normalised.
    """
    w = np.asarray(weights, dtype=float)
    cw = np.cumsum(w)
    total = cw[-1]
    if not (total > 0 and np.isfinite(total)):
        raise ValueError("weights must have a positive finite sum")
    u = (rng.random() + np.arange(n)) * (total / n)
    idx = np.searchsorted(cw, u, side="right")
    return np.minimum(idx, w.size - 1)


def conditional_systematic_resampling(weights, b: int, rng: np.random.Generator) -> np.ndarray:
    """Systematic resampling of ``N - 1`` free slots given that one offspring descends from ``b``.

    The unconditional scheme is systematic resampling of ``N`` indices
    followed by a uniform random assignment to slots, so every slot has
    marginal law ``w``. Conditioning one slot on ancestor ``b`` makes the
    offset ``U`` have density proportional to the number of copies of ``b``
    it produces; that is drawn by placing a uniform point in ``b``'s stretch
    of ``[0, N)`` and keeping its fractional part.
    """
    w = np.asarray(weights, dtype=float)
    n = w.size
    cw = np.cumsum(w)
    total = cw[-1]
    lo = (cw[b - 1] if b > 0 else 0.0) * n / total
    hi = cw[b] * n / total
    s = lo + (hi - lo) * rng.random()
    u = s - np.floor(s)
    idx = np.minimum(np.searchsorted(cw, (u + np.arange(n)) * (total / n), side="right"), n - 1)
    hits = np.flatnonzero(idx == b)
    if hits.size == 0:
        # u landed on a boundary through rounding; b still owns the offspring nearest s
        hits = np.array([min(int(np.floor(s)), n - 1)])
        idx[hits[0]] = b
    rest = np.delete(idx, hits[0])
    return rng.permutation(rest)


def _draw_index(w, rng, size=None):
    """Multinomial draws from unnormalised weights."""
    cw = np.cumsum(w)
    u = rng.random(size) * cw[-1]
    return np.minimum(np.searchsorted(cw, u, side="right"), w.size - 1)


def _normalise(logw: np.ndarray, t: int) -> np.ndarray:
    top = np.max(logw)
    if not np.isfinite(top):
        raise ParticleCollapseError(t)
    w = np.exp(logw - top)
    return w / w.sum()


class _Gauss:
    """Precomputed Gaussian log-density pieces for a fixed covariance."""

    def __init__(self, chol: np.ndarray):
        self.chol = chol
        self.inv_chol = np.linalg.inv(chol)
        n = chol.shape[0]
        self.const = -0.5 * n * _LOG_2PI - float(np.sum(np.log(np.diag(chol))))

    def logpdf(self, resid: np.ndarray) -> np.ndarray:
        z = resid @ self.inv_chol.T
        return self.const - 0.5 * np.einsum("...i,...i->...", z, z)


@dataclass(frozen=True, eq=False)
class ParticleSystem:
    """Particles of one filter sweep.

    ``particles[t, i]`` is the state of particle ``i`` at time ``t`` and
    ``ancestors[t, i]`` the index at time ``t`` it descends from when moving
    to ``t + 1``. With a reference trajectory it sits in the last slot.
    """

    particles: np.ndarray  # (T, N, n_x)
    log_weights: np.ndarray  # (T, N)
    ancestors: np.ndarray  # (T - 1, N)
    log_likelihood: float
    reference_index: int | None

    @property
    def N(self) -> int:
        return self.particles.shape[1]

    @property
    def T(self) -> int:
        return self.particles.shape[0]

    def trace(self, index: int) -> np.ndarray:
        """Follow the ancestry of particle ``index`` at the final time back to t = 0."""
        T = self.T
        path = np.empty((T, self.particles.shape[2]))
        i = int(index)
        path[T - 1] = self.particles[T - 1, i]
        for t in range(T - 2, -1, -1):
            i = self.ancestors[t, i]
            path[t] = self.particles[t, i]
        return path

    def trace_all(self) -> np.ndarray:
        """Ancestral paths of all particles, shape ``(N, T, n_x)``."""
        T, N, _ = self.particles.shape
        out = np.empty((N, T, self.particles.shape[2]))
        idx = np.arange(N)
        out[:, T - 1] = self.particles[T - 1]
        for t in range(T - 2, -1, -1):
            idx = self.ancestors[t, idx]
            out[:, t] = self.particles[t, idx]
        return out

    def sample_path(self, rng: np.random.Generator) -> np.ndarray:
        w = _normalise(self.log_weights[-1], self.T - 1)
        J = rng.choice(self.N, p=w)
        return self.trace(J)


def _check_inputs(model: RRGPSSM, y, inputs):
    y = np.asarray(y, dtype=float)
    if y.ndim == 1:
        y = y[:, None]
    if y.shape[1] != model.n_y:
        raise ValueError(f"observations have {y.shape[1]} columns, model expects {model.n_y}")
    if model.has_inputs:
        if inputs is None:
            raise ValueError("model has an input basis; inputs are required")
        inputs = np.asarray(inputs, dtype=float).reshape(y.shape[0], -1)
    return y, inputs


def conditional_particle_filter(
    model: RRGPSSM,
    y,
    N: int,
    rng: np.random.Generator,
    reference=None,
    inputs=None,
    ancestor_sampling: bool = True,
    resampling: str = "systematic",
) -> ParticleSystem:
    """Run a bootstrap filter, optionally conditioned on a reference trajectory.

    Without ``reference`` this is a plain bootstrap filter (all N particles
    are resampled). With it, slot ``N - 1`` is clamped to the reference and,
    if ``ancestor_sampling``, its ancestor is drawn proportionally to
    ``w_t^j p(x_{t+1}^ref | x_t^j)``.
    """
    y, inputs = _check_inputs(model, y, inputs)
    T = y.shape[0]
    n_x = model.n_x
    conditional = reference is not None
    if resampling not in ("systematic", "multinomial"):
        raise ValueError(f"unknown resampling scheme {resampling!r}")
    if N < (2 if conditional else 1):
        raise ValueError(f"need at least {2 if conditional else 1} particles, got {N}")
    if conditional:
        ref = np.asarray(reference, dtype=float).reshape(T, n_x)
    n_free = N - 1 if conditional else N

    obs = _Gauss(model.chol_R)
    trans = _Gauss(model.chol_Q)
    LQ = model.chol_Q
    obs_on_features = model.obs_on_features
    C_T = model.C.T

    X = np.empty((T, N, n_x))
    logW = np.empty((T, N))
    anc = np.empty((max(T - 1, 0), N), dtype=np.intp)

    X[0, :n_free] = model.x1_mean + rng.standard_normal((n_free, n_x)) @ model.chol_x1.T
    if conditional:
        X[0, N - 1] = ref[0]

    loglik = 0.0
    for t in range(T):
        xt = X[t]
        g = (model.basis.evaluate(xt) if obs_on_features else xt) @ C_T
        lw = obs.logpdf(y[t] - g)
        logW[t] = lw
        top = np.max(lw)
        if not np.isfinite(top):
            raise ParticleCollapseError(t)
        w = np.exp(lw - top)
        wsum = w.sum()
        loglik += top + np.log(wsum / N)
        if t == T - 1:
            break
        u = None if inputs is None else inputs[t]
        fx = model.transition_mean(xt, u)
        if conditional:
            if ancestor_sampling:
                la = lw + trans.logpdf(ref[t + 1] - fx)
                b = _draw_index(np.exp(la - np.max(la)), rng)
            else:
                b = N - 1
            if resampling == "systematic":
                a = conditional_systematic_resampling(w, b, rng)
            else:
                a = _draw_index(w, rng, n_free)
            a = np.append(a, b)
        elif resampling == "systematic":
            a = systematic_resampling(w, N, rng)
        else:
            a = _draw_index(w, rng, N)
        X[t + 1, :n_free] = fx[a[:n_free]] + rng.standard_normal((n_free, n_x)) @ LQ.T
        if conditional:
            X[t + 1, N - 1] = ref[t + 1]
        anc[t] = a
    return ParticleSystem(X, logW, anc, float(loglik), N - 1 if conditional else None)


def bootstrap_filter(model: RRGPSSM, y, N: int, rng: np.random.Generator, inputs=None) -> ParticleSystem:
    return conditional_particle_filter(model, y, N, rng, reference=None, inputs=inputs)


def pgas_kernel(
    model: RRGPSSM,
    reference,
    y,
    N: int,
    rng: np.random.Generator,
    inputs=None,
    return_system: bool = False,
):
    """One draw of the particle-Gibbs kernel with ancestor sampling.

    Returns the new trajectory, shape ``(T, n_x)``; with ``return_system``
    also the :class:`ParticleSystem` it was drawn from.
    """
    if N < 2:
        raise ValueError(f"the particle Gibbs kernel needs N >= 2, got {N}")
    ps = conditional_particle_filter(model, y, N, rng, reference=reference, inputs=inputs)
    path = ps.sample_path(rng)
    return (path, ps) if return_system else path


def log_mean_exp(logw, axis=None):
    logw = np.asarray(logw)
    n = logw.shape[axis] if axis is not None else logw.size
    return logsumexp(logw, axis=axis) - np.log(n)
