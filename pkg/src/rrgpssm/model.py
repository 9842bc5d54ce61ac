"""Reduced-rank GP state space model.

    x_{t+1} = A Phi(x_t) [+ A_u Phi_u(u_t)] + w_t,    w_t ~ N(0, Q)
    y_t     = C x_t  (or C Phi(x_t))        + e_t,    e_t ~ N(0, R)
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np

from .distributions import mvn_logpdf, robust_cholesky
from .kernel_basis import BasisConfig

__all__ = [
    "Trajectory",
    "PriorSpec",
    "RRGPSSM",
    "transition_mean",
    "simulate",
    "obs_loglik",
]


def _as_matrix(a, shape=None, name="matrix") -> np.ndarray:
    a = np.atleast_2d(np.asarray(a, dtype=float))
    if shape is not None and a.shape != shape:
        raise ValueError(f"{name} has shape {a.shape}, expected {shape}")
    return a


@dataclass(frozen=True, eq=False)
class Trajectory:
    states: np.ndarray | None
    observations: np.ndarray
    inputs: np.ndarray | None = None

    def __post_init__(self):
        y = np.asarray(self.observations, dtype=float)
        if y.ndim == 1:
            y = y[:, None]
        object.__setattr__(self, "observations", y)
        T = y.shape[0]
        for name in ("states", "inputs"):
            v = getattr(self, name)
            if v is None:
                continue
            v = np.asarray(v, dtype=float)
            if v.ndim == 1:
                v = v[:, None]
            if v.shape[0] != T:
                raise ValueError(f"{name} has {v.shape[0]} rows, observations have {T}")
            object.__setattr__(self, name, v)
        for name in ("states", "observations", "inputs"):
            v = getattr(self, name)
            if v is not None and not np.all(np.isfinite(v)):
                raise ValueError(f"{name} contain non-finite values")

    def __len__(self) -> int:
        return self.observations.shape[0]


@dataclass(frozen=True, eq=False)
class PriorSpec:
    """Priors on the process noise, the kernel hyperparameters and (optionally) R.

    Kernel hyperparameters get independent normal priors on their logarithms.
    """

    ell_Q: float = 10.0
    Lambda_Q: np.ndarray = field(default_factory=lambda: np.eye(1))
    theta_mean: float | np.ndarray = 0.0
    theta_std: float | np.ndarray = 2.0
    ell_R: float = 10.0
    Lambda_R: np.ndarray | None = None
    obs_weight_precision: float = 1.0

    def __post_init__(self):
        lam = _as_matrix(self.Lambda_Q, name="Lambda_Q")
        object.__setattr__(self, "Lambda_Q", lam)
        n = lam.shape[0]
        if lam.shape != (n, n):
            raise ValueError(f"Lambda_Q must be square, got {lam.shape}")
        if not self.ell_Q > n - 1:
            raise ValueError(f"ell_Q must exceed {n - 1}, got {self.ell_Q}")
        robust_cholesky(lam, "Lambda_Q")
        if np.any(np.asarray(self.theta_std) <= 0):
            raise ValueError("theta prior standard deviations must be positive")
        if self.Lambda_R is not None:
            object.__setattr__(self, "Lambda_R", _as_matrix(self.Lambda_R, name="Lambda_R"))

    @classmethod
    def default(cls, n_x: int, **kw) -> "PriorSpec":
        kw.setdefault("Lambda_Q", np.eye(n_x))
        return cls(**kw)

    def theta_logpdf(self, log_theta) -> float:
        z = (np.asarray(log_theta, dtype=float) - self.theta_mean) / self.theta_std
        norm = np.log(np.broadcast_to(self.theta_std, z.shape)) + 0.5 * np.log(2 * np.pi)
        return float(np.sum(-0.5 * z * z - norm))

    def sample_log_theta(self, size: int, rng: np.random.Generator) -> np.ndarray:
        mean = np.broadcast_to(self.theta_mean, (size,))
        std = np.broadcast_to(self.theta_std, (size,))
        return mean + std * rng.standard_normal(size)


@dataclass(frozen=True, eq=False)
class RRGPSSM:
    """Parameters of a reduced-rank GP-SSM.

    ``basis`` is normally a :class:`BasisConfig`; any object exposing
    ``size``, ``evaluate(x)`` and ``prior_precision()`` works.
    With ``obs_on_features`` the measurement map acts on ``Phi(x)`` instead of ``x``.
    """

    A: np.ndarray
    Q: np.ndarray
    basis: BasisConfig
    C: np.ndarray
    R: np.ndarray
    x1_mean: np.ndarray | None = None
    x1_cov: np.ndarray | None = None
    input_basis: BasisConfig | None = None
    A_u: np.ndarray | None = None
    obs_on_features: bool = False

    def __post_init__(self):
        A = _as_matrix(self.A, name="A")
        n_x, m = A.shape
        if m != self.basis.size:
            raise ValueError(f"A has {m} columns but the basis has {self.basis.size} functions")
        set_ = lambda k, v: object.__setattr__(self, k, v)  # noqa: E731
        set_("A", A)
        set_("Q", _as_matrix(self.Q, (n_x, n_x), "Q"))
        C = _as_matrix(self.C, name="C")
        cols = m if self.obs_on_features else n_x
        if C.shape[1] != cols:
            raise ValueError(f"C has {C.shape[1]} columns, expected {cols}")
        set_("C", C)
        set_("R", _as_matrix(self.R, (C.shape[0], C.shape[0]), "R"))
        mean = np.zeros(n_x) if self.x1_mean is None else np.asarray(self.x1_mean, float).reshape(n_x)
        cov = np.eye(n_x) if self.x1_cov is None else _as_matrix(self.x1_cov, (n_x, n_x), "x1_cov")
        set_("x1_mean", mean)
        set_("x1_cov", cov)
        if (self.input_basis is None) != (self.A_u is None):
            raise ValueError("input_basis and A_u must be given together")
        if self.A_u is not None:
            set_("A_u", _as_matrix(self.A_u, (n_x, self.input_basis.size), "A_u"))

    @property
    def n_x(self) -> int:
        return self.A.shape[0]

    @property
    def n_y(self) -> int:
        return self.C.shape[0]

    @property
    def has_inputs(self) -> bool:
        return self.input_basis is not None

    @cached_property
    def chol_Q(self) -> np.ndarray:
        return robust_cholesky(self.Q, "process noise Q")

    @cached_property
    def chol_R(self) -> np.ndarray:
        return robust_cholesky(self.R, "measurement noise R")

    @cached_property
    def chol_x1(self) -> np.ndarray:
        return robust_cholesky(self.x1_cov, "initial state covariance")

    def replace(self, **changes) -> "RRGPSSM":
        return replace(self, **changes)

    @property
    def weights(self) -> np.ndarray:
        """State and input weights side by side, ``[A, A_u]``."""
        return self.A if self.A_u is None else np.hstack([self.A, self.A_u])

    def features(self, x, u=None) -> np.ndarray:
        """Regressors ``z_t``: ``Phi(x_t)`` followed by ``Phi_u(u_t)`` when inputs are modelled."""
        z = self.basis.evaluate(x)
        if self.input_basis is None:
            return z
        if u is None:
            raise ValueError("model has an input basis; inputs are required")
        zu = self.input_basis.evaluate(u)
        zu = np.broadcast_to(zu, z.shape[:-1] + zu.shape[-1:])
        return np.concatenate([z, zu], axis=-1)

    def transition_mean(self, x, u=None) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape[-1:] != (self.n_x,) and not (self.n_x == 1 and x.ndim <= 1):
            raise ValueError(f"state dimension mismatch: expected {self.n_x}")
        if self.n_x == 1 and (x.ndim == 0 or x.shape[-1] != 1):
            x = x[..., None]
        return self.features(x, u) @ self.weights.T

    def observation_mean(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.n_x == 1 and (x.ndim == 0 or x.shape[-1] != 1):
            x = x[..., None]
        z = self.basis.evaluate(x) if self.obs_on_features else x
        return z @ self.C.T

    def obs_loglik(self, x, y) -> np.ndarray | float:
        """``log N(y | g(x), R)``, batched over the leading axes of ``x``."""
        y = np.atleast_1d(np.asarray(y, dtype=float))
        if y.shape[-1] != self.n_y:
            raise ValueError(f"observation dimension mismatch: expected {self.n_y}")
        return mvn_logpdf(y, self.observation_mean(x), chol=self.chol_R)

    def transition_logpdf(self, x_next, x, u=None) -> np.ndarray | float:
        return mvn_logpdf(x_next, self.transition_mean(x, u), chol=self.chol_Q)

    def simulate(self, T: int, rng: np.random.Generator, inputs=None, x1=None) -> Trajectory:
        if T < 1:
            raise ValueError(f"T must be at least 1, got {T}")
        if self.has_inputs:
            if inputs is None:
                raise ValueError("model has an input basis; inputs are required")
            inputs = np.asarray(inputs, dtype=float).reshape(T, -1)
        x = np.empty((T, self.n_x))
        if x1 is None:
            x[0] = self.x1_mean + self.chol_x1 @ rng.standard_normal(self.n_x)
        else:
            x[0] = np.asarray(x1, dtype=float).reshape(self.n_x)
        LQ = self.chol_Q
        for t in range(T - 1):
            u = None if inputs is None else inputs[t]
            x[t + 1] = self.transition_mean(x[t], u) + LQ @ rng.standard_normal(self.n_x)
        noise = rng.standard_normal((T, self.n_y)) @ self.chol_R.T
        y = self.observation_mean(x) + noise
        return Trajectory(states=x, observations=y, inputs=inputs)


def transition_mean(model: RRGPSSM, x, u=None) -> np.ndarray:
    return model.transition_mean(x, u)


def simulate(model: RRGPSSM, T: int, rng: np.random.Generator, inputs=None) -> Trajectory:
    return model.simulate(T, rng, inputs)


def obs_loglik(model: RRGPSSM, x, y):
    return model.obs_loglik(x, y)
