"""Laplace eigenbasis on rectangular domains and kernel spectral densities.

A stationary kernel on the box ``[-L_1, L_1] x ... x [-L_d, L_d]`` is
approximated by

    k(x, x') ~= sum_j S(sqrt(lambda_j)) phi_j(x) phi_j(x')

where ``phi_j`` / ``lambda_j`` are the Dirichlet eigenfunctions / eigenvalues of
the negative Laplacian and ``S`` is the spectral density of the kernel. Only
``S`` depends on the hyperparameters, so the basis can be evaluated once and
reused while the hyperparameters change.
"""
from __future__ import annotations

import copy
import enum
import itertools
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy.special import gammaln

__all__ = [
    "Domain",
    "KernelFamily",
    "KernelSpec",
    "BasisConfig",
    "eigenvalue",
    "eigenfunction",
    "basis_vector",
    "spectral_density",
    "approx_covariance",
    "prior_precision_V",
    "exact_covariance",
    "count_out_of_domain",
]


@dataclass(frozen=True)
class Domain:
    """Rectangular domain ``[-L_1, L_1] x ... x [-L_d, L_d]``."""

    half_widths: tuple[float, ...]

    def __post_init__(self):
        hw = tuple(float(v) for v in np.atleast_1d(self.half_widths))
        if len(hw) == 0:
            raise ValueError("domain needs at least one dimension")
        if not all(np.isfinite(v) and v > 0 for v in hw):
            raise ValueError(f"half widths must be positive and finite, got {hw}")
        object.__setattr__(self, "half_widths", hw)

    @property
    def dim(self) -> int:
        return len(self.half_widths)

    @property
    def L(self) -> np.ndarray:
        return np.asarray(self.half_widths)

    @classmethod
    def from_data(cls, x, factor: float = 4.0) -> "Domain":
        """Size the domain as ``factor`` times the largest absolute value per column."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if x.shape[0] == 1 and x.shape[1] > 1:
            x = x.T
        bound = np.max(np.abs(x), axis=0)
        bound = np.where(bound > 0, bound, 1.0)
        return cls(tuple(factor * bound))


class KernelFamily(str, enum.Enum):
    SQUARED_EXPONENTIAL = "se"
    MATERN = "matern"


@dataclass(frozen=True)
class KernelSpec:
    """Stationary covariance family with hyperparameters.

    ``lengthscales`` has one entry per input dimension. For the Matern family
    with equal lengthscales the spectral density is the usual isotropic one;
    unequal lengthscales give the ARD generalisation obtained by rescaling
    each axis.
    """

    family: KernelFamily
    variance: float
    lengthscales: tuple[float, ...]
    nu: float | None = None

    def __post_init__(self):
        fam = KernelFamily(self.family)
        ls = tuple(float(v) for v in np.atleast_1d(self.lengthscales))
        object.__setattr__(self, "family", fam)
        object.__setattr__(self, "lengthscales", ls)
        object.__setattr__(self, "variance", float(self.variance))
        if not (np.isfinite(self.variance) and self.variance > 0):
            raise ValueError(f"variance must be positive, got {self.variance}")
        if not ls or not all(np.isfinite(v) and v > 0 for v in ls):
            raise ValueError(f"lengthscales must be positive, got {ls}")
        if fam is KernelFamily.MATERN:
            if self.nu is None or not self.nu > 0:
                raise ValueError(f"Matern kernel needs nu > 0, got {self.nu}")
            object.__setattr__(self, "nu", float(self.nu))

    @classmethod
    def squared_exponential(cls, variance=1.0, lengthscales=(1.0,)) -> "KernelSpec":
        return cls(KernelFamily.SQUARED_EXPONENTIAL, variance, lengthscales)

    @classmethod
    def matern(cls, nu=2.5, variance=1.0, lengthscales=(1.0,)) -> "KernelSpec":
        return cls(KernelFamily.MATERN, variance, lengthscales, nu)

    @property
    def dim(self) -> int:
        return len(self.lengthscales)

    def log_params(self) -> np.ndarray:
        """Unconstrained parameter vector ``(log variance, log lengthscales...)``."""
        return np.log(np.r_[self.variance, self.lengthscales])

    def with_log_params(self, log_theta) -> "KernelSpec":
        log_theta = np.asarray(log_theta, dtype=float)
        if log_theta.shape != (1 + self.dim,):
            raise ValueError(
                f"expected {1 + self.dim} log-parameters, got shape {log_theta.shape}"
            )
        theta = np.exp(log_theta)
        return replace(self, variance=theta[0], lengthscales=tuple(theta[1:]))

    def spectral_density(self, omega) -> np.ndarray:
        return spectral_density(self, omega)

    def covariance(self, r) -> np.ndarray:
        return exact_covariance(self, r)


def _as_points(x, dim: int) -> np.ndarray:
    """Coerce ``x`` to shape ``(..., dim)``; a scalar or 1-D array is allowed when dim == 1."""
    x = np.asarray(x, dtype=float)
    if dim == 1 and (x.ndim == 0 or x.shape[-1] != 1):
        x = x[..., None]
    if x.shape[-1] != dim:
        raise ValueError(f"dimension mismatch: expected {dim}, got trailing size {x.shape[-1]}")
    return x


def eigenvalue(index: Sequence[int], domain: Domain) -> float:
    j = np.atleast_1d(np.asarray(index))
    if j.shape != (domain.dim,):
        raise ValueError(f"dimension mismatch: index {tuple(j)} for a {domain.dim}-d domain")
    if np.any(j < 1):
        raise ValueError(f"basis indices start at 1, got {tuple(j)}")
    return float(np.sum((np.pi * j / (2.0 * domain.L)) ** 2))


def eigenfunction(index: Sequence[int], domain: Domain, x) -> np.ndarray | float:
    j = np.atleast_1d(np.asarray(index))
    if j.shape != (domain.dim,):
        raise ValueError(f"dimension mismatch: index {tuple(j)} for a {domain.dim}-d domain")
    if np.any(j < 1):
        raise ValueError(f"basis indices start at 1, got {tuple(j)}")
    pts = _as_points(x, domain.dim)
    L = domain.L
    val = np.prod(np.sin(np.pi * j * (pts + L) / (2.0 * L)) / np.sqrt(L), axis=-1)
    return float(val) if val.ndim == 0 else val


def spectral_density(kernel: KernelSpec, omega) -> np.ndarray | float:
    """Spectral density of ``kernel`` at angular frequencies ``omega`` (shape ``(..., d)``).

    Normalised so that ``(2 pi)^-d * integral S(w) dw = variance``.
    """
    d = kernel.dim
    w = _as_points(omega, d)
    ell = np.asarray(kernel.lengthscales)
    if kernel.family is KernelFamily.SQUARED_EXPONENTIAL:
        log_s = (
            np.log(kernel.variance)
            + 0.5 * d * np.log(2.0 * np.pi)
            + np.sum(np.log(ell))
            - 0.5 * np.sum((ell * w) ** 2, axis=-1)
        )
    else:
        nu = kernel.nu
        log_s = (
            np.log(kernel.variance)
            + d * np.log(2.0)
            + 0.5 * d * np.log(np.pi)
            + gammaln(nu + 0.5 * d)
            - gammaln(nu)
            + nu * np.log(2.0 * nu)
            + np.sum(np.log(ell))
            - (nu + 0.5 * d) * np.log(2.0 * nu + np.sum((ell * w) ** 2, axis=-1))
        )
    s = np.exp(log_s)
    return float(s) if s.ndim == 0 else s


def exact_covariance(kernel: KernelSpec, r) -> np.ndarray | float:
    """Closed-form stationary covariance at lag ``r`` (shape ``(..., d)``)."""
    d = kernel.dim
    r = _as_points(r, d)
    ell = np.asarray(kernel.lengthscales)
    scaled = np.sqrt(np.sum((r / ell) ** 2, axis=-1))
    if kernel.family is KernelFamily.SQUARED_EXPONENTIAL:
        k = kernel.variance * np.exp(-0.5 * scaled**2)
    else:
        from scipy.special import kv, gamma

        nu = kernel.nu
        z = np.sqrt(2.0 * nu) * scaled
        with np.errstate(invalid="ignore", divide="ignore"):
            k = kernel.variance * (2.0 ** (1.0 - nu) / gamma(nu)) * z**nu * kv(nu, z)
        k = np.where(z == 0, kernel.variance, k)
    return float(k) if np.ndim(k) == 0 else k


def _canonical_indices(indices, domain: Domain) -> tuple[tuple[int, ...], ...]:
    idx = [tuple(int(v) for v in np.atleast_1d(j)) for j in indices]
    for j in idx:
        if len(j) != domain.dim:
            raise ValueError(f"dimension mismatch: index {j} for a {domain.dim}-d domain")
        if min(j) < 1:
            raise ValueError(f"basis indices start at 1, got {j}")
    if len(set(idx)) != len(idx):
        raise ValueError("basis indices must be distinct")
    return tuple(sorted(idx, key=lambda j: (eigenvalue(j, domain), j)))


@dataclass(frozen=True)
class BasisConfig:
    """An ordered set of eigenfunctions on a domain together with the kernel prior.

    Indices are kept in canonical order: ascending eigenvalue, ties broken
    lexicographically on the multi-index.
    """

    domain: Domain
    indices: tuple[tuple[int, ...], ...]
    kernel: KernelSpec
    _j: np.ndarray = field(init=False, repr=False, compare=False)
    _eig: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        idx = _canonical_indices(self.indices, self.domain)
        if self.kernel.dim != self.domain.dim:
            raise ValueError(
                f"kernel has {self.kernel.dim} lengthscales but domain is {self.domain.dim}-d"
            )
        object.__setattr__(self, "indices", idx)
        j = np.array(idx, dtype=float).reshape(len(idx), self.domain.dim)
        object.__setattr__(self, "_j", j)
        eig = np.sum((np.pi * j / (2.0 * self.domain.L)) ** 2, axis=1)
        object.__setattr__(self, "_eig", eig)

    @classmethod
    def tensor(cls, domain: Domain, m_per_dim, kernel: KernelSpec) -> "BasisConfig":
        """Full tensor grid ``j_k in {1..m_k}``."""
        m = np.broadcast_to(np.atleast_1d(m_per_dim), (domain.dim,))
        if np.any(m < 0):
            raise ValueError(f"basis counts must be nonnegative, got {tuple(m)}")
        grid = itertools.product(*(range(1, int(mk) + 1) for mk in m))
        return cls(domain, tuple(grid), kernel)

    @property
    def size(self) -> int:
        return len(self.indices)

    @property
    def dim(self) -> int:
        return self.domain.dim

    @property
    def eigenvalues(self) -> np.ndarray:
        return self._eig.copy()

    def with_kernel(self, kernel: KernelSpec) -> "BasisConfig":
        # same indices and domain: skip re-sorting (hot in the hyperparameter step)
        if kernel.dim != self.domain.dim:
            raise ValueError(f"kernel has {kernel.dim} lengthscales but domain is {self.domain.dim}-d")
        new = copy.copy(self)
        object.__setattr__(new, "kernel", kernel)
        return new

    def evaluate(self, x) -> np.ndarray:
        """Basis functions at points ``x`` of shape ``(..., d)``; returns ``(..., m)``."""
        pts = _as_points(x, self.dim)
        L = self.domain.L
        # (..., 1, d) against (m, d)
        arg = np.pi * self._j * (pts[..., None, :] + L) / (2.0 * L)
        return np.prod(np.sin(arg), axis=-1) / np.sqrt(np.prod(L))

    def spectral_weights(self) -> np.ndarray:
        """Prior variances ``S(sqrt(lambda_j))`` in canonical order."""
        if self.size == 0:
            return np.zeros(0)
        # per-axis frequencies pi j_k / (2 L_k); their norm is sqrt(lambda_j)
        omega = np.pi * self._j / (2.0 * self.domain.L)
        return np.atleast_1d(spectral_density(self.kernel, omega))

    def prior_precision(self) -> np.ndarray:
        return prior_precision_V(self)

    def out_of_domain(self, x) -> int:
        return count_out_of_domain(self.domain, x)


def basis_vector(config: BasisConfig, x) -> np.ndarray:
    pts = _as_points(x, config.dim)
    if pts.ndim != 1:
        raise ValueError("basis_vector takes a single point; use BasisConfig.evaluate for batches")
    return config.evaluate(pts)


def approx_covariance(config: BasisConfig, x, x2) -> float:
    if config.size == 0:
        _as_points(x, config.dim)
        _as_points(x2, config.dim)
        return 0.0
    s = config.spectral_weights()
    return float(np.sum(s * config.evaluate(x) * config.evaluate(x2), axis=-1))


_MIN_INVERTIBLE = 1.0 / np.finfo(float).max


def prior_precision_V(config: BasisConfig) -> np.ndarray:
    """Diagonal prior precision ``diag(1 / S(sqrt(lambda_j)))`` of the basis weights."""
    s = config.spectral_weights()
    # 1 / s is finite exactly when s exceeds 1 / max_float
    bad = np.flatnonzero(~((s > _MIN_INVERTIBLE) & (s < np.inf)))
    if bad.size:
        j = config.indices[bad[0]]
        raise FloatingPointError(
            f"spectral density underflows to 0 at basis index {j} "
            f"(lambda={config.eigenvalues[bad[0]]:.6g}); shrink the basis or the lengthscale"
        )
    return np.diag(1.0 / s)


def count_out_of_domain(domain: Domain, x) -> int:
    pts = _as_points(x, domain.dim)
    return int(np.count_nonzero(np.any(np.abs(pts) > domain.L, axis=-1)))
