"""Blocked Gibbs learner for reduced-rank GP-SSMs.

Each sweep draws, in order,

1. the state trajectory from the particle-Gibbs kernel with ancestor sampling,
2. ``Q`` from its inverse-Wishart conditional (``A`` integrated out),
3. ``A`` from its matrix-normal conditional,
4. (optionally) ``C, R`` with the same conjugate machinery,
5. the kernel hyperparameters with a random-walk Metropolis step on ``log theta``.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Literal

import numpy as np
from scipy.linalg import block_diag, solve_triangular

from .distributions import iw_logpdf, mn_logpdf, robust_cholesky, sample_iw, sample_mn
from .model import PriorSpec, RRGPSSM
from .smc import conditional_particle_filter

__all__ = [
    "SufficientStats",
    "sufficient_statistics",
    "trajectory_statistics",
    "posterior_mean_and_scale",
    "sample_Q_posterior",
    "sample_A_posterior",
    "sample_observation_model",
    "HyperParameterBlocks",
    "hyperparameter_log_target",
    "mh_hyperparameter_step",
    "LearnerConfig",
    "ChainRecord",
    "GibbsChain",
    "SamplerError",
    "run_gibbs",
]


class SamplerError(RuntimeError):
    def __init__(self, iteration: int, cause: BaseException):
        super().__init__(f"Gibbs iteration {iteration}: {cause}")
        self.iteration = iteration


@dataclass(frozen=True, eq=False)
class SufficientStats:
    """Regression statistics of ``zeta_t`` on ``z_t``.

    ``Phi = sum zeta zeta^T``, ``Psi = sum zeta z^T``, ``Sigma = sum z z^T``,
    accumulated over ``count`` pairs.
    """

    Phi: np.ndarray
    Psi: np.ndarray
    Sigma: np.ndarray
    count: int

    def __add__(self, other: "SufficientStats") -> "SufficientStats":
        return SufficientStats(
            self.Phi + other.Phi,
            self.Psi + other.Psi,
            self.Sigma + other.Sigma,
            self.count + other.count,
        )

    @classmethod
    def zeros(cls, n: int, m: int) -> "SufficientStats":
        return cls(np.zeros((n, n)), np.zeros((n, m)), np.zeros((m, m)), 0)


def sufficient_statistics(zeta, z) -> SufficientStats:
    """Statistics of targets ``zeta`` (rows) regressed on features ``z`` (rows)."""
    zeta = np.asarray(zeta, dtype=float)
    z = np.asarray(z, dtype=float)
    if zeta.shape[0] != z.shape[0]:
        raise ValueError(f"{zeta.shape[0]} targets but {z.shape[0]} feature rows")
    return SufficientStats(zeta.T @ zeta, zeta.T @ z, z.T @ z, zeta.shape[0])


def trajectory_statistics(states, model_or_basis, inputs=None) -> SufficientStats:
    """Transition statistics of a trajectory: ``zeta_t = x_{t+1}``, ``z_t = features(x_t)``.

    The sum runs over the ``T - 1`` observed transitions.
    """
    x = np.asarray(states, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.shape[0] < 2:
        raise ValueError(f"need a trajectory of length >= 2, got {x.shape[0]}")
    if isinstance(model_or_basis, RRGPSSM):
        u = None if inputs is None else np.asarray(inputs, dtype=float).reshape(x.shape[0], -1)[:-1]
        z = model_or_basis.features(x[:-1], u)
    else:
        z = model_or_basis.evaluate(x[:-1])
    return sufficient_statistics(x[1:], z)


def posterior_mean_and_scale(stats: SufficientStats, V):
    """``(M, P, S)``: posterior mean ``Psi (Sigma+V)^-1``, precision ``P = Sigma+V``
    and scale increment ``Phi - Psi (Sigma+V)^-1 Psi^T``."""
    P = stats.Sigma + np.asarray(V, dtype=float)
    LP = robust_cholesky(P, "Sigma + V")
    # M = Psi P^-1 computed as (P^-1 Psi^T)^T
    W = solve_triangular(LP, stats.Psi.T, lower=True, check_finite=False)
    M = solve_triangular(LP, W, lower=True, trans="T", check_finite=False).T
    S = stats.Phi - W.T @ W
    return M, P, 0.5 * (S + S.T)


def _psd_project(S: np.ndarray, ref_norm: float) -> np.ndarray:
    evals, evecs = np.linalg.eigh(S)
    tol = 1e-8 * max(ref_norm, 1.0)
    if evals.min() < -tol:
        raise np.linalg.LinAlgError(
            f"posterior scale increment is indefinite (min eigenvalue {evals.min():.3g})"
        )
    if evals.min() >= 0:
        return S
    return (evecs * np.clip(evals, 0, None)) @ evecs.T


def sample_Q_posterior(stats: SufficientStats, V, prior: PriorSpec, T_eff: int, rng) -> np.ndarray:
    _, _, S = posterior_mean_and_scale(stats, V)
    S = _psd_project(S, float(np.linalg.norm(stats.Phi)))
    return sample_iw(T_eff + prior.ell_Q, prior.Lambda_Q + S, rng)


def sample_A_posterior(stats: SufficientStats, V, Q, rng) -> np.ndarray:
    M, P, _ = posterior_mean_and_scale(stats, V)
    return sample_mn(M, Q, P, rng)


def sample_observation_model(stats: SufficientStats, V, ell_R: float, Lambda_R, rng):
    """Conjugate draw of ``(C, R)`` for ``y_t = C z_t + e_t`` under an MNIW prior."""
    M, P, S = posterior_mean_and_scale(stats, V)
    S = _psd_project(S, float(np.linalg.norm(stats.Phi)))
    R = sample_iw(stats.count + ell_R, np.asarray(Lambda_R) + S, rng)
    C = sample_mn(M, R, P, rng)
    return C, R


class HyperParameterBlocks:
    """Maps the stacked log-hyperparameter vector onto the bases that share it.

    ``bases`` is the list of weight blocks (state basis, then input basis);
    bases without a kernel contribute a fixed precision.
    """

    def __init__(self, bases):
        self.bases = list(bases)
        self.sizes = [
            0 if getattr(b, "kernel", None) is None else b.kernel.log_params().size
            for b in self.bases
        ]

    @property
    def size(self) -> int:
        return int(sum(self.sizes))

    def get(self) -> np.ndarray:
        parts = [b.kernel.log_params() for b, s in zip(self.bases, self.sizes) if s]
        return np.concatenate(parts) if parts else np.zeros(0)

    def build(self, log_theta):
        """Bases with the given hyperparameters and their block-diagonal precision."""
        log_theta = np.asarray(log_theta, dtype=float)
        out, pos = [], 0
        for b, s in zip(self.bases, self.sizes):
            if s:
                b = b.with_kernel(b.kernel.with_log_params(log_theta[pos : pos + s]))
                pos += s
            out.append(b)
        precisions = [b.prior_precision() for b in out]
        V = precisions[0] if len(precisions) == 1 else block_diag(*precisions)
        return out, V


def hyperparameter_log_target(
    log_theta,
    blocks: HyperParameterBlocks,
    prior: PriorSpec,
    A,
    Q,
    stats: SufficientStats | None = None,
    T_eff: int | None = None,
    target: Literal["conditional", "literal"] = "conditional",
    obs: tuple | None = None,
) -> float:
    """Unnormalised log conditional density of the hyperparameters.

    ``"conditional"``: ``p(theta) MN(A | 0, Q, V(theta))`` (times the same
    term for ``C`` when it shares the basis). ``"literal"``: ``p(theta)``
    times the inverse-Wishart and matrix-normal posterior conditionals of
    ``Q`` and ``A``, each evaluated under ``V(theta)``.
    ``obs`` is ``(C, R, index)`` where ``index`` picks the block whose
    precision the observation weights use.
    """
    try:
        bases, V = blocks.build(log_theta)
    except FloatingPointError:
        return -np.inf
    lp = prior.theta_logpdf(log_theta)
    A = np.atleast_2d(A)
    if target == "conditional":
        lp += mn_logpdf(A, np.zeros_like(A), Q, V)
    elif target == "literal":
        if stats is None or T_eff is None:
            raise ValueError("the literal target needs trajectory statistics")
        M, P, S = posterior_mean_and_scale(stats, V)
        S = _psd_project(S, float(np.linalg.norm(stats.Phi)))
        lp += iw_logpdf(Q, T_eff + prior.ell_Q, prior.Lambda_Q + S)
        lp += mn_logpdf(A, M, Q, P)
    else:
        raise ValueError(f"unknown hyperparameter target {target!r}")
    if obs is not None:
        C, R, idx = obs
        Vc = bases[idx].prior_precision()
        lp += mn_logpdf(C, np.zeros_like(C), R, Vc)
    return float(lp)


def mh_hyperparameter_step(log_theta, log_target, proposal_scale, rng, current: float | None = None):
    """Gaussian random-walk Metropolis step on ``log_theta``.

    ``log_target`` maps a log-hyperparameter vector to its unnormalised
    log-density; ``current``, if given, is its value at ``log_theta``.
    Returns ``(new_log_theta, accepted, log_target_value)``.
    """
    log_theta = np.asarray(log_theta, dtype=float)
    if current is None:
        current = log_target(log_theta)
    if not np.isfinite(current):
        raise FloatingPointError(f"hyperparameter target is not finite at log theta = {log_theta}")
    prop = log_theta + np.asarray(proposal_scale) * rng.standard_normal(log_theta.shape)
    new = log_target(prop)
    log_alpha = new - current if np.isfinite(new) else -np.inf
    if np.log(rng.random()) < log_alpha:
        return prop, True, new
    return log_theta, False, current


@dataclass
class LearnerConfig:
    """Sampler settings.

    ``hyper_target`` selects the hyperparameter conditional, see
    :func:`hyperparameter_log_target`. ``theta_init`` of ``None`` draws the
    starting hyperparameters from their prior.
    """

    K: int = 200
    N: int = 20
    mh_scale: float | np.ndarray = 0.1
    mh_steps: int = 1
    fixed_theta: bool = False
    theta_init: np.ndarray | None = None
    hyper_target: Literal["conditional", "literal"] = "conditional"
    adapt_mh_iterations: int = 0
    learn_observation: bool = False
    keep_states: bool = True

    def __post_init__(self):
        if self.K < 1 or self.N < 2 or self.mh_steps < 0:
            raise ValueError("need K >= 1, N >= 2 and mh_steps >= 0")


@dataclass(frozen=True, eq=False)
class ChainRecord:
    iteration: int
    states: np.ndarray | None
    A: np.ndarray
    Q: np.ndarray
    log_theta: np.ndarray
    accepted: bool
    log_likelihood: float
    C: np.ndarray | None = None
    R: np.ndarray | None = None


@dataclass(eq=False)
class GibbsChain:
    """Chain of Gibbs iterates plus the fixed model structure needed to use them."""

    template: RRGPSSM
    records: list[ChainRecord]
    diagnostics: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.records)

    def __getitem__(self, k):
        if isinstance(k, slice):
            return GibbsChain(self.template, self.records[k], self.diagnostics)
        return self.records[k]

    def model_at(self, k: int | ChainRecord) -> RRGPSSM:
        rec = self.records[k] if isinstance(k, int) else k
        return model_from_record(self.template, rec)

    def after_burn_in(self, fraction: float = 0.25) -> "GibbsChain":
        start = int(np.floor(fraction * len(self.records)))
        return self[start:]

    @property
    def acceptance_rate(self) -> float:
        return float(np.mean([r.accepted for r in self.records])) if self.records else float("nan")


def model_from_record(template: RRGPSSM, rec: ChainRecord) -> RRGPSSM:
    blocks = HyperParameterBlocks(_weight_bases(template))
    bases, _ = blocks.build(rec.log_theta) if blocks.size else (blocks.bases, None)
    m = template.basis.size
    changes = dict(A=rec.A[:, :m], Q=rec.Q, basis=bases[0])
    if template.has_inputs:
        changes.update(A_u=rec.A[:, m:], input_basis=bases[1])
    if rec.C is not None:
        changes.update(C=rec.C, R=rec.R)
    return template.replace(**changes)


def _weight_bases(model: RRGPSSM):
    return [model.basis] + ([model.input_basis] if model.has_inputs else [])


def _obs_features(model: RRGPSSM, x: np.ndarray) -> np.ndarray:
    return model.basis.evaluate(x) if model.obs_on_features else x


def run_gibbs(
    y,
    template: RRGPSSM,
    prior: PriorSpec,
    config: LearnerConfig,
    rng: np.random.Generator,
    inputs=None,
    callback=None,
) -> GibbsChain:
    """Run ``config.K`` sweeps of the blocked Gibbs sampler.

    ``template`` fixes the model structure (bases, measurement model, initial
    state distribution); its ``A``/``Q`` values are ignored since the chain
    starts from a prior draw. ``callback(record)`` is called after each sweep.
    """
    y = np.asarray(y, dtype=float)
    if y.ndim == 1:
        y = y[:, None]
    T = y.shape[0]
    if inputs is not None:
        inputs = np.asarray(inputs, dtype=float).reshape(T, -1)
    blocks = HyperParameterBlocks(_weight_bases(template))
    n_theta = blocks.size
    learn_theta = n_theta > 0 and not config.fixed_theta

    if config.theta_init is not None:
        log_theta = np.asarray(config.theta_init, dtype=float).reshape(n_theta)
        bases, V = blocks.build(log_theta)
    elif learn_theta:
        # prior draws whose basis precision underflows have zero density; redraw
        for _ in range(100):
            log_theta = prior.sample_log_theta(n_theta, rng)
            try:
                bases, V = blocks.build(log_theta)
                break
            except FloatingPointError as e:
                err = e
        else:
            raise ValueError(f"no usable initial hyperparameters in 100 prior draws: {err}")
    else:
        log_theta = blocks.get()
        bases, V = blocks.build(log_theta)
    n_x = template.n_x
    if prior.Lambda_Q.shape != (n_x, n_x):
        raise ValueError(f"Lambda_Q must be {n_x}x{n_x}")

    Q = sample_iw(prior.ell_Q, prior.Lambda_Q, rng)
    A = sample_mn(np.zeros((n_x, V.shape[0])), Q, V, rng)
    m = template.basis.size
    C, R = template.C, template.R
    if config.learn_observation and prior.Lambda_R is None:
        raise ValueError("learning the observation model needs prior.Lambda_R")

    def assemble(A, Q, bases, C, R):
        changes = dict(A=A[:, :m], Q=Q, basis=bases[0], C=C, R=R)
        if template.has_inputs:
            changes.update(A_u=A[:, m:], input_basis=bases[1])
        return template.replace(**changes)

    model = assemble(A, Q, bases, C, R)
    ps = conditional_particle_filter(model, y, config.N, rng, inputs=inputs)
    x = ps.sample_path(rng)

    scale = np.asarray(config.mh_scale, dtype=float)
    records: list[ChainRecord] = []
    timings = {"pgas": 0.0, "Q": 0.0, "A": 0.0, "obs": 0.0, "theta": 0.0}
    ood = []
    accepts = []
    for k in range(1, config.K + 1):
        try:
            t0 = time.perf_counter()
            x, ps = _pgas(model, x, y, config.N, rng, inputs)
            t1 = time.perf_counter()
            stats = trajectory_statistics(x, model, inputs)
            Q = sample_Q_posterior(stats, V, prior, T - 1, rng)
            t2 = time.perf_counter()
            A = sample_A_posterior(stats, V, Q, rng)
            t3 = time.perf_counter()
            obs_idx = None
            if config.learn_observation:
                z_obs = _obs_features(model, x)
                if template.obs_on_features:
                    Vc, obs_idx = bases[0].prior_precision(), 0
                else:
                    Vc = prior.obs_weight_precision * np.eye(n_x)
                C, R = sample_observation_model(
                    sufficient_statistics(y, z_obs), Vc, prior.ell_R, prior.Lambda_R, rng
                )
            t4 = time.perf_counter()
            accepted = False
            if learn_theta:
                obs = (C, R, obs_idx) if obs_idx is not None else None
                target = lambda th: hyperparameter_log_target(  # noqa: E731
                    th, blocks, prior, A, Q, stats, T - 1, config.hyper_target, obs
                )
                value = None
                for _ in range(config.mh_steps):
                    log_theta, acc, value = mh_hyperparameter_step(log_theta, target, scale, rng, value)
                    accepted = accepted or acc
                accepts.append(accepted)
                if k <= config.adapt_mh_iterations:
                    # Robbins-Monro on the log scale towards ~30% acceptance
                    scale = scale * np.exp((float(accepted) - 0.3) / np.sqrt(k))
                bases, V = blocks.build(log_theta)
            t5 = time.perf_counter()
        except (np.linalg.LinAlgError, FloatingPointError, ValueError) as e:
            raise SamplerError(k, e) from e
        model = assemble(A, Q, bases, C, R)
        timings["pgas"] += t1 - t0
        timings["Q"] += t2 - t1
        timings["A"] += t3 - t2
        timings["obs"] += t4 - t3
        timings["theta"] += t5 - t4
        ood.append(int(np.count_nonzero(np.any(np.abs(x) > _domain_bound(model), axis=-1))))
        rec = ChainRecord(
            iteration=k,
            states=x.copy() if config.keep_states else None,
            A=A.copy(),
            Q=Q.copy(),
            log_theta=np.array(log_theta, dtype=float),
            accepted=bool(accepted),
            log_likelihood=ps.log_likelihood,
            C=C.copy() if config.learn_observation else None,
            R=R.copy() if config.learn_observation else None,
        )
        records.append(rec)
        if callback is not None:
            callback(rec)
    diagnostics = {
        "acceptance_rate": float(np.mean(accepts)) if accepts else float("nan"),
        "final_mh_scale": np.atleast_1d(scale).tolist(),
        "timings": {k: v / config.K for k, v in timings.items()},
        "out_of_domain": ood,
    }
    return GibbsChain(template.replace(basis=bases[0], **(
        {"input_basis": bases[1], "A_u": A[:, m:]} if template.has_inputs else {}
    ), A=A[:, :m], Q=Q), records, diagnostics)


def _pgas(model, x, y, N, rng, inputs):
    ps = conditional_particle_filter(model, y, N, rng, reference=x, inputs=inputs)
    return ps.sample_path(rng), ps


def _domain_bound(model: RRGPSSM) -> np.ndarray:
    dom = getattr(model.basis, "domain", None)
    return np.inf if dom is None else dom.L
