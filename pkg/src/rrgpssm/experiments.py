"""Experiment orchestration: configuration, run directories and the benchmark drivers.

Every run writes into one directory with fixed file names:

``chain.ndjson``
    all Gibbs records (burn-in included), see :mod:`rrgpssm.chain_io`
``metrics.json``
    flat document ``{rmse, ll, T_e, protocol, burn_in, seed, ...}``
``predictive.csv``
    pooled predictive ``t, mean, var, lo95, hi95``
``manifest.json``
    resolved configuration, package version, seed and protocol note

Benchmark modes also write ``f_posterior.csv`` (plot data for the learned
transition function) and ``summary.csv`` (one results-table row). With
``chains > 1`` each chain runs with seed ``seed + i`` in ``chain_<i>/`` and
the top-level files aggregate them.
"""
from __future__ import annotations

import csv
import dataclasses
import json
import math
import platform
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from . import __version__
from .benchmarks import gen_benchmark1, gen_benchmark2, kink_dynamics, tanh_dynamics
from .chain_io import ChainWriter, read_chain
from .data import Dataset, load_csv
from .evaluation import (
    PredictiveSummary,
    mean_loglik,
    posterior_predictive,
    rmse,
    rolling_forecast,
    simulate_predictive,
    write_predictive_csv,
)
from .gibbs import GibbsChain, LearnerConfig, run_gibbs
from .kernel_basis import BasisConfig, Domain, KernelSpec
from .model import PriorSpec, RRGPSSM
from .smc import bootstrap_filter

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "MODES",
    "auto_half_widths",
    "build_template",
    "run_experiment",
    "load_config",
]

MODES = ("learn", "forecast", "eval", "benchmark1", "benchmark2")

BENCHMARK_PROTOCOL = (
    "one-step-ahead prediction of x[t+1] given the true x[t] on a held-out trajectory "
    "of T_eval steps; the target is the noiseless next state and the predictive "
    "variance includes the process noise Q"
)


class ConfigError(ValueError):
    """Invalid or incomplete experiment configuration (a usage error)."""


def _opt(help: str, **kw) -> Any:
    default = kw.pop("default", None)
    meta = {"help": help, **kw}
    if isinstance(default, list):
        return field(default_factory=lambda: list(default), metadata=meta)
    return field(default=default, metadata=meta)


@dataclass
class ExperimentConfig:
    """Everything needed to reproduce a run; serialisable as flat JSON."""

    mode: str = _opt("run mode", default="learn", choices=MODES)
    data: str | None = _opt("CSV with observations (t, u*, y*, optional x*)")
    eval_data: str | None = _opt("held-out CSV for evaluation")
    chain: str | None = _opt("chain file to evaluate or forecast from")
    output_dir: str = _opt("run directory", default="run")
    n_train: int | None = _opt("use the first n_train rows of --data for training, the rest for evaluation", type=int)
    # model
    n_x: int = _opt("state dimension", default=1, type=int)
    m: list[int] = _opt("basis functions per state dimension", default=[20], type=int, nargs="+")
    half_widths: list[float] | None = _opt("domain half-widths L (default: automatic)", type=float, nargs="+")
    domain_factor: float = _opt("automatic domain: L = factor x state bound", default=4.0, type=float)
    kernel: str = _opt("covariance function family", default="se", choices=("se", "matern"))
    nu: float = _opt("Matern smoothness", default=2.5, type=float)
    m_input: list[int] | None = _opt("input basis functions per input dimension (default 8 when inputs exist)", type=int, nargs="+")
    input_half_widths: list[float] | None = _opt("input-domain half-widths", type=float, nargs="+")
    C: list[float] | None = _opt("measurement matrix, row-major (default: observe the first n_y states)", type=float, nargs="+")
    R: list[float] = _opt("measurement noise: scalar (times I) or full row-major matrix", default=[1.0], type=float, nargs="+")
    x1_mean: list[float] | None = _opt("initial-state mean", type=float, nargs="+")
    x1_var: float = _opt("initial-state variance (times I)", default=1.0, type=float)
    learn_observation: bool = _opt("also learn C and R", default=False, type=bool)
    # priors
    ell_Q: float = _opt("inverse-Wishart degrees of freedom for Q", default=10.0, type=float)
    Lambda_Q: float = _opt("inverse-Wishart scale for Q (times I)", default=1.0, type=float)
    theta_mean: float = _opt("prior mean of the log hyperparameters", default=0.0, type=float)
    theta_std: float = _opt("prior std of the log hyperparameters", default=2.0, type=float)
    ell_R: float = _opt("inverse-Wishart degrees of freedom for R", default=10.0, type=float)
    Lambda_R: float = _opt("inverse-Wishart scale for R (times I)", default=1.0, type=float)
    # sampler
    K: int = _opt("Gibbs iterations", default=200, type=int)
    N: int = _opt("particles in the conditional filter", default=20, type=int)
    burn_in: float = _opt("fraction of records discarded before evaluation", default=0.25, type=float)
    mh_scale: float = _opt("random-walk step on the log hyperparameters", default=0.1, type=float)
    mh_steps: int = _opt("Metropolis-Hastings proposals per sweep", default=1, type=int)
    hyper_target: str = _opt("hyperparameter target", default="conditional", choices=("conditional", "literal"))
    theta_init: list[float] | None = _opt("initial log hyperparameters (default: prior mean)", type=float, nargs="+")
    fixed_theta: bool = _opt("keep the hyperparameters at theta_init", default=False, type=bool)
    # evaluation
    protocol: str | None = _opt("evaluation protocol", choices=("one_step", "free_run", "k_step"))
    horizon: int = _opt("forecast horizon k", default=1, type=int)
    N_f: int = _opt("particles for forecasting", default=500, type=int)
    S: int = _opt("simulated paths per record in free-run prediction", default=20, type=int)
    # benchmarks
    T: int = _opt("benchmark training length", default=500, type=int)
    T_eval: int = _opt("benchmark evaluation length", default=100_000, type=int)
    # execution
    seed: int = _opt("random seed", default=0, type=int)
    chains: int = _opt("independent chains (seeds seed + i)", default=1, type=int)
    jobs: int = _opt("worker processes for independent chains", default=1, type=int)

    @classmethod
    def for_mode(cls, mode: str, **overrides) -> "ExperimentConfig":
        """Defaults for ``mode`` updated with ``overrides``."""
        if mode not in MODES:
            raise ConfigError(f"unknown mode {mode!r}; choose from {', '.join(MODES)}")
        base: dict[str, Any] = {"mode": mode}
        if mode == "benchmark1":
            base.update(kernel="se", half_widths=[4.0], protocol="one_step", R=[0.1], T_eval=10_000)
        elif mode == "benchmark2":
            base.update(kernel="matern", nu=1.5, half_widths=[12.0], protocol="one_step", R=[1.0])
        elif mode == "forecast":
            base.update(protocol="k_step")
        base.update(overrides)
        unknown = set(base) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise ConfigError(f"unknown configuration keys: {', '.join(sorted(unknown))}")
        return cls(**base)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def validate(self) -> None:
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}")
        for name in ("n_x", "K", "N", "T", "T_eval", "horizon", "N_f", "S", "chains", "jobs"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be at least 1")
        if self.N < 2:
            raise ConfigError("the conditional particle filter needs N >= 2")
        if not 0 <= self.burn_in < 1:
            raise ConfigError("burn_in must be a fraction in [0, 1)")
        if any(v < 1 for v in self.m):
            raise ConfigError("m must be at least 1 per dimension")
        if len(self.m) not in (1, self.n_x):
            raise ConfigError(f"m needs 1 or {self.n_x} entries")
        if self.half_widths is not None and len(self.half_widths) not in (1, self.n_x):
            raise ConfigError(f"half_widths needs 1 or {self.n_x} entries")
        if self.mode in ("learn", "forecast", "eval") and not self.data:
            raise ConfigError(f"{self.mode} mode needs a data path")
        if self.mode in ("forecast", "eval") and not self.chain:
            raise ConfigError(f"{self.mode} mode needs a chain file")
        if not self.output_dir:
            raise ConfigError("output_dir must be nonempty")


def load_config(path) -> dict:
    """Read a JSON config; a run manifest is accepted and its echoed config used."""
    with Path(path).open() as fh:
        d = json.load(fh)
    if not isinstance(d, dict):
        raise ConfigError(f"{path}: expected a JSON object")
    return d.get("config", d)


def _json_clean(v):
    if isinstance(v, dict):
        return {k: _json_clean(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_json_clean(x) for x in v]
    if isinstance(v, np.ndarray):
        return _json_clean(v.tolist())
    if isinstance(v, np.generic):
        v = v.item()
    if isinstance(v, float) and not math.isfinite(v):
        return None
    return v


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(_json_clean(obj), indent=2) + "\n")


# --------------------------------------------------------------------------
# model construction


class _Identity:
    """Features ``Phi(x) = x``; with ``A = I`` this is a random-walk model."""

    kernel = None

    def __init__(self, n: int):
        self.size = n

    def evaluate(self, x):
        return np.asarray(x, dtype=float)

    def prior_precision(self):
        return np.eye(self.size)


def _matrix(vals, n: int, what: str) -> np.ndarray:
    a = np.asarray(vals, dtype=float).ravel()
    if a.size == 1:
        return a[0] * np.eye(n)
    if a.size != n * n:
        raise ConfigError(f"{what} needs 1 or {n * n} values, got {a.size}")
    return a.reshape(n, n)


def _measurement(cfg: ExperimentConfig, n_y: int) -> tuple[np.ndarray, np.ndarray]:
    if cfg.C is None:
        if n_y > cfg.n_x:
            raise ConfigError(f"{n_y} outputs but only {cfg.n_x} states; give C explicitly")
        C = np.eye(n_y, cfg.n_x)
    else:
        c = np.asarray(cfg.C, dtype=float)
        if c.size != n_y * cfg.n_x:
            raise ConfigError(f"C needs {n_y * cfg.n_x} values, got {c.size}")
        C = c.reshape(n_y, cfg.n_x)
    return C, _matrix(cfg.R, n_y, "R")


def _prior(cfg: ExperimentConfig, n_y: int) -> PriorSpec:
    return PriorSpec(
        ell_Q=cfg.ell_Q,
        Lambda_Q=cfg.Lambda_Q * np.eye(cfg.n_x),
        theta_mean=cfg.theta_mean,
        theta_std=cfg.theta_std,
        ell_R=cfg.ell_R,
        Lambda_R=cfg.Lambda_R * np.eye(n_y) if cfg.learn_observation else None,
    )


def _x1(cfg: ExperimentConfig):
    mean = np.zeros(cfg.n_x) if cfg.x1_mean is None else np.broadcast_to(cfg.x1_mean, (cfg.n_x,))
    return np.array(mean, dtype=float), cfg.x1_var * np.eye(cfg.n_x)


def auto_half_widths(y, C, R, prior: PriorSpec, x1_mean, x1_cov, rng, factor=4.0, N=500, inputs=None):
    """Domain half-widths from a pilot bootstrap filter.

    The pilot uses random-walk dynamics with ``Q`` at its prior mean; the
    state bound per dimension is the largest absolute filtered mean, floored
    at three prior standard deviations of the process noise.
    """
    n_x = C.shape[1]
    dof = prior.ell_Q - n_x - 1
    Qbar = prior.Lambda_Q / dof if dof > 0 else prior.Lambda_Q / prior.ell_Q
    pilot = RRGPSSM(A=np.eye(n_x), Q=Qbar, basis=_Identity(n_x), C=C, R=R, x1_mean=x1_mean, x1_cov=x1_cov)
    ps = bootstrap_filter(pilot, y, N, rng)
    lw = ps.log_weights
    w = np.exp(lw - lw.max(axis=1, keepdims=True))
    w /= w.sum(axis=1, keepdims=True)
    means = np.einsum("tn,tnk->tk", w, ps.particles)
    bound = np.maximum(np.abs(means).max(axis=0), 3.0 * np.sqrt(np.diag(Qbar)))
    return tuple(float(v) for v in factor * bound)


def build_template(cfg: ExperimentConfig, ds: Dataset, rng: np.random.Generator) -> tuple[RRGPSSM, PriorSpec]:
    """Model structure (bases, measurement model, x1) for ``ds`` under ``cfg``."""
    n_x = cfg.n_x
    C, R = _measurement(cfg, ds.n_y)
    prior = _prior(cfg, ds.n_y)
    x1_mean, x1_cov = _x1(cfg)
    if cfg.half_widths is not None:
        L = tuple(np.broadcast_to(np.asarray(cfg.half_widths, dtype=float), (n_x,)).tolist())
    else:
        L = auto_half_widths(ds.y, C, R, prior, x1_mean, x1_cov, rng, cfg.domain_factor)
    kernel = _kernel(cfg, n_x)
    m = np.broadcast_to(np.asarray(cfg.m), (n_x,)).tolist()
    basis = BasisConfig.tensor(Domain(L), m, kernel)
    input_basis, A_u = None, None
    if ds.u is not None:
        n_u = ds.n_u
        m_u = np.broadcast_to(np.asarray(cfg.m_input or [8]), (n_u,)).tolist()
        if cfg.input_half_widths is not None:
            L_u = np.broadcast_to(np.asarray(cfg.input_half_widths, dtype=float), (n_u,))
        else:
            L_u = cfg.domain_factor * np.maximum(np.abs(ds.u).max(axis=0), 1e-6)
        input_basis = BasisConfig.tensor(Domain(tuple(L_u.tolist())), m_u, _kernel(cfg, n_u))
        A_u = np.zeros((n_x, input_basis.size))
    template = RRGPSSM(
        A=np.zeros((n_x, basis.size)),
        Q=prior.Lambda_Q,
        basis=basis,
        C=C,
        R=R,
        x1_mean=x1_mean,
        x1_cov=x1_cov,
        input_basis=input_basis,
        A_u=A_u,
    )
    return template, prior


def _kernel(cfg: ExperimentConfig, dim: int) -> KernelSpec:
    ls = (1.0,) * dim
    if cfg.kernel == "se":
        return KernelSpec.squared_exponential(1.0, ls)
    return KernelSpec.matern(cfg.nu, 1.0, ls)


def _learner(cfg: ExperimentConfig, template: RRGPSSM) -> LearnerConfig:
    n_theta = 1 + len(template.basis.kernel.lengthscales)
    if template.input_basis is not None:
        n_theta += 1 + len(template.input_basis.kernel.lengthscales)
    if cfg.theta_init is None:
        theta_init = np.full(n_theta, cfg.theta_mean)
    else:
        theta_init = np.asarray(cfg.theta_init, dtype=float)
        if theta_init.size != n_theta:
            raise ConfigError(f"theta_init needs {n_theta} values, got {theta_init.size}")
    return LearnerConfig(
        K=cfg.K,
        N=cfg.N,
        mh_scale=cfg.mh_scale,
        mh_steps=cfg.mh_steps,
        fixed_theta=cfg.fixed_theta,
        theta_init=theta_init,
        hyper_target=cfg.hyper_target,
        learn_observation=cfg.learn_observation,
    )


# --------------------------------------------------------------------------
# single runs


def _seeds(seed: int):
    data_ss, chain_ss, eval_ss = np.random.SeedSequence(seed).spawn(3)
    return data_ss, np.random.default_rng(chain_ss), np.random.default_rng(eval_ss)


def _load(path, what: str) -> Dataset:
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"{what} file not found: {p}")
    return load_csv(p)


def _learn(cfg: ExperimentConfig, ds: Dataset, out: Path, rng, seed: int) -> tuple[GibbsChain, float]:
    template, prior = build_template(cfg, ds, rng)
    t0 = time.perf_counter()
    # where and how parallel a run executes does not change its chain
    echo = {k: v for k, v in cfg.to_dict().items() if k not in ("output_dir", "jobs")}
    with ChainWriter(out / "chain.ndjson", template, {"seed": seed, "config": echo}) as w:
        chain = run_gibbs(ds.y, template, prior, _learner(cfg, template), rng, inputs=ds.u, callback=w)
    return chain, time.perf_counter() - t0


def _f_posterior(chain: GibbsChain, grid: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Mean and std over records of ``f(x)`` on a 1-D grid."""
    Z = chain.template.basis.evaluate(grid[:, None])
    F = np.stack([Z @ r.A[0, : Z.shape[1]] for r in chain.records])
    return F.mean(axis=0), F.std(axis=0)


def _write_f_csv(path: Path, grid, mean, std, truth) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "f_true", "mean", "std", "lo95", "hi95"])
        for row in zip(grid, truth, mean, std, mean - 1.96 * std, mean + 1.96 * std):
            w.writerow([repr(float(v)) for v in row])


def _metrics(pred: PredictiveSummary, target, protocol: str, cfg: ExperimentConfig, seed: int, **extra) -> dict:
    return {
        "rmse": rmse(pred, target),
        "ll": mean_loglik(pred, target),
        "T_e": len(pred),
        "protocol": protocol,
        "burn_in": cfg.burn_in,
        "seed": seed,
        **extra,
    }


def _benchmark(cfg: ExperimentConfig, out: Path, seed: int) -> dict:
    data_ss, rng, _ = _seeds(seed)
    gen, f_true = (
        (gen_benchmark1, tanh_dynamics) if cfg.mode == "benchmark1" else (gen_benchmark2, kink_dynamics)
    )
    train_ss, test_ss = data_ss.spawn(2)
    ds, _ = gen(cfg.T, seed=np.random.default_rng(train_ss))
    chain, train_s = _learn(cfg, ds, out, rng, seed)
    kept = chain.after_burn_in(cfg.burn_in)

    t0 = time.perf_counter()
    _, x_eval = gen(cfg.T_eval + 1, seed=np.random.default_rng(test_ss))
    pred = posterior_predictive(kept, x_eval, "one_step", output="state")
    test_s = time.perf_counter() - t0
    write_predictive_csv(out / "predictive.csv", pred, np.arange(2, cfg.T_eval + 2))

    L = chain.template.basis.domain.L[0]
    grid = np.unique(np.concatenate([np.linspace(-L, L, 161), [-3.0, 0.0, 3.0]]))
    f_mean, f_std = _f_posterior(kept, grid)
    _write_f_csv(out / "f_posterior.csv", grid, f_mean, f_std, f_true(grid))
    at = {x: float(f_std[np.argmin(np.abs(grid - x))]) for x in (-3.0, 0.0, 3.0)}
    metrics = _metrics(
        pred,
        x_eval[1:],
        "one_step_state",
        cfg,
        seed,
        acceptance_rate=chain.diagnostics["acceptance_rate"],
        train_time_s=train_s,
        test_time_s=test_s,
        seconds_per_iteration=train_s / cfg.K,
        f_std_minus3=at[-3.0],
        f_std_0=at[0.0],
        f_std_plus3=at[3.0],
        Q_mean=float(np.mean([r.Q[0, 0] for r in kept.records])),
    )
    return metrics


def _learn_mode(cfg: ExperimentConfig, out: Path, seed: int) -> dict:
    _, rng, eval_rng = _seeds(seed)
    ds = _load(cfg.data, "data")
    test = _load(cfg.eval_data, "evaluation data") if cfg.eval_data else None
    if cfg.n_train is not None:
        if not 1 < cfg.n_train < ds.T:
            raise ConfigError(f"n_train must lie strictly between 1 and {ds.T}")
        ds, test = ds.split(cfg.n_train)
    chain, train_s = _learn(cfg, ds, out, rng, seed)
    kept = chain.after_burn_in(cfg.burn_in)
    t0 = time.perf_counter()
    if test is None:
        # no held-out data: in-sample rolling forecasts
        k = cfg.horizon
        pred = rolling_forecast(kept, ds.y, k, cfg.N_f, eval_rng, ds.u)
        target, protocol, t = ds.y[k:], f"k_step_in_sample(k={k})", _times(ds)[k:]
    else:
        # free run continuing from each record's final training state
        x0 = np.stack([r.states[-1] for r in kept.records])
        u = None
        if test.u is not None:
            u = np.vstack([ds.u[-1:], test.u])
        pred = simulate_predictive(kept, test.T + 1, cfg.S, eval_rng, u, x0)
        pred = PredictiveSummary(pred.mean[1:], pred.var[1:], pred.count)
        target, protocol, t = test.y, "free_run", _times(test, offset=ds.T)
    write_predictive_csv(out / "predictive.csv", pred, t)
    return _metrics(
        pred, target, protocol, cfg, seed,
        acceptance_rate=chain.diagnostics["acceptance_rate"],
        train_time_s=train_s,
        test_time_s=time.perf_counter() - t0,
    )


def _times(ds: Dataset, offset: int = 0) -> np.ndarray:
    return ds.t if ds.t is not None else np.arange(offset + 1, offset + ds.T + 1, dtype=float)


def _evaluate_chain(cfg: ExperimentConfig, out: Path, seed: int) -> dict:
    """eval / forecast modes: metrics from a stored chain, no sampling."""
    _, _, eval_rng = _seeds(seed)
    chain, _ = read_chain(cfg.chain)
    kept = chain.after_burn_in(cfg.burn_in)
    ds = _load(cfg.data, "data")
    protocol = cfg.protocol or ("k_step" if cfg.mode == "forecast" else ("one_step" if ds.x is not None else "free_run"))
    t0 = time.perf_counter()
    if protocol == "one_step":
        if ds.x is None:
            raise ConfigError("one_step evaluation needs true states (x* columns) in the data")
        pred = posterior_predictive(kept, ds.x, "one_step", inputs=ds.u, output="state")
        target, t, name = ds.x[1:], _times(ds)[1:], "one_step_state"
    elif protocol == "free_run":
        pred = simulate_predictive(kept, ds.T, cfg.S, eval_rng, ds.u)
        target, t, name = ds.y, _times(ds), "free_run"
    else:
        k = cfg.horizon
        pred = rolling_forecast(kept, ds.y, k, cfg.N_f, eval_rng, ds.u)
        target, t, name = ds.y[k:], _times(ds)[k:], f"k_step(k={k})"
    write_predictive_csv(out / "predictive.csv", pred, t)
    return _metrics(pred, target, name, cfg, seed, records=len(kept), test_time_s=time.perf_counter() - t0)


def _run_one(cfg: ExperimentConfig, out: Path, seed: int) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    if cfg.mode in ("benchmark1", "benchmark2"):
        metrics = _benchmark(cfg, out, seed)
    elif cfg.mode == "learn":
        metrics = _learn_mode(cfg, out, seed)
    else:
        metrics = _evaluate_chain(cfg, out, seed)
    _write_json(out / "metrics.json", metrics)
    _write_manifest(out, cfg, seed)
    return metrics


def _run_one_star(args):
    return _run_one(*args)


def _write_manifest(out: Path, cfg: ExperimentConfig, seed: int) -> None:
    manifest = {
        "config": cfg.to_dict(),
        "seed": seed,
        "version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
    }
    if cfg.mode in ("benchmark1", "benchmark2"):
        manifest["evaluation_protocol"] = BENCHMARK_PROTOCOL
    _write_json(out / "manifest.json", manifest)


SUMMARY_HEADER = ["method", "rmse", "ll", "train_time_min", "test_time_s", "runs"]


def _summary(cfg: ExperimentConfig, runs: list[dict]) -> dict:
    agg = {k: float(np.mean([r[k] for r in runs])) for k in ("rmse", "ll", "train_time_s", "test_time_s")}
    return {
        "method": f"Reduced-rank GP-SSM ({cfg.kernel}, m={'x'.join(map(str, cfg.m))}, K={cfg.K}, N={cfg.N})",
        "rmse": agg["rmse"],
        "ll": agg["ll"],
        "train_time_min": agg["train_time_s"] / 60.0,
        "test_time_s": agg["test_time_s"],
        "runs": len(runs),
    }


def run_experiment(cfg: ExperimentConfig) -> dict:
    """Run ``cfg`` end to end and return its metrics (aggregated over chains).

    Raises :class:`ConfigError` for usage problems; other errors propagate
    from the library with their context.
    """
    cfg.validate()
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    if cfg.chains == 1:
        metrics = _run_one(cfg, out, cfg.seed)
        runs = [metrics]
    else:
        jobs = [(cfg, out / f"chain_{i}", cfg.seed + i) for i in range(cfg.chains)]
        if cfg.jobs > 1:
            with ProcessPoolExecutor(max_workers=cfg.jobs) as ex:
                runs = list(ex.map(_run_one_star, jobs))
        else:
            runs = [_run_one(*j) for j in jobs]
        metrics = {
            "rmse": float(np.mean([r["rmse"] for r in runs])),
            "ll": float(np.mean([r["ll"] for r in runs])),
            "T_e": runs[0]["T_e"],
            "protocol": runs[0]["protocol"],
            "burn_in": cfg.burn_in,
            "seed": cfg.seed,
            "chains": cfg.chains,
            "per_chain": runs,
        }
        _write_json(out / "metrics.json", metrics)
        _write_manifest(out, cfg, cfg.seed)
    if cfg.mode in ("benchmark1", "benchmark2"):
        row = _summary(cfg, runs)
        with (out / "summary.csv").open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(SUMMARY_HEADER)
            w.writerow([row[k] if isinstance(row[k], str) else repr(row[k]) for k in SUMMARY_HEADER])
        metrics["summary"] = row
    return metrics
