"""Bayesian learning of reduced-rank Gaussian-process state space models."""
from .distributions import iw_logpdf, mn_logpdf, sample_iw, sample_mn
from .gibbs import GibbsChain, LearnerConfig, run_gibbs
from .kernel_basis import BasisConfig, Domain, KernelSpec
from .model import PriorSpec, RRGPSSM, Trajectory
from .smc import bootstrap_filter, pgas_kernel

__version__ = "0.1.0"

__all__ = [
    "BasisConfig",
    "Domain",
    "GibbsChain",
    "KernelSpec",
    "LearnerConfig",
    "PriorSpec",
    "RRGPSSM",
    "Trajectory",
    "bootstrap_filter",
    "iw_logpdf",
    "mn_logpdf",
    "pgas_kernel",
    "run_gibbs",
    "sample_iw",
    "sample_mn",
]
