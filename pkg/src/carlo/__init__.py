"""Monte Carlo methods: random generation, integration, stochastic optimisation, MCMC and diagnostics."""

from .rng import RngStream
from .distributions import DistributionSpec
from .mcmc import Trace
from .experiments import ExperimentSpec, list_experiments, run

__all__ = ["RngStream", "DistributionSpec", "Trace", "ExperimentSpec", "list_experiments", "run"]
__version__ = "0.1.0"
