"""Rate functionals of reversible chains and their metastable expansion.

The package computes level-two large-deviation rate functionals of
reversible finite-state Markov chains, builds the metastable hierarchy of
a potential on the torus (wells, capacities, reduced chains), and verifies
numerically that the sped-up functionals converge to each term of the
resulting expansion.
"""

from .chains import (
    FiniteChain,
    ProbabilityMeasure,
    dirichlet_form,
    rate_functional,
    simulate_trajectory,
    empirical_measure,
)
from .errors import GammaLadderError
from .expressions import catalog_potential, load_catalog, parse_potential
from .hierarchy import ReducedChain, dv_finite
from .landscape import Landscape
from .trace import capacity, log_capacity, trace_chain
from .verify import (
    ConvergenceTable,
    check_h1_rates,
    check_h5_separation,
    check_measure_ratios,
    extrapolate,
    recovery_dirac,
    recovery_level_p,
    recovery_saddle,
)

__version__ = "0.1.0"

__all__ = [
    "FiniteChain",
    "ProbabilityMeasure",
    "dirichlet_form",
    "rate_functional",
    "simulate_trajectory",
    "empirical_measure",
    "GammaLadderError",
    "catalog_potential",
    "load_catalog",
    "parse_potential",
    "ReducedChain",
    "dv_finite",
    "Landscape",
    "capacity",
    "log_capacity",
    "trace_chain",
    "ConvergenceTable",
    "check_h1_rates",
    "check_h5_separation",
    "check_measure_ratios",
    "extrapolate",
    "recovery_dirac",
    "recovery_level_p",
    "recovery_saddle",
    "__version__",
]
