"""Perturbative statistical disclosure limitation for categorical microdata.

The package applies misclassification-based protection mechanisms (data
swapping and invariant post-randomization) to categorical key variables and
quantifies the identification risk of the released file: exactly when
population counts are known, through diagonal-only approximations otherwise,
and estimated from the released sample alone with Poisson log-linear models.
Information-loss measures and simulation harnesses round out the toolkit.
"""

__version__ = "0.1.0"

from .errors import (ConfigError, ConvergenceError, DataError,
                     DegenerateDenominatorError, NumericalError, SdlRiskError)
from .keyspace import (CategoricalVariable, FrequencyTable, KeySpace,
                       MicrodataTable, MisclassSpec, SamplingDesign,
                       bernoulli_sample, build_keyspace, tabulate)
from .loglin import (PoissonLogLinear, adjusted_aggregate, estimate_unique_risk,
                     forward_search)
from .perturb import (DataSwap, Pram, SwapLog, invariant_pram_matrix,
                      swap_misclass_matrix, uniform_offdiag_matrix)
from .risk import (AggregateResult, ExpectedCounts, RiskInputs, RiskReport, aggregate_tau,
                   assess, risk_exact, risk_gouweleeuw, risk_known_in_sample,
                   risk_mc_oracle, risk_simple, risk_small_delta,
                   risk_small_delta_alt, tau_cc, tau_star)
from .utility import (RiskUtilityPoint, TwoWayTable, bvr, cramers_v, raad, rcv,
                      risk_utility_map)
from .linksim import (BinaryExperimentConfig, LinkageExperimentConfig,
                      mu_estimates, run_binary_experiment,
                      run_linkage_experiment)
from . import io

__all__ = [name for name in dir() if not name.startswith("_")]
