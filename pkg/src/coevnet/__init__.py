"""coevnet: simulation and closure validation for processes on co-evolving
networks.

Subpackages cover the microscopic continuous system (microsim), stochastic
jump models (jumpsim), empirical marginal estimators (moments), the binary
minimal-model closure ODEs and their stationary analysis (closures),
particle-discretized mean-field characteristics (characteristics), the
micro-versus-macro comparison harness (compare), and a JSON-config driven
command line (cli).
"""

__version__ = "0.1.0"

from .errors import (
    ClosureSingular,
    CoevnetError,
    ConfigError,
    ConsensusBoundary,
    ContinuationFailed,
    IntegrationError,
    InvariantViolation,
    ModelError,
    NullclineNotFound,
)
from .models import (
    MinimalParams,
    PotentialModel,
    SmoothModel,
    catalog,
    derive_forces,
    kernel_potential,
    quadratic_potential,
)
from .microsim import (
    AgentConfiguration,
    energy_report,
    integrate_micro,
    integrate_reduced,
    micro_rhs,
    simulate_diffusive,
    solve_weight_nullcline,
)
from .jumpsim import (
    DiscreteConfiguration,
    HybridConfiguration,
    minimal_rates,
    simulate_hybrid_bc,
    simulate_minimal,
    simulate_voter,
)
from .moments import (
    MinimalMoments,
    PairHistogram,
    empirical_marginal1,
    empirical_pair,
    kirkwood_triplet_integral,
    minimal_moments,
)
from .closures import (
    ClosureKind,
    closure_rhs,
    continue_small_epsilon,
    decay_envelope_check,
    integrate_closure,
    linearized_jacobian,
    polarization_stable,
    stationary_mixed_h,
    stationary_polarized,
    weight_averaged_rhs,
)
from .characteristics import (
    CharacteristicEnsemble,
    integrate_characteristics_conditional,
    integrate_characteristics_wc,
    pair_energy_dissipation,
    pushforward_eval,
)
from .compare import run_comparison, run_epsilon_sweep

__all__ = [
    "__version__",
    "CoevnetError", "ConfigError", "ModelError", "IntegrationError",
    "InvariantViolation", "NullclineNotFound", "ConsensusBoundary",
    "ClosureSingular", "ContinuationFailed",
    "SmoothModel", "PotentialModel", "MinimalParams",
    "catalog", "derive_forces", "kernel_potential", "quadratic_potential",
    "AgentConfiguration", "micro_rhs", "integrate_micro", "simulate_diffusive",
    "energy_report", "solve_weight_nullcline", "integrate_reduced",
    "DiscreteConfiguration", "HybridConfiguration", "minimal_rates",
    "simulate_minimal", "simulate_voter", "simulate_hybrid_bc",
    "MinimalMoments", "PairHistogram", "empirical_pair", "empirical_marginal1",
    "minimal_moments", "kirkwood_triplet_integral",
    "ClosureKind", "closure_rhs", "integrate_closure", "weight_averaged_rhs",
    "stationary_polarized", "stationary_mixed_h", "linearized_jacobian",
    "polarization_stable", "decay_envelope_check", "continue_small_epsilon",
    "CharacteristicEnsemble", "integrate_characteristics_wc",
    "integrate_characteristics_conditional", "pushforward_eval",
    "pair_energy_dissipation",
    "run_comparison", "run_epsilon_sweep",
]
