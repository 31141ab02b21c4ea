"""slutskylab: stochastic consumer-choice simulation and Slutsky estimation."""

__version__ = "0.1.0"

from .errors import (
    CalibrationFailure,
    ConfigError,
    DimensionMismatch,
    DomainError,
    EigSolverFailure,
    MissingMoments,
    NoConvergence,
    NonPositiveQuantity,
    SingularHessian,
    SlutskyLabError,
    UnsupportedSize,
    VariantError,
)
from .model import (
    Allocation,
    MeanFieldPreference,
    ModelSpec,
    NonInteracting,
    PairwiseHamiltonian,
    delta_utility,
    global_utility,
    herfindahl,
    hessian_blocks,
    utility_gradient,
)
from .analytics import (
    CriticalLines,
    GaussianCorrelations,
    HamiltonianFixedPoint,
    SaddleSolution,
    budget_variance_sigma2,
    closed_form_slutsky,
    critical_c,
    free_energy_density,
    gaussian_correlations,
    hamiltonian_meanfield,
    noninteracting_solution,
    solve_saddle,
)
from .moments import FRMoments
from .quadrature import QuadratureConfig, QuadratureResult, oracle_slutsky_fd, quadrature_moments
from .slutsky import (
    SlutskyEstimate,
    SlutskyMetrics,
    WealthMap,
    aggregate_slutsky,
    closed_form_estimate,
    fr_slutsky,
    slutsky_metrics,
)
from .sampler import (
    ChainConfig,
    ObservableSet,
    acceptance_log_ratio,
    pathwise_slutsky,
    propose_move,
    run_chain,
    run_grand_canonical_chain,
)
from .config import build_chain, build_model, load_config, parse_config
from .manifest import RunManifest, read_manifest, replay, write_manifest
from .experiments import run_experiment, sweep_run
