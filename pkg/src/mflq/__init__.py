"""Riccati systems, solvability and simulation for LQ mean field social optimization."""

from .errors import (
    AsymmetricMatrix,
    CapExceeded,
    DimensionMismatch,
    MFLQError,
    MissingInput,
    NonFiniteEntry,
    NonFiniteState,
    NonPositiveHorizon,
    PreconditionViolated,
    SchemaMismatch,
    SingularInverse,
    StructureViolation,
    UnknownPreset,
)
from .model import (
    DerivedWeights,
    InitialLaw,
    ModelParams,
    PRESET_NAMES,
    build_model,
    derived_weights,
    dump_model,
    load_model,
    scalar_model,
)
from .odecore import (
    MatrixTrajectory,
    SolveOutcome,
    SolveStatus,
    integrate_backward,
    residual_check,
    sup_distance,
)
from .limit_riccati import (
    LimitSolution,
    SolvabilityVerdict,
    asymptotic_solvability,
    interpretation_gains,
    psi1,
    psi2,
    r1,
    r2,
    solve_limit,
    sufficient_probe,
)
from .gains import (
    GainSet,
    centralized_gains,
    control_eval,
    decentralized_gains,
)
from .finite_riccati import (
    CheckSolution,
    FiniteSolution,
    convergence_table,
    en_hn,
    g1_g2,
    solve_check,
    solve_finite,
    xi_n,
)
from .full_oracle import (
    BigSystem,
    FullCheckSolution,
    FullSolution,
    assemble,
    eig_factorization_check,
    extract_blocks,
    optimal_value,
    solve_full,
    solve_full_check,
    stacked_linear_residual,
)
from .mfg_compare import (
    MfgSolution,
    mfg_quadratic_weight,
    solve_mfg,
    weight_difference,
)
from .mfg_compare import compare as mfg_compare
from .portfolio import (
    PortfolioParams,
    as_model,
    closed_forms,
    control_compare,
    mean_wealth,
    time_consistency_error,
    u_hat_explicit,
    verify_against_solver,
)
from .simulate import (
    SimConfig,
    SimResult,
    gap_exact,
    gap_monte_carlo,
    gap_sweep,
    mf_error,
    simulate,
)

__version__ = "0.1.0"
