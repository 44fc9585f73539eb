"""gamegap: a numerical lab for N-player stochastic differential games on
weighted interaction networks.

Solves closed-loop, open-loop, distributed, and mean-field equilibria of
linear-quadratic network games exactly (coupled Riccati systems), checks
them against model-agnostic forward-backward solvers, measures the
monotonicity / weak-interaction quantities the gap theory runs on, and
orchestrates the scaling experiments (gap, universality, vanishing
viscosity, empirical-measure rates) behind a reproducible CLI.
"""

from .errors import (
    BlowUpError,
    ConfigurationError,
    ConvergenceError,
    GameGapError,
    NonFiniteError,
    SamplingError,
    SolverError,
    UnsupportedCaseError,
    UnsupportedModelError,
)
from .games import (
    PHI_CATALOG,
    CustomModel,
    GameSpec,
    HamiltonianSpec,
    LQNetwork,
    NoiseBundle,
    ParticleCloud,
    PhiNetwork,
    PointMass,
    ProductGaussian,
    TimeGrid,
    WeightMatrix,
    build_game,
    build_weight_matrix,
    draw_initial,
    game_from_json,
    game_to_json,
    legendre_residual,
    sample_noise,
)
from .diagnostics import (
    condition_check,
    displacement_report,
    graph_stats,
    interaction_metrics,
    lasry_lions_report,
)
from .riccati import (
    LQEquilibrium,
    TrajectoryBundle,
    feedback_diagnostics,
    pathwise_gap_stats,
    simulate,
    solve_closed_loop_lq,
    solve_distributed_lq,
    solve_mfg_lq,
    solve_open_loop_lq,
)
from .fbsde import (
    fbsde_residual,
    solve_mkv_deterministic,
    solve_pontryagin_picard_lsmc,
    solve_pontryagin_shooting,
)
from .measures import (
    DiscreteMeasure,
    FGRateConfig,
    RateFit,
    fg_rate_experiment,
    fit_loglog,
    poincare_constant,
    rho_rate,
    rho_rate_full,
    wasserstein_1d,
    wasserstein_discrete,
)
from .experiments import (
    ExperimentConfig,
    run_gap_sweep,
    run_universality_sweep,
    run_viscosity_sweep,
)

__version__ = "0.1.0"
