"""fastexit: a numerical laboratory for fast-transport stochastic
reaction-diffusion dynamics with interior and boundary noise.

The package simulates the full multiscale system, computes its averaged and
deterministic limits, evaluates and minimizes the path-space action
functional, computes quasi-potentials, and verifies the exponential
exit-time law by Monte Carlo.
"""

from .coefficients import (
    AveragedModel,
    CoefficientSet,
    averaged_F,
    averaged_G_row,
    averaged_Sigma_row,
    check_coefficient_hypotheses,
    check_nondegeneracy,
    make_coefficient,
    make_coefficient_set,
    nemytskii_F,
    noise_intensity_H,
)
from .errors import (
    ConfigError,
    DivergenceError,
    FastexitError,
    NondegeneracyError,
    NotApplicableError,
    OptimizationError,
)
from .exit_times import (
    DomainSpec,
    ExitStats,
    build_domain,
    check_exit_hypotheses,
    exit_time_mc,
    first_exit_time,
    membership_values,
)
from .ldp import (
    ActionValue,
    ControlPath,
    ScalarPath,
    action_I,
    action_of_trajectory,
    control_cost,
    minimize_path_action,
    minimizing_control,
    prefix_action_J,
    quasi_potential_explicit,
    quasi_potential_variational,
    v_bar,
)
from .noise import (
    CovarianceSpectrumB,
    CovarianceSpectrumQ,
    RngStream,
    check_hyp_eigenvalues,
    conv_B_step,
    conv_Q_step,
    make_b_spectrum,
    make_q_spectrum,
    sample_wQ_increment,
)
from .operator import (
    BoundaryData,
    Field,
    InvariantMeasure,
    SpectralOperator,
    build_divergence_operator_1d,
    build_neumann_laplacian_1d,
    check_spectral_gap,
    invariant_average,
    neumann_map,
    semigroup_apply,
)
from .solver import (
    FieldTrajectory,
    MultiscaleParams,
    ScalarTrajectory,
    averaging_error,
    averaging_error_ensemble,
    solve_averaged_sde,
    solve_controlled_ode,
    solve_controlled_spde,
    solve_limit_ode,
    solve_spde,
)

__version__ = "0.1.0"
