"""GOY shell-model turbulence with online, adjoint-driven learning of
the diffusive dissipation coefficient.

The library splits into: the shell-model vector fields and their exact
real-view derivatives (:mod:`goyshell.model`), an adaptive embedded
Runge-Kutta solver with dense output (:mod:`goyshell.integrator`),
stationary-turbulence diagnostics and the spectrum-slope loss
(:mod:`goyshell.diagnostics`), the continuous adjoint gradient
(:mod:`goyshell.adjoint`), Adam with range guards
(:mod:`goyshell.optimizer`), and the experiment controller with
checkpoint/resume (:mod:`goyshell.controller`).  ``goyshell`` on the
command line exposes the four run modes.
"""

from .model import (
    DissipationModel,
    GoyParams,
    ShellState,
    as_complex,
    as_real,
    dfdtheta,
    initial_condition,
    jacobian_real,
    nonlinear_term,
    rhs_modified,
    rhs_reference,
    wavenumber,
    wavenumbers,
)
from .integrator import (
    ErrorKind,
    IntegratorConfig,
    SegmentSolution,
    SolveError,
    SolveStats,
    VectorField,
    integrate_fixed,
    integrate_segment,
    interpolate,
    modified_field,
    observed_order,
    reference_field,
)
from .diagnostics import (
    FluxProfile,
    LossConfig,
    LossDomainError,
    SnapshotWindow,
    Spectrum,
    dissipation_rate,
    energy_flux,
    energy_spectrum,
    inertial_range_config,
    kinetic_energy,
    loss,
    loss_grad_state,
    spectrum_slope,
    turnover_time,
    window_mean_spectrum,
)
from .adjoint import (
    AdjointProblem,
    GradientResult,
    finite_diff_grad,
    solve_adjoint,
    training_gradient,
)
from .optimizer import AdamState, GuardMode, GuardPolicy, adam_step, apply_guard
from .controller import (
    AblationResult,
    Checkpoint,
    CheckpointError,
    ReferenceResult,
    RunConfig,
    TrainRecord,
    TrainResult,
    load_checkpoint,
    run_ablation,
    run_reference,
    save_checkpoint,
    spin_up,
    train,
)

__version__ = "0.1.0"
