"""Incremental recursive prediction-error estimation for sensor networks."""

from .estimators import (
    IrpeState,
    RpeState,
    RunTrace,
    SensorFailure,
    StepSchedule,
    empirical_cost,
    incremental_gradient_step,
    irpe_cycle,
    project,
    rpe_step,
    run_irpe,
    run_rpe,
    step_size,
)
from .gasleak import (
    GasLeakModel,
    WarehouseScenario,
    beta,
    build_gasleak_model,
    cluster_stack,
    greens_concentration,
    simulate_leak,
    stack_trajectory,
)
from .gradients import MatrixDerivatives, PredictorGradientState, extended_step, linearize, matrix_derivatives
from .harness import Deployment, comm_cost, deploy_grid_jittered, load_config, ring_order, run_experiment
from .kalman import NoConvergence, SingularInnovation, solve_dare, steady_state_gain, steady_state_predictor
from .lifted import equivalence_report, lift_sensor, lifted_rpe_run
from .statespace import (
    DimensionError,
    ModelFamily,
    SensorModel,
    Trajectory,
    check_model_admissible,
    simulate_trajectory,
)

__version__ = "0.1.0"
