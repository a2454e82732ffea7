"""Secure state reconstruction and CBF safety filtering for LTI systems with attacked sensors."""
from .attack import AttackConfig, SimTrace, measure, run_scenario, sinusoid_nominal, step_plant
from .config import DEFAULT, NumericConfig
from .errors import (
    AttackModelViolated,
    ConfigError,
    Infeasible,
    InvalidInputError,
    KernelConditionViolated,
    PreconditionError,
    SecureCbfError,
    SolverFailure,
)
from .model import (
    KernelBasis,
    LtiSystem,
    SensorSubset,
    is_r_sparse_observable,
    kernel_basis,
    kernel_included,
    max_sparse_observability,
    numerical_rank,
    observability_matrix,
    vehicle_system,
    zoh_discretize,
)
from .qp import QpProblem, QpSolution, QpStatus, solve_qp
from .reconstruction import (
    DataWindow,
    HistoryReconstructor,
    PlausibleSet,
    Reconstructor,
    SolutionKind,
    SubspaceSolution,
    plausible_initial_states,
    propagate_set,
    worst_case_envelope,
)
from .safety import (
    PolyhedralCbf,
    box_cbf,
    cbf_margin,
    check_cbf_feasibility,
    check_offline_conditions,
    containment_check,
    filter_input,
    online_kernel_condition,
    safe_control,
)
from .scenario import ScenarioConfig, load_config

__version__ = "0.1.0"
