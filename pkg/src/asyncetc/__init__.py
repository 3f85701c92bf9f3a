"""Asynchronous event-triggered control of nonlinear plants as hybrid systems."""

from .analysis import (
    DwellTimeReport,
    GridSpec,
    SmallGainReport,
    StorageReport,
    StorageTrace,
    check_small_gain,
    check_small_gain_system,
    clarke_estimate,
    monitor_storage,
    set_distance,
    verify_dwell,
)
from .hybrid import (
    EventRecord,
    HybridArc,
    HybridSystemDef,
    HybridTime,
    NoProgress,
    SimulationError,
    SolverConfig,
    StepFailure,
    Successor,
    ZenoGuard,
    flow_step,
    jump_step,
    locate_event,
    simulate,
)
from .scenarios import (
    ConfigError,
    ScenarioConfig,
    builtin_integrator_scenario,
    load_config,
    run_scenario,
)
from .system import (
    ClosedLoopState,
    ControllerModel,
    DimensionMismatch,
    ETCSystem,
    PlantModel,
    SamplerModel,
    build_closed_loop,
    closed_loop_flow,
    closed_loop_jump,
    linear_controller,
    linear_plant,
    model_based_hold,
    zoh_hold,
)
from .triggers import (
    LocalState,
    QuadraticStorage,
    QuadraticThreshold,
    TriggerSpec,
    builtin_quadratic_specs,
    flow_allowed,
    trigger_fired,
)

__version__ = "0.1.0"
