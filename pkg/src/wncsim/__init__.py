"""Co-simulation of linear control loops over a shared wireless medium."""

from .adaptation import ThresholdAdapter, f_margin
from .control import (
    ControllerState,
    HISTORY_DEPTH,
    IllConditionedError,
    InputHistory,
    InsufficientHistoryError,
    LoopModel,
    PlantState,
    RiccatiDivergenceError,
    ShortSeriesError,
    control_input,
    estimate_state,
    lqg_accumulate,
    lqg_average,
    lqr_gain,
    solve_riccati,
    step_plant,
)
from .harness import (
    RunResult,
    Scenario,
    ScenarioError,
    aggregate,
    compare_policies,
    load_scenario,
    loop_count_sweep,
    run_experiment,
    run_many,
    threshold_sweep,
)
from .netsim import Simulation, TICK_US
from .transport import (
    AckRecord,
    EstimateReplica,
    POLICY_KINDS,
    SensorPolicy,
    StatusUpdate,
    TahoeConfig,
    VegasConfig,
)

__all__ = [
    "AckRecord",
    "ControllerState",
    "EstimateReplica",
    "HISTORY_DEPTH",
    "IllConditionedError",
    "InputHistory",
    "InsufficientHistoryError",
    "LoopModel",
    "PlantState",
    "POLICY_KINDS",
    "RiccatiDivergenceError",
    "RunResult",
    "Scenario",
    "ScenarioError",
    "SensorPolicy",
    "ShortSeriesError",
    "Simulation",
    "StatusUpdate",
    "TahoeConfig",
    "ThresholdAdapter",
    "TICK_US",
    "VegasConfig",
    "aggregate",
    "compare_policies",
    "control_input",
    "estimate_state",
    "f_margin",
    "lqg_accumulate",
    "lqg_average",
    "load_scenario",
    "loop_count_sweep",
    "lqr_gain",
    "run_experiment",
    "run_many",
    "solve_riccati",
    "step_plant",
    "threshold_sweep",
]
