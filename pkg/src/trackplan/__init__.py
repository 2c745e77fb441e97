"""Aerial target tracking with certified Bernstein motion primitives."""

from .bernstein import (
    EPS_CERT,
    Certificate,
    Curve3,
    PolySegment,
    rational_range_check,
    weighted_sqnorm,
)
from .geometry import (
    CorridorSequence,
    Ellipsoid,
    OccupancyMap,
    Polytope,
    curve_in_polytope,
    generate_corridor,
    point_ellipsoid_distance,
    support,
)
from .planner import (
    ChasePlan,
    CorridorError,
    CostWeights,
    DroneState,
    PlannerLimits,
    PlannerParams,
    SamplingShell,
    build_minjerk,
    build_visible_safe_corridor,
    check_collision,
    check_distance,
    check_dynamics,
    check_fov_pair,
    check_visibility,
    plan,
    score,
    yaw_reference,
)
from .predictor import (
    NoPredictionError,
    PredictorParams,
    TargetPrediction,
    TargetState,
    build_ncvm,
    filter_target_primitives,
    predict,
    sample_target_terminals,
    select_center,
)
from .scenario import ConfigError, Scenario, load_scenario, validate_scenario
from .sim import (
    BenchReport,
    EpisodeLog,
    World,
    bench_sweep,
    run_episode,
    safety_metric,
    visibility_metric,
)

__version__ = "0.1.0"
