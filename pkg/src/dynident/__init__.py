"""Dynamic model identification and compensation for coupled manipulators."""

from .baseparams import BaseParamDecomposition, compute_base
from .dynamics import (DynamicParameters, FrictionConfig, JointState,
                       SpringConfig, active_param_mask, forward_dynamics,
                       friction_torque, inverse_dynamics, kinetic_energy,
                       mass_matrix, param_names, potential_energy, regressor,
                       sample_states, spring_torque)
from .errors import (ConvergenceError, DegenerateModelError, DimensionError,
                     DynidentError, InfeasibleError, InstabilityError,
                     LogFormatError, ModelConfigError, PaddingError, RankError,
                     ScalingError, StructuralZeroError, UndefinedMetricError)
from .excitation import (FourierTrajectory, JointLimits, check_limits,
                         condition_number, load_limits, optimize_trajectory,
                         random_trajectory, trajectory_condition)
from .ident import (ConsistencyConstraints, IdentResult, StaticsResult,
                    audit_consistency, fit_statics, nrmse, predict_torque,
                    solve_problem, weighted_beta_distance)
from .kinematics import (RobotModel, default_limits_path, default_model_path,
                         frame_placements, load_model)
from .presets import psm_reference_parameters
from .runtime import (TRACKING_MODES, BenchResult, DriftResult, PidConfig,
                      Plant, PlantConfig,
                      TestTrajectoryConfig, TrackingResult, benchmark_runtime,
                      computed_torque, drift_thresholds, gravity_torque,
                      random_hold_poses, simulate_drift_test,
                      simulate_excitation_log, simulate_statics_data,
                      simulate_tracking)
from .signals import (FilterSpec, IdentProblem, TrajectoryLog, build_problem,
                      differentiate, read_log, write_log, zero_phase_filter)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
