"""Motion-aware battery health assessment for multirotor flight logs.

Pipeline: flight current logs are parsed, filtered, and segmented into
motion-specific profiles; a degradation-coupled pseudo-two-dimensional
cell model is calibrated against reference tests; profiles are replayed
in the calibrated model and their degradation is normalized against
constant-current baselines of equal energy.
"""

from .assessment import (BaselineFit, HealthReport, RechargePolicy,
                         fit_baselines, measure_capacity, motion_report,
                         normalize, replay)
from .calibration import (CalibrationDataset, CalibrationProblem,
                          CalibrationResult, PackCalibrator, calibrate,
                          generate_rpt, rmse, switch_strategy)
from .degradation import DegradationState, compute_lam, compute_lli
from .errors import (CalibrationError, DomainError, InputError,
                     KineticsError, NormalizationError, ParseError,
                     RotorbattError, SimulationError, StepFailureError)
from .mesh import Mesh, build_mesh
from .ocp import OcpCurve, default_curve
from .parameters import (DegradationParams, DegradationToggles, ParameterSet,
                         default_parameters)
from .profiles import (CurrentProfile, MovingAverageFilter,
                       PeriodicReconstructor, SegmentLabel,
                       ThresholdSegmenter, constant_current, load_profile,
                       moving_average, parse_log, periodic_reconstruct,
                       profile_stats, save_profile, segment)
from .solver import (CellSimulator, RunStats, SolverOptions, VoltageTrace,
                     simulate, step)
from .state import CellState, initial_state, li_inventory
from .synthetic import (bundled_flight_log, synthetic_flight_log,
                        write_flight_log)

__version__ = "0.1.0"

__all__ = [
    "BaselineFit", "CalibrationDataset", "CalibrationError",
    "CalibrationProblem", "CalibrationResult", "CellSimulator", "CellState",
    "CurrentProfile", "DegradationParams", "DegradationState",
    "DegradationToggles", "DomainError", "HealthReport", "InputError",
    "KineticsError", "Mesh", "MovingAverageFilter", "NormalizationError",
    "OcpCurve", "PackCalibrator", "ParameterSet", "ParseError",
    "PeriodicReconstructor", "RechargePolicy", "RotorbattError", "RunStats",
    "SegmentLabel", "SimulationError", "SolverOptions", "StepFailureError",
    "ThresholdSegmenter", "VoltageTrace", "build_mesh", "bundled_flight_log",
    "calibrate",
    "compute_lam", "compute_lli", "constant_current", "default_curve",
    "default_parameters", "fit_baselines", "generate_rpt", "initial_state",
    "li_inventory", "load_profile", "measure_capacity", "motion_report",
    "moving_average", "normalize", "parse_log", "periodic_reconstruct",
    "profile_stats", "replay", "rmse", "save_profile", "segment", "simulate",
    "step", "switch_strategy", "synthetic_flight_log", "write_flight_log",
]
