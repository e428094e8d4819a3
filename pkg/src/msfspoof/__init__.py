"""Simulator for GPS spoofing against Kalman-filter multi-sensor fusion.

The usual entry points:

>>> from msfspoof import config, experiments
>>> trace = experiments.unconfident_trace()          # doctest: +SKIP
>>> replay = Replay(trace, config.kf_config())       # doctest: +SKIP
>>> fusion_ripper(replay, 20.0, AttackConfig(d=0.5, f=1.1))  # doctest: +SKIP
"""

__version__ = "0.1.0"

from .analysis import (LOCAL, HIGHWAY, GoalThresholds, RoadGeometry, closed_form_dev2, extract_factors,
                       factor_importance, fisher_exact, fit_exponential, goal_thresholds, lateral_deviation,
                       pearson, success_metrics)
from .attack import (AttackConfig, AttackOutcome, Mode, Side, SpoofErrorModel, apply_spoof_error,
                     closed_loop_attack, exhaustive_window_search, fusion_ripper, random_attack, run_baseline)
from .msf_core import (FusionFilter, KfConfig, KfStepLog, Measurement, MsfState, OutlierPolicy, Source,
                       chi_squared, predict, process_measurement, update)
from .profiler import ProfilingConfig, ProfilingResult, offline_profile, safe_trial
from .replay import Replay
from .trace import (NoiseModel, Scenario, Trace, UnconfidentPeriod, generate_synthetic_trace,
                    inject_unconfident_periods, median_gps_uncertainty, read_trace, write_trace)
from .vehicle import ControllerConfig, TransitionModel, integrate_pose, lateral_controller, steering_to_pose_delta
