"""MPC with KL-robust and risk-sensitive Kalman filtering, plus a nonlinear
servomechanism benchmark."""

from .filters import (
    FilterState,
    Robust,
    RiskSensitive,
    RiskSensitiveTau,
    Standard,
    filter_step,
    gamma,
    kalman_step,
    kl_gaussian,
    robust_step,
    risk_sensitive_step,
    solve_theta,
    static_robust_update,
    steady_state,
    suggest_tolerance,
    tau_divergence_V,
)
from .model import ContinuousModel, GaussianBelief, LinearModel, validate, zoh_discretize
from .mpc import MpcConfig, build_predictor, closed_loop, control_law
from .results import ScenarioResult, settling_time

__version__ = "0.1.0"
