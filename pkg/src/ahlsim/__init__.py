"""Anisotropic Hastings-Levitov growth at desk scale.

Simulates the harmonic measure flow on the boundary of a cluster built from
iterated conformal slit maps with non-uniformly attached particles, computes
the deterministic drift/flow limit and its Gaussian fluctuation theory, and
runs Monte Carlo experiments that verify the critical-window phenomenology
against analytic oracles.
"""

__version__ = "0.1.0"

from .particle import (
    SlitParticle,
    BranchError,
    capacity_from_length,
    length_from_capacity,
    slit_map_eval,
    slit_map_boundary,
    slit_map_inverse,
    rotated_particle_map,
    boundary_angle_gamma,
    gamma_tilde,
)
from .measure import (
    AttachmentMeasure,
    make_measure_fourier,
    make_measure_arc,
    make_measure_uniform,
    sample_angle,
    density_eval,
)
from .field import (
    DriftField,
    CalibrationError,
    UncalibratedRho0Error,
    calibrate_rho0,
)
from .ode import DeterministicFlow, FixedPoint, FixedPointKind, find_fixed_points
from .flow import (
    FlowTrajectory,
    FlowEnsemble,
    EnsembleConfig,
    flow_step,
    run_flow,
    run_ensemble,
    decompose_martingale,
    export_snapshots_csv,
    trajectory_seed,
)
from .cluster import (
    ClusterState,
    grow_cluster,
    compose_cluster,
    boundary_trace,
    export_geometry,
)
from .analysis import (
    ExperimentReport,
    FluctuationSample,
    TheoreticalVariance,
    HorizonError,
    ode_tracking_error,
    pulled_back_fluctuation,
    theoretical_variance,
    test_normality,
    departure_time,
    window_slope_fit,
    trajectory_envelope_error,
)

__all__ = [
    "SlitParticle",
    "BranchError",
    "capacity_from_length",
    "length_from_capacity",
    "slit_map_eval",
    "slit_map_boundary",
    "slit_map_inverse",
    "rotated_particle_map",
    "boundary_angle_gamma",
    "gamma_tilde",
    "AttachmentMeasure",
    "make_measure_fourier",
    "make_measure_arc",
    "make_measure_uniform",
    "sample_angle",
    "density_eval",
    "DriftField",
    "CalibrationError",
    "UncalibratedRho0Error",
    "calibrate_rho0",
    "DeterministicFlow",
    "FixedPoint",
    "FixedPointKind",
    "find_fixed_points",
    "FlowTrajectory",
    "FlowEnsemble",
    "EnsembleConfig",
    "flow_step",
    "run_flow",
    "run_ensemble",
    "decompose_martingale",
    "export_snapshots_csv",
    "trajectory_seed",
    "ClusterState",
    "grow_cluster",
    "compose_cluster",
    "boundary_trace",
    "export_geometry",
    "ExperimentReport",
    "FluctuationSample",
    "TheoreticalVariance",
    "HorizonError",
    "ode_tracking_error",
    "pulled_back_fluctuation",
    "theoretical_variance",
    "test_normality",
    "departure_time",
    "window_slope_fit",
    "trajectory_envelope_error",
]
