"""Lyapunov functions, spectral bounds and simulation for Jackson networks."""
from .bounds import (
    SpectralBoundsReport,
    compute_bounds,
    delta_intervals,
    equality_diagnostic,
    lower_bound,
    objective,
    upper_bound_gamma,
    upper_bound_rho_eps,
)
from .generator import apply_generator, exp_generator_rate, face_laplace, solve_face_system
from .lyapunov import (
    DriftRegion,
    GammaCertificate,
    LyapunovFunction,
    build_h,
    build_h_rho_eps,
    drift_region,
    eps_box,
    gamma_arrows,
    gamma_membership,
    rho_eps_gamma,
    x_rho,
)
from .network import (
    JacksonNetwork,
    NetworkError,
    NetworkFormatError,
    TrafficSolution,
    ValidationReport,
    detect_branching,
    load_network,
    loads_network,
    rho_contraction,
    routing_spectral_radius,
    solve_traffic,
    stationary_probability,
    time_reverse,
    validate_network,
)
from .simulation import (
    SimConfig,
    SimulationEstimate,
    TargetSet,
    estimate_stationary,
    estimate_tail,
    simulate_path,
    simulate_paths,
    verify_against_bound,
)
from .special_cases import (
    SymmetricProfile,
    branching_bound,
    circle_bounds,
    closed_forms,
    exact_d1,
    exact_d2,
    sigma,
    symmetric_equality,
    symmetric_membership,
)

__version__ = "0.1.0"
