"""Simulation-and-theory laboratory for file duplication on unreliable servers.

Exact continuous-time simulation of the copy network next to its scaling
theory: fluid limits via a generalized Skorohod solver and in closed form, the
decay law on the critical time scale, Gaussian fluctuations, and the decay of
the overloaded local equilibrium.
"""

from ._backend import BACKEND
from .asymptotics import (
    DecayCurve,
    OverloadDecay,
    decay_time_asymptote,
    geometric_pmf,
    occupancy_parameter,
    overload_phi,
    phi_of_t,
    phi_prime,
    phi_via_ode,
    t_of_phi,
)
from .fluctuations import (
    CLTEnsemble,
    FluctuationPath,
    clt_ensemble,
    clt_mean_ode,
    empirical_fluctuation,
    simulate_clt_path,
)
from .fluid import FluidSolution, eval_fluid, fluid_limit, fluid_numeric
from .model import (
    ModelParams,
    NetworkState,
    Regime,
    TransitionEvent,
    apply_event,
    classify_regime,
    enumerate_transitions,
    initial_state,
    total_rate,
)
from .simulate import (
    CouplingDiagnostic,
    EnsembleStats,
    MM1Path,
    OccupancyHistogram,
    SimConfig,
    Trajectory,
    coupling_diagnostic,
    empirical_occupancy,
    first_passage_fraction,
    mm1_path,
    run_ensemble,
    simulate_path,
)
from .skorohod import (
    GFunctional,
    GridPath,
    GSPResult,
    ReflectionMatrix,
    SkorohodSolution,
    build_fluid_G,
    chain_reflection,
    solve_gsp,
    solve_sp,
)

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "__version__",
    "ModelParams",
    "NetworkState",
    "Regime",
    "TransitionEvent",
    "classify_regime",
    "initial_state",
    "enumerate_transitions",
    "apply_event",
    "total_rate",
    "SimConfig",
    "Trajectory",
    "EnsembleStats",
    "OccupancyHistogram",
    "MM1Path",
    "CouplingDiagnostic",
    "simulate_path",
    "run_ensemble",
    "first_passage_fraction",
    "empirical_occupancy",
    "coupling_diagnostic",
    "mm1_path",
    "ReflectionMatrix",
    "GridPath",
    "SkorohodSolution",
    "GFunctional",
    "GSPResult",
    "chain_reflection",
    "solve_sp",
    "solve_gsp",
    "build_fluid_G",
    "FluidSolution",
    "fluid_limit",
    "eval_fluid",
    "fluid_numeric",
    "DecayCurve",
    "OverloadDecay",
    "phi_of_t",
    "t_of_phi",
    "phi_prime",
    "phi_via_ode",
    "decay_time_asymptote",
    "occupancy_parameter",
    "geometric_pmf",
    "overload_phi",
    "FluctuationPath",
    "CLTEnsemble",
    "simulate_clt_path",
    "clt_ensemble",
    "clt_mean_ode",
    "empirical_fluctuation",
]
