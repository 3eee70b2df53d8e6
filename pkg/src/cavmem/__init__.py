"""Photon storage and retrieval in a Lambda-type ensemble inside a cavity.

Exact integration of the bad-cavity and full cavity equations, closed-form
adiabatic and fast-limit solutions, optimal control shaping, and the
parameter scans that check them against each other.
"""

from .core import (
    AtomicState,
    CavmemError,
    ConvergenceError,
    DomainError,
    Envelope,
    IntegrationError,
    PhysicalParams,
    TimeGrid,
    fidelity_from_efficiency,
    make_chirped_gaussian_mode,
    make_exponential_mode,
    make_gaussian_like_mode,
    make_square_mode,
    mode_overlap,
    time_reverse,
)
from .dynamics import (
    Trajectory,
    conservation_residual,
    second_order_residual,
    simulate_full_cavity,
    simulate_retrieval,
    simulate_storage,
    storage_then_retrieval,
)
from .adiabatic import (
    AdiabaticityMargins,
    ShapingResult,
    adiabatic_retrieval_efficiency,
    adiabatic_retrieval_output,
    adiabatic_storage_amplitude,
    adiabaticity_margins,
    h_integral,
    output_duration_estimate,
    retrieval_control_for_mode,
    storage_control_for_mode,
)
from .fast import (
    PiPulseSpec,
    fast_retrieval_output,
    fast_storage_amplitude,
    optimal_fast_input,
    pi_pulse_map,
    simulate_fast_protocol,
)

__version__ = "0.1.0"

__all__ = [
    "AdiabaticityMargins", "AtomicState", "CavmemError", "ConvergenceError",
    "DomainError", "Envelope", "IntegrationError", "PhysicalParams", "PiPulseSpec",
    "ShapingResult", "TimeGrid", "Trajectory", "adiabatic_retrieval_efficiency",
    "adiabatic_retrieval_output", "adiabatic_storage_amplitude", "adiabaticity_margins",
    "conservation_residual", "fast_retrieval_output", "fast_storage_amplitude",
    "fidelity_from_efficiency", "h_integral", "make_chirped_gaussian_mode",
    "make_exponential_mode", "make_gaussian_like_mode", "make_square_mode",
    "mode_overlap", "optimal_fast_input", "output_duration_estimate", "pi_pulse_map",
    "retrieval_control_for_mode", "second_order_residual", "simulate_fast_protocol",
    "simulate_full_cavity", "simulate_retrieval", "simulate_storage",
    "storage_control_for_mode", "storage_then_retrieval", "time_reverse",
]
