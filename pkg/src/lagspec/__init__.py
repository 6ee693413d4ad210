"""Wave fronts, graph selectors and Lagrangian spectral invariants on T*S^1 and T*T^2."""

from lagspec.phase_space import (
    BasePoint,
    PhasePoint,
    Metric,
    Hamiltonian,
    Zero,
    TimeConstant,
    BaseLift,
    Fiberwise,
    Bump,
    Tabulated,
    FoldFamily,
    Sum,
    Product,
    Concatenate,
    Reflect,
    TimeReverse,
    Inverse,
    Reparametrize,
    Fourier,
    SlopeBump,
    eval_hamiltonian,
    compose_product,
    concatenate,
    transform,
    from_descriptor,
)
from lagspec.flow import (
    Trajectory,
    LagrangianCurve,
    integrate_trajectory,
    time_one_curve,
    hofer_norm,
    osc_c0,
)
from lagspec.front import WaveFront, decompose_front, action_spectrum, hausdorff_to_zero_section
from lagspec.floer import FilteredChainComplex, build_complex, check_energy_identity, ZERO_SECTION, fiber
from lagspec.spectral import spectral_number, rho, gamma, spectral_numbers, analyze
from lagspec.selector import basic_phase_function, singular_locus, transfer_map

__version__ = "0.1.0"
