"""Measurable forms of the energy, Hoff and jump identities."""

from .energy import (
    EnergyLedger,
    EnergyReport,
    HoffFunctionals,
    ThetaFunctional,
    classical_energy,
    dissipation_rate,
    hoff_functionals,
    pressure_damping,
    sigma,
    theta_functional,
)
from .identities import (
    Hoff2Report,
    RepresentationReport,
    Snapshot,
    band_mask,
    effective_flux,
    hoff2_identity,
    lagrangian_mass,
    stress,
    vorticity_identity,
)
from .jumps import (
    DecayFit,
    JumpIdentityReport,
    JumpNorms,
    OneSidedFields,
    OneSidedLimits,
    jump_decay_fit,
    jump_identities,
    jump_norms,
    jump_relations,
    probe_limits,
    rates_within_bounds,
)
from .monitors import (
    MONITOR_NAMES,
    GrowthCheck,
    MonitorReport,
    blowup_monitors,
    enforce,
    growth_law,
    interface_composite,
    viscosity_fluctuation,
)

__all__ = [
    "MONITOR_NAMES",
    "DecayFit",
    "EnergyLedger",
    "EnergyReport",
    "GrowthCheck",
    "Hoff2Report",
    "HoffFunctionals",
    "JumpIdentityReport",
    "JumpNorms",
    "MonitorReport",
    "OneSidedFields",
    "OneSidedLimits",
    "RepresentationReport",
    "Snapshot",
    "ThetaFunctional",
    "band_mask",
    "blowup_monitors",
    "classical_energy",
    "dissipation_rate",
    "effective_flux",
    "enforce",
    "growth_law",
    "hoff2_identity",
    "hoff_functionals",
    "interface_composite",
    "jump_decay_fit",
    "jump_identities",
    "jump_norms",
    "jump_relations",
    "lagrangian_mass",
    "pressure_damping",
    "probe_limits",
    "rates_within_bounds",
    "sigma",
    "stress",
    "theta_functional",
    "viscosity_fluctuation",
]
