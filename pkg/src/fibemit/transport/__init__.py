"""Binary-collision Monte Carlo of keV ions in amorphous targets."""

from .core import (
    CollisionEvent,
    ImplantProfile,
    Ion,
    RngStream,
    SILICON,
    TargetMaterial,
    Trajectory,
    TransportSettings,
    electronic_stopping,
    profile_stats,
    simulate_ensemble,
    simulate_history,
)
from .zbl import quadrature_angle, magic_angle, rutherford_angle, scattering_angle

__all__ = [
    "CollisionEvent",
    "ImplantProfile",
    "Ion",
    "RngStream",
    "SILICON",
    "TargetMaterial",
    "Trajectory",
    "TransportSettings",
    "electronic_stopping",
    "magic_angle",
    "profile_stats",
    "quadrature_angle",
    "rutherford_angle",
    "scattering_angle",
    "simulate_ensemble",
    "simulate_history",
]
