"""Pseudo-spectral semiclassical Schrodinger-Poisson solvers and verification harness."""
from .spectral import Grid, SpectralField, VectorField
from .eikonal import QuadraticPhase, QuadraticPotentialSpec
from .wkb import Scenario, WkbState, WkbTrajectory, solve_wkb, solve_wkb_mollified, solve_corrector
from .schrodinger import WaveState, WaveTrajectory, solve_schrodinger

__all__ = [
    "Grid",
    "SpectralField",
    "VectorField",
    "QuadraticPhase",
    "QuadraticPotentialSpec",
    "Scenario",
    "WkbState",
    "WkbTrajectory",
    "solve_wkb",
    "solve_wkb_mollified",
    "solve_corrector",
    "WaveState",
    "WaveTrajectory",
    "solve_schrodinger",
]
