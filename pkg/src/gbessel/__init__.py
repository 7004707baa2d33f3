"""Numerics for isotropic G-Brownian motion and its radial (G-Bessel) process.

Modules: :mod:`core` (bands, controls, path simulation), :mod:`gheat`
(monotone G-heat solver), :mod:`montecarlo` (upper expectations over control
families), :mod:`bessel` (radial process diagnostics), :mod:`verify`
(structural property suites) and :mod:`cli` (command-line runner).
"""

from .core import ConstantControl, GPath, PiecewiseControl, TimeGrid, VolatilityBand, simulate_paths
from .gheat import HeatProblem, heat_solve, verify_decay_bound
from .montecarlo import ControlFamily, Payoff, default_family, estimate_lower, estimate_upper

__version__ = "0.1.0"

__all__ = [
    "ConstantControl",
    "ControlFamily",
    "GPath",
    "HeatProblem",
    "Payoff",
    "PiecewiseControl",
    "TimeGrid",
    "VolatilityBand",
    "default_family",
    "estimate_lower",
    "estimate_upper",
    "heat_solve",
    "simulate_paths",
    "verify_decay_bound",
]
