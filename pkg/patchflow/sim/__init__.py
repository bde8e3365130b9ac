"""
Simulation package: periodic compressible Navier-Stokes with a transported
density patch, plus the diagnostics that measure its energy and jump
identities.

The CLI lives in `patchflow.sim.cli`; `patchflow.sim.runner` drives runs
from Python.
"""

__all__ = [
    "__version__",
    "constitutive",
    "diagnostics",
    "errors",
    "initdata",
    "interface",
    "output",
    "runner",
    "solver",
    "spectral",
    "state",
    "utils",
]
__version__ = "0.1.0"
