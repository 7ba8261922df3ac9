"""Phonon kinetic transport on pinned lattices.

Modules
-------
lattice      momentum grids, dispersion, resolvent broadening
collision    nonlinear collision operators (kinetic sum and pair-block form)
linear_ops   linearized collision operator, zero modes, complement solves
correlators  pair-correlator containers, transforms, currents
transport    diffusion matrix, hydrodynamic and kinetic boundary value problems
langevin     stochastic oscillator chains and the exact covariance oracle
cli          command-line entry points
"""

__version__ = "0.1.0"

from .errors import (  # noqa: F401
    ConditioningError,
    ConfigError,
    DivergenceError,
    NumericsError,
    PhonheatError,
)
