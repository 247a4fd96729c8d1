"""Bose-Hubbard chains stabilized by frequency-dependent (square-spectrum) photon emission.

Modules, bottom up: ``fock`` (number-conserving bases), ``hamiltonian``
(sector-wise diagonalization), ``spectra`` (reservoir spectra and Lamb
shifts), ``liouvillian`` (Redfield generator and steady-state solvers),
``observables``, ``microscopic`` (emitter-resolved model) and ``sweep``
(parameter grids, tables and the CLI back end).
"""
from .fock import FockBasis, build_basis
from .hamiltonian import (BoseHubbardParams, EigenSystem, assemble_hamiltonian, diagonalize,
                          grand_canonical_ground_state)
from .liouvillian import (DensityMatrix, DissipationParams, RedfieldGenerator, apply_generator,
                          build_jump_operators, secular_rates, steady_state_exact,
                          steady_state_secular, time_evolve)
from .observables import SteadyStateReport, compute_report, density_profile, effective_temperature
from .spectra import FlatSpectrum, LorentzianSpectrum, SpectrumSum, SquareSpectrum, time_averaged_spectrum
from .sweep import SweepConfig, equilibrium_reference, run_sweep, single_cavity_scan

__version__ = "0.1.0"
