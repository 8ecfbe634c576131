"""Quantum Rabi model and its cold-atom optical-lattice realization."""

from .compare import ComparisonReport, compare_point, sweep
from .dynamics import EvolutionResult, InitialState, QuenchProtocol, Segment, adiabatic_ramp, evolve_constant, run_protocol
from .errors import ConvergenceError, CoverageError, ExtractionError, RabiError, RangeError, ValidationError
from .lattice import EffectiveParams, Grid, LatticeConfig, extract_effective_params, lattice_spectrum
from .models import build_dicke, build_driven_qrm, build_model, build_qrm, build_quadratic_qrm, solve_model
from .operators import OperatorMatrix, Spectrum, hermitian_eigensolve
from .units import AtomSpecies, ModelParams, get_species

__version__ = "0.1.0"
