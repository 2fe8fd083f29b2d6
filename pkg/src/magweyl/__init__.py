"""Magnetic Weyl asymptotics: densities, resonance analysis and a lattice oracle.

Subpackages are imported lazily by the caller; the most used names are
re-exported here.
"""
from .errors import MagweylError
from .geometry import Scenario, characteristic_frequencies, drift_flow, intensity_matrix, symplectic_frame
from .oracle import Lattice, assemble, count_below, local_trace
from .reduction import reduce_constant, verify_reduction_isospectral
from .resonance import enumerate_resonances, resonance_partition
from .scenarios import get_scenario
from .weyl import (
    CutoffFunction,
    WeylDensity,
    WeylParams,
    integrate_density,
    landau_levels,
    magnetic_weyl_full_rank,
    magnetic_weyl_general,
    standard_weyl,
)

__version__ = "0.1.0"
