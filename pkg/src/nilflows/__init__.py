"""Nilflows, their time-changes and shearing diagnostics on compact nilmanifolds."""
import logging

from .lie_core import (AlgebraVector, GroupElement, LieAlgebra, ValidationError, bch, bracket,
                       descending_series, integer_relations, is_completely_irrational,
                       jacobi_residual)
from .nilmanifold import (CentralSubspace, Lattice, NilPoint, distance, fiber_act,
                          first_to_second, haar_sample, reduce, second_to_first, toral_project)
from .specs import SpecError, load_algebra
from .towers import (HeisenbergTower, HeisenbergTriple, TowerError, build_maximal_tower,
                     central_quotient, find_heisenberg_triple, rational_envelope)
from .observables import (FiberPolynomial, Observable, PeriodizedCharacter, constant,
                          fiber_character_obs, torus_character, torus_polynomial)
from .dynamics import (FlowConfig, OrbitQuadrature, QuadratureError, birkhoff_integral,
                       nilflow_step, shear_record, tilde_tau, timechange_step, trace_orbit)
from . import diagnostics

logging.getLogger(__name__).addHandler(logging.NullHandler())

__version__ = "0.1.0"
