"""Intermediate and Phi-intermediate dimensions by cover sums and capacities."""

__version__ = "0.1.0"

from .symbolic import (AffineIfs, IfsError, Prefix, SymbolicSet, coding_point, common_prefix, format_word,
                       parse_word, refine_to_depth, singular_values, validate_ifs)
from .kernels import (AdmissibleFn, as_phi, check_growth_condition, ker_profile, ker_psi, ker_symbolic_phi,
                      ker_z, phi_alpha)
from .capacity import (CapacityError, DimensionEstimate, EquilibriumResult, KernelMatrix, capacity_dimension,
                       capacity_profile, capacity_symbolic, equilibrium_measure, profile_dimension,
                       symbolic_capacity_dimension)
from .covering import (CoverSumResult, CoverTree, PointCloud, box_count, cover_sum, cover_sum_lower_certificate,
                       phi_dimension)
from .scenarios import (FbmSample, ProjectionFrame, RngStream, project_selfaffine, sample_fbm, sample_grassmannian,
                        sample_translation, transversality_check)
