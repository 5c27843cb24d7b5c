"""Hessian-constrained Kantorovich-Rubinstein transport for discrete measures.

The package solves the three-marginal formulation

    J(mu, nu) = inf  integral of (|z-x|^2 + |z-y|^2)/2 dpi(x, y, z)

over plans pi whose first two marginals are mu and nu and whose third
coordinate has conditional barycentre x given x and y given y. The dual
problem runs over potentials u with Lipschitz gradient; optimizers are
certified through recovered jets (u, grad u) and a three-point equality.
The optimal plan doubles as a second-order Beckmann measure: a finite
family of weighted segments (a grillage, in the planar mechanical
reading) whose double divergence reproduces the load nu - mu.
"""

__version__ = "0.1.0"

from .beckmann import (BasicLoad, BasicValue, SegmentMeasure, assemble_sigma,
                       basic_load_value, empty_measure, verify_div2)
from .conic import SolverOptions
from .convex_order import (ConvexWitness, MartingalePlan, OrderResult,
                           dominates, glue, minimal_variance_upper)
from .grillage import (GrillageResult, Unbalanced, ball_membership, design,
                       refine_study)
from .measures import (BarycentreMismatch, CenteredPair, DimensionMismatch,
                       DiscreteMeasure, GuardExceeded, ZeroMass, barycentre,
                       diameter, validate_pair, variance)
from .oracles import (Collinear, GaussianSolution, GridSpec, NotCentred,
                      NotOrdered, NotPsd, OrderedSolution, TwoPointSolution,
                      ZeroAngle, branch_eigenvalues, case_b_potential,
                      eigen_scan, gauss_hermite_measure, gaussian_oracle,
                      grid_oracle, ordered_oracle, two_point_oracle)
from .transport3 import (CertificateFailure, CertificateReport, JetField,
                         Plan3, check_certificate, check_jets,
                         scan_support_bound, solve_three_marginal,
                         third_marginal)

__all__ = [
    "BasicLoad", "BasicValue", "SegmentMeasure", "assemble_sigma",
    "basic_load_value", "empty_measure", "verify_div2",
    "SolverOptions",
    "ConvexWitness", "MartingalePlan", "OrderResult", "dominates", "glue",
    "minimal_variance_upper",
    "GrillageResult", "Unbalanced", "ball_membership", "design",
    "refine_study",
    "BarycentreMismatch", "CenteredPair", "DimensionMismatch",
    "DiscreteMeasure", "GuardExceeded", "ZeroMass", "barycentre", "diameter",
    "validate_pair", "variance",
    "Collinear", "GaussianSolution", "GridSpec", "NotCentred", "NotOrdered",
    "NotPsd", "OrderedSolution", "TwoPointSolution", "ZeroAngle",
    "branch_eigenvalues", "case_b_potential", "eigen_scan",
    "gauss_hermite_measure", "gaussian_oracle", "grid_oracle",
    "ordered_oracle", "two_point_oracle",
    "CertificateFailure", "CertificateReport", "JetField", "Plan3",
    "check_certificate", "check_jets", "scan_support_bound",
    "solve_three_marginal", "third_marginal",
    "__version__",
]
