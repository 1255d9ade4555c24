"""Retain-orthogonal surrogate unlearning (ROSU) on numpy.

The inner perturbation maximizes the forget gain subject to zero
first-order change of the retain loss; the outer update descends the
surrogate retain loss transported back to the base point.  Subpackages:

* :mod:`rosu.linalg` -- projectors, Gram-Schmidt, coupling diagnostics
* :mod:`rosu.objectives` -- quadratics, tiny MLPs, representation matching
* :mod:`rosu.inner` / :mod:`rosu.outer` -- perturbations and update steps
* :mod:`rosu.audit` -- seeded checks of the identities and bounds
* :mod:`rosu.experiments` / :mod:`rosu.cli` -- toy runs and the command line
"""

from .errors import (
    ConfigError,
    DegenerateCouplingError,
    DegenerateGeometryError,
    DegenerateGradientError,
    DimensionError,
    EmptyBasisError,
    EmptyBatchError,
    InvalidBranchError,
    InvalidVectorError,
    ReportIOError,
    RosuError,
    UnsupportedDimensionError,
)
from .inner import (
    Branch,
    InnerSolution,
    PerturbationConfig,
    amplified_displacement,
    brute_force_inner_oracle,
    rosu_perturbation,
    standard_perturbation,
    subspace_perturbation,
)
from .linalg import (
    OrthonormalBasis,
    Rank1Projector,
    cosine_coupling,
    orthonormalize,
    project_out,
    regproj_gap,
    subspace_project_out,
)
from .objectives import (
    CoupledPairSpec,
    Mlp,
    MlpObjective,
    ObjectivePair,
    QuadraticObjective,
    RepresentationObjective,
    make_blobs,
    make_coupled_pair,
)
from .outer import (
    BetaKind,
    BetaSchedule,
    OuterStep,
    StepBranch,
    beta_at,
    exact_outer_gradient,
    exact_step,
    relaxed_gradient_deviation_report,
    relaxed_outer_gradient,
    relaxed_transported_gradient,
    representation_rosu_step,
    rosu_step,
    standard_minmax_step,
    subspace_step,
    zero_order_step,
)

__version__ = "0.1.0"

__all__ = [
    "amplified_displacement",
    "beta_at",
    "BetaKind",
    "BetaSchedule",
    "Branch",
    "brute_force_inner_oracle",
    "ConfigError",
    "cosine_coupling",
    "CoupledPairSpec",
    "DegenerateCouplingError",
    "DegenerateGeometryError",
    "DegenerateGradientError",
    "DimensionError",
    "EmptyBasisError",
    "EmptyBatchError",
    "exact_outer_gradient",
    "exact_step",
    "InnerSolution",
    "InvalidBranchError",
    "InvalidVectorError",
    "make_blobs",
    "make_coupled_pair",
    "Mlp",
    "MlpObjective",
    "ObjectivePair",
    "OrthonormalBasis",
    "orthonormalize",
    "OuterStep",
    "PerturbationConfig",
    "project_out",
    "QuadraticObjective",
    "Rank1Projector",
    "regproj_gap",
    "relaxed_gradient_deviation_report",
    "relaxed_outer_gradient",
    "relaxed_transported_gradient",
    "ReportIOError",
    "representation_rosu_step",
    "RepresentationObjective",
    "rosu_perturbation",
    "rosu_step",
    "RosuError",
    "standard_minmax_step",
    "standard_perturbation",
    "StepBranch",
    "subspace_perturbation",
    "subspace_project_out",
    "subspace_step",
    "UnsupportedDimensionError",
    "zero_order_step",
]
