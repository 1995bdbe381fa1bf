"""Identification of a degradation coefficient in time-fractional diffusion.

The package solves the forward time-fractional diffusion problem on uniform
1D/2D meshes, evaluates weighted average boundary-flux measurements, recovers
the coefficient by adjoint-based conjugate gradients, and quantifies
uncertainty with a Laplace (Gaussian) approximation of the posterior.
"""

from .errors import ConfigError, SolverError
from .fem import CoefficientField, DiffusionTensor, FemOperators
from .flux import boundary_flux, flux_matrix
from .inversion import (
    CgmResult,
    InverseProblem,
    ObjectiveConfig,
    MU_RULES,
    mu_from_rule,
    relative_error,
)
from .measure import (
    DirectFluxData,
    MeasurementMatrix,
    MeasurementOperator,
    WeightFunction,
    add_noise,
    add_noise_direct,
    direct_flux_data,
    forward_map,
)
from .mesh import SpatialMesh, build_mesh, segment_quadrature_weights
from .solver import (
    ForwardProblem,
    ReactionSource,
    SecondOrderSource,
    SeparableSource,
    SpaceTimeField,
    solve_tfde,
)
from .sources import SourceSystem, build_source_system
from .timefrac import CaputoWeights, TemporalGrid, caputo_apply, caputo_weights
from .uq import (
    ConfidenceReport,
    PosteriorEnsemble,
    PosteriorModel,
    SkewnessReport,
    assemble_jacobian,
    assemble_jacobian_columns,
    chi2_quantile,
    confidence_interval,
    posterior_covariance,
    sample_posterior,
    skewness,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
