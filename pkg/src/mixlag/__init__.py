"""Lagrangian heat flow, the dynamic Laplacian and the geometry of mixing.

Finite-element tools for advection-diffusion in Lagrangian coordinates on the
unit torus and square: flow maps and pullback metrics, Crank-Nicolson
solution operators, singular values and dynamic-Laplacian eigenpairs, and
transport and surface-area functionals.
"""

from .errors import (ConfigError, ContractionError, ConvergenceError, DomainError,
                     EstimationError, IntegrationError, MixlagError, NumericError,
                     SolverError, UsageError)
from .flowfield import Domain, FieldKind, VelocityField, flow_map, flow_maps, velocity_at
from .geometry import AmbientDiffusion, FlowGeometry, averaged_dual_metric, transport_tensor
from .mesh import Boundary, assemble, build_mesh
from .scenario import Scenario, make_field
from .evolution import Propagator, solve_adjoint, solve_averaged, solve_forward
from .spectral import dynamic_laplace_eig, leading_singular_pair, singular_slope
from .transport import Curve, MaterialSet, MeshGeometry

__version__ = "0.1.0"

__all__ = [
    "MixlagError", "UsageError", "DomainError", "NumericError", "IntegrationError", "SolverError",
    "ConvergenceError", "ContractionError", "EstimationError", "ConfigError",
    "Domain", "FieldKind", "VelocityField", "flow_map", "flow_maps", "velocity_at",
    "AmbientDiffusion", "FlowGeometry", "averaged_dual_metric", "transport_tensor",
    "Boundary", "assemble", "build_mesh", "Scenario", "make_field",
    "Propagator", "solve_forward", "solve_averaged", "solve_adjoint",
    "dynamic_laplace_eig", "leading_singular_pair", "singular_slope",
    "Curve", "MaterialSet", "MeshGeometry",
]
