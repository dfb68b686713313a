"""A flow, a mesh and the per-time-slice operators built from them.

The time grid ``t_k = k / n_t`` is shared by the metric quadrature and the
Crank-Nicolson steps. The operator used on step ``k`` is the stiffness of the
interval-mean dual metric ``(D_k + D_{k+1}) / 2``; summed over steps with
weight ``1 / n_t`` this reproduces exactly the trapezoid average that defines
the dynamic Laplacian stiffness ``K_bar``.
"""

from functools import cached_property

import numpy as np

from .flowfield import Domain, VelocityField
from .geometry import (AmbientDiffusion, SpdTensorField, TensorRole, averaged_dual_metric,
                       dual_metric_history, spd_eigvals, to_full)
from .mesh import Assembler, Boundary, build_mesh

# stiffness matrices are cached up to this many stored nonzeros in total
CACHE_NNZ_BUDGET = 40_000_000


class Scenario:
    """Everything the solvers need for one flow on one mesh.

    Parameters
    ----------
    field : VelocityField
    n : int
        Mesh subdivisions per axis.
    n_t : int
        Number of time steps on ``[0, 1]``.
    ambient : AmbientDiffusion, optional
    theta : array_like, optional
        Nodal mass density (default 1).
    min_steps : int
        Minimum total number of RK4 steps for the flow maps.
    """

    def __init__(self, field, n, n_t, ambient=None, theta=None, min_steps=400,
                 lumped=False):
        self.field = field
        self.ambient = ambient or AmbientDiffusion()
        boundary = Boundary.PERIODIC if field.domain is Domain.TORUS else Boundary.DIRICHLET
        self.mesh = build_mesh(n, boundary)
        self.n_t = int(n_t)
        if self.n_t < 1:
            raise ValueError("n_t must be >= 1")
        self.assembler = Assembler(self.mesh, theta, lumped)
        self.history = dual_metric_history(field, self.mesh.nodes, self.n_t + 1,
                                           self.ambient, min_steps)
        self._cache = {}
        self._cache_ok = self.assembler.nnz * (self.n_t + 2) <= CACHE_NNZ_BUDGET

    def __repr__(self):
        return (f"Scenario({self.field.kind.value}, n={self.mesh.n}, n_t={self.n_t}, "
                f"boundary={self.mesh.boundary.value})")

    @property
    def dt(self):
        return 1.0 / self.n_t

    @property
    def periodic(self):
        return self.mesh.periodic

    @property
    def autonomous(self):
        return self.field.is_autonomous_identity

    @property
    def M(self):
        return self.assembler.M

    def step_dual(self, k):
        return self.history.interval_mean(k)

    def step_stiffness(self, k):
        """Stiffness for time step ``k`` (interval ``[t_k, t_{k+1}]``)."""
        if not 0 <= k < self.n_t:
            raise IndexError(k)
        if self.autonomous:
            return self.Kbar
        if k in self._cache:
            return self._cache[k]
        K = self.assembler.stiffness(self.step_dual(k))
        if self._cache_ok:
            self._cache[k] = K
        return K

    def slice_stiffness(self, k):
        """Stiffness of the dual metric at time ``t_k`` itself."""
        return self.assembler.stiffness(self.history.values[k])

    @cached_property
    def anisotropy(self):
        """Largest eigenvalue ratio of any dual metric in the history."""
        ev = spd_eigvals(to_full(self.history.values))
        with np.errstate(divide="ignore"):
            return float(np.max(ev[..., 1] / ev[..., 0]))

    @cached_property
    def dual_avg(self):
        return self.history.average()

    @cached_property
    def Kbar(self):
        return self.assembler.stiffness(self.dual_avg)

    @cached_property
    def K_ref(self):
        return self.assembler.reference_stiffness()

    @cached_property
    def geometry(self):
        """Averaged dual metric and averaged metric at the mesh nodes."""
        return averaged_dual_metric(self.field, self.mesh.nodes, self.n_t + 1,
                                    self.ambient, mesh_id=id(self.mesh),
                                    history=self.history)

    def dual_field(self, k):
        return SpdTensorField(to_full(self.history.values[k]), TensorRole.DUAL_METRIC,
                              id(self.mesh))

    def mesh_geometry(self):
        from .transport import MeshGeometry
        return MeshGeometry(self)


def make_field(name, amplitude=None, boundary=None):
    """Build a built-in field from a short name (``zero``, ``shear``, ``double_gyre``)."""
    name = str(name).lower()
    if name == "zero":
        domain = Domain.SQUARE if str(boundary).lower() in ("dirichlet", "square") else Domain.TORUS
        return VelocityField.zero(domain)
    if name == "shear":
        return VelocityField.shear(0.5 if amplitude is None else amplitude)
    if name in ("double_gyre", "rotating_double_gyre"):
        return VelocityField.double_gyre(1.0 if amplitude is None else amplitude)
    raise ValueError(f"unknown field {name!r}")

