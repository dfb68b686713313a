"""P1 finite elements on a uniform triangulation of the unit square or torus.

Each of the ``n x n`` cells is split along its ``/`` diagonal into two right
triangles. Stiffness matrices are linear in the per-triangle diffusion tensor,
so the assembler precomputes the sparsity pattern once and rebuilds only the
value array for each new tensor field.
"""

from dataclasses import dataclass
from enum import Enum

import numpy as np
import scipy.sparse as sp

from . import _kernels
from .errors import NumericError, UsageError
from .geometry import SpdTensorField, MassDensity, spd_eigvals, to_compact, to_full


class Boundary(str, Enum):
    DIRICHLET = "dirichlet"
    PERIODIC = "periodic"


@dataclass
class Mesh:
    n: int
    boundary: Boundary
    nodes: np.ndarray        # (N, 2) node coordinates in [0, 1]^2
    triangles: np.ndarray    # (T, 3) node indices, counter-clockwise
    tri_coords: np.ndarray   # (T, 3, 2) vertex coordinates in the covering plane
    dof_map: np.ndarray      # (N,) dof index or -1 for eliminated nodes
    areas: np.ndarray        # (T,)
    grads: np.ndarray        # (T, 3, 2) gradients of the local hat functions

    @property
    def periodic(self):
        return self.boundary is Boundary.PERIODIC

    @property
    def n_nodes(self):
        return self.nodes.shape[0]

    @property
    def n_triangles(self):
        return self.triangles.shape[0]

    @property
    def n_dofs(self):
        return int(np.count_nonzero(self.dof_map >= 0))

    @property
    def dof_nodes(self):
        """Node index of every dof, in dof order."""
        return np.flatnonzero(self.dof_map >= 0)

    @property
    def dof_points(self):
        return self.nodes[self.dof_nodes]

    @property
    def barycenters(self):
        c = self.tri_coords.mean(axis=1)
        return np.mod(c, 1.0) if self.periodic else c

    def to_nodes(self, u):
        """Expand a dof vector to all nodes (eliminated nodes get 0)."""
        full = np.zeros(self.n_nodes)
        full[self.dof_nodes] = u
        return full

    def nodal(self, f):
        """Dof vector of nodal values of ``f(x, y)``."""
        p = self.dof_points
        return np.asarray(f(p[:, 0], p[:, 1]), dtype=float) * np.ones(p.shape[0])

    def locate(self, points):
        """Containing triangle and barycentric coordinates for each point."""
        pts = np.asarray(points, dtype=float).reshape(-1, 2)
        n = self.n
        if self.periodic:
            pts = np.mod(pts, 1.0)
        elif np.any(pts < -1e-12) or np.any(pts > 1 + 1e-12):
            raise UsageError("point outside the unit square")
        s = pts * n
        i = np.clip(np.floor(s[:, 0]).astype(int), 0, n - 1)
        j = np.clip(np.floor(s[:, 1]).astype(int), 0, n - 1)
        fx = s[:, 0] - i
        fy = s[:, 1] - j
        lower = fx >= fy
        tri = 2 * (j * n + i) + np.where(lower, 0, 1)
        bary = np.where(lower[:, None],
                        np.stack([1 - fx, fx - fy, fy], axis=1),
                        np.stack([1 - fy, fx, fy - fx], axis=1))
        return tri, bary

    def evaluate(self, u, points):
        """Evaluate the P1 interpolant of dof vector ``u`` at points."""
        tri, bary = self.locate(points)
        vals = self.to_nodes(u)[self.triangles[tri]]
        return np.einsum("pi,pi->p", bary, vals)

    def interpolate_nodal(self, values, points):
        """Interpolate arbitrary per-node data ``(N, ...)`` at points."""
        tri, bary = self.locate(points)
        vals = np.asarray(values)[self.triangles[tri]]
        return np.einsum("pi,pi...->p...", bary, vals)

    def gradient(self, u, points):
        """Gradient of the P1 interpolant of ``u`` at points, ``(npts, 2)``."""
        tri, _ = self.locate(points)
        vals = self.to_nodes(u)[self.triangles[tri]]
        return np.einsum("pi,pik->pk", vals, self.grads[tri])

    def triangle_neighbors(self):
        """``(T, 3)`` neighbor across local edge ``k`` (vertices ``k, k+1``), -1 if none."""
        tris = self.triangles
        T = tris.shape[0]
        a = tris
        b = np.roll(tris, -1, axis=1)
        lo = np.minimum(a, b).ravel()
        hi = np.maximum(a, b).ravel()
        key = lo.astype(np.int64) * self.n_nodes + hi
        order = np.argsort(key, kind="stable")
        sk = key[order]
        nb = np.full(3 * T, -1, dtype=np.int64)
        same = sk[1:] == sk[:-1]
        first = order[:-1][same]
        second = order[1:][same]
        nb[first] = second // 3
        nb[second] = first // 3
        return nb.reshape(T, 3)


def build_mesh(n, boundary):
    """Uniform triangulation with ``2 n^2`` triangles of area ``1 / (2 n^2)``."""
    boundary = Boundary(boundary)
    if int(n) != n or n < 4:
        raise UsageError("mesh needs n >= 4 subdivisions per axis")
    n = int(n)
    h = 1.0 / n
    ci, cj = np.meshgrid(np.arange(n), np.arange(n), indexing="xy")
    ci = ci.ravel()
    cj = cj.ravel()
    if boundary is Boundary.PERIODIC:
        gx, gy = np.meshgrid(np.arange(n), np.arange(n), indexing="xy")
        nodes = np.stack([gx.ravel() * h, gy.ravel() * h], axis=1)

        def nid(i, j):
            return (j % n) * n + (i % n)

        dof_map = np.arange(n * n)
    else:
        gx, gy = np.meshgrid(np.arange(n + 1), np.arange(n + 1), indexing="xy")
        nodes = np.stack([gx.ravel() * h, gy.ravel() * h], axis=1)

        def nid(i, j):
            return j * (n + 1) + i

        gxr, gyr = gx.ravel(), gy.ravel()
        interior = (gxr > 0) & (gxr < n) & (gyr > 0) & (gyr < n)
        dof_map = np.full(nodes.shape[0], -1)
        dof_map[interior] = np.arange(np.count_nonzero(interior))
    v00 = nid(ci, cj)
    v10 = nid(ci + 1, cj)
    v11 = nid(ci + 1, cj + 1)
    v01 = nid(ci, cj + 1)
    lower = np.stack([v00, v10, v11], axis=1)
    upper = np.stack([v00, v11, v01], axis=1)
    triangles = np.empty((2 * n * n, 3), dtype=np.int64)
    triangles[0::2] = lower
    triangles[1::2] = upper
    p00 = np.stack([ci, cj], 1) * h
    p10 = np.stack([ci + 1, cj], 1) * h
    p11 = np.stack([ci + 1, cj + 1], 1) * h
    p01 = np.stack([ci, cj + 1], 1) * h
    tri_coords = np.empty((2 * n * n, 3, 2))
    tri_coords[0::2] = np.stack([p00, p10, p11], axis=1)
    tri_coords[1::2] = np.stack([p00, p11, p01], axis=1)
    areas, grads = _p1_geometry(tri_coords)
    return Mesh(n, boundary, nodes, triangles, tri_coords, dof_map, areas, grads)


def _p1_geometry(tri_coords):
    p0, p1, p2 = tri_coords[:, 0], tri_coords[:, 1], tri_coords[:, 2]
    e1 = p1 - p0
    e2 = p2 - p0
    det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
    if np.any(det <= 0):
        raise NumericError("triangles must be counter-clockwise and non-degenerate")
    # gradients of barycentric coordinates: rows of inverse of [e1 e2]^T
    inv = np.empty((tri_coords.shape[0], 2, 2))
    inv[:, 0, 0] = e2[:, 1] / det
    inv[:, 0, 1] = -e2[:, 0] / det
    inv[:, 1, 0] = -e1[:, 1] / det
    inv[:, 1, 1] = e1[:, 0] / det
    g1 = inv[:, 0]
    g2 = inv[:, 1]
    g0 = -g1 - g2
    return 0.5 * det, np.stack([g0, g1, g2], axis=1)


@dataclass(frozen=True)
class OperatorPair:
    M: sp.csr_matrix
    K: sp.csr_matrix


class Assembler:
    """Fast repeated assembly of mass and stiffness matrices on one mesh.

    Parameters
    ----------
    mesh : Mesh
    theta : MassDensity or array_like, optional
        Nodal mass density, default 1.
    lumped : bool
        Use a row-sum lumped mass matrix instead of the consistent one.
    """

    def __init__(self, mesh, theta=None, lumped=False):
        self.mesh = mesh
        if theta is None:
            theta_nodes = np.ones(mesh.n_nodes)
        else:
            vals = theta.values if isinstance(theta, MassDensity) else np.asarray(theta, float)
            theta_nodes = np.broadcast_to(vals, (mesh.n_nodes,)).astype(float)
            if not np.all(theta_nodes > 0):
                raise UsageError("mass density must be positive")
        self.theta_nodes = theta_nodes
        self.theta_tri = theta_nodes[mesh.triangles].mean(axis=1)
        self.weight = mesh.areas * self.theta_tri
        self._build_pattern()
        self.lumped = lumped
        self._M = None

    def _build_pattern(self):
        mesh = self.mesh
        dofs = mesh.dof_map[mesh.triangles]            # (T, 3)
        rows = np.repeat(dofs, 3, axis=1).ravel()       # i-major, matches 3*i + j
        cols = np.tile(dofs, (1, 3)).ravel()
        valid = (rows >= 0) & (cols >= 0)
        nd = mesh.n_dofs
        key = rows[valid].astype(np.int64) * nd + cols[valid]
        uniq, inv = np.unique(key, return_inverse=True)
        self.index = np.full(rows.size, -1, dtype=np.int64)
        self.index[valid] = inv
        self.indices = (uniq % nd).astype(np.int32)
        counts = np.bincount(uniq // nd, minlength=nd)
        self.indptr = np.concatenate([[0], np.cumsum(counts)]).astype(np.int32)
        self.nnz = uniq.size

    def _csr(self, data):
        nd = self.mesh.n_dofs
        return sp.csr_matrix((data, self.indices.copy(), self.indptr.copy()), shape=(nd, nd))

    def triangle_tensors(self, D):
        """Barycentric (vertex-mean) compact tensors per triangle."""
        c = _compact_nodes(D, self.mesh.n_nodes)
        return c[self.mesh.triangles].mean(axis=1)

    def stiffness_data(self, D):
        local = _kernels.local_stiffness(self.mesh.grads, self.weight,
                                         np.ascontiguousarray(self.triangle_tensors(D)))
        return _kernels.scatter(self.index, local.ravel(), self.nnz)

    def stiffness(self, D):
        """Stiffness matrix ``K_ij = sum_T |T| theta_T grad(phi_i)^T D_T grad(phi_j)``."""
        return self._csr(self.stiffness_data(D))

    def reference_stiffness(self):
        return self.stiffness(np.broadcast_to([1.0, 0.0, 1.0], (self.mesh.n_nodes, 3)))

    @property
    def M(self):
        if self._M is None:
            T = self.mesh.n_triangles
            local = np.broadcast_to(np.array([2, 1, 1, 1, 2, 1, 1, 1, 2]) / 12.0, (T, 9))
            local = local * self.weight[:, None]
            M = self._csr(_kernels.scatter(self.index, local.ravel(), self.nnz))
            if self.lumped:
                M = sp.diags(np.asarray(M.sum(axis=1)).ravel()).tocsr()
            self._M = M
        return self._M

    def mass_on(self, tri_mask):
        """Mass matrix over all nodes restricted to the masked triangles."""
        mesh = self.mesh
        N = mesh.n_nodes
        w = self.weight * np.asarray(tri_mask, dtype=float)
        local = (np.array([2, 1, 1, 1, 2, 1, 1, 1, 2]) / 12.0)[None, :] * w[:, None]
        rows = np.repeat(mesh.triangles, 3, axis=1).ravel()
        cols = np.tile(mesh.triangles, (1, 3)).ravel()
        return sp.csr_matrix((local.ravel(), (rows, cols)), shape=(N, N))

    def node_weights(self, tri_mask=None):
        """``int_S phi_i omega`` for every node (P1 quadrature over the mask)."""
        mesh = self.mesh
        w = self.weight if tri_mask is None else self.weight * np.asarray(tri_mask, float)
        return np.bincount(mesh.triangles.ravel(), weights=np.repeat(w / 3.0, 3),
                           minlength=mesh.n_nodes)


def _compact_nodes(D, n_nodes):
    if isinstance(D, SpdTensorField):
        c = to_compact(D.values)
    else:
        D = np.asarray(D, dtype=float)
        c = to_compact(D) if D.shape[-2:] == (2, 2) else D
    if c.shape != (n_nodes, 3):
        raise UsageError("tensor field does not match the mesh node count")
    return c


def check_spd_nodes(D, n_nodes):
    c = _compact_nodes(D, n_nodes)
    if not np.all(np.isfinite(c)) or np.any(spd_eigvals(to_full(c))[:, 0] <= 0):
        raise NumericError("diffusion tensor is not positive-definite at every node")
    return c


def assemble(mesh, D, theta=None, lumped=False):
    """Mass and stiffness matrices for the dual-metric field ``D``."""
    check_spd_nodes(D, mesh.n_nodes)
    asm = Assembler(mesh, theta, lumped)
    return OperatorPair(asm.M, asm.stiffness(D))


def export_triplets(matrix, path):
    """Write ``row col value`` lines for every stored entry."""
    coo = sp.coo_matrix(matrix)
    with open(path, "w") as fh:
        for r, c, v in zip(coo.row, coo.col, coo.data):
            fh.write(f"{r} {c} {v:.17g}\n")
