"""Transport functionals on material sets, and surface areas of curves.

Curves are oriented polylines whose segment normal ``(dy, -dx) / len`` is the
right-hand normal; a closed, counter-clockwise curve therefore has outward
normals. For a Euclidean unit normal ``n`` and a dual metric ``X`` the area
density of a curve is ``theta * sqrt(n^T X n)`` against arclength, with
``X = D`` (reference), ``X = D_t`` (time ``t``) or ``X = D_bar`` (geometry of
mixing). Fluxes use ``grad(u0) . X n``.
"""

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import UsageError
from .evolution import Propagator, discrete_laplacian
from .geometry import AmbientDiffusion, DualMetricHistory, PointGeometry, to_compact

DEFAULT_SUBSAMPLES = 4
RAY_JITTER = 1e-7
CHAIN_SLACK = 1e-10
FAMILY_SIZE = 64


# curves ---------------------------------------------------------------------

@dataclass
class Curve:
    """Oriented polyline.

    Parameters
    ----------
    vertices : (N, 2) array
        For closed curves the last vertex repeats the first (up to a lattice
        vector when ``periodic``).
    closed : bool
    periodic : bool
        Vertices live in the covering plane of the torus and are wrapped into
        the unit square whenever the curve is sampled.
    """

    vertices: np.ndarray
    closed: bool = False
    periodic: bool = False

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float)
        if v.ndim != 2 or v.shape[1] != 2 or v.shape[0] < 2:
            raise UsageError("a curve needs at least two vertices of dimension 2")
        self.vertices = v
        if np.any(self.lengths <= 0):
            raise UsageError("curve segments must have positive length")
        if self.closed:
            gap = v[-1] - v[0]
            if self.periodic:
                gap = gap - np.round(gap)
            if np.abs(gap).max() > 1e-9:
                raise UsageError("closed curve must end where it starts")

    @property
    def n_segments(self):
        return self.vertices.shape[0] - 1

    @property
    def deltas(self):
        return np.diff(self.vertices, axis=0)

    @property
    def lengths(self):
        return np.hypot(*np.diff(self.vertices, axis=0).T)

    @property
    def length(self):
        return float(self.lengths.sum())

    @property
    def midpoints(self):
        return 0.5 * (self.vertices[1:] + self.vertices[:-1])

    @property
    def tangents(self):
        return self.deltas / self.lengths[:, None]

    @property
    def normals(self):
        t = self.tangents
        return np.stack([t[:, 1], -t[:, 0]], axis=1)

    def reversed(self):
        return Curve(self.vertices[::-1].copy(), self.closed, self.periodic)

    def wrap(self, pts):
        return np.mod(pts, 1.0) if self.periodic else pts

    def quadrature(self, sub=DEFAULT_SUBSAMPLES):
        """Composite midpoint rule with ``sub`` pieces per segment.

        Returns ``(points, normals, weights)``; weights are Euclidean lengths.
        """
        if sub < 1:
            raise UsageError("sub must be >= 1")
        a = self.vertices[:-1]
        d = self.deltas
        s = (np.arange(sub) + 0.5) / sub
        pts = a[:, None, :] + s[None, :, None] * d[:, None, :]
        nrm = np.repeat(self.normals, sub, axis=0)
        w = np.repeat(self.lengths / sub, sub)
        return self.wrap(pts.reshape(-1, 2)), nrm, w

    # io
    def to_file(self, path):
        with open(path, "w") as fh:
            head = "closed" if self.closed else "open"
            fh.write(head + (" periodic" if self.periodic else "") + "\n")
            for x, y in self.vertices:
                fh.write(f"{x:.17g} {y:.17g}\n")

    @classmethod
    def from_file(cls, path):
        with open(path) as fh:
            lines = [ln.strip() for ln in fh if ln.strip() and not ln.startswith("#")]
        if not lines:
            raise UsageError(f"{path}: empty curve file")
        head = lines[0].lower().split()
        if head[0] not in ("closed", "open"):
            raise UsageError(f"{path}: first line must be 'closed' or 'open'")
        pts = np.array([[float(t) for t in ln.split()[:2]] for ln in lines[1:]])
        return cls(pts, head[0] == "closed", "periodic" in head[1:])

    # constructors
    @classmethod
    def horizontal_loop(cls, y0, n=256, reverse=False):
        """Torus loop ``y = y0``; traversed in ``+x`` (normal ``-y``) unless ``reverse``."""
        x = np.linspace(0.0, 1.0, n + 1)
        v = np.stack([x, np.full_like(x, y0)], axis=1)
        return cls(v[::-1].copy() if reverse else v, True, True)

    @classmethod
    def vertical_loop(cls, x0, n=256, reverse=False):
        """Torus loop ``x = x0``; traversed in ``+y`` (normal ``+x``) unless ``reverse``."""
        y = np.linspace(0.0, 1.0, n + 1)
        v = np.stack([np.full_like(y, x0), y], axis=1)
        return cls(v[::-1].copy() if reverse else v, True, True)

    @classmethod
    def circle(cls, center, radius, n=256):
        """Counter-clockwise circle (outward normals)."""
        a = np.linspace(0.0, 2 * np.pi, n + 1)
        v = np.stack([center[0] + radius * np.cos(a), center[1] + radius * np.sin(a)], axis=1)
        v[-1] = v[0]
        return cls(v, True, False)

    @classmethod
    def segment(cls, p, q, n=256):
        s = np.linspace(0.0, 1.0, n + 1)[:, None]
        return cls((1 - s) * np.asarray(p, float) + s * np.asarray(q, float), False, False)


def _as_curves(curves):
    return [curves] if isinstance(curves, Curve) else list(curves)


def point_in_polygon(points, polygon, angle=0.0, _depth=0):
    """Ray-casting parity test for a closed polygon ``(N, 2)`` (last vertex = first).

    A ray passing (numerically) through a vertex is re-cast with its angle
    jittered by ``RAY_JITTER``.
    """
    P = np.atleast_2d(np.asarray(points, dtype=float))
    V = np.asarray(polygon, dtype=float)
    a, b = V[:-1], V[1:]
    d = np.array([np.cos(angle), np.sin(angle)])
    e = b - a                                           # (S, 2)
    # solve P + s d = a + r e for s >= 0, r in [0, 1)
    w = a[None, :, :] - P[:, None, :]                   # (np, S, 2)
    den = d[0] * e[:, 1] - d[1] * e[:, 0]               # cross(d, e)
    with np.errstate(divide="ignore", invalid="ignore"):
        s = (w[..., 0] * e[:, 1] - w[..., 1] * e[:, 0]) / den
        r = (w[..., 0] * d[1] - w[..., 1] * d[0]) / den
    hit = (den != 0) & (s > 0) & (r >= 0) & (r < 1)
    near_vertex = (den != 0) & (s > 0) & ((np.abs(r) < 1e-12) | (np.abs(r - 1) < 1e-12))
    if np.any(near_vertex) and _depth < 8:
        return point_in_polygon(P, V, angle + RAY_JITTER, _depth + 1)
    return np.count_nonzero(hit, axis=1) % 2 == 1


def check_orientation(curve, delta=1e-6):
    """True when every segment normal of a closed planar curve points outward."""
    wraps = curve.periodic and np.abs(curve.vertices[-1] - curve.vertices[0]).max() > 1e-9
    if not curve.closed or wraps:
        raise UsageError("orientation by ray casting needs a closed, contractible curve")
    m = curve.midpoints
    n = curve.normals
    h = min(delta, 0.25 * curve.lengths.min())
    outside = ~point_in_polygon(m + h * n, curve.vertices)
    inside = point_in_polygon(m - h * n, curve.vertices)
    return bool(np.all(outside) and np.all(inside))


# material sets --------------------------------------------------------------

class SetKind(str, Enum):
    SUB_LEVEL = "sub_level"
    HALF_TORUS = "half_torus"
    DISK = "disk"


@dataclass
class MaterialSet:
    """A set ``S`` given by an indicator, discretized as a triangle mask on a mesh.

    Use the constructors :meth:`sub_level`, :meth:`half_torus` and :meth:`disk`.
    A triangle belongs to ``S`` when its barycenter does.
    """

    kind: SetKind
    params: dict
    mesh: object
    indicator: object = field(repr=False)
    mask: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        c = self.mesh.barycenters
        self.mask = np.asarray(self.indicator(c[:, 0], c[:, 1]), dtype=bool)
        if not self.mask.any() or self.mask.all():
            raise UsageError("material set must be a proper, non-empty subset of the mesh")
        self._curves = None

    @classmethod
    def sub_level(cls, mesh, f, level):
        return cls(SetKind.SUB_LEVEL, {"level": level}, mesh,
                   lambda x, y: np.asarray(f(x, y)) < level)

    @classmethod
    def half_torus(cls, mesh, axis="y", threshold=0.5):
        """``{coord < threshold}``; on the torus its boundary is two parallel loops."""
        if axis not in ("x", "y"):
            raise UsageError("axis must be 'x' or 'y'")
        if not 0 < threshold < 1:
            raise UsageError("threshold must lie in (0, 1)")
        k = 0 if axis == "x" else 1
        return cls(SetKind.HALF_TORUS, {"axis": axis, "threshold": threshold}, mesh,
                   lambda x, y: (x, y)[k] < threshold)

    @classmethod
    def disk(cls, mesh, center, radius):
        cx, cy = center
        if mesh.periodic:
            def ind(x, y):
                dx = (np.asarray(x) - cx + 0.5) % 1.0 - 0.5
                dy = (np.asarray(y) - cy + 0.5) % 1.0 - 0.5
                return dx * dx + dy * dy < radius * radius
        else:
            def ind(x, y):
                return (np.asarray(x) - cx) ** 2 + (np.asarray(y) - cy) ** 2 < radius * radius
        return cls(SetKind.DISK, {"center": tuple(center), "radius": radius}, mesh, ind)

    def mass(self, assembler):
        return float(assembler.weight[self.mask].sum())

    @property
    def boundary_curves(self):
        """Mesh-edge polylines separating ``S`` from its complement, outward-oriented.

        Edges on the boundary of the square are not part of the relative boundary,
        so sets touching it have open cuts running from wall to wall.
        """
        if self._curves is None:
            self._curves = _interface_curves(self.mesh, self.mask)
        return self._curves

    def analytic_boundary(self, n=512):
        """Exact boundary curves where available (half torus, disk)."""
        if self.kind is SetKind.HALF_TORUS:
            t = self.params["threshold"]
            if self.params["axis"] == "y":
                return [Curve.horizontal_loop(t, n, reverse=True), Curve.horizontal_loop(0.0, n)]
            return [Curve.vertical_loop(t, n), Curve.vertical_loop(0.0, n, reverse=True)]
        if self.kind is SetKind.DISK:
            return [Curve.circle(self.params["center"], self.params["radius"], n)]
        raise UsageError("no analytic boundary for sub-level sets")

    def check(self, assembler=None, delta=1e-3):
        """Mass strictly between 0 and the total; curve normals point out of the mask."""
        if assembler is not None:
            m = self.mass(assembler)
            if not 0 < m < assembler.weight.sum():
                raise UsageError("material set mass must lie strictly inside (0, total)")
        h = delta / self.mesh.n
        for c in self.boundary_curves:
            m_, n_ = c.midpoints, c.normals
            out = self.mesh.locate(c.wrap(m_ + h * n_))[0]
            inn = self.mesh.locate(c.wrap(m_ - h * n_))[0]
            if self.mask[out].any() or not self.mask[inn].all():
                return False
        return True


def _interface_curves(mesh, mask):
    tris = mesh.triangles
    nb = mesh.triangle_neighbors()
    t_idx, k_idx = np.nonzero(mask[:, None] & (nb >= 0) & ~mask[np.maximum(nb, 0)])
    starts = tris[t_idx, k_idx]
    ends = tris[t_idx, (k_idx + 1) % 3]
    p0 = mesh.tri_coords[t_idx, k_idx]
    p1 = mesh.tri_coords[t_idx, (k_idx + 1) % 3]
    by_start = {}
    for e, s in enumerate(starts):
        by_start.setdefault(int(s), []).append(e)
    used = np.zeros(len(starts), dtype=bool)
    curves = []
    periodic = mesh.periodic
    # on the square, chains that start on the outer boundary are open cuts
    end_nodes = set(int(e) for e in ends)
    open_first = [e for e in range(len(starts)) if int(starts[e]) not in end_nodes]
    order = open_first + [e for e in range(len(starts)) if e not in set(open_first)]
    for e0 in order:
        if used[e0]:
            continue
        used[e0] = True
        verts = [p0[e0], p1[e0]]
        first_node = int(starts[e0])
        node = int(ends[e0])
        closed = True
        while node != first_node:
            cand = [e for e in by_start.get(node, []) if not used[e]]
            if not cand:
                if periodic or e0 not in open_first:
                    raise UsageError("material set boundary is not a union of closed curves")
                closed = False
                break
            e = cand[0]
            used[e] = True
            shift = verts[-1] - p0[e]
            if periodic:
                shift = np.round(shift)
            verts.append(p1[e] + shift)
            node = int(ends[e])
        curves.append(Curve(np.array(verts), closed, periodic))
    return curves


# geometry sources -------------------------------------------------------------

class MeshGeometry:
    """Nodal dual-metric history of a scenario, interpolated (P1) at arbitrary points."""

    def __init__(self, scenario):
        self.scenario = scenario
        self.ambient = scenario.ambient
        # (N, n_slices, 3) for interpolation along the node axis
        self._nodal = np.ascontiguousarray(np.swapaxes(scenario.history.values, 0, 1))
        self._theta = scenario.assembler.theta_nodes

    def at(self, points):
        pts = np.asarray(points, dtype=float).reshape(-1, 2)
        mesh = self.scenario.mesh
        vals = mesh.interpolate_nodal(self._nodal, pts)          # (np, n_slices, 3)
        h = self.scenario.history
        hist = DualMetricHistory(h.times, np.swapaxes(vals, 0, 1), h.weights)
        return PointGeometry(hist, mesh.interpolate_nodal(self._theta, pts))


def _ambient_of(geometry):
    return getattr(geometry, "ambient", None) or AmbientDiffusion()


def _qform(c, n):
    """``n^T X n`` for compact tensors ``c (..., np, 3)`` and normals ``n (np, 2)``."""
    return c[..., 0] * n[:, 0] ** 2 + 2 * c[..., 1] * n[:, 0] * n[:, 1] + c[..., 2] * n[:, 1] ** 2


def _xform(c, n):
    """``X n`` for compact tensors, shape ``(..., np, 2)``."""
    return np.stack([c[..., 0] * n[:, 0] + c[..., 1] * n[:, 1],
                     c[..., 1] * n[:, 0] + c[..., 2] * n[:, 1]], axis=-1)


@dataclass
class CurveSample:
    """Everything needed for area and flux quadratures on a set of curves."""

    points: np.ndarray
    normals: np.ndarray
    weights: np.ndarray
    geometry: PointGeometry
    ambient_dual: np.ndarray

    @property
    def theta(self):
        return self.geometry.theta

    @property
    def time_weights(self):
        return self.geometry.history.weights

    @property
    def times(self):
        return self.geometry.history.times

    def ref_density(self):
        return self.theta * np.sqrt(_qform(self.ambient_dual, self.normals))

    def time_density(self):
        """``(n_slices, np)`` densities of ``dA_t``."""
        return self.theta * np.sqrt(_qform(self.geometry.history.values, self.normals))

    def avg_density(self):
        return self.theta * np.sqrt(_qform(self.geometry.history.average(), self.normals))


def sample_curves(curves, geometry, sub=DEFAULT_SUBSAMPLES):
    curves = _as_curves(curves)
    parts = [c.quadrature(sub) for c in curves]
    pts = np.concatenate([p[0] for p in parts])
    nrm = np.concatenate([p[1] for p in parts])
    w = np.concatenate([p[2] for p in parts])
    amb = to_compact(_ambient_of(geometry).dual)
    return CurveSample(pts, nrm, w, geometry.at(pts), np.broadcast_to(amb, (pts.shape[0], 3)))


def _sample(curves, geometry, sub):
    return curves if isinstance(curves, CurveSample) else sample_curves(curves, geometry, sub)


# areas ----------------------------------------------------------------------

class AreaMetric(str, Enum):
    REFERENCE = "reference"
    TIME = "time"
    AVERAGED = "averaged"


def _slice_weights(times, t):
    """Linear-interpolation weights of time ``t`` on the slice grid."""
    if not times[0] - 1e-12 <= t <= times[-1] + 1e-12:
        raise UsageError("time outside [0, 1]")
    w = np.zeros(times.size)
    j = int(np.clip(np.searchsorted(times, t) - 1, 0, times.size - 2))
    s = (t - times[j]) / (times[j + 1] - times[j])
    if s > 1 - 1e-12:
        w[j + 1] = 1.0
    elif s < 1e-12:
        w[j] = 1.0
    else:
        w[j], w[j + 1] = 1 - s, s
    return w


def curve_area(curves, metric, geometry=None, t=None, sub=DEFAULT_SUBSAMPLES):
    """Area of a curve (or union of curves) in the reference, time-``t`` or averaged geometry.

    ``curves`` may also be a :class:`CurveSample` from :func:`sample_curves`.
    """
    metric = AreaMetric(metric)
    cs = _sample(curves, geometry, sub)
    if metric is AreaMetric.REFERENCE:
        return float(cs.weights @ cs.ref_density())
    if metric is AreaMetric.AVERAGED:
        return float(cs.weights @ cs.avg_density())
    if t is None:
        raise UsageError("time-t area needs t")
    ws = _slice_weights(cs.times, float(t))
    dual = np.tensordot(ws, cs.geometry.history.values, axes=1)
    return float(cs.weights @ (cs.theta * np.sqrt(_qform(dual, cs.normals))))


@dataclass
class AreaReport:
    A_bar: float
    l2_avg: float
    l1_avg: float
    areas_t: np.ndarray
    identity_error: float
    holds: bool


def area_inequalities(curves, geometry=None, sub=DEFAULT_SUBSAMPLES, slack=CHAIN_SLACK):
    """``dA_bar >= (int dA_t^2 dt)^{1/2} >= int dA_t dt`` on one quadrature.

    ``identity_error`` is the largest relative deviation, over quadrature
    nodes, between the averaged density and the root-mean-square of the
    time-``t`` densities.
    """
    cs = _sample(curves, geometry, sub)
    if cs.times.size < 2:
        raise UsageError("need at least two time slices")
    wt = cs.time_weights
    dens_t = cs.time_density()
    dens_bar = cs.avg_density()
    ref = cs.ref_density()
    areas_t = dens_t @ cs.weights
    A_bar = float(cs.weights @ dens_bar)
    l2 = float(np.sqrt(wt @ areas_t ** 2))
    l1 = float(wt @ areas_t)
    rms = np.sqrt(wt @ (dens_t / ref) ** 2) * ref
    ident = float(np.max(np.abs(rms - dens_bar) / dens_bar))
    holds = A_bar >= l2 - slack * max(1.0, A_bar) and l2 >= l1 - slack * max(1.0, l2)
    return AreaReport(A_bar, l2, l1, areas_t, ident, bool(holds))


class GradientNorm(str, Enum):
    REFERENCE_GRADIENT = "reference_gradient"
    MIXING_GRADIENT = "mixing_gradient"


def normalized_transport(curves, geometry=None, norm="mixing_gradient", sub=DEFAULT_SUBSAMPLES,
                         pointwise=False):
    """Transport through ``curves`` per unit normal gradient of ``u0``.

    ``reference_gradient``: ``-int g(nu, C_bar nu) dA`` (unit reference
    gradient); ``mixing_gradient``: ``-dA_bar`` (unit mixing gradient). With
    ``pointwise`` the integrand per unit ``dA`` at each quadrature node is
    returned instead, together with the weights.
    """
    norm = GradientNorm(norm)
    cs = _sample(curves, geometry, sub)
    ref_q = _qform(cs.ambient_dual, cs.normals)
    ratio = _qform(cs.geometry.history.average(), cs.normals) / ref_q     # g(nu, C_bar nu)
    integrand = ratio if norm is GradientNorm.REFERENCE_GRADIENT else np.sqrt(ratio)
    if pointwise:
        return integrand, cs.weights * cs.ref_density()
    return -float((cs.weights * cs.ref_density()) @ integrand)


def surface_change_density(normal, G_new, G_ref=None):
    """``dA_new / dA`` by the explicit construction of the ``G_new``-unit normal.

    With ``tau`` the tangent and ``nu`` the ``G_ref``-unit normal, the new unit
    normal is ``C nu / g(nu, C nu)^{1/2}`` with ``C = G_new^{-1} G_ref``, and the
    density is the ratio ``omega(nu_new, tau) / omega(nu, tau)``.
    """
    n = np.asarray(normal, dtype=float)
    n = n / np.linalg.norm(n)
    Gr = np.eye(2) if G_ref is None else np.asarray(G_ref, float)
    Gn = np.asarray(G_new, float)
    tau = np.array([-n[1], n[0]])                # (nu, tau) positively oriented
    nu = np.linalg.solve(Gr, n)
    nu = nu / np.sqrt(n @ nu)                    # G_ref-unit, with dual pairing n(nu) > 0
    C = np.linalg.solve(Gn, Gr)
    Cnu = C @ nu
    nu_new = Cnu / np.sqrt(nu @ Gr @ Cnu)
    det = lambda a, b: a[0] * b[1] - a[1] * b[0]
    return det(nu_new, tau) / det(nu, tau)


# transport --------------------------------------------------------------------

def _nodal_weights(scenario, S):
    return scenario.assembler.node_weights(S.mask)


def set_integral(scenario, S, u):
    """``int_S u omega`` for a dof vector by per-triangle P1 quadrature over the mask."""
    return float(_nodal_weights(scenario, S) @ scenario.mesh.to_nodes(u))


def transport_deficit(scenario, S, u0, eps, propagator=None):
    """``T(S, u0) = int_S (u0 - u_eps(1)) omega``."""
    P = propagator or Propagator(scenario, eps)
    return set_integral(scenario, S, u0 - P.forward(u0))


def leading_order_transport(scenario, S, u0, lap_u0=None):
    """``-int_S (Delta_bar u0) omega`` with the discrete ``Delta_bar = -M^{-1} K_bar``."""
    lap = discrete_laplacian(scenario, u0) if lap_u0 is None else lap_u0
    return -set_integral(scenario, S, lap)


def leading_order_transport_analytic(S, lap_u0, theta=1.0, order=64):
    """``-int_S (Delta_bar u0) theta dx`` from a closed-form ``lap_u0(x, y)``.

    Exact (Gauss-Legendre) on half tori and disks; sub-level sets fall back to
    the triangle mask of ``S``.
    """
    th = theta if callable(theta) else (lambda x, y: float(theta) * np.ones(np.shape(x)))

    def f(x, y):
        return lap_u0(x, y) * th(x, y)

    g, w = np.polynomial.legendre.leggauss(order)
    if S.kind is SetKind.HALF_TORUS:
        t = S.params["threshold"]
        # the set is [0, t) x [0, 1) or its transpose, split in panels for accuracy
        a = np.concatenate([np.linspace(0, t, 9)[:-1, None] + (g[None, :] + 1) * t / 16])
        wa = np.tile(w * t / 16, 8)
        b = np.concatenate([np.linspace(0, 1, 9)[:-1, None] + (g[None, :] + 1) / 16])
        wb = np.tile(w / 16, 8)
        A, B = np.meshgrid(a.ravel(), b.ravel(), indexing="ij")
        X, Y = (B, A) if S.params["axis"] == "y" else (A, B)
        return -float(wa @ f(X, Y) @ wb)
    if S.kind is SetKind.DISK:
        (cx, cy), R = S.params["center"], S.params["radius"]
        r = (g + 1) * R / 2
        wr = w * R / 2
        phi = np.linspace(0, 2 * np.pi, 4 * order, endpoint=False)
        Rr, Ph = np.meshgrid(r, phi, indexing="ij")
        vals = f(cx + Rr * np.cos(Ph), cy + Rr * np.sin(Ph)) * Rr
        return -float(wr @ vals.sum(axis=1) * (2 * np.pi / phi.size))
    c = S.mesh.barycenters[S.mask]
    return -float(S.mesh.areas[S.mask] @ f(c[:, 0], c[:, 1]))


def mesh_gradient(scenario, u, offset=1e-9):
    """Callable P1 gradient of ``u``, averaged across the curve where it sits on an edge."""
    mesh = scenario.mesh

    def grad(points, normals):
        h = offset
        p1 = points + h * normals
        p2 = points - h * normals
        if mesh.periodic:
            p1, p2 = np.mod(p1, 1.0), np.mod(p2, 1.0)
        else:
            p1, p2 = np.clip(p1, 0, 1), np.clip(p2, 0, 1)
        return 0.5 * (mesh.gradient(u, p1) + mesh.gradient(u, p2))

    grad.uses_normals = True
    return grad


def _gradient_at(grad_u0, pts, nrm):
    if getattr(grad_u0, "uses_normals", False):
        return np.asarray(grad_u0(pts, nrm), dtype=float)
    return np.asarray(grad_u0(pts[:, 0], pts[:, 1]), dtype=float)


def boundary_flux(curves, grad_u0, geometry=None, metric="averaged", t=None,
                  sub=DEFAULT_SUBSAMPLES, require_closed=True):
    """``-int_Gamma du0(C nu) dA`` over (outward-oriented) curves.

    ``grad_u0`` is ``f(x, y) -> (..., 2)``, or ``f(points, normals)`` when it
    carries a true ``uses_normals`` attribute (as :func:`mesh_gradient` does).
    ``metric`` picks ``C``: the averaged tensor, the time-``t`` tensor,
    ``"time_average"`` (the trapezoid mean of the per-slice fluxes) or
    ``"reference"``.
    """
    if require_closed and not isinstance(curves, CurveSample):
        if any(not c.closed for c in _as_curves(curves)):
            raise UsageError("boundary flux needs closed curves")
    cs = _sample(curves, geometry, sub)
    g = _gradient_at(grad_u0, cs.points, cs.normals)
    wq = cs.weights * cs.theta
    hv = cs.geometry.history.values
    if metric == "averaged":
        Xn = _xform(cs.geometry.history.average(), cs.normals)
    elif metric == "reference":
        Xn = _xform(cs.ambient_dual, cs.normals)
    elif metric == "time":
        if t is None:
            raise UsageError("time-t flux needs t")
        Xn = _xform(np.tensordot(_slice_weights(cs.times, float(t)), hv, axes=1), cs.normals)
    elif metric == "time_average":
        per = np.einsum("kpi,pi->kp", _xform(hv, cs.normals), g) @ wq
        return -float(cs.time_weights @ per)
    else:
        raise UsageError(f"unknown flux metric {metric!r}")
    return -float(wq @ np.einsum("pi,pi->p", Xn, g))


# Cheeger ----------------------------------------------------------------------

@dataclass
class Divider:
    """Curves splitting the domain into ``M_1`` (a rectangle) and its complement."""

    curves: list
    rect: tuple          # (x0, x1, y0, y1) of M_1
    label: float = 0.0


def _rect_mass(rect, theta, order=32):
    x0, x1, y0, y1 = rect
    if not callable(theta):
        return float(theta) * (x1 - x0) * (y1 - y0)
    g, w = np.polynomial.legendre.leggauss(order)
    x = x0 + (g + 1) * (x1 - x0) / 2
    y = y0 + (g + 1) * (y1 - y0) / 2
    X, Y = np.meshgrid(x, y, indexing="ij")
    return float(w @ theta(np.mod(X, 1.0), np.mod(Y, 1.0)) @ w) * (x1 - x0) * (y1 - y0) / 4


def torus_pairs(axis="y", m=FAMILY_SIZE, n=256):
    """Pairs of parallel loops ``{c, c + 1/2}`` for ``c`` on a uniform grid of ``[0, 1/2)``."""
    out = []
    for c in np.arange(m) / (2 * m):
        if axis == "y":
            cs = [Curve.horizontal_loop(c + 0.5, n, reverse=True), Curve.horizontal_loop(c, n)]
            rect = (0.0, 1.0, c, c + 0.5)
        else:
            cs = [Curve.vertical_loop(c + 0.5, n), Curve.vertical_loop(c, n, reverse=True)]
            rect = (c, c + 0.5, 0.0, 1.0)
        out.append(Divider(cs, rect, float(c)))
    return out


def square_lines(axis="x", m=FAMILY_SIZE, n=256):
    """Straight cuts ``x = c`` (or ``y = c``) of the unit square, ``c`` uniform in ``(0, 1)``."""
    out = []
    for c in (np.arange(m) + 0.5) / m:
        if axis == "x":
            cs = [Curve.segment((c, 0.0), (c, 1.0), n)]
            rect = (0.0, c, 0.0, 1.0)
        else:
            cs = [Curve.segment((1.0, c), (0.0, c), n)]
            rect = (0.0, 1.0, 0.0, c)
        out.append(Divider(cs, rect, float(c)))
    return out


@dataclass
class CheegerReport:
    labels: np.ndarray
    ratio_bar: np.ndarray       # dA_bar / min mass
    ratio_time: np.ndarray      # int dA_t dt / min mass
    bound: float

    @property
    def h_bar(self):
        return float(self.ratio_bar.min())

    @property
    def h_time(self):
        return float(self.ratio_time.min())

    @property
    def ordered(self):
        return bool(np.all(self.ratio_time <= self.ratio_bar * (1 + CHAIN_SLACK)))

    @property
    def holds(self):
        return self.h_bar <= self.bound and self.h_time <= self.bound and self.ordered


def cheeger_scan(family, geometry, lam, theta=1.0, total_mass=1.0, sub=DEFAULT_SUBSAMPLES):
    """Cheeger ratios of every divider against ``2 sqrt(-lam)``.

    ``lam`` is the first nontrivial eigenvalue of the dynamic Laplacian.
    """
    if not lam < 0:
        raise UsageError("the eigenvalue must be negative")
    labels, rb, rt = [], [], []
    for d in family:
        if not isinstance(d, Divider):
            raise UsageError("family members must be Divider instances")
        m1 = _rect_mass(d.rect, theta)
        m2 = total_mass - m1
        if not (m1 > 0 and m2 > 0):
            raise UsageError("curve does not disconnect the domain")
        rep = area_inequalities(d.curves, geometry, sub)
        mm = min(m1, m2)
        labels.append(d.label)
        rb.append(rep.A_bar / mm)
        rt.append(rep.l1_avg / mm)
    return CheegerReport(np.array(labels), np.array(rb), np.array(rt), 2.0 * np.sqrt(-lam))


__all__ = ["Curve", "MaterialSet", "SetKind", "MeshGeometry", "AreaMetric", "GradientNorm",
           "CurveSample", "sample_curves", "curve_area", "area_inequalities", "AreaReport",
           "normalized_transport", "surface_change_density", "set_integral",
           "transport_deficit", "leading_order_transport", "leading_order_transport_analytic",
           "mesh_gradient", "boundary_flux", "Divider", "torus_pairs", "square_lines",
           "CheegerReport", "cheeger_scan", "point_in_polygon", "check_orientation"]
