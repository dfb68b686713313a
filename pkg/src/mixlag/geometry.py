"""Pullback metrics, dual metrics, their time averages and transport tensors.

The diffusion tensor ``D`` of the ambient medium is the dual metric of an
ambient metric ``G = D^{-1}``. Pulling back through a flow map with Jacobian
``J`` gives the metric ``J^T G J`` and the dual metric ``J^{-1} D J^{-T}``.
Time averages are taken over the dual metrics; the averaged metric is the
inverse of that average.

Symmetric 2x2 tensors are stored compactly as ``(..., 3)`` arrays
``(a11, a12, a22)`` where memory matters; :func:`to_full` / :func:`to_compact`
convert.
"""

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import NumericError, UsageError
from .flowfield import Domain, flow_history

SYMMETRY_TOL = 1e-12
DEFAULT_SLICES = 65


class TensorRole(str, Enum):
    METRIC = "metric"
    DUAL_METRIC = "dual_metric"


def symmetrize(A):
    return 0.5 * (A + np.swapaxes(A, -1, -2))


def to_full(c):
    c = np.asarray(c, dtype=float)
    out = np.empty(c.shape[:-1] + (2, 2))
    out[..., 0, 0] = c[..., 0]
    out[..., 0, 1] = c[..., 1]
    out[..., 1, 0] = c[..., 1]
    out[..., 1, 1] = c[..., 2]
    return out


def to_compact(A):
    A = np.asarray(A, dtype=float)
    return np.stack([A[..., 0, 0], 0.5 * (A[..., 0, 1] + A[..., 1, 0]), A[..., 1, 1]], axis=-1)


def inv2(A):
    """Batched inverse of 2x2 matrices via the adjugate."""
    A = np.asarray(A, dtype=float)
    det = A[..., 0, 0] * A[..., 1, 1] - A[..., 0, 1] * A[..., 1, 0]
    if np.any(det == 0) or not np.all(np.isfinite(det)):
        raise NumericError("singular or non-finite 2x2 matrix")
    out = np.empty_like(A)
    out[..., 0, 0] = A[..., 1, 1]
    out[..., 1, 1] = A[..., 0, 0]
    out[..., 0, 1] = -A[..., 0, 1]
    out[..., 1, 0] = -A[..., 1, 0]
    return out / det[..., None, None]


def spd_eigvals(A):
    """Eigenvalues (ascending) of symmetric 2x2 matrices, closed form."""
    A = np.asarray(A, dtype=float)
    a, b, d = A[..., 0, 0], 0.5 * (A[..., 0, 1] + A[..., 1, 0]), A[..., 1, 1]
    m = 0.5 * (a + d)
    r = np.hypot(0.5 * (a - d), b)
    hi = m + r
    # det / hi avoids the cancellation in m - r for strongly anisotropic tensors
    with np.errstate(divide="ignore", invalid="ignore"):
        lo = np.where(hi > 0, (a * d - b * b) / hi, m - r)
    return np.stack([lo, hi], axis=-1)


def is_spd(A, tol=SYMMETRY_TOL):
    A = np.asarray(A, dtype=float)
    if not np.all(np.isfinite(A)):
        return False
    asym = np.abs(A - np.swapaxes(A, -1, -2)).max(initial=0.0)
    scale = max(1.0, np.abs(A).max(initial=0.0))
    return asym <= tol * scale and bool(np.all(spd_eigvals(A)[..., 0] > 0))


def pullback_metric(J, G):
    """``J^T G J``, symmetrized. Broadcasts over leading axes."""
    J = np.asarray(J, dtype=float)
    G = np.asarray(G, dtype=float)
    if not (np.all(np.isfinite(J)) and np.all(np.isfinite(G))):
        raise NumericError("non-finite entries in pullback")
    return symmetrize(np.swapaxes(J, -1, -2) @ G @ J)


def pullback_dual_metric(J, D):
    """``J^{-1} D J^{-T}``, the inverse of :func:`pullback_metric` for ``G = D^{-1}``."""
    Ji = inv2(J)
    return symmetrize(Ji @ np.asarray(D, dtype=float) @ np.swapaxes(Ji, -1, -2))


@dataclass(frozen=True)
class AmbientDiffusion:
    """Static, homogeneous ambient diffusion tensor ``diag(d1, d2)``."""

    d1: float = 1.0
    d2: float = 1.0

    def __post_init__(self):
        if not (self.d1 > 0 and self.d2 > 0):
            raise UsageError("diffusion coefficients must be positive")

    @property
    def dual(self):
        return np.diag([self.d1, self.d2])

    @property
    def metric(self):
        return np.diag([1.0 / self.d1, 1.0 / self.d2])

    @property
    def is_isotropic(self):
        return self.d1 == 1.0 and self.d2 == 1.0


@dataclass(frozen=True)
class SpdTensorField:
    """Per-node symmetric positive-definite 2x2 tensors."""

    values: np.ndarray
    role: TensorRole
    mesh_id: object = None

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim != 3 or vals.shape[1:] != (2, 2):
            raise UsageError("tensor field values must have shape (N, 2, 2)")
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "role", TensorRole(self.role))

    def __len__(self):
        return self.values.shape[0]

    def check(self):
        if not is_spd(self.values):
            raise NumericError("tensor field is not symmetric positive-definite")
        return self

    def inverse(self):
        role = TensorRole.METRIC if self.role is TensorRole.DUAL_METRIC else TensorRole.DUAL_METRIC
        return SpdTensorField(symmetrize(inv2(self.values)), role, self.mesh_id)

    def compact(self):
        return to_compact(self.values)

    @classmethod
    def constant(cls, matrix, n, role, mesh_id=None):
        vals = np.broadcast_to(np.asarray(matrix, dtype=float), (n, 2, 2)).copy()
        return cls(vals, role, mesh_id)


@dataclass(frozen=True)
class MassDensity:
    """Density ``theta > 0`` of the mass form against Lebesgue measure."""

    values: np.ndarray

    def __post_init__(self):
        vals = np.atleast_1d(np.asarray(self.values, dtype=float))
        if not np.all(vals > 0):
            raise UsageError("mass density must be positive")
        object.__setattr__(self, "values", vals)

    @classmethod
    def uniform(cls, n):
        return cls(np.ones(n))


@dataclass(frozen=True)
class AveragedGeometry:
    dual_avg: SpdTensorField
    metric_avg: SpdTensorField


def trapezoid_weights(n_slices):
    """Composite trapezoid weights on the uniform grid ``k / (n_slices - 1)``."""
    if n_slices < 2:
        raise UsageError("need at least two time slices")
    w = np.full(n_slices, 1.0 / (n_slices - 1))
    w[0] *= 0.5
    w[-1] *= 0.5
    return w


@dataclass
class DualMetricHistory:
    """Pullback dual metrics at a fixed set of points for every time slice.

    ``values`` has shape ``(n_slices, npts, 3)`` in compact storage.
    """

    times: np.ndarray
    values: np.ndarray
    weights: np.ndarray = field(default=None)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        if self.weights is None:
            self.weights = trapezoid_weights(self.times.size)

    @property
    def n_slices(self):
        return self.times.size

    @property
    def n_points(self):
        return self.values.shape[1]

    def average(self):
        """Weighted time average, compact ``(npts, 3)``."""
        return np.tensordot(self.weights, self.values, axes=1)

    def slice_full(self, k):
        return to_full(self.values[k])

    def interval_mean(self, k):
        """Mean of the dual metrics at both ends of interval ``k``."""
        return 0.5 * (self.values[k] + self.values[k + 1])

    def subset(self, idx):
        return DualMetricHistory(self.times, self.values[:, idx], self.weights)


def _slice_times(n_slices):
    return np.linspace(0.0, 1.0, n_slices)


def substeps_for(n_slices, min_steps=400):
    """RK4 substeps per slice interval so that the total is at least ``min_steps``."""
    return max(1, -(-min_steps // (n_slices - 1)))


def dual_metric_history(field_, points, n_slices=DEFAULT_SLICES, ambient=None,
                        min_steps=400):
    """Pullback dual metrics ``g_t^{-1}`` at ``points`` on the uniform time grid."""
    ambient = ambient or AmbientDiffusion()
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    times = _slice_times(n_slices)
    if field_.is_autonomous_identity:
        vals = np.broadcast_to(to_compact(ambient.dual), (n_slices, pts.shape[0], 3)).copy()
        return DualMetricHistory(times, vals)
    _, jac = flow_history(field_, pts, times, substeps_for(n_slices, min_steps))
    vals = np.empty((n_slices, pts.shape[0], 3))
    D = ambient.dual
    for k in range(n_slices):
        vals[k] = to_compact(pullback_dual_metric(jac[k], D))
    return DualMetricHistory(times, vals)


def averaged_dual_metric(field_, points, n_slices=DEFAULT_SLICES, ambient=None,
                         mesh_id=None, history=None):
    """Averaged dual metric ``int g_t^{-1} dt`` and the averaged metric at ``points``."""
    if n_slices < 2:
        raise UsageError("n_slices must be >= 2")
    if history is None:
        history = dual_metric_history(field_, points, n_slices, ambient)
    dual = to_full(history.average())
    if not is_spd(dual):
        raise NumericError("averaged dual metric is not SPD")
    dual_f = SpdTensorField(dual, TensorRole.DUAL_METRIC, mesh_id)
    return AveragedGeometry(dual_f, dual_f.inverse())


def transport_tensor(g_ref, dual):
    """Per-node ``dual @ g_ref`` (``C = g_avg^{-1} g`` or ``C_t = g_t^{-1} g``)."""
    if g_ref.role is not TensorRole.METRIC or dual.role is not TensorRole.DUAL_METRIC:
        raise UsageError("transport_tensor expects (metric, dual metric)")
    if g_ref.mesh_id != dual.mesh_id or len(g_ref) != len(dual):
        raise UsageError("tensor fields live on different meshes")
    return dual.values @ g_ref.values


@dataclass
class PointGeometry:
    """Time-resolved dual metrics and mass density at a set of evaluation points."""

    history: DualMetricHistory
    theta: np.ndarray

    def dual_t(self):
        return to_full(self.history.values)

    def dual_avg(self):
        return to_full(self.history.average())


class FlowGeometry:
    """Evaluates the mixing geometry at arbitrary points by direct flow-map integration."""

    def __init__(self, field_, n_slices=DEFAULT_SLICES, ambient=None, theta=1.0):
        self.field = field_
        self.n_slices = n_slices
        self.ambient = ambient or AmbientDiffusion()
        self.theta = theta

    def at(self, points):
        pts = np.asarray(points, dtype=float).reshape(-1, 2)
        if self.field.domain is Domain.TORUS:
            pts = np.mod(pts, 1.0)
        else:
            pts = np.clip(pts, 0.0, 1.0)
        hist = dual_metric_history(self.field, pts, self.n_slices, self.ambient)
        theta = self.theta(pts) if callable(self.theta) else np.full(pts.shape[0], float(self.theta))
        return PointGeometry(hist, theta)
