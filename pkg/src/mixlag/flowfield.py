"""Time-dependent planar velocity fields and their flow maps.

Flow maps are obtained by integrating the trajectory together with its
variational equation ``dJ/dt = (grad v) J``, ``J(0) = I``, with the classical
fourth-order Runge-Kutta scheme on a fixed step. On the torus positions are
wrapped into ``[0, 1)^2`` at output; Jacobians live in the covering plane.
"""

from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import _kernels
from .errors import DomainError, IntegrationError, UsageError

DEFAULT_STEPS = 400
DET_RELIABLE = 1e6
SQUARE_TOLERANCE = 1e-9


class FieldKind(str, Enum):
    ZERO = "zero"
    SHEAR = "shear"
    ROTATING_DOUBLE_GYRE = "double_gyre"
    STREAM_FUNCTION_TABLE = "stream_table"


class Domain(str, Enum):
    TORUS = "torus"
    SQUARE = "square"


_KIND_CODES = {
    FieldKind.ZERO: _kernels.KIND_ZERO,
    FieldKind.SHEAR: _kernels.KIND_SHEAR,
    FieldKind.ROTATING_DOUBLE_GYRE: _kernels.KIND_DOUBLE_GYRE,
}


@dataclass(frozen=True)
class VelocityField:
    """An analytic, divergence-free velocity field on the unit torus or square.

    ``amplitude`` is the shear amplitude ``a`` in ``v = (a sin(2 pi y), 0)`` and
    a plain velocity multiplier for the double gyre.
    """

    kind: FieldKind
    domain: Domain
    amplitude: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "kind", FieldKind(self.kind))
        object.__setattr__(self, "domain", Domain(self.domain))
        if self.kind is FieldKind.STREAM_FUNCTION_TABLE:
            raise UsageError("stream-function tables are not supported yet")
        if self.kind is FieldKind.ROTATING_DOUBLE_GYRE and self.domain is not Domain.SQUARE:
            raise UsageError("the rotating double gyre lives on the unit square")
        if not np.isfinite(self.amplitude):
            raise UsageError("amplitude must be finite")

    @property
    def code(self):
        return _KIND_CODES[self.kind]

    @property
    def is_autonomous_identity(self):
        """True when the flow map is the identity for all times."""
        return self.kind is FieldKind.ZERO or self.amplitude == 0.0

    # convenience constructors
    @classmethod
    def zero(cls, domain=Domain.TORUS):
        return cls(FieldKind.ZERO, domain)

    @classmethod
    def shear(cls, amplitude=0.5):
        return cls(FieldKind.SHEAR, Domain.TORUS, amplitude)

    @classmethod
    def double_gyre(cls, amplitude=1.0):
        return cls(FieldKind.ROTATING_DOUBLE_GYRE, Domain.SQUARE, amplitude)


@dataclass(frozen=True)
class FlowSample:
    base: np.ndarray
    image: np.ndarray
    jacobian: np.ndarray
    t: float


def _as_points(p):
    pts = np.asarray(p, dtype=float)
    if pts.shape[-1] != 2:
        raise UsageError("points must have a trailing dimension of 2")
    return pts


def _check_square(pts, tol=0.0):
    if np.any(pts < -tol) or np.any(pts > 1.0 + tol):
        raise DomainError("point outside the unit square")


def velocity_at(field, t, p):
    """Velocity ``v(t, p)`` for one point or an array of points."""
    pts = _as_points(p)
    if field.domain is Domain.TORUS:
        pts = np.mod(pts, 1.0)
    else:
        _check_square(pts)
    u, v, *_ = _kernels.field_numpy(field.code, field.amplitude, float(t),
                                    pts[..., 0], pts[..., 1])
    return np.stack(np.broadcast_arrays(u, v), axis=-1)


def velocity_gradient(field, t, p):
    """Velocity gradient ``[[u_x, u_y], [v_x, v_y]]`` at the given points."""
    pts = _as_points(p)
    if field.domain is Domain.TORUS:
        pts = np.mod(pts, 1.0)
    else:
        _check_square(pts)
    _, _, ux, uy, vx, vy = _kernels.field_numpy(
        field.code, field.amplitude, float(t), pts[..., 0], pts[..., 1])
    ux, uy, vx, vy = np.broadcast_arrays(ux, uy, vx, vy)
    return np.stack([np.stack([ux, uy], -1), np.stack([vx, vy], -1)], -2)


def flow_history(field, points, times, steps_per_interval=1, t0=None):
    """Flow maps from ``t0`` (default ``times[0]``) to every time in ``times``.

    ``times`` must be uniformly spaced and increasing; each interval between
    consecutive entries is covered by ``steps_per_interval`` RK4 steps.

    Returns
    -------
    images : ndarray, shape (len(times), npts, 2)
    jacobians : ndarray, shape (len(times), npts, 2, 2)
    """
    times = np.asarray(times, dtype=float)
    pts = _as_points(points).reshape(-1, 2)
    if times.ndim != 1 or times.size < 1:
        raise UsageError("times must be a non-empty 1-d array")
    if steps_per_interval < 1:
        raise UsageError("steps_per_interval must be >= 1")
    start = times[0] if t0 is None else float(t0)
    if times.size > 1:
        dt = np.diff(times)
        if np.any(dt <= 0) or np.ptp(dt) > 1e-12 * max(1.0, abs(dt[0])):
            raise UsageError("times must be uniformly spaced and increasing")
        if abs(times[0] - start) > 1e-14:
            raise UsageError("times[0] must equal the initial time")
        h = dt[0] / steps_per_interval
    else:
        h = 0.0
    if field.domain is Domain.SQUARE:
        _check_square(pts)
    npts = pts.shape[0]
    nrec = times.size
    X = np.empty((nrec, npts))
    Y = np.empty((nrec, npts))
    J = np.empty((nrec, npts, 4))
    px = np.ascontiguousarray(pts[:, 0])
    py = np.ascontiguousarray(pts[:, 1])
    _kernels.integrate(field.code, float(field.amplitude), px, py, float(start),
                       float(h), nrec, int(steps_per_interval), X, Y, J)
    images = np.stack([X, Y], axis=-1)
    if not np.all(np.isfinite(images)) or not np.all(np.isfinite(J)):
        raise IntegrationError("non-finite values during flow-map integration")
    # built-in fields are area preserving; RK4 only keeps det J = 1 to O(h^4),
    # so project onto det = 1 (a scalar rescale, below the truncation error)
    # (skipped where the determinant itself is dominated by cancellation)
    scale = np.abs(J[..., 0] * J[..., 3]) + np.abs(J[..., 1] * J[..., 2])
    det = J[..., 0] * J[..., 3] - J[..., 1] * J[..., 2]
    ok = (scale < DET_RELIABLE) & (det > 0)
    J[ok] /= np.sqrt(det[ok])[:, None]
    if field.domain is Domain.TORUS:
        images = np.mod(images, 1.0)
    else:
        if np.any(images < -SQUARE_TOLERANCE) or np.any(images > 1.0 + SQUARE_TOLERANCE):
            raise IntegrationError("trajectory left the unit square")
        images = np.clip(images, 0.0, 1.0)
    return images, J.reshape(nrec, npts, 2, 2)


def flow_map(field, p, t, steps=DEFAULT_STEPS, t0=0.0):
    """Flow map ``phi_{t0}^{t}`` and its Jacobian at a single point."""
    if steps < 1:
        raise UsageError("steps must be >= 1")
    if not (0.0 <= t0 <= 1.0 and 0.0 <= t <= 1.0) or t < t0:
        raise UsageError("require 0 <= t0 <= t <= 1")
    base = _as_points(p).reshape(2)
    if t == t0:
        return FlowSample(base.copy(), base.copy(), np.eye(2), float(t))
    images, jac = flow_history(field, base[None, :], [t0, t], steps, t0=t0)
    return FlowSample(base.copy(), images[-1, 0], jac[-1, 0], float(t))


def flow_maps(field, points, t, steps=DEFAULT_STEPS, t0=0.0):
    """Vectorized :func:`flow_map` for an array of points.

    Returns ``(images, jacobians)`` with shapes ``(npts, 2)`` and ``(npts, 2, 2)``.
    """
    pts = _as_points(points).reshape(-1, 2)
    if t == t0:
        return pts.copy(), np.broadcast_to(np.eye(2), (pts.shape[0], 2, 2)).copy()
    images, jac = flow_history(field, pts, [t0, t], steps, t0=t0)
    return images[-1], jac[-1]
