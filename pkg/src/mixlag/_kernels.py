"""Hot numeric kernels with a numba path and a vectorized numpy path.

Both paths share the scalar velocity/RK4 formulas below; the numpy path
evaluates them on whole arrays of trajectories at once, the numba path loops
over trajectories in compiled code.
"""

import numpy as np

from ._backend import USE_NUMBA, njit

PI = np.pi
TWO_PI = 2.0 * np.pi

KIND_ZERO = 0
KIND_SHEAR = 1
KIND_DOUBLE_GYRE = 2


def _field_py(kind, amp, t, x, y):
    """Velocity and velocity gradient ``(u, v, u_x, u_y, v_x, v_y)``."""
    if kind == KIND_SHEAR:
        u = amp * np.sin(TWO_PI * y)
        uy = amp * TWO_PI * np.cos(TWO_PI * y)
        z = 0.0 * x
        return u, z, z, uy, z, z
    if kind == KIND_DOUBLE_GYRE:
        s = t * t * (3.0 - 2.0 * t)
        r = 1.0 - s
        s2x = np.sin(TWO_PI * x)
        c2x = np.cos(TWO_PI * x)
        s1x = np.sin(PI * x)
        c1x = np.cos(PI * x)
        s2y = np.sin(TWO_PI * y)
        c2y = np.cos(TWO_PI * y)
        s1y = np.sin(PI * y)
        c1y = np.cos(PI * y)
        psi_x = r * TWO_PI * c2x * s1y + s * PI * c1x * s2y
        psi_y = r * PI * s2x * c1y + s * TWO_PI * s1x * c2y
        psi_xx = -r * 4.0 * PI * PI * s2x * s1y - s * PI * PI * s1x * s2y
        psi_yy = -r * PI * PI * s2x * s1y - s * 4.0 * PI * PI * s1x * s2y
        psi_xy = 2.0 * PI * PI * (r * c2x * c1y + s * c1x * c2y)
        return (-amp * psi_y, amp * psi_x, -amp * psi_xy, -amp * psi_yy,
                amp * psi_xx, amp * psi_xy)
    z = 0.0 * x
    return z, z, z, z, z, z


def _make_rk4(field):
    def rk4(kind, amp, t, h, x, y, a, b, c, d):
        # state: position (x, y) and Jacobian [[a, b], [c, d]]
        u, v, ux, uy, vx, vy = field(kind, amp, t, x, y)
        k1 = (u, v, ux * a + uy * c, ux * b + uy * d,
              vx * a + vy * c, vx * b + vy * d)
        hh = 0.5 * h
        x2 = x + hh * k1[0]
        y2 = y + hh * k1[1]
        a2 = a + hh * k1[2]
        b2 = b + hh * k1[3]
        c2 = c + hh * k1[4]
        d2 = d + hh * k1[5]
        u, v, ux, uy, vx, vy = field(kind, amp, t + hh, x2, y2)
        k2 = (u, v, ux * a2 + uy * c2, ux * b2 + uy * d2,
              vx * a2 + vy * c2, vx * b2 + vy * d2)
        x3 = x + hh * k2[0]
        y3 = y + hh * k2[1]
        a3 = a + hh * k2[2]
        b3 = b + hh * k2[3]
        c3 = c + hh * k2[4]
        d3 = d + hh * k2[5]
        u, v, ux, uy, vx, vy = field(kind, amp, t + hh, x3, y3)
        k3 = (u, v, ux * a3 + uy * c3, ux * b3 + uy * d3,
              vx * a3 + vy * c3, vx * b3 + vy * d3)
        x4 = x + h * k3[0]
        y4 = y + h * k3[1]
        a4 = a + h * k3[2]
        b4 = b + h * k3[3]
        c4 = c + h * k3[4]
        d4 = d + h * k3[5]
        u, v, ux, uy, vx, vy = field(kind, amp, t + h, x4, y4)
        k4 = (u, v, ux * a4 + uy * c4, ux * b4 + uy * d4,
              vx * a4 + vy * c4, vx * b4 + vy * d4)
        w = h / 6.0
        return (x + w * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
                y + w * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
                a + w * (k1[2] + 2.0 * k2[2] + 2.0 * k3[2] + k4[2]),
                b + w * (k1[3] + 2.0 * k2[3] + 2.0 * k3[3] + k4[3]),
                c + w * (k1[4] + 2.0 * k2[4] + 2.0 * k3[4] + k4[4]),
                d + w * (k1[5] + 2.0 * k2[5] + 2.0 * k3[5] + k4[5]))

    return rk4


field_numpy = _field_py
_rk4_numpy = _make_rk4(_field_py)

field_numba = njit(_field_py)
_rk4_numba = njit(_make_rk4(field_numba), cache=False)


def integrate_numpy(kind, amp, px, py, t0, h, nrec, stride, X, Y, J):
    """Integrate all trajectories at once, recording every ``stride`` steps.

    ``X, Y`` have shape ``(nrec, npts)``, ``J`` has shape ``(nrec, npts, 4)``
    storing the Jacobian row-major.
    """
    x = px.astype(np.float64).copy()
    y = py.astype(np.float64).copy()
    a = np.ones_like(x)
    b = np.zeros_like(x)
    c = np.zeros_like(x)
    d = np.ones_like(x)
    X[0] = x
    Y[0] = y
    J[0, :, 0] = a
    J[0, :, 1] = b
    J[0, :, 2] = c
    J[0, :, 3] = d
    k = 0
    for r in range(1, nrec):
        for _ in range(stride):
            x, y, a, b, c, d = _rk4_numpy(kind, amp, t0 + k * h, h,
                                          x, y, a, b, c, d)
            k += 1
        X[r] = x
        Y[r] = y
        J[r, :, 0] = a
        J[r, :, 1] = b
        J[r, :, 2] = c
        J[r, :, 3] = d


@njit(cache=False)
def integrate_numba(kind, amp, px, py, t0, h, nrec, stride, X, Y, J):
    for p in range(px.shape[0]):
        x = px[p]
        y = py[p]
        a = 1.0
        b = 0.0
        c = 0.0
        d = 1.0
        X[0, p] = x
        Y[0, p] = y
        J[0, p, 0] = a
        J[0, p, 1] = b
        J[0, p, 2] = c
        J[0, p, 3] = d
        k = 0
        for r in range(1, nrec):
            for _ in range(stride):
                x, y, a, b, c, d = _rk4_numba(kind, amp, t0 + k * h, h,
                                              x, y, a, b, c, d)
                k += 1
            X[r, p] = x
            Y[r, p] = y
            J[r, p, 0] = a
            J[r, p, 1] = b
            J[r, p, 2] = c
            J[r, p, 3] = d


def local_stiffness_numpy(grads, weight, coef):
    """Per-triangle 3x3 blocks ``weight * grad_i^T D grad_j`` flattened to 9.

    ``coef`` holds the symmetric tensor as columns ``(d11, d12, d22)``.
    """
    gx = grads[:, :, 0]
    gy = grads[:, :, 1]
    d11 = coef[:, 0:1]
    d12 = coef[:, 1:2]
    d22 = coef[:, 2:3]
    fx = d11 * gx + d12 * gy
    fy = d12 * gx + d22 * gy
    blocks = gx[:, :, None] * fx[:, None, :] + gy[:, :, None] * fy[:, None, :]
    blocks *= weight[:, None, None]
    return blocks.reshape(-1, 9)


@njit
def local_stiffness_numba(grads, weight, coef):
    ntri = grads.shape[0]
    out = np.empty((ntri, 9))
    for t in range(ntri):
        d11 = coef[t, 0]
        d12 = coef[t, 1]
        d22 = coef[t, 2]
        w = weight[t]
        for i in range(3):
            gix = grads[t, i, 0]
            giy = grads[t, i, 1]
            for j in range(3):
                gjx = grads[t, j, 0]
                gjy = grads[t, j, 1]
                out[t, 3 * i + j] = w * (gix * (d11 * gjx + d12 * gjy)
                                         + giy * (d12 * gjx + d22 * gjy))
    return out


def scatter_numpy(index, values, size):
    """Sum ``values`` into ``size`` slots; entries with ``index < 0`` drop."""
    keep = index >= 0
    return np.bincount(index[keep], weights=values[keep], minlength=size)


@njit
def scatter_numba(index, values, size):
    out = np.zeros(size)
    for k in range(index.shape[0]):
        i = index[k]
        if i >= 0:
            out[i] += values[k]
    return out


if USE_NUMBA:
    integrate = integrate_numba
    local_stiffness = local_stiffness_numba
    scatter = scatter_numba
else:
    integrate = integrate_numpy
    local_stiffness = local_stiffness_numpy
    scatter = scatter_numpy
