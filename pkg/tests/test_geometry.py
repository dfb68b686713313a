import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from mixlag.errors import NumericError, UsageError
from mixlag.flowfield import VelocityField, flow_maps
from mixlag.geometry import (AmbientDiffusion, SpdTensorField, TensorRole, averaged_dual_metric,
                             dual_metric_history, inv2, is_spd, pullback_dual_metric,
                             pullback_metric, spd_eigvals, to_full, transport_tensor,
                             trapezoid_weights)

PI = np.pi
SHEAR = VelocityField.shear(0.5)
GYRE = VelocityField.double_gyre()
SHEAR_AVG_Y0 = np.array([[1 + PI ** 2 / 3, -PI / 2], [-PI / 2, 1.0]])

entries = st.floats(-3.0, 3.0, allow_nan=False)


def random_spd(rng, n):
    A = rng.normal(size=(n, 2, 2))
    return A @ np.swapaxes(A, 1, 2) + 0.1 * np.eye(2)


def test_pullback_identity():
    assert np.array_equal(pullback_metric(np.eye(2), np.eye(2)), np.eye(2))


def test_pullback_shear_example():
    J = np.array([[1.0, PI], [0.0, 1.0]])
    assert np.allclose(pullback_metric(J, np.eye(2)), [[1, PI], [PI, 1 + PI ** 2]], atol=1e-14)


def test_pullback_axis_scaling():
    assert np.allclose(pullback_metric(np.diag([2.0, 1.0]), np.eye(2)), np.diag([4.0, 1.0]))


def test_pullback_non_finite():
    with pytest.raises(NumericError):
        pullback_metric(np.array([[np.nan, 0], [0, 1]]), np.eye(2))


@given(arrays(float, (2, 2), elements=entries))
@settings(max_examples=60, deadline=None)
def test_pullback_eigenvalue_product(J):
    det = np.linalg.det(J)
    if det < 1e-2:
        J = J + np.diag([3.0, 3.0])
        det = np.linalg.det(J)
    if det <= 1e-2:
        return
    G = np.array([[2.0, 0.3], [0.3, 0.7]])
    g = pullback_metric(J, G)
    ev = spd_eigvals(g)
    assert np.all(ev > 0)
    assert np.isclose(ev[0] * ev[1], det ** 2 * np.linalg.det(G), rtol=1e-10)
    assert np.abs(g - g.T).max() == 0.0


def test_dual_metric_is_inverse(rng):
    J = rng.normal(size=(50, 2, 2)) + 2 * np.eye(2)
    J[np.linalg.det(J) < 0] *= [[1, 1], [-1, -1]]
    D = np.diag([1.5, 0.5])
    prod = pullback_dual_metric(J, D) @ pullback_metric(J, np.linalg.inv(D))
    assert np.allclose(prod, np.eye(2), atol=1e-10)


def test_spd_eigvals_agree_with_numpy(rng):
    A = random_spd(rng, 100)
    assert np.allclose(spd_eigvals(A), np.linalg.eigvalsh(A), rtol=1e-12)


def test_spd_eigvals_strong_anisotropy():
    A = np.array([[1e12, 1e6 - 1e-6], [1e6 - 1e-6, 1.0]])   # det ~ 2e-6
    lo, hi = spd_eigvals(A)
    assert lo > 0 and np.isclose(lo * hi, 1e12 - (1e6 - 1e-6) ** 2, rtol=1e-3)


def test_inv2_singular():
    with pytest.raises(NumericError):
        inv2(np.zeros((2, 2)))


def test_is_spd():
    assert is_spd(np.eye(2))
    assert not is_spd(np.array([[1.0, 2.0], [2.0, 1.0]]))
    assert not is_spd(np.array([[1.0, 0.1], [0.0, 1.0]]))


def test_tensor_field_checks():
    with pytest.raises(UsageError):
        SpdTensorField(np.zeros((3, 2)), TensorRole.METRIC)
    with pytest.raises(NumericError):
        SpdTensorField(-np.ones((3, 2, 2)), TensorRole.METRIC).check()


def test_trapezoid_weights():
    w = trapezoid_weights(5)
    assert np.isclose(w.sum(), 1.0)
    assert np.allclose(w, [0.125, 0.25, 0.25, 0.25, 0.125])
    with pytest.raises(UsageError):
        trapezoid_weights(1)


def test_zero_field_average_is_ambient():
    pts = np.array([[0.1, 0.2], [0.7, 0.4]])
    geo = averaged_dual_metric(VelocityField.zero(), pts, 9)
    assert np.array_equal(geo.dual_avg.values, np.broadcast_to(np.eye(2), (2, 2, 2)))
    assert np.array_equal(geo.metric_avg.values, np.broadcast_to(np.eye(2), (2, 2, 2)))
    amb = AmbientDiffusion(2.0, 0.5)
    geo = averaged_dual_metric(VelocityField.zero(), pts, 9, ambient=amb)
    assert np.array_equal(geo.dual_avg.values[0], amb.dual)
    assert np.array_equal(geo.metric_avg.values[0], amb.metric)


def shear_average_exact(y, n_t=None):
    """Closed-form average; with ``n_t`` the composite-trapezoid value instead."""
    fp = PI * np.cos(2 * PI * y)
    t2 = 1.0 / 3 if n_t is None else 1.0 / 3 + 1.0 / (6 * (n_t - 1) ** 2)
    return np.stack([np.stack([1 + t2 * fp ** 2, -fp / 2], -1),
                     np.stack([-fp / 2, np.ones_like(y)], -1)], axis=-2)


# The trapezoid rule integrates t^2 on 101 nodes with error 1/(6 * 100^2), so the
# (1,1) entry is off by pi^2 / 60000 = 1.64e-4 and the stated 1e-4 cannot hold
# for the trapezoid quadrature the rest of the package is built on.
@pytest.mark.xfail(strict=True, reason="trapezoid error at n_t=101 is 1.64e-4 > 1e-4")
def test_shear_average_closed_form():
    geo = averaged_dual_metric(SHEAR, [[0.3, 0.0]], 101)
    assert np.abs(geo.dual_avg.values[0] - SHEAR_AVG_Y0).max() <= 1e-4


def test_shear_average_trapezoid_oracle(rng):
    y = np.concatenate([[0.0], rng.uniform(0, 1, 10)])
    pts = np.stack([rng.uniform(0, 1, y.size), y], axis=1)
    geo = averaged_dual_metric(SHEAR, pts, 101)
    assert np.abs(geo.dual_avg.values - shear_average_exact(y, 101)).max() <= 1e-11
    assert np.abs(geo.dual_avg.values - shear_average_exact(y)).max() <= 2e-4
    fine = averaged_dual_metric(SHEAR, pts, 257)
    assert np.abs(fine.dual_avg.values - shear_average_exact(y)).max() <= 1e-4


def test_trapezoid_second_order():
    pts = np.array([[0.3, 0.4], [0.6, 0.7]])
    avg = {n: averaged_dual_metric(GYRE, pts, n).dual_avg.values for n in (33, 65, 129, 257)}
    diffs = np.array([np.abs(avg[n] - avg[2 * n - 1]).max() for n in (33, 65, 129)])
    assert np.log2(diffs[:-1] / diffs[1:]).min() >= 1.9


def test_metric_times_dual_is_identity(rng):
    pts = rng.uniform(0.05, 0.95, (40, 2))
    geo = averaged_dual_metric(GYRE, pts, 17)
    prod = geo.metric_avg.values @ geo.dual_avg.values
    assert np.abs(prod - np.eye(2)).max() <= 1e-10
    geo.dual_avg.check()
    geo.metric_avg.check()


def test_history_matches_flow_maps(rng):
    pts = rng.uniform(0.1, 0.9, (5, 2))
    hist = dual_metric_history(GYRE, pts, 5)
    _, J = flow_maps(GYRE, pts, 0.5, steps=200)
    assert np.allclose(to_full(hist.values[2]), pullback_dual_metric(J, np.eye(2)), rtol=1e-7)


def test_transport_tensor_examples():
    I = SpdTensorField.constant(np.eye(2), 1, TensorRole.METRIC)
    D = SpdTensorField.constant(np.eye(2), 1, TensorRole.DUAL_METRIC)
    assert np.array_equal(transport_tensor(I, D)[0], np.eye(2))
    geo = averaged_dual_metric(SHEAR, [[0.0, 0.0]], 101)
    C = transport_tensor(I, geo.dual_avg)
    assert np.abs(C[0] - shear_average_exact(np.array(0.0), 101)).max() <= 1e-11


def test_transport_tensor_errors():
    I = SpdTensorField.constant(np.eye(2), 2, TensorRole.METRIC)
    with pytest.raises(UsageError):
        transport_tensor(I, I)
    D = SpdTensorField.constant(np.eye(2), 3, TensorRole.DUAL_METRIC)
    with pytest.raises(UsageError):
        transport_tensor(I, D)
    D = SpdTensorField.constant(np.eye(2), 2, TensorRole.DUAL_METRIC, mesh_id="other")
    with pytest.raises(UsageError):
        transport_tensor(I, D)


def test_transport_tensor_is_time_average(rng):
    pts = rng.uniform(0.05, 0.95, (30, 2))
    hist = dual_metric_history(GYRE, pts, 17)
    geo = averaged_dual_metric(GYRE, pts, 17, history=hist)
    I = SpdTensorField.constant(np.eye(2), 30, TensorRole.METRIC)
    C_bar = transport_tensor(I, geo.dual_avg)
    C_t = [transport_tensor(I, SpdTensorField(hist.slice_full(k), TensorRole.DUAL_METRIC))
           for k in range(17)]
    avg = np.tensordot(hist.weights, np.array(C_t), axes=1)
    assert np.abs(avg - C_bar).max() <= 1e-10 * max(1.0, np.abs(C_bar).max())


def test_norm_identity(rng):
    pts = rng.uniform(0.05, 0.95, (30, 2))
    geo = averaged_dual_metric(GYRE, pts, 17, ambient=AmbientDiffusion(1.5, 0.5))
    g = np.broadcast_to(AmbientDiffusion(1.5, 0.5).metric, (30, 2, 2))
    g_f = SpdTensorField(g.copy(), TensorRole.METRIC)
    C = transport_tensor(g_f, geo.dual_avg)
    v = rng.normal(size=(30, 2))
    Cv = np.einsum("nij,nj->ni", C, v)
    lhs = np.einsum("ni,nij,nj->n", v, g, Cv)
    rhs = np.einsum("ni,nij,nj->n", Cv, geo.metric_avg.values, Cv)
    assert np.abs(lhs - rhs).max() <= 1e-10 * np.abs(rhs).max()


def test_averaged_requires_two_slices():
    with pytest.raises(UsageError):
        averaged_dual_metric(SHEAR, [[0.1, 0.1]], 1)
