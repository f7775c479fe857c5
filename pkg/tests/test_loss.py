import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fctl.loss import (
    DomainError,
    EansdlParams,
    attenuation,
    eansdl,
    eansdl_backward,
    eansdl_pyramid,
    eansdl_pyramid_backward,
    extended_consistency,
    finite_diff_grad,
    level_radius,
    local_discrepancy,
    weighted_local,
)
from fctl.gradfield import sobel_filter
from fctl.tensor import FeatureMap, FeaturePyramid, ShapeError

from oracles import eansdl_reference, magnitude_slice, omega_slice
from fctl.gradcheck import check_pair, kink_margin, max_relative_error, run_gradcheck, smooth_pair
from gradcheck_util import kink_margin as kink_margin_loops


# -- scalar pieces -----------------------------------------------------------


def test_attenuation_values():
    assert attenuation(0.0, 3.0, 2.0) == 1.0
    assert attenuation(0.5, 3.0, 2.0) == pytest.approx(0.4723665527410147, abs=1e-12)
    assert attenuation(1.0, 3.0, 2.0) == pytest.approx(0.049787068367863944, abs=1e-12)


@pytest.mark.parametrize("delta", [-0.1, 1.5])
def test_attenuation_domain(delta):
    with pytest.raises(DomainError):
        attenuation(delta, 3.0, 2.0)


@settings(max_examples=50, deadline=None)
@given(
    alpha=st.floats(0.01, 10),
    beta=st.floats(0.1, 5),
    d1=st.floats(0.01, 1.0),
    d2=st.floats(0.01, 1.0),
)
def test_attenuation_decreasing(alpha, beta, d1, d2):
    lo, hi = sorted((d1, d2))
    if hi - lo < 1e-3:
        return
    assert attenuation(hi, alpha, beta) < attenuation(lo, alpha, beta) <= 1.0


def test_level_radius_schedule():
    assert [level_radius(8, k) for k in range(5)] == [8, 4, 2, 1, 1]
    assert level_radius(8, 0) == 8 and level_radius(8, 2) == 2 and level_radius(8, 5) == 1
    for r0 in range(1, 20):
        radii = [level_radius(r0, k) for k in range(8)]
        assert all(a >= b for a, b in zip(radii, radii[1:])) and min(radii) >= 1


def test_weighted_local_values():
    assert weighted_local(0.0) == 0.0
    assert weighted_local(1.0) == pytest.approx(math.exp(-1), abs=1e-12)
    assert weighted_local(2.0) == pytest.approx(0.2706705664732254, abs=1e-12)
    assert weighted_local(2.0) < weighted_local(1.0)
    xs = np.linspace(0, 20, 2001)
    assert weighted_local(FeatureMap(xs.reshape(1, 1, 1, -1))).data.max() <= math.exp(-1)
    with pytest.raises(DomainError):
        weighted_local(-0.5)


def test_local_discrepancy():
    a = np.full((1, 1, 2, 2), 2.0)
    b = np.full((1, 1, 2, 2), 0.5)
    assert np.all(local_discrepancy(a, b).data == 1.5)
    assert np.all(local_discrepancy(a, a).data == 0.0)
    assert local_discrepancy(a, b) == local_discrepancy(b, a)
    with pytest.raises(ShapeError):
        local_discrepancy(a, np.zeros((1, 1, 2, 3)))


# -- extended consistency ----------------------------------------------------


def test_consistency_radius_zero(rng, backend):
    a, b = rng.normal(size=(2, 1, 2, 4, 4))
    assert np.all(extended_consistency(a, b, 0, backend).data == 0.0)


def test_consistency_spike(backend):
    a = np.zeros((1, 1, 3, 3))
    a[0, 0, 1, 1] = 1.0
    out = extended_consistency(a, np.zeros_like(a), 1, backend)
    assert out.data[0, 0, 1, 1] == pytest.approx(8 / 9, abs=1e-15)


def test_consistency_identity(rng, backend):
    a = rng.normal(size=(1, 2, 5, 5))
    for r in range(4):
        assert np.all(extended_consistency(a, a, r, backend).data == 0.0)


@pytest.mark.parametrize("r", [1, 2, 3])
def test_consistency_matches_oracle(rng, backend, r):
    a, b = rng.normal(size=(2, 1, 1, 6, 5))
    out = extended_consistency(a, b, r, backend).data[0, 0]
    ref = omega_slice(a[0, 0].tolist(), b[0, 0].tolist(), r)
    np.testing.assert_allclose(out, ref, rtol=0, atol=1e-13)


# -- full loss ---------------------------------------------------------------


def test_identity_is_exact_zero(rng, backend):
    a = rng.normal(size=(2, 3, 6, 6))
    for level in range(3):
        out = eansdl(a, a, EansdlParams(r0=4, delta=0.3), level, backend)
        assert out.total == 0.0 and out.local_term == 0.0 and out.consistency_term == 0.0


def test_symmetry_bitwise(rng, backend):
    a, b = rng.normal(size=(2, 2, 3, 7, 6))
    p = EansdlParams(r0=3, delta=0.2, lambda_consistency=0.7)
    assert eansdl(a, b, p, 0, backend) == eansdl(b, a, p, 0, backend)


def test_breakdown_invariant(rng, backend):
    a, b = rng.normal(size=(2, 1, 2, 8, 8))
    p = EansdlParams(r0=2, delta=0.4, lambda_consistency=0.5)
    out = eansdl(a, b, p, 0, backend)
    assert out.radius_used == 2
    assert out.total == out.attenuation * (out.local_term + 0.5 * out.consistency_term)
    assert 0 <= out.local_term <= math.exp(-1)
    assert out.consistency_term >= 0


def test_matches_direct_summation(rng, backend):
    a, b = rng.normal(size=(2, 1, 2, 8, 8))
    p = EansdlParams(lambda_consistency=1.0, r0=2, delta=0.0)
    out = eansdl(a, b, p, 0, backend)
    local, cons, total = eansdl_reference(a, b, 3.0, 2.0, 1.0, 2, 0.0)
    assert abs(out.local_term - local) < 1e-10
    assert abs(out.consistency_term - cons) < 1e-10
    assert abs(out.total - total) < 1e-10


def test_shape_mismatch():
    with pytest.raises(ShapeError):
        eansdl(np.zeros((1, 1, 4, 4)), np.zeros((1, 1, 4, 5)), EansdlParams())


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**31), scale=st.floats(0.01, 100.0))
def test_nonnegative_and_bounded(seed, scale):
    g = np.random.default_rng(seed)
    a, b = scale * g.normal(size=(2, 1, 2, 5, 6))
    out = eansdl(a, b, EansdlParams(r0=2, delta=float(g.uniform())))
    assert out.total >= 0 and out.consistency_term >= 0
    assert 0 <= out.local_term <= math.exp(-1)


def test_params_validation():
    with pytest.raises(DomainError):
        EansdlParams(alpha=0.0)
    with pytest.raises(DomainError):
        EansdlParams(r0=0)
    with pytest.raises(DomainError):
        EansdlParams(delta=1.2)
    with pytest.raises(DomainError):
        EansdlParams(lambda_fs=-1.0)


# -- pyramid -----------------------------------------------------------------


def _pyramid(g, dims=((1, 2, 8, 8), (1, 2, 4, 4))):
    return FeaturePyramid([g.normal(size=d) for d in dims])


def test_pyramid_identity(rng):
    p = _pyramid(rng)
    assert eansdl_pyramid(p, p, EansdlParams()) == 0.0


def test_pyramid_single_level(rng):
    p, q = _pyramid(rng, ((1, 1, 6, 6),)), _pyramid(rng, ((1, 1, 6, 6),))
    params = EansdlParams(r0=2)
    assert eansdl_pyramid(p, q, params) == eansdl(p[0], q[0], params, 0).total


def test_pyramid_mean_of_levels(rng):
    p, q = _pyramid(rng), _pyramid(rng)
    params = EansdlParams(r0=4, delta=0.25)
    l0 = eansdl(p[0], q[0], params, 0)
    l1 = eansdl(p[1], q[1], params, 1)
    assert (l0.radius_used, l1.radius_used) == (4, 2)
    assert eansdl_pyramid(p, q, params) == pytest.approx((l0.total + l1.total) / 2, abs=1e-15)


def test_pyramid_mismatch(rng):
    p = _pyramid(rng)
    with pytest.raises(ShapeError):
        eansdl_pyramid(p, _pyramid(rng, ((1, 2, 8, 8),)), EansdlParams())
    with pytest.raises(ShapeError):
        eansdl_pyramid(p, _pyramid(rng, ((1, 2, 8, 8), (1, 2, 4, 2))), EansdlParams())


# -- gradients ---------------------------------------------------------------


def test_backward_zero_at_identity(rng, backend):
    a = rng.normal(size=(1, 2, 6, 6))
    g = eansdl_backward(a, a, EansdlParams(r0=2), 0, backend)
    assert np.all(g.data == 0.0)


def test_finite_diff_at_identity_constant_map():
    a = np.full((1, 1, 4, 4), 0.3)
    for eps in (1e-3, 1e-4):
        assert np.abs(finite_diff_grad(a, a, EansdlParams(r0=1), 0, eps).data).max() <= 1e-6


def test_finite_diff_at_identity_vanishes_linearly(rng):
    # The minimum is a kink, not a stationary point: the one-sided slopes cancel
    # but the curvature of the magnitude leaves an O(eps) residue.
    a = rng.normal(size=(1, 1, 4, 4))
    p = EansdlParams(r0=1)
    m1 = np.abs(finite_diff_grad(a, a, p, 0, 1e-3).data).max()
    m2 = np.abs(finite_diff_grad(a, a, p, 0, 5e-4).data).max()
    assert m1 < 1e-2
    assert m2 == pytest.approx(m1 / 2, rel=0.05)


def test_kink_margin_matches_loops(rng):
    for r in (1, 2):
        a, b = rng.normal(size=(2, 1, 2, 5, 4))
        assert kink_margin(a, b, r) == pytest.approx(kink_margin_loops(a, b, r), abs=1e-12)


def test_backward_matches_finite_differences(backend):
    # the (1,1,6,6) example at radius 2
    params = EansdlParams(r0=2, delta=0.3, lambda_consistency=1.0)
    a, b = smooth_pair(11, (1, 1, 6, 6), r=2, margin=6e-3)
    res = check_pair(a, b, params, 0, 1e-3, backend)
    assert res.relative_error < 1e-4


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_gradcheck_elementwise_at_small_eps(seed):
    # with truncation error shrunk, every single component agrees as well
    res = run_gradcheck(seed, eps=1e-4)
    assert res.max_elementwise < 1e-4 and res.relative_error < 1e-6


def test_finite_difference_converges():
    params = EansdlParams(r0=1, lambda_consistency=0.0)
    a, b = smooth_pair(3, (1, 1, 5, 5), r=1, margin=6e-2)
    analytic = eansdl_backward(a, b, params).data
    e1 = np.abs(finite_diff_grad(a, b, params, 0, 1e-2).data - analytic).max()
    e2 = np.abs(finite_diff_grad(a, b, params, 0, 5e-3).data - analytic).max()
    assert e2 <= e1 * 0.3 + 1e-12


def test_backward_linear_in_attenuation(rng):
    a, b = rng.normal(size=(2, 1, 1, 5, 5))
    p1 = EansdlParams(lambda_consistency=0.0, delta=0.8, alpha=1.0, beta=1.0)
    g1 = eansdl_backward(a, b, p1).data
    # halving alpha*delta^beta in the exponent by picking delta' with exp(-delta') = 2 exp(-0.8)
    p2 = EansdlParams(lambda_consistency=0.0, delta=0.8 - math.log(2.0), alpha=1.0, beta=1.0)
    g2 = eansdl_backward(a, b, p2).data
    np.testing.assert_allclose(g2, 2.0 * g1, rtol=1e-12, atol=1e-15)


def test_pyramid_backward_is_mean_of_levels(rng):
    p, q = _pyramid(rng), _pyramid(rng)
    params = EansdlParams(r0=4)
    grads = eansdl_pyramid_backward(p, q, params)
    for k in range(2):
        np.testing.assert_allclose(grads[k].data, eansdl_backward(p[k], q[k], params, k).data / 2, rtol=1e-14)
