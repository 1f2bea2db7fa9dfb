import math
import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st

from yamabe_lab import grid as gg
from yamabe_lab import product as pl
from yamabe_lab import solver as sv
from yamabe_lab import variation as vl
from yamabe_lab.experiments import make_metric
from yamabe_lab.grid import GeometryError, MetricField, PeriodicGrid, SymTensorField

from conftest import smooth_metric


@given(seed=st.integers(0, 2**32 - 1))
def test_trace_free_projection_idempotent(seed):
    rng = np.random.default_rng(seed)
    grid = PeriodicGrid.cube(3, 8)
    g = smooth_metric(grid, rng)
    h = SymTensorField(grid, grid.band_limited_tensor(rng, 1.0))
    once = vl.project_trace_free(g, h)
    twice = vl.project_trace_free(g, once)
    assert np.abs(g.trace(once.values)).max() < 1e-13
    np.testing.assert_array_equal(twice.values, once.values)


def test_projection_of_gamma_vanishes(rng):
    grid = PeriodicGrid.cube(3, 8)
    g = smooth_metric(grid, rng)
    assert np.abs(vl.project_trace_free(g, g).values).max() < 1e-14
    curve = vl.VariationCurve(g, vl.project_trace_free(g, SymTensorField(grid, grid.band_limited_tensor(rng, 1.0))))
    assert curve.metric_at(0.0) is g


@given(seed=st.integers(0, 2**32 - 1), t=st.floats(1e-6, 0.2))
def test_curve_preserves_volume_form(seed, t):
    rng = np.random.default_rng(seed)
    grid = PeriodicGrid.cube(3, 8)
    g = smooth_metric(grid, rng)
    h = vl.project_trace_free(g, SymTensorField(grid, grid.band_limited_tensor(rng, 1.0)))
    curve = vl.VariationCurve(g, h)
    if t >= curve.max_safe_t:
        with pytest.raises(vl.CurveError):
            curve.metric_at(t)
        return
    np.testing.assert_allclose(curve.metric_at(t).sqrt_det, g.sqrt_det, rtol=1e-13)


def test_curve_is_tangent_to_h(rng):
    grid = PeriodicGrid.cube(3, 8)
    g = smooth_metric(grid, rng)
    h = vl.project_trace_free(g, SymTensorField(grid, grid.band_limited_tensor(rng, 0.5)))
    curve = vl.VariationCurve(g, h)
    c1, c2 = curve.taylor_constant(1e-3), curve.taylor_constant(5e-4)
    assert c2 == pytest.approx(c1, rel=1e-2)


def test_curve_error_reports_limit():
    grid = PeriodicGrid.cube(2, 8)
    g = MetricField.flat(grid)
    h = np.zeros(grid.points + (2, 2))
    h[..., 0, 0], h[..., 1, 1] = 1.0, -1.0
    curve = vl.VariationCurve(g, SymTensorField(grid, h))
    assert curve.max_safe_t == pytest.approx(1.0)
    with pytest.raises(vl.CurveError) as info:
        curve.metric_at(1.5)
    assert info.value.t_max == pytest.approx(1.0)


def test_make_curve_needs_unit_volume(grid3):
    with pytest.raises(GeometryError):
        vl.make_curve(MetricField.flat(grid3), SymTensorField(grid3, np.zeros(grid3.points + (3, 3))))


def test_richardson_exact_on_quadratics():
    ts = [4e-3, 2e-3, 1e-3]
    value, _ = vl.richardson_extrapolate(ts, [1.5 - 2 * t + 7 * t * t for t in ts])
    assert value == pytest.approx(1.5, abs=1e-12)


def test_measured_order():
    ts = np.array([1e-2, 1e-3, 1e-4])
    assert vl.measured_order(ts, 3 * ts ** 2) == pytest.approx(2.0)


def test_fd_derivative_rejects_bad_t(rng):
    grid = PeriodicGrid.cube(3, 8)
    curve = vl.VariationCurve(MetricField.flat(grid), SymTensorField(grid, np.zeros(grid.points + (3, 3))))
    with pytest.raises(ValueError):
        vl.fd_derivative(curve, (1e-4, 2e-4, 4e-4))
    with pytest.raises(ValueError):
        vl.fd_derivative(curve, (1e-4, 2e-4))


def test_flat_class_derivative_is_zero(rng):
    grid = PeriodicGrid.cube(3, 8)
    g = gg.normalize_volume(MetricField.flat(grid))
    # s(t) = O(t^2) here, so the extrapolation error scales like amplitude^4 t^3
    h = vl.project_trace_free(g, SymTensorField(grid, grid.band_limited_tensor(rng, 0.1, max_mode=1)))
    rep = vl.derivative_report(vl.make_curve(g, h), "flat")
    assert abs(rep.fd_value) <= 1e-6
    assert rep.formula_value_z == 0.0


def test_formula_warns_off_csc(rng):
    grid = PeriodicGrid.cube(3, 8)
    g = smooth_metric(grid, rng, amp=0.3)
    h = vl.project_trace_free(g, SymTensorField(grid, grid.band_limited_tensor(rng, 1.0)))
    with pytest.warns(UserWarning, match="not CSC"):
        vl.formula_derivative(g, h)


@pytest.fixture(scope="module")
def csc_gamma():
    g = make_metric({"points": [32, 8, 8], "metric": "negative_torus", "amplitude": 0.2}, np.random.default_rng(0))
    cfg = sv.SolverConfig(descent_steps=0)
    sol = sv.recenter(sv.solve_csc(g, cfg), cfg)
    return gg.normalize_volume(sol.metric)


def test_derivative_matches_formula(csc_gamma):
    rng = np.random.default_rng(5)
    grid = csc_gamma.grid
    h = vl.project_trace_free(csc_gamma, SymTensorField(grid, grid.band_limited_tensor(rng, 1.0, max_mode=1)))
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        rep = vl.derivative_report(vl.make_curve(csc_gamma, h), "h0")
    assert rep.relative_error_z < 1e-2
    assert rep.formula_values_Zphi == [pytest.approx(rep.formula_value_z, abs=1e-15)]
    assert len(rep.rows()) == 3


def test_formula_linear_in_h(csc_gamma):
    rng = np.random.default_rng(6)
    grid = csc_gamma.grid
    a, b = (vl.project_trace_free(csc_gamma, SymTensorField(grid, grid.band_limited_tensor(rng, 1.0)))
            for _ in range(2))
    comb = SymTensorField(grid, 0.7 * a.values - 0.4 * b.values)
    f = lambda h: vl.formula_derivative(csc_gamma, h)
    assert f(comb) == pytest.approx(0.7 * f(a) - 0.4 * f(b), rel=1e-12)


# --------------------------------------------------------------------------
# warped products

def test_unit_product_curvature():
    geom = pl.ProductGeometry(4, 5.0, m=32)
    gamma = vl.WarpedProduct.unit_product(geom)
    assert gamma.volume() == pytest.approx(1.0, rel=1e-14)
    # Ric = diag(0, n-2) in the unit product metric, rescaled by a constant
    np.testing.assert_allclose(gamma.ricci[:, 0, 0], 0.0, atol=0)
    np.testing.assert_allclose(gamma.scalar, 6.0 / gamma.A, rtol=1e-14)
    assert np.abs(gamma.trace(gamma.z)).max() < 1e-13


@pytest.fixture(scope="module")
def yamabe_product():
    sols = pl.enumerate_yamabe(pl.ProductGeometry(3, 1.2 * 2 * math.pi, m=64))
    sol = next(s for s in sols if s.is_yamabe and not s.is_constant)
    return sol, vl.WarpedProduct.from_solution(sol)


def test_yamabe_product_has_constant_scalar(yamabe_product):
    sol, gamma = yamabe_product
    assert gamma.volume() == pytest.approx(1.0, rel=1e-12)
    assert np.ptp(gamma.scalar) < 1e-8 * abs(sol.s_const)


def test_uniqueness_residual_zero_at_one(yamabe_product):
    _, gamma = yamabe_product
    assert np.abs(gamma.uniqueness_residual(np.ones(gamma.m))).max() == 0.0


@given(shift=st.integers(1, 63))
def test_translate_factors_leave_Z_phi_equal_to_z(yamabe_product, shift):
    # For the Yamabe metric on S^1 x S^{n-1} the translates give Z_phi = z
    # pointwise: the Bianchi identity pins z to a multiple of u^{-(n-2)}.
    sol, gamma = yamabe_product
    phi = np.roll(sol.phi, shift) / sol.phi
    res = gamma.uniqueness_residual(phi)
    assert np.abs(res).max() <= 1e-8 * np.abs(gamma.z).max()


def test_orbit_factors(yamabe_product):
    sol, _ = yamabe_product
    f = vl.orbit_factors(sol, 8)
    assert len(f) == 8 and np.all(f[0] == 1.0)
    with pytest.raises(ValueError):
        vl.orbit_factors(sol, 7)


def test_product_curve_length(yamabe_product):
    _, gamma = yamabe_product
    curve = vl.ProductCurve(gamma, np.full(gamma.m, 0.1))
    assert curve.length_at(0.0) == pytest.approx(gamma.geom.L, rel=1e-14)
    assert curve.length_at(1e-2) < gamma.geom.L
    h = curve.h
    assert np.abs(gamma.trace(h)).max() < 1e-15
    with pytest.raises(vl.CurveError):
        curve.length_at(2 * curve.max_safe_t)
