import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from yamabe_lab import grid as gg
from yamabe_lab.grid import GeometryError, MetricField, PeriodicGrid, ScalarField, SymTensorField

from conftest import smooth_metric


def test_grid_rejects_odd_and_small():
    with pytest.raises(GeometryError):
        PeriodicGrid((9, 16), (1.0, 1.0))
    with pytest.raises(GeometryError):
        PeriodicGrid((4, 16), (1.0, 1.0))
    with pytest.raises(GeometryError):
        PeriodicGrid((16,), (1.0,))


def test_metric_must_be_positive_definite():
    grid = PeriodicGrid.cube(2, 8)
    vals = np.broadcast_to(np.eye(2), grid.points + (2, 2)).copy()
    vals[3, 4] = np.diag([1.0, -0.5])
    with pytest.raises(GeometryError, match=r"\(3, 4\)"):
        MetricField(grid, vals)


def test_diff_fourth_order():
    errs = []
    for N in (16, 32, 64):
        grid = PeriodicGrid.cube(2, N)
        x, _ = grid.coords()
        errs.append(np.abs(gg.diff(grid, np.sin(x), 0) - np.cos(x)).max())
    orders = [gg.observed_order(a, b) for a, b in zip(errs, errs[1:])]
    assert min(orders) > 3.8


def test_stencil_symbol_matches_diff(rng):
    grid = PeriodicGrid((16, 12), (2.0, 3.0))
    f = rng.standard_normal(grid.points)
    sym = gg.stencil_symbol(grid, 1)
    spectral = np.real(np.fft.ifft(1j * sym * np.fft.fft(f, axis=1), axis=1))
    np.testing.assert_allclose(gg.diff(grid, f, 1), spectral, atol=1e-12)


def test_flat_torus_curvature_vanishes(grid3):
    g = MetricField.flat(grid3)
    assert np.abs(g.ricci).max() == 0.0
    assert gg.volume(g) == pytest.approx((2 * np.pi) ** 3)


def test_conformally_flat_scalar_converges():
    # s = -e^{-2w} (2(n-1) lap w + (n-2)(n-1) |dw|^2) for g = e^{2w} delta
    errs = []
    for N in (16, 32):
        grid = PeriodicGrid.cube(3, N)
        x, y, z = grid.coords()
        w = 0.2 * np.sin(x) * np.cos(y)
        lap = -0.4 * np.sin(x) * np.cos(y)
        grad2 = 0.04 * (np.cos(x) ** 2 * np.cos(y) ** 2 + np.sin(x) ** 2 * np.sin(y) ** 2)
        exact = -np.exp(-2 * w) * (4 * lap + 2 * grad2)
        errs.append(np.abs(MetricField.conformally_flat(grid, w).scalar - exact).max())
    assert gg.observed_order(*errs) > 3.5


def test_normalize_volume_is_unit(grid3, rng):
    g = gg.normalize_volume(smooth_metric(grid3, rng))
    assert abs(gg.volume(g) - 1.0) < 1e-15


def _analytic_pair(N):
    grid = PeriodicGrid.cube(3, N)
    x, y, z = grid.coords()
    vals = np.broadcast_to(np.eye(3), grid.points + (3, 3)).copy()
    vals[..., 0, 0] += 0.2 * np.sin(y)
    vals[..., 1, 2] = vals[..., 2, 1] = 0.1 * np.cos(x + z)
    h = np.zeros(grid.points + (3, 3))
    h[..., 0, 1] = h[..., 1, 0] = np.cos(z)
    h[..., 2, 2] = np.sin(x)
    return MetricField(grid, vals), SymTensorField(grid, h)


def test_lin_scalar_consistent_with_scalar_derivative():
    # lin_scalar is the transpose of the discrete L*, so it agrees with the
    # derivative of the discrete scalar curvature up to truncation error
    errs = []
    for N in (12, 24):
        g, h = _analytic_pair(N)
        eps = 1e-5
        fd = (MetricField(g.grid, g.values + eps * h.values).scalar
              - MetricField(g.grid, g.values - eps * h.values).scalar) / (2 * eps)
        errs.append(np.abs(fd - gg.lin_scalar(g, h).values).max())
    assert gg.observed_order(*errs) > 3.0


@given(seed=st.integers(0, 2**32 - 1))
def test_adjoint_pairing(seed):
    rng = np.random.default_rng(seed)
    grid = PeriodicGrid((8, 10, 8), (2 * np.pi, 5.0, 2 * np.pi))
    g = smooth_metric(grid, rng)
    h = SymTensorField(grid, grid.band_limited_tensor(rng, 1.0))
    f = ScalarField(grid, grid.band_limited(rng, 1.0))
    lhs = gg.integrate(g, ScalarField(grid, f.values * gg.lin_scalar(g, h).values))
    rhs = gg.integrate(g, gg.tensor_inner(g, gg.lin_scalar_adjoint(g, f), h))
    scale = abs(lhs) + abs(rhs) + 1e-300
    assert abs(lhs - rhs) <= 1e-12 * scale


def test_adjoint_of_one_is_minus_ricci(grid3, rng):
    g = smooth_metric(grid3, rng)
    out = gg.lin_scalar_adjoint(g, ScalarField(grid3, np.ones(grid3.points)))
    np.testing.assert_allclose(out.values, -g.ricci, atol=1e-12)


def test_phi_map_zero_on_constant_scalar(grid3):
    g = MetricField(grid3, 2.5 * MetricField.flat(grid3).values)
    assert np.abs(gg.phi_map(g).values).max() == 0.0


def test_divergence_of_metric_is_zero(grid3, rng):
    g = smooth_metric(grid3, rng)
    assert np.abs(gg.divergence(g, g).values).max() < 1e-12


def test_cotton_requires_dimension_three():
    with pytest.raises(GeometryError):
        gg.cotton3(MetricField.flat(PeriodicGrid.cube(4, 8)))


def test_richardson_removes_leading_term():
    exact, c = 2.0, 0.3
    coarse, fine = exact + c * 0.1 ** 4, exact + c * 0.05 ** 4
    assert gg.richardson(coarse, fine, 4.0) == pytest.approx(exact, abs=1e-15)


def test_band_limited_amplitude(rng):
    grid = PeriodicGrid((16, 8), (1.0, 2.0))
    f = grid.band_limited(rng, 0.7, max_mode=2)
    assert math.isclose(np.abs(f).max(), 0.7)
    assert abs(f.mean()) < 1e-12


def test_contracted_bianchi_converges():
    # delta Ric + ds/2 = 0 with (delta T)_j = -nabla^i T_ij
    errs = []
    for N in (16, 32):
        g, _ = _analytic_pair(N)
        lhs = gg.divergence(g, SymTensorField(g.grid, g.ricci)).values
        ds = gg.gradient_components(g.grid, g.scalar)
        errs.append(np.abs(lhs + 0.5 * ds).max())
    assert gg.observed_order(*errs) >= 3.5


@given(k=st.integers(1, 7), axis=st.integers(0, 1))
def test_quadrature_exact_on_modes(k, axis):
    grid = PeriodicGrid((16, 16), (2.0, 3.0))
    x = grid.coords()[axis]
    f = np.cos(2 * np.pi * k * x / grid.periods[axis]) + 1.0
    g = MetricField.flat(grid)
    assert gg.integrate(g, ScalarField(grid, f)) == pytest.approx(6.0, abs=1e-13)


def test_curvature_outputs_symmetric_and_trace_free(grid3, rng):
    g = smooth_metric(grid3, rng)
    ric, _, z = gg.curvature(g)
    np.testing.assert_array_equal(ric.values, np.swapaxes(ric.values, -1, -2))
    hess = gg.differential(g, ScalarField(grid3, grid3.band_limited(rng, 1.0)))[1].values
    np.testing.assert_array_equal(hess, np.swapaxes(hess, -1, -2))
    assert np.abs(g.trace(z.values)).max() <= 1e-12 * np.abs(z.values).max()


def test_lie_derivative_in_kernel_at_flat():
    # L(nabla_i X_j + nabla_j X_i) = 0 at the flat metric; the stencils commute, so to rounding
    errs = []
    for N in (16, 32):
        grid = PeriodicGrid.cube(3, N)
        x, y, z = grid.coords()
        X = np.stack([np.sin(y), np.cos(x + z), 0.5 * np.sin(x)], axis=-1)
        dX = gg.gradient_components(grid, X)
        h = SymTensorField(grid, dX + np.swapaxes(dX, -1, -2))
        errs.append(np.abs(gg.lin_scalar(MetricField.flat(grid), h).values).max())
    assert max(errs) < 1e-12
