import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from yamabe_lab import product as pl


def test_geometry_validation():
    with pytest.raises(ValueError):
        pl.ProductGeometry(2, 1.0)
    with pytest.raises(ValueError):
        pl.ProductGeometry(3, 1.0, m=9)
    with pytest.raises(ValueError):
        pl.ProductGeometry(3, 1.0, method="chebyshev")


def test_bifurcation_length():
    assert pl.ProductGeometry(4, 1.0).bifurcation_length(1) == pytest.approx(2 * math.pi / math.sqrt(2))


@pytest.mark.parametrize("method", ["spectral", "fd4"])
def test_second_derivative_of_cosine(method):
    geom = pl.ProductGeometry(3, 5.0, m=64, method=method)
    k = 2 * math.pi / geom.L
    f = np.cos(k * geom.theta)
    err = np.abs(pl.second_derivative_matrix(geom) @ f + k * k * f).max()
    assert err < (1e-10 if method == "spectral" else 1e-4)


@given(st.lists(st.floats(0.5, 2.0), min_size=9, max_size=9))
def test_extend_restrict_roundtrip(vals):
    y = np.array(vals)
    phi = pl.extend(y)
    assert phi.shape == (16,)
    np.testing.assert_array_equal(pl.restrict(phi), y)
    # even about theta = 0
    np.testing.assert_array_equal(phi, np.roll(phi[::-1], 1))


def test_short_circle_only_constant():
    geom = pl.ProductGeometry(3, 4.0, m=64)
    sols = pl.enumerate_yamabe(geom)
    assert len(sols) == 1 and sols[0].is_constant and sols[0].is_yamabe
    # unit volume constant factor: s = (n-1)(n-2) vol(S^1 x S^{n-1})^{2/n}
    vol = geom.L * geom.sphere_volume
    assert sols[0].s_const == pytest.approx(2.0 * vol ** (2 / 3), rel=1e-12)


@pytest.fixture(scope="module")
def long_circle():
    return pl.enumerate_yamabe(pl.ProductGeometry(3, 1.2 * 2 * math.pi, m=64))


def test_long_circle_has_lower_nonconstant(long_circle):
    const = [s for s in long_circle if s.is_constant]
    nonconst = [s for s in long_circle if not s.is_constant]
    assert const and nonconst
    assert long_circle[0] is nonconst[0] and nonconst[0].is_yamabe
    assert nonconst[0].energy < const[0].energy


def test_solutions_solve_the_ode(long_circle):
    for sol in long_circle:
        assert np.abs(pl.ode_residual(sol.geometry, sol.phi, sol.s_const)).max() < 1e-8
        assert pl.product_energy(sol.geometry, sol.phi) == pytest.approx(sol.s_const, rel=1e-10)


def test_phase_normalized(long_circle):
    sol = next(s for s in long_circle if not s.is_constant)
    assert int(np.argmax(sol.phi)) == 0
    np.testing.assert_allclose(sol.phi[1:], sol.phi[1:][::-1], rtol=0, atol=1e-12)


def test_normalize_gives_unit_volume():
    geom = pl.ProductGeometry(4, 3.0, m=32)
    phi, s = pl.normalize(geom, np.ones(32), geom.sphere_scalar)
    vol = geom.spacing * geom.sphere_volume * np.sum(phi ** 4)
    assert vol == pytest.approx(1.0, rel=1e-14)
    assert np.abs(pl.ode_residual(geom, phi, s)).max() < 1e-12


def test_continuation_finds_first_bifurcation():
    geom = pl.ProductGeometry(3, 8.0, m=64)
    root = pl.continue_branch(geom, (4.0, 8.0))
    first = min(p["L"] for p in root.bifurcation_points)
    assert first == pytest.approx(geom.bifurcation_length(1), abs=1e-6)
    assert root.children, "no branch switched onto at the bifurcation"
    child = root.children[0]
    assert any(not s.is_constant for _, s in child.parameter_samples)
    rows = pl.branch_rows(root)
    assert set(pl.CSV_COLUMNS) <= set(rows[0])


def test_below_first_bifurcation_single_solution():
    sols = pl.enumerate_yamabe(pl.ProductGeometry(3, 5.0, m=64))
    assert len(sols) == 1 and sols[0].is_constant and sols[0].is_yamabe
    assert sols[0].energy == pytest.approx(pl.constant_energy(sols[0].geometry), rel=1e-12)


@pytest.mark.parametrize("n", [3, 4, 5])
def test_bifurcations_match_linearization(n):
    geom = pl.ProductGeometry(n, 1.0, m=64)
    L1, L2 = geom.bifurcation_length(1), geom.bifurcation_length(2)
    root = pl.continue_branch(geom.with_L(1.1 * L2), (0.8 * L1, 1.1 * L2), switch=False)
    found = sorted(p["L"] for p in root.bifurcation_points if p["kind"] == "bifurcation")
    assert len(found) >= 2
    assert found[0] == pytest.approx(L1, abs=1e-3)
    assert found[1] == pytest.approx(L2, abs=1e-3)


def test_spectral_and_fd4_residuals_agree():
    sol = pl.enumerate_yamabe(pl.ProductGeometry(3, 1.2 * 2 * math.pi, m=64))[0]
    errs = []
    for m in (32, 64):
        phi = np.interp(np.arange(m) * sol.geometry.L / m, sol.geometry.theta, sol.phi, period=sol.geometry.L)
        spec = pl.ode_residual(pl.ProductGeometry(3, sol.geometry.L, m, "spectral"), phi, sol.s_const)
        fd = pl.ode_residual(pl.ProductGeometry(3, sol.geometry.L, m, "fd4"), phi, sol.s_const)
        errs.append(np.abs(spec - fd).max())
    assert math.log2(errs[0] / errs[1]) >= 3.5


def test_translation_invariance():
    sol = pl.enumerate_yamabe(pl.ProductGeometry(3, 1.2 * 2 * math.pi, m=64))[0]
    for shift in (5, 17, 32):
        moved = sol.shifted(shift)
        assert pl.product_energy(sol.geometry, moved) == pytest.approx(sol.energy, rel=1e-13)
        assert np.abs(pl.ode_residual(sol.geometry, moved, sol.s_const)).max() < 1e-8
