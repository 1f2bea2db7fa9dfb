import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from yamabe_lab import grid as gg
from yamabe_lab import solver as sv
from yamabe_lab.conformal import YamabeConstants, yamabe_residual
from yamabe_lab.experiments import make_metric
from yamabe_lab.grid import MetricField, PeriodicGrid


@pytest.fixture(scope="module")
def negative_torus():
    spec = {"points": [16, 8, 8], "metric": "negative_torus", "amplitude": 0.2}
    return make_metric(spec, np.random.default_rng(0))


@pytest.fixture(scope="module")
def negative_solution(negative_torus):
    return sv.solve_csc(negative_torus, sv.SolverConfig(descent_steps=0))


def test_flat_torus_gives_constant_factor():
    g = MetricField.flat(PeriodicGrid.cube(3, 8))
    sol = sv.solve_csc(g)
    assert sol.s_const == pytest.approx(0.0, abs=1e-12)
    assert np.ptp(sol.phi.values) < 1e-12
    assert sol.volume == pytest.approx(1.0, abs=1e-15)


def test_solution_satisfies_equation(negative_torus, negative_solution):
    sol = negative_solution
    assert sol.residual_linf <= 1e-10
    assert sol.s_const < 0
    assert not sol.experimental
    res = yamabe_residual(negative_torus, sol.phi, sol.s_const).values
    assert np.abs(res).max() <= 1e-9


def test_solution_unit_volume(negative_solution):
    assert abs(gg.volume(negative_solution.metric) - 1.0) <= 1e-12


def test_conformal_scalar_is_constant(negative_solution):
    st_ = sv.conformal_scalar(negative_solution)
    assert np.abs(st_ - negative_solution.s_const).max() <= 1e-9


def test_phi_diagnostic_small(negative_solution):
    assert sv.phi_diagnostic(negative_solution) <= 1e-8


def test_energy_close_to_s_for_unit_volume(negative_solution):
    # the quadratic form uses |D phi|^2, the equation D(D phi): equal up to truncation
    assert negative_solution.energy == pytest.approx(negative_solution.s_const, rel=5e-3)


def test_multistart_agrees(negative_torus):
    cfg = sv.SolverConfig(multistart_count=3, seed=7)
    classes, dedup, failures = sv.multistart_run(negative_torus, cfg)
    assert len(classes) == 1 and not failures
    assert set(dedup.values()) == {0}
    _, spread = sv.multistart_spread(negative_torus, cfg)
    assert spread <= 1e-6
    rep = sv.solution_report(classes, cfg, dedup, failures)
    assert rep["found_at_least"] == 1


def test_recenter_flattens_scalar(negative_solution):
    before = np.ptp(negative_solution.metric.scalar)
    after = sv.recenter(negative_solution)
    assert np.ptp(after.base_metric.scalar) <= before


def test_config_validation():
    with pytest.raises(ValueError):
        sv.SolverConfig(newton_tol=0)
    with pytest.raises(ValueError):
        sv.SolverConfig(max_newton=0)


def test_max_newton_reports_failure(negative_torus):
    with pytest.raises(sv.SolverFailure) as info:
        sv.solve_csc(negative_torus, sv.SolverConfig(max_newton=1, descent_steps=0, newton_tol=1e-15))
    assert "history" in info.value.report


@given(seed=st.integers(0, 2**32 - 1), n=st.integers(3, 6))
def test_round_to_unit_volume(seed, n):
    rng = np.random.default_rng(seed)
    p = YamabeConstants(n).critical_exponent
    w = rng.uniform(0.5, 1.5, 512)
    w /= math.fsum(w)
    phi = np.exp(1e-4 * rng.standard_normal(512)).astype(np.longdouble)
    phi *= np.sum(phi ** p * w.astype(np.longdouble)) ** (-1 / p)
    out = sv._round_to_unit_volume(phi, w.astype(np.longdouble), p)
    # every entry is one of the two doubles bracketing the exact value
    assert np.all(np.abs(out - phi.astype(float)) <= np.spacing(out))
    vol = np.sum(np.exp(p * np.log(out.astype(np.longdouble))) * w.astype(np.longdouble))
    assert abs(float(vol) - 1.0) < 1e-17


def test_flat_class_needs_no_newton_step():
    g = MetricField.flat(PeriodicGrid.cube(3, 8))
    assert sv.solve_csc(g, sv.SolverConfig(descent_steps=0)).iterations <= 1


@pytest.mark.parametrize("c", [0.5, 2.0])
def test_scaled_metric_same_class(negative_torus, negative_solution, c):
    scaled = MetricField(negative_torus.grid, c * negative_torus.values)
    sol = sv.solve_csc(scaled, sv.SolverConfig(descent_steps=0))
    assert sol.s_const == pytest.approx(negative_solution.s_const, abs=1e-10)
    diff = np.abs(sol.metric.values - negative_solution.metric.values).max()
    assert diff <= 1e-10


def test_history_is_deterministic(negative_torus):
    cfg = sv.SolverConfig(seed=3, init_amplitude=0.2)
    init = sv.random_init(negative_torus, np.random.default_rng(11), cfg)
    a = sv.solve_csc(negative_torus, cfg, init=init)
    b = sv.solve_csc(negative_torus, cfg, init=init)
    assert a.history == b.history
    np.testing.assert_array_equal(a.phi.values, b.phi.values)
