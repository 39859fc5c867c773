import math
from decimal import Decimal, getcontext

import numpy as np
import pytest

from helpers import far_obstacle, put_model

from rbsde_lab.lattice import ForwardModel, TimeGrid
from rbsde_lab.pde import (
    BOUNDARY_EXTRAPOLATION,
    ChiParams,
    PdeGrid,
    PsorConvergenceError,
    chi_supersolution_check,
    chi_value,
    feynman_kac_check,
    growth_class_check,
    pde_field_to_csv,
    solve_pde_penalized,
    solve_pde_projected,
)
from rbsde_lab.problem import ProblemSpec, make_generator, make_obstacle, make_terminal


def frozen_model():
    return ForwardModel.arithmetic(0.0, 0.0, 1.0)


def constant_spec():
    return ProblemSpec(
        make_generator("zero"), make_terminal("constant:1"), make_obstacle("zero"), 0.0
    )


def test_grid_validation():
    with pytest.raises(ValueError):
        PdeGrid(0.0, 1.0, 2, TimeGrid(4, 1.0))
    with pytest.raises(ValueError):
        PdeGrid(1.0, 0.0, 11, TimeGrid(4, 1.0))
    with pytest.raises(ValueError, match="boundary_mode"):
        PdeGrid(0.0, 1.0, 11, TimeGrid(4, 1.0), boundary_mode="robin")


def test_constant_solution_on_every_slice():
    grid = PdeGrid(0.0, 2.0, 21, TimeGrid(16, 1.0))
    field = solve_pde_projected(grid, constant_spec(), frozen_model())
    assert np.allclose(field.u, 1.0, atol=1e-12)
    assert field.complementarity <= 1e-8


def test_pure_discounting_reduces_to_exponential():
    grid = PdeGrid(0.0, 2.0, 11, TimeGrid(8192, 1.0), boundary_mode=BOUNDARY_EXTRAPOLATION)
    spec = ProblemSpec(
        make_generator("linear_discount:0.1"),
        make_terminal("constant:1"),
        far_obstacle,
        lipschitz_kappa=0.1,
    )
    field = solve_pde_projected(grid, spec, frozen_model())
    interior = field.u[0][1:-1]
    assert np.all(np.abs(interior - math.exp(-0.1)) <= 1e-6)
    # extrapolated boundary carries the same discounted terminal value
    assert field.u[0][-1] == pytest.approx(math.exp(-0.1), abs=1e-6)


def test_put_value_matches_lattice_to_half_percent(put_pde_field, put_snell_2048):
    u0 = put_pde_field.interpolate(0.0, 36.0)
    y0 = float(put_snell_2048.triple.y[0][0])
    assert abs(u0 - y0) / y0 <= 0.005


def test_projected_complementarity_contract(put_pde_field):
    assert put_pde_field.complementarity <= 1e-8
    assert put_pde_field.min_operator_residual >= -1e-8
    # the obstacle is enforced exactly at every grid point
    grid = put_pde_field.grid
    xs = grid.xs()
    payoff = np.maximum(40.0 - xs, 0.0)
    assert np.all(put_pde_field.u >= payoff[None, :] - 0.0)


def test_penalized_zero_intensity_matches_projected_without_obstacle():
    model = frozen_model()
    spec = constant_spec()
    grid = PdeGrid(0.0, 2.0, 21, TimeGrid(16, 1.0))
    proj = solve_pde_projected(grid, spec, model)
    pen = solve_pde_penalized(grid, spec, model, 0.0)
    assert np.allclose(pen.u, proj.u, atol=1e-10)


@pytest.mark.parametrize("intensity", [10.0, 1e4])
def test_penalized_constant_instance(intensity):
    grid = PdeGrid(0.0, 2.0, 21, TimeGrid(16, 1.0))
    field = solve_pde_penalized(grid, constant_spec(), frozen_model(), intensity)
    assert np.allclose(field.u, 1.0, atol=1e-12)


def test_penalized_family_ordered_below_projected(put_pde_field, put_pde_penalized_family):
    prev = None
    for n in (1e2, 1e3, 1e4):
        pen = put_pde_penalized_family[n]
        assert float(np.max(pen.u - put_pde_field.u)) <= 1e-8
        if prev is not None:
            assert float(np.min(pen.u - prev.u)) >= -1e-8
        prev = pen
    gap = put_pde_field.interpolate(0.0, 36.0) - put_pde_penalized_family[1e4].interpolate(0.0, 36.0)
    assert 0.0 <= gap <= 1e-2


def test_grid_refinement_contract(put_spec, put_fwd, put_pde_field):
    # halving dx and dt moves u(0, x0) by strictly less than the previous halving
    values = [put_pde_field.interpolate(0.0, 36.0)]  # 401 x 400 level
    for m_nodes, n_steps in ((201, 200), (801, 800)):
        grid = PdeGrid(0.0, 160.0, m_nodes, TimeGrid(n_steps, 1.0))
        values.append(solve_pde_projected(grid, put_spec, put_fwd).interpolate(0.0, 36.0))
    coarse_change = abs(values[0] - values[1])
    fine_change = abs(values[2] - values[0])
    assert fine_change < coarse_change


def test_comparison_principle_on_randomized_instances():
    rng = np.random.default_rng(17)
    model = put_model(sigma=0.3)
    grid = PdeGrid(0.0, 120.0, 61, TimeGrid(40, 1.0))
    for _ in range(5):
        rate = float(rng.uniform(0.0, 0.2))
        g_bump = float(rng.uniform(0.0, 2.0))
        f_bump = float(rng.uniform(0.0, 1.0))
        h_bump = float(rng.uniform(0.0, 1.0)) * min(g_bump, 1.0)

        def build(sg, sf, sh):
            def gen(t, x, y, z):
                return -rate * np.asarray(y, dtype=float) + sf

            def term(x):
                return np.maximum(40.0 - np.asarray(x, dtype=float), 0.0) + 1.0 + sg

            def obst(t, x):
                return np.maximum(40.0 - np.asarray(x, dtype=float), 0.0) + sh

            return ProblemSpec(gen, term, obst, rate)

        low = solve_pde_projected(grid, build(0.0, 0.0, 0.0), model)
        high = solve_pde_projected(grid, build(g_bump, f_bump, h_bump), model)
        assert float(np.min(high.u - low.u)) >= -1e-8


def test_psor_failure_carries_diagnostics(put_spec, put_fwd):
    grid = PdeGrid(0.0, 160.0, 101, TimeGrid(50, 1.0))
    with pytest.raises(PsorConvergenceError, match="worst node"):
        solve_pde_projected(grid, put_spec, put_fwd, max_sweeps=1)


def test_feynman_kac_terminal_probe_is_exact(put_pde_field, put_fwd, put_spec):
    report = feynman_kac_check(put_pde_field, put_fwd, put_spec, [(1.0, 36.0)], lattice_steps=8)
    assert report.max_abs_error == 0.0


def test_feynman_kac_constant_instance():
    grid = PdeGrid(0.0, 2.0, 21, TimeGrid(16, 1.0))
    model = ForwardModel.arithmetic(0.0, 0.1, 1.0)
    spec = constant_spec()
    field = solve_pde_projected(grid, spec, model)
    report = feynman_kac_check(
        field, model, spec, [(0.0, 1.0), (0.5, 1.2), (1.0, 0.8)], lattice_steps=32
    )
    assert report.max_abs_error <= 1e-10


def test_feynman_kac_put_probes(put_pde_field, put_fwd, put_spec):
    report = feynman_kac_check(
        put_pde_field, put_fwd, put_spec, [(0.0, 36.0), (0.5, 36.0), (0.0, 44.0)]
    )
    assert report.max_rel_error <= 0.01


def test_probe_outside_grid_rejected(put_pde_field, put_fwd, put_spec):
    with pytest.raises(ValueError, match="outside grid"):
        feynman_kac_check(put_pde_field, put_fwd, put_spec, [(0.0, 500.0)], lattice_steps=8)


# -- comparison function and growth diagnostics ----------------------------


def test_chi_at_origin():
    params = ChiParams(terminal_weight=1.0, time_slope=2.0, horizon=1.0)
    # psi(0) = 1, so only the time ramp remains
    assert chi_value(1.0, 0.0, params).value == pytest.approx(math.exp(1.0), rel=1e-15)
    assert chi_value(0.5, 0.0, params).value == pytest.approx(math.exp(2.0), rel=1e-15)
    assert not chi_value(0.5, 0.0, params).saturated


def test_chi_against_high_precision_evaluation():
    getcontext().prec = 60
    a, c, horizon, t, x = 1, 2, 1, Decimal("0.5"), Decimal(3)
    psi = (Decimal(x * x + 1).ln() / 2 + 1) ** 2
    expected = ((c * (horizon - t) + a) * psi).exp()
    got = chi_value(0.5, 3.0, ChiParams(1.0, 2.0, 1.0)).value
    assert got == pytest.approx(float(expected), rel=1e-12)


def test_chi_saturates_instead_of_overflowing():
    params = ChiParams(terminal_weight=500.0, time_slope=1.0, horizon=1.0)
    out = chi_value(0.0, 1e9, params)
    assert out.saturated
    assert math.isfinite(out.value)


def test_chi_params_validation():
    with pytest.raises(ValueError):
        ChiParams(0.0, 1.0, 1.0)
    params = ChiParams(1.0, 4.0, 1.0)
    assert params.window_start == pytest.approx(0.75)


def test_supersolution_scan_finds_witness_for_gbm():
    model = put_model()
    grid = PdeGrid(-100.0, 100.0, 201, TimeGrid(512, 1.0))
    report = chi_supersolution_check(ChiParams(1.0, 1.0, 1.0), model, 1.0, grid)
    assert report.passed
    assert report.witness_time_slope is not None
    row = next(r for r in report.rows if r.time_slope == report.witness_time_slope)
    assert row.min_operator > 0.0


def test_supersolution_control_positive_for_every_slope():
    grid = PdeGrid(-100.0, 100.0, 101, TimeGrid(4096, 1.0))
    report = chi_supersolution_check(
        ChiParams(1.0, 1.0, 1.0), ForwardModel.arithmetic(0.0, 0.0, 0.0), 0.0, grid
    )
    evaluable = [r for r in report.rows if r.evaluable]
    assert len(evaluable) == len(report.rows)
    assert all(r.min_operator > 0.0 for r in evaluable)


def test_supersolution_scan_reports_unevaluable_windows():
    model = put_model()
    grid = PdeGrid(-100.0, 100.0, 51, TimeGrid(64, 1.0))
    report = chi_supersolution_check(ChiParams(1.0, 1.0, 1.0), model, 1.0, grid)
    skipped = [r for r in report.rows if not r.evaluable]
    assert skipped and all("window" in r.reason or "overflow" in r.reason for r in skipped)


def test_growth_class_checks():
    bounded = growth_class_check(lambda x: 1.0, 1.0, [10.0, 100.0, 1000.0])
    assert bounded.passed
    linear = growth_class_check(lambda x: x, 1.0, [10.0, 100.0, 1000.0])
    assert linear.passed
    # growth dominating the damping factor must be flagged
    runaway = growth_class_check(
        lambda x: math.exp(2.0 * math.log(x) ** 2), 1.0, [10.0, 100.0, 1000.0]
    )
    assert not runaway.passed


def test_growth_class_validation():
    with pytest.raises(ValueError):
        growth_class_check(lambda x: 1.0, 1.0, [10.0, 100.0])
    with pytest.raises(ValueError):
        growth_class_check(lambda x: 1.0, 1.0, [10.0, 5.0, 100.0])
    with pytest.raises(ValueError):
        growth_class_check(lambda x: 1.0, 1.0, [1.0, 10.0, 100.0])


def test_pde_csv_export(tmp_path, put_spec):
    grid = PdeGrid(0.0, 80.0, 5, TimeGrid(2, 1.0))
    field = solve_pde_projected(grid, put_spec, put_model())
    path = tmp_path / "pde.csv"
    pde_field_to_csv(field, put_spec, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "t,x,u,u_minus_h,exercised"
    assert len(lines) == 1 + 3 * 5
    t, x, u, gap, flag = lines[1].split(",")
    assert float(u) - float(gap) == pytest.approx(max(40.0 - float(x), 0.0), abs=1e-12)
