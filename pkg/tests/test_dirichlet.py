import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from homog.cell import solve_cell
from homog.dirichlet import (DirichletRun, constant_rhs, corrector_kd, corrector_kd0, default_rhs,
                             dirichlet_rate_sweep, discrepancy_diagnostics, flux_compare, flux_identity_residual,
                             solve_eps, solve_homogenized, unit_box)
from homog.discretize import GridFunction, boundary_distance, interpolate, norms
from homog.errors import ConfigurationError, DiscretizationError, ResolutionError
from homog.fitting import fit_rate
from homog.model import CoefficientField, LatticeSpec, OperatorSymbol, Problem

LAT2, SYM2 = LatticeSpec.cubic(2), OperatorSymbol.grad(2)
LAT1, SYM1 = LatticeSpec.cubic(1), OperatorSymbol.grad(1)
IDENTITY = CoefficientField("constant", 2, 2, {"value": 1.0})


def _sin_mode(x):
    return np.sin(np.pi * x[..., 0]) * np.sin(np.pi * x[..., 1])


def test_laplacian_eigenfunction_second_order():
    errs = []
    for eps in (1 / 4, 1 / 8):
        mesh = unit_box(2, eps, 16)
        F = interpolate(mesh, lambda x: (2 * math.pi ** 2 * _sin_mode(x))[..., None], "rhs")
        u, _ = solve_eps(mesh, SYM2, IDENTITY, LAT2, eps, F)
        exact = _sin_mode(mesh.node_coords())
        errs.append(np.abs(u.values[0] - exact).max())
    assert math.log2(errs[0] / errs[1]) > 1.9


def test_resolution_and_extent_rules():
    with pytest.raises(ResolutionError):
        solve_eps(unit_box(2, 1 / 8, 8), SYM2, IDENTITY, LAT2, 1 / 8,
                  interpolate(unit_box(2, 1 / 8, 8), constant_rhs(1), "rhs"))
    with pytest.raises(ConfigurationError):
        unit_box(2, 0.3, 16)


def test_zero_rhs_gives_zero():
    mesh = unit_box(2, 1 / 4, 16)
    F = interpolate(mesh, lambda x: np.zeros(x.shape[:-1] + (1,)), "rhs")
    fld = CoefficientField("checkerboard", 2, 2, {})
    u, info = solve_eps(mesh, SYM2, fld, LAT2, 1 / 4, F)
    assert not np.any(u.values) and info.iterations == 0


@given(a=st.floats(-3, 3), b=st.floats(-3, 3))
def test_solution_is_linear_in_rhs(a, b):
    mesh = unit_box(2, 1 / 4, 16)
    fld = CoefficientField("checkerboard", 2, 2, {})
    F1 = interpolate(mesh, default_rhs(1, 2), "rhs")
    F2 = interpolate(mesh, constant_rhs(1), "rhs")
    u1, _ = solve_eps(mesh, SYM2, fld, LAT2, 1 / 4, F1, tol=1e-13)
    u2, _ = solve_eps(mesh, SYM2, fld, LAT2, 1 / 4, F2, tol=1e-13)
    u, _ = solve_eps(mesh, SYM2, fld, LAT2, 1 / 4, F1.with_values(a * F1.values + b * F2.values), tol=1e-13)
    scale = abs(a) + abs(b) + 1
    assert np.abs(u.values - a * u1.values - b * u2.values).max() <= 1e-10 * scale


def test_energy_inequality_holds_and_is_enforced():
    pr = Problem(LAT2, SYM2, CoefficientField("checkerboard", 2, 2, {}))
    led = pr.constants()
    mesh = unit_box(2, 1 / 8, 16)
    F = interpolate(mesh, default_rhs(1, 2), "rhs")
    u, _ = solve_eps(mesh, SYM2, pr.field, LAT2, 1 / 8, F, C_hat=led.C_hat)
    assert norms(u)["h1"] <= led.C_hat * norms(F)["l2"]
    with pytest.raises(DiscretizationError):
        solve_eps(mesh, SYM2, pr.field, LAT2, 1 / 8, F, C_hat=1e-3)


def test_one_dimensional_two_phase_closed_form():
    # -(g u')' = 1 on (0, 1): g u' = c - x, so the Q1 solution is nodally exact
    fld = CoefficientField("laminate", 1, 1, {"values": [1.0, 4.0], "fractions": [0.5, 0.5], "axis": 0})
    eps = 1 / 8
    mesh = unit_box(1, eps, 16)
    F = interpolate(mesh, constant_rhs(1), "rhs")
    u, _ = solve_eps(mesh, SYM1, fld, LAT1, eps, F, tol=1e-14)
    h = mesh.h[0]
    mid = mesh.element_midpoints()[..., 0]
    g = np.where((mid / eps) % 1.0 < 0.5, 1.0, 4.0)
    c = np.sum(mid / g) / np.sum(1 / g)
    exact = np.concatenate([[0.0], np.cumsum(h * (c - mid) / g)])
    assert abs(exact[-1]) < 1e-12
    assert np.abs(u.values[0] - exact).max() < 1e-11

    cell = solve_cell(LAT1, SYM1, fld, 16)
    u0, _, _ = solve_homogenized(mesh, SYM1, cell.g_eff, F)
    assert cell.g_eff[0, 0] == pytest.approx(1.6, rel=1e-12)
    # the discrete flux is constant per element and equals c minus the midpoint
    res = flux_compare(u, u0, cell, LAT1, SYM1, fld, eps, "bounded_lambda")
    assert np.abs(res["p_eps"][0] - (c - mid)[None]).max() < 1e-10


def _laminate_problem():
    fld = CoefficientField("laminate", 2, 2, {"values": [1.0, 4.0], "fractions": [0.5, 0.5], "axis": 0})
    return Problem(LAT2, SYM2, fld, lambda_bounded=True)


def test_unsmoothed_corrector_needs_assertion_and_scales():
    pr = _laminate_problem()
    cell = solve_cell(LAT2, SYM2, pr.field, 16)
    mesh = unit_box(2, 1 / 4, 16)
    u0 = interpolate(mesh, lambda x: _sin_mode(x)[..., None], "u0")
    with pytest.raises(ConfigurationError):
        corrector_kd0(u0, cell, LAT2, SYM2, 1 / 4, lambda_bounded=False)
    v1, _ = corrector_kd0(u0, cell, LAT2, SYM2, 1 / 4, lambda_bounded=True)
    v2, _ = corrector_kd0(u0.with_values(2 * u0.values), cell, LAT2, SYM2, 1 / 4, lambda_bounded=True)
    assert np.allclose(v2.values, 2 * v1.values, atol=1e-13)


def test_constant_coefficient_correctors_reproduce_u0():
    fld = CoefficientField("constant", 2, 2, {"value": [[2.0, 0.5], [0.5, 1.0]]})
    cell = solve_cell(LAT2, SYM2, fld, 16)
    mesh = unit_box(2, 1 / 8, 16)
    u0 = interpolate(mesh, lambda x: _sin_mode(x)[..., None], "u0")
    v, _ = corrector_kd(u0, cell, LAT2, SYM2, 1 / 8)
    w, _ = corrector_kd0(u0, cell, LAT2, SYM2, 1 / 8, lambda_bounded=True)
    assert np.abs(v.values - u0.values).max() <= 1e-12
    assert np.abs(w.values - u0.values).max() <= 1e-12


def test_trace_identity_and_cutoff_support():
    pr = Problem(LAT2, SYM2, CoefficientField("checkerboard", 2, 2, {}))
    eps = 1 / 8
    cell = solve_cell(LAT2, SYM2, pr.field, 16)
    mesh = unit_box(2, eps, 16)
    F = interpolate(mesh, default_rhs(1, 2), "rhs")
    u0, _, _ = solve_homogenized(mesh, SYM2, cell.g_eff, F)
    v, W = corrector_kd(u0, cell, LAT2, SYM2, eps)
    bmask = mesh.boundary_mask()
    # on the boundary v - u0 is exactly the first-order term
    assert np.abs(v.values[0][bmask]).max() > 0
    disc = discrepancy_diagnostics(u0, cell, LAT2, SYM2, pr.field, eps, "general", pr.constants().gamma0,
                                   W=W, F=F)
    phi, w = disc["phi"].values[0], disc["w"].values[0]
    assert np.allclose(w[bmask], (v.values[0] - u0.values[0])[bmask], atol=1e-13)
    dist = boundary_distance(mesh, mesh.node_coords())
    assert not np.any(phi[dist >= eps])
    assert disc["gamma0_ok"]


def test_flux_identity_residual_is_first_order_in_h():
    pr = Problem(LAT2, SYM2, CoefficientField("checkerboard", 2, 2, {}))
    cell = solve_cell(LAT2, SYM2, pr.field, 16)
    eps = 1 / 4
    res = []
    for p in (16, 32, 64):
        mesh = unit_box(2, eps, p)
        u0 = interpolate(mesh, lambda x: _sin_mode(x)[..., None], "u0")
        _, W = corrector_kd(u0, cell, LAT2, SYM2, eps)
        res.append(flux_identity_residual(u0, cell, LAT2, SYM2, pr.field, eps, W)["residual_l2"])
    rates = [math.log2(a / b) for a, b in zip(res, res[1:])]
    assert min(rates) > 0.8


def test_rate_fit_recovers_half_order():
    eps = [2.0 ** -k for k in range(3, 7)]
    fit = fit_rate([(e, 0.7 * e ** 0.5) for e in eps])
    assert fit.slope == pytest.approx(0.5, abs=1e-12)
    assert fit.interval[0] <= 0.5 <= fit.interval[1]


def test_constant_sweep_sits_at_floor():
    pr = Problem(LAT2, SYM2, CoefficientField("constant", 2, 2, {"value": [[2.0, 0.5], [0.5, 1.0]]}))
    out = dirichlet_rate_sweep(DirichletRun(pr, (1 / 4, 1 / 8, 1 / 16), reference=False))
    assert out["pass"]
    for r in out["rows"]:
        assert r["h1_corr_err"] <= 1e-8 and r["l2_err"] <= 1e-8 and r["flux_err"] <= 1e-8


def test_laminate_sweep_bounded_path():
    out = dirichlet_rate_sweep(DirichletRun(_laminate_problem(), (1 / 4, 1 / 8, 1 / 16), path="bounded_lambda"),
                               jobs=2)
    assert out["checks"]["h1_corr_err"] and out["checks"]["l2_err"] and out["checks"]["gamma0"]
    assert [r["eps"] for r in out["rows"]] == [1 / 4, 1 / 8, 1 / 16]
    assert all(r["trace_identity_err"] <= 1e-13 for r in out["rows"])
