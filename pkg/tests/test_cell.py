import math

import numpy as np
import pytest
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from hypothesis import given
from hypothesis import strategies as st

from homog.cell import (bump, cell_means, effective_matrix, lambda_diagnostics, solve_cell, voigt_reuss_check)
from homog.errors import ConfigurationError
from homog.model import CoefficientField, LatticeSpec, OperatorSymbol, Problem


def _oracle_scalar_cell(gfun, N):
    """Independent Q1 assembly of the scalar periodic cell problem with scipy.sparse."""
    h = 1.0 / N
    gp = (0.5 - 0.5 / math.sqrt(3), 0.5 + 0.5 / math.sqrt(3))
    corners = [(0, 0), (1, 0), (0, 1), (1, 1)]

    def grads(s, t):
        return np.array([[-(1 - t), -(1 - s)], [1 - t, -s], [-t, 1 - s], [t, s]]) / h

    rows, cols, vals = [], [], []
    b = np.zeros((2, N * N))
    gmean = np.zeros((2, 2))
    for i in range(N):
        for j in range(N):
            G = gfun((i + 0.5) * h, (j + 0.5) * h)
            idx = [((i + a) % N) * N + (j + c) % N for a, c in corners]
            Ke = np.zeros((4, 4))
            fe = np.zeros((2, 4))
            for s in gp:
                for t in gp:
                    B = grads(s, t)
                    Ke += B @ G @ B.T * h * h / 4
                    fe += (B @ G).T * h * h / 4
            for a in range(4):
                for c in range(4):
                    rows.append(idx[a]); cols.append(idx[c]); vals.append(Ke[a, c])
                b[:, idx[a]] -= fe[:, a]
            gmean += G * h * h
    K = sp.csr_matrix((vals, (rows, cols)), shape=(N * N, N * N)).tolil()
    # pin node 0
    K[0, :] = 0
    K[:, 0] = 0
    K[0, 0] = 1.0
    b[:, 0] = 0.0
    K = K.tocsc()
    chi = np.stack([spla.spsolve(K, b[k]) for k in range(2)])
    # g0 = mean g (grad chi + I) = gmean + sum over elements of G grad chi
    g0 = gmean.copy()
    for i in range(N):
        for j in range(N):
            G = gfun((i + 0.5) * h, (j + 0.5) * h)
            idx = [((i + a) % N) * N + (j + c) % N for a, c in corners]
            B = grads(0.5, 0.5)
            g0 += (G @ (B.T @ chi[:, idx].T)) * h * h
    return g0


def test_cell_matches_independent_assembly():
    field = CoefficientField("checkerboard", 2, 2, {"a": 1.0, "b": 4.0})
    N = 16
    sol = solve_cell(LatticeSpec.cubic(2), OperatorSymbol.grad(2), field, N, tol=1e-13)
    oracle = _oracle_scalar_cell(lambda x, y: field.evaluate(np.array([x, y])), N)
    assert np.allclose(sol.g_eff, oracle, atol=1e-9)


def test_trig_oracle_sqrt3():
    sol = solve_cell(LatticeSpec.cubic(1), OperatorSymbol.grad(1), CoefficientField("trig", 1, 1, {}), 1024)
    assert abs(sol.g_eff[0, 0] - math.sqrt(3.0)) <= 1e-6


def test_laminate_oracle():
    sol = solve_cell(LatticeSpec.cubic(2), OperatorSymbol.grad(2), CoefficientField("laminate", 2, 2, {}), 64)
    assert np.abs(sol.g_eff - np.diag([1.6, 2.5])).max() <= 1e-10


@given(vals=st.lists(st.floats(0.2, 20.0), min_size=2, max_size=4), N=st.sampled_from([8, 16, 32]))
def test_1d_laminate_is_harmonic_mean(vals, N):
    k = len(vals)
    fr = [1.0 / k] * k
    # grid aligned with the interfaces
    N = N * k
    sol = solve_cell(LatticeSpec.cubic(1), OperatorSymbol.grad(1),
                     CoefficientField("laminate", 1, 1, {"values": vals, "fractions": fr}), N, tol=1e-13)
    harmonic = 1.0 / np.mean([1.0 / v for v in vals])
    assert np.isclose(sol.g_eff[0, 0], harmonic, rtol=1e-9)
    # in 1D the flux g (X' + 1) is constant and equals g0
    assert np.allclose(sol.g_tilde, harmonic, rtol=1e-8)


def test_constant_coefficient_corrector_vanishes():
    g = np.array([[2.0, 0.5], [0.5, 1.0]])
    sol = solve_cell(LatticeSpec.cubic(2), OperatorSymbol.grad(2), CoefficientField("constant", 2, 2, {"value": g}), 16)
    assert sol.lambda_l2 <= 1e-10
    assert np.allclose(sol.g_eff, g, atol=1e-12)
    vr = voigt_reuss_check(sol, CoefficientField("constant", 2, 2, {"value": g}))
    assert vr["case_flags"]["g0_equals_gbar"] and vr["case_flags"]["g0_equals_gunder"]


@given(a=st.floats(0.3, 5.0), b=st.floats(0.3, 5.0), family=st.sampled_from(["laminate", "checkerboard"]))
def test_voigt_reuss_margins(a, b, family):
    params = {"values": [a, b]} if family == "laminate" else {"a": a, "b": b}
    field = CoefficientField(family, 2, 2, params)
    sol = solve_cell(LatticeSpec.cubic(2), OperatorSymbol.grad(2), field, 16)
    vr = voigt_reuss_check(sol, field)
    tol = 1e-8 * field.g_inf_norm
    assert vr["loewner_margins"]["lower"] >= -tol
    assert vr["loewner_margins"]["upper"] >= -tol
    assert vr["norm_bounds"]["slack"] >= -tol and vr["norm_bounds"]["inv_slack"] >= -tol


def test_scalar_case_flags_lower_mean():
    # m = n = 1 in 1D: g0 is the harmonic mean
    field = CoefficientField("trig", 1, 1, {})
    sol = solve_cell(LatticeSpec.cubic(1), OperatorSymbol.grad(1), field, 256)
    gbar, gunder = cell_means(sol)
    assert voigt_reuss_check(sol, field)["case_flags"]["g0_equals_gunder"]
    assert np.isclose(gbar[0, 0], 2.0)
    assert np.isclose(gunder[0, 0], math.sqrt(3.0), rtol=1e-4)


def test_elasticity_cell_symmetric_and_bounded():
    field = CoefficientField("elasticity", 3, 2, {"lam": [1.0, 4.0], "mu": [1.0, 3.0], "pattern": "checkerboard"})
    sol = solve_cell(LatticeSpec.cubic(2), OperatorSymbol.elasticity2d(), field, 16)
    assert np.allclose(sol.g_eff, sol.g_eff.T)
    vr = voigt_reuss_check(sol, field)
    assert vr["loewner_margins"]["lower"] >= -1e-8 * field.g_inf_norm
    assert vr["loewner_margins"]["upper"] >= -1e-8 * field.g_inf_norm


def test_parallel_columns_identical():
    field = CoefficientField("checkerboard", 2, 2, {})
    a = solve_cell(LatticeSpec.cubic(2), OperatorSymbol.grad(2), field, 16, jobs=1)
    b = solve_cell(LatticeSpec.cubic(2), OperatorSymbol.grad(2), field, 16, jobs=2)
    assert np.array_equal(a.chi, b.chi) and np.array_equal(a.g_eff, b.g_eff)


def test_effective_matrix_scaling():
    field = CoefficientField("checkerboard", 2, 2, {})
    a = solve_cell(LatticeSpec.cubic(2), OperatorSymbol.grad(2), field, 16)
    b = solve_cell(LatticeSpec.cubic(2), OperatorSymbol.grad(2), field.scaled(3.0), 16)
    assert np.allclose(b.g_eff, 3.0 * a.g_eff, rtol=1e-9)
    assert np.allclose(effective_matrix(a), a.g_eff)


def test_scaled_lattice_gives_same_effective_matrix():
    field = CoefficientField("checkerboard", 2, 2, {})
    a = solve_cell(LatticeSpec.cubic(2), OperatorSymbol.grad(2), field, 16)
    b = solve_cell(LatticeSpec.cubic(2, 2.0), OperatorSymbol.grad(2), field, 16)
    assert np.allclose(a.g_eff, b.g_eff, rtol=1e-9)


def test_corrector_evaluation_at_nodes():
    field = CoefficientField("checkerboard", 2, 2, {})
    sol = solve_cell(LatticeSpec.cubic(2), OperatorSymbol.grad(2), field, 16)
    y = np.array([[3 / 16, 5 / 16], [1.0 + 3 / 16, 5 / 16]])
    X = sol.evaluate(y)
    assert np.allclose(X[..., 0], sol.chi[:, :, 3, 5].T)
    assert np.allclose(X[..., 0], X[..., 1])
    assert np.allclose(sol.lambda_values, 1j * sol.chi)
    assert sol.lambda_raster().shape == (16, 16, 1, 2)


def test_low_resolution_rejected():
    with pytest.raises(ConfigurationError):
        solve_cell(LatticeSpec.cubic(1), OperatorSymbol.grad(1), CoefficientField("trig", 1, 1, {}), 4)


def test_lambda_diagnostics_checkerboard():
    pr = Problem(LatticeSpec.cubic(2), OperatorSymbol.grad(2), CoefficientField("checkerboard", 2, 2, {}))
    sol = solve_cell(pr.lattice, pr.symbol, pr.field, 32)
    rep = lambda_diagnostics(sol, pr.constants(), [bump([0.5, 0.5], 0.3)])
    assert rep["ok"] and rep["violations"] == 0
    assert rep["lambda_l2"] <= rep["lambda_l2_bound"]
    assert len(rep["weighted"]) == 2
