import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from homog.discretize import (GridFunction, Mesh, Q1Operator, assemble, cutoff, extend, extension_box,
                              interpolate, load_from_flux, mass_apply, norms, qp_gradients, restrict,
                              solve_spd, strip_integral, strip_integral_box)
from homog.errors import ConfigurationError, ResolutionError, SolverError
from homog.model import CoefficientField, LatticeSpec, OperatorSymbol

SYM2 = OperatorSymbol.grad(2)
LAT2 = LatticeSpec.cubic(2)


def _sin_problem(N):
    mesh = Mesh.rectangle((1.0, 1.0), (N, N))
    F = interpolate(mesh, lambda x: 2 * np.pi ** 2 * np.sin(np.pi * x[..., 0]) * np.sin(np.pi * x[..., 1]), "rhs")
    exact = interpolate(mesh, lambda x: np.sin(np.pi * x[..., 0]) * np.sin(np.pi * x[..., 1]))
    op = Q1Operator.constant(mesh, SYM2, np.eye(2))
    u, info = solve_spd(op, op._mask * mass_apply(mesh, F.values), tol=1e-12, preconditioner="jacobi")
    return mesh, u, exact


def test_laplace_eigenfunction_second_order():
    errs = []
    for N in (16, 32, 64):
        mesh, u, exact = _sin_problem(N)
        errs.append(np.abs(u - exact.values).max())
    rates = [math.log2(a / b) for a, b in zip(errs, errs[1:])]
    assert min(rates) > 1.9


def test_norms_of_sin_product():
    mesh, u, exact = _sin_problem(32)
    n = norms(exact)
    assert abs(n["l2"] - 0.5) < 2e-3
    assert abs(n["h1_semi"] - math.pi / math.sqrt(2)) < 5e-3


def test_zero_rhs_gives_zero():
    mesh = Mesh.rectangle((1.0, 1.0), (8, 8))
    op = Q1Operator.constant(mesh, SYM2, np.eye(2))
    x, info = solve_spd(op, np.zeros(op.shape))
    assert info.iterations == 0 and not np.any(x)


def test_identity_like_system_returns_rhs():
    mesh = Mesh.rectangle((1.0,), (4,))
    sym = OperatorSymbol.grad(1)
    op = Q1Operator.constant(mesh, sym, np.eye(1))
    rhs = np.zeros(op.shape)
    rhs[0, 0] = 1.0  # boundary rows are identity rows
    x, _ = solve_spd(op, rhs)
    assert np.allclose(x, rhs)


def test_solver_error_carries_residual():
    mesh = Mesh.rectangle((1.0, 1.0), (16, 16))
    op = Q1Operator.constant(mesh, SYM2, np.eye(2))
    rhs = op._mask * np.random.default_rng(0).standard_normal(op.shape)
    with pytest.raises(SolverError) as exc:
        solve_spd(op, rhs, tol=1e-14, preconditioner="none", maxiter=2)
    assert exc.value.iterations == 2 and exc.value.residual > 1e-14


@given(seed=st.integers(0, 2 ** 31 - 1), periodic=st.booleans())
def test_operator_symmetric_positive(seed, periodic):
    rng = np.random.default_rng(seed)
    mesh = Mesh.torus((1.0, 1.0), (8, 8)) if periodic else Mesh.rectangle((1.0, 1.0), (8, 8))
    field = CoefficientField("checkerboard", 2, 2, {"a": float(rng.uniform(0.5, 2)), "b": float(rng.uniform(2, 5))})
    op = Q1Operator.oscillating(mesh, SYM2, field, LAT2, 0.25)
    u, v = rng.standard_normal(op.shape), rng.standard_normal(op.shape)
    assert np.isclose(np.vdot(v, op.matvec(u)), np.vdot(u, op.matvec(v)), rtol=1e-12, atol=1e-12)
    assert np.vdot(u, op.matvec(u)) >= -1e-12


def test_sparse_form_matches_matrix_free():
    mesh = Mesh.rectangle((1.0, 1.0), (6, 6))
    field = CoefficientField("checkerboard", 2, 2, {})
    sysm = assemble(mesh, SYM2, field=field, lattice=LAT2, eps=0.5)
    op = sysm.operator
    A = op.to_sparse(eliminate=False)
    assert abs(sysm.mass - sysm.mass.T).max() < 1e-15
    assert np.isclose(sysm.mass.sum(), 1.0)
    u = np.random.default_rng(2).standard_normal(op.shape)
    assert np.allclose(A @ u.reshape(-1), op.apply_raw(u).reshape(-1))
    assert abs(A - A.T).max() < 1e-13
    A = op.to_sparse()
    assert np.allclose(A @ u.reshape(-1), op.matvec(u).reshape(-1))
    assert np.allclose(A.diagonal(), op.diagonal().reshape(-1))


def test_elasticity_operator_kills_rigid_motions():
    mesh = Mesh.torus((1.0, 1.0), (8, 8))
    field = CoefficientField("elasticity", 3, 2, {"lam": [1.0, 4.0], "mu": [1.0, 3.0], "pattern": "checkerboard"})
    op = Q1Operator.oscillating(mesh, OperatorSymbol.elasticity2d(), field, LAT2, 0.5)
    for c in range(2):
        u = np.zeros(op.shape)
        u[c] = 1.0
        assert np.abs(op.matvec(u)).max() < 1e-12


def test_load_from_flux_matches_operator():
    rng = np.random.default_rng(4)
    mesh = Mesh.torus((1.0, 1.0), (8, 8))
    op = Q1Operator.constant(mesh, SYM2, np.array([[2.0, 0.3], [0.3, 1.0]]))
    u = rng.standard_normal(op.shape)
    g = qp_gradients(mesh, u)[0]  # (d, nq, ...)
    flux = np.einsum("ij,jq...->iq...", np.array([[2.0, 0.3], [0.3, 1.0]]), g)
    assert np.allclose(load_from_flux(mesh, SYM2, flux), op.apply_raw(u))


def test_mesh_validation():
    with pytest.raises(ConfigurationError):
        Mesh("sphere", (1.0,), (4,))
    with pytest.raises(ConfigurationError):
        GridFunction(Mesh.torus((1.0,), (4,)), np.zeros((1, 5)))
    with pytest.raises(ConfigurationError):
        GridFunction(Mesh.torus((1.0,), (4,)), np.zeros((1, 4)), role="bogus")


@given(a=st.floats(-2, 2), b=st.floats(-2, 2), c=st.floats(-2, 2))
def test_extension_continues_affine_functions(a, b, c):
    mesh = Mesh.rectangle((1.0, 1.0), (32, 32))
    u = interpolate(mesh, lambda x: a + b * x[..., 0] + c * x[..., 1], "u0")
    ext, nm = extend(u, 0.25)
    assert np.array_equal(restrict(ext.values, mesh, nm), u.values)
    x = ext.mesh.node_coords()
    inner = np.all(np.abs(x - 0.5) <= 0.5 + 0.125 + 1e-12, axis=-1)
    affine = a + b * x[..., 0] + c * x[..., 1]
    assert np.allclose(ext.values[0][inner], affine[inner], atol=1e-11)
    # vanishes at the outer edge
    assert np.allclose(ext.values[0][0], 0.0) and np.allclose(ext.values[0][:, -1], 0.0)


def test_extension_margin_rules():
    mesh = Mesh.rectangle((1.0, 1.0), (8, 8))
    with pytest.raises(ConfigurationError):
        extension_box(mesh, 0.3)
    with pytest.raises(ConfigurationError):
        extend(GridFunction(mesh, np.zeros((1, 9, 9))), 0.625)


def test_cutoff_support():
    mesh = Mesh.rectangle((1.0, 1.0), (64, 64))
    th = cutoff(mesh, 0.125).values[0]
    x = mesh.node_coords()
    dist = np.minimum.reduce([x[..., 0], 1 - x[..., 0], x[..., 1], 1 - x[..., 1]])
    assert np.all(th[dist >= 0.125 - 1e-12] == 0.0)
    assert np.all(th[dist <= 1e-12] == 1.0)
    assert th.min() >= 0.0 and th.max() <= 1.0


@given(k=st.integers(2, 6))
def test_strip_integral_of_one_is_strip_area(k):
    eps = 1.0 / 2 ** k
    mesh = Mesh.rectangle((1.0, 1.0), (2 ** (k + 2), 2 ** (k + 2)))
    one = GridFunction(mesh, np.ones((1,) + mesh.node_shape))
    assert np.isclose(strip_integral(one, eps), 1.0 - (1.0 - 2 * eps) ** 2, rtol=1e-12)


def test_strip_rejects_thin_strips():
    mesh = Mesh.rectangle((1.0, 1.0), (16, 16))
    one = GridFunction(mesh, np.ones((1, 17, 17)))
    with pytest.raises(ResolutionError):
        strip_integral(one, 1 / 16)


def test_two_sided_strip_area():
    mesh = Mesh.rectangle((1.0, 1.0), (64, 64))
    box, nm = extension_box(mesh, 0.25)
    one = GridFunction(box, np.ones((1,) + box.node_shape))
    eps = 0.125
    area = 1.0 - (1.0 - 2 * eps) ** 2 + 4 * eps + math.pi * eps ** 2
    assert np.isclose(strip_integral_box(one, mesh, eps, subdivisions=8), area, rtol=2e-3)
