import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from homog.errors import ConfigurationError
from homog.io import load_problem, read_raster, save_problem, write_raster
from homog.model import (CoefficientField, ConstantsLedger, LatticeSpec, OperatorSymbol, Problem,
                         ellipticity_bounds, lame_matrix, sample_g)


def test_cubic_lattice_geometry():
    lat = LatticeSpec.cubic(2)
    assert lat.cell_volume == 1.0
    assert np.isclose(lat.r0, math.pi)
    assert np.isclose(lat.diameter, math.sqrt(2.0))
    assert np.isclose(lat.r1, math.sqrt(2.0) / 2)


def test_hexagonal_inscribed_radius():
    lat = LatticeSpec(np.array([[1.0, 0.0], [0.5, math.sqrt(3) / 2]]))
    assert np.isclose(lat.r0, 2 * math.pi / math.sqrt(3))


@given(st.lists(st.floats(-2, 2), min_size=4, max_size=4))
def test_dual_basis_pairing(entries):
    a = np.array(entries).reshape(2, 2) + 3 * np.eye(2)
    lat = LatticeSpec(a)
    assert np.allclose(lat.basis @ lat.dual_basis.T, 2 * math.pi * np.eye(2))
    x = np.array([0.3, -1.7])
    assert np.allclose(lat.to_fractional(x) @ lat.basis, x)


def test_dependent_basis_rejected():
    with pytest.raises(ConfigurationError):
        LatticeSpec(np.array([[1.0, 2.0], [2.0, 4.0]]))


def test_gradient_symbol_is_isotropic():
    for d in (1, 2, 3):
        sym = OperatorSymbol.grad(d)
        assert np.isclose(sym.alpha0, 1.0) and np.isclose(sym.alpha1, 1.0)


def test_elasticity_symbol_constants():
    sym = OperatorSymbol.elasticity2d()
    assert np.isclose(sym.alpha0, 0.5, atol=1e-10)
    assert np.isclose(sym.alpha1, 1.0, atol=1e-10)


@given(st.floats(0.0, 2 * math.pi))
def test_ellipticity_independent_of_sampling_offset(rotation):
    b = OperatorSymbol.elasticity2d().b_matrices
    a0, a1 = ellipticity_bounds(b, rotation=rotation)
    assert abs(a0 - 0.5) < 1e-9 and abs(a1 - 1.0) < 1e-9


def test_rank_deficient_symbol_rejected():
    with pytest.raises(ConfigurationError):
        OperatorSymbol(np.array([[[1.0]], [[0.0]]]))


def test_family_norms_are_exact():
    f = CoefficientField("checkerboard", 2, 2, {"a": 1.0, "b": 4.0})
    assert f.g_inf_norm == 4.0 and f.g_inv_inf_norm == 1.0
    t = CoefficientField("trig", 1, 1, {"mean": 2.0, "amplitude": 1.0})
    assert t.g_inf_norm == 3.0 and t.g_inv_inf_norm == 1.0
    e = CoefficientField("elasticity", 3, 2, {"lam": [1.0], "mu": [1.0]})
    assert np.isclose(e.g_inf_norm, np.linalg.eigvalsh(lame_matrix(1.0, 1.0))[-1])


def test_laminate_phases_and_evaluation():
    f = CoefficientField("laminate", 2, 2, {"values": [1.0, 4.0], "fractions": [0.5, 0.5], "axis": 0})
    y = np.array([[0.25, 0.9], [0.75, 0.1], [1.25, 0.0]])
    g = f.evaluate(y)
    assert np.allclose(g[0], np.eye(2)) and np.allclose(g[1], 4 * np.eye(2)) and np.allclose(g[2], np.eye(2))


def test_invalid_coefficients_rejected():
    with pytest.raises(ConfigurationError):
        CoefficientField("laminate", 1, 1, {"values": [1.0, 2.0], "fractions": [0.3, 0.3]})
    with pytest.raises(ConfigurationError):
        CoefficientField("constant", 2, 2, {"value": [[1.0, 2.0], [2.0, 1.0]]})
    with pytest.raises(ConfigurationError):
        CoefficientField("trig", 1, 1, {"mean": 1.0, "amplitude": 2.0})
    with pytest.raises(ConfigurationError):
        CoefficientField("nonsense", 1, 1, {})


def test_sample_g():
    f = CoefficientField("trig", 1, 1, {})
    assert np.isclose(sample_g(f, [0.0])[0, 0], 3.0)


@given(st.floats(0.1, 10.0))
def test_scaling_scales_norms(c):
    f = CoefficientField("checkerboard", 2, 2, {})
    s = f.scaled(c)
    assert np.isclose(s.g_inf_norm, c * f.g_inf_norm)
    assert np.isclose(s.g_inv_inf_norm, f.g_inv_inf_norm / c)


def test_constants_ledger_unit_square():
    pr = Problem(LatticeSpec.cubic(2), OperatorSymbol.grad(2), CoefficientField("constant", 2, 2, {}))
    c = pr.constants()
    assert np.isclose(c.C_hat, 3.0)
    assert np.isclose(c.gamma0, 1.0 + 3.0 * math.sqrt(2.0))
    assert np.isclose(c.c0, 1.0) and np.isclose(c.c1, 1.0)
    assert c.kappa == 15 / 8


def test_constants_ledger_trig_corrector_bound():
    pr = Problem(LatticeSpec.cubic(1), OperatorSymbol.grad(1), CoefficientField("trig", 1, 1, {}))
    c = ConstantsLedger.build(pr.lattice, pr.symbol, pr.field, 1.0)
    assert np.isclose(c.lambda_l2_bound, math.sqrt(3.0) / (2 * math.pi), rtol=1e-12)
    assert np.isclose(c.lambda_l2_bound, 0.27566, atol=1e-5)


def test_problem_round_trip(tmp_path):
    pr = Problem(LatticeSpec.cubic(2), OperatorSymbol.elasticity2d(),
                 CoefficientField("elasticity", 3, 2, {"lam": [1.0, 2.0], "mu": [1.0, 3.0], "pattern": "laminate"}))
    save_problem(pr, tmp_path / "p.json")
    back = load_problem(tmp_path / "p.json")
    assert back.to_dict() == pr.to_dict()


def test_problem_dimension_mismatch():
    with pytest.raises(ConfigurationError):
        Problem(LatticeSpec.cubic(2), OperatorSymbol.grad(1), CoefficientField("constant", 1, 1, {}))


def test_raster_round_trip_and_problem(tmp_path):
    rng = np.random.default_rng(3)
    a = rng.uniform(1.0, 2.0, size=(4, 6))
    data = np.zeros((4, 6, 2, 2))
    data[..., 0, 0] = a
    data[..., 1, 1] = 1.0 / a
    write_raster(tmp_path / "g.bin", data, 2)
    assert np.array_equal(read_raster(tmp_path / "g.bin"), data)
    raw = (tmp_path / "g.bin").read_bytes()
    assert np.array_equal(np.frombuffer(raw[:20], "<i4"), [2, 2, 2, 4, 6])
    (tmp_path / "p.json").write_text('{"lattice": {"dim": 2}, "symbol": {"preset": "grad", "dim": 2},'
                                     ' "coefficient": {"family": "raster", "file": "g.bin"}}')
    pr = load_problem(tmp_path / "p.json")
    assert np.isclose(pr.field.g_inf_norm, max(a.max(), 1.0 / a.min()))
    assert np.allclose(pr.field.evaluate(np.array([0.1, 0.1])), data[0, 0])


def test_raster_truncated(tmp_path):
    write_raster(tmp_path / "g.bin", np.ones((2, 2, 1, 1)), 2)
    p = tmp_path / "g.bin"
    p.write_bytes(p.read_bytes()[:-3])
    with pytest.raises(ConfigurationError):
        read_raster(p)
