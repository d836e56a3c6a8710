"""Dirichlet problems on a box: eps-problem, homogenized problem, correctors, flux, discrepancy.

Conventions follow :mod:`homog.cell`: with the real corrector ``X`` the
first-order term is ``eps X^eps W`` where ``W`` is ``B u0`` (bounded-corrector
path) or the Steklov average of ``B`` applied to the extension of ``u0``
(general path), and fluxes are compared as ``g^eps B u_eps`` against
``g~^eps W``.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .cell import solve_cell
from .discretize import (GridFunction, Mesh, Q1Operator, apply_symbol, cutoff, element_coefficients, extend,
                         interpolate, mass_apply, nodal_gradient, norms, qp_gradients, qp_l2, qp_values,
                         solve_spd)
from .errors import ConfigurationError, DiscretizationError, ResolutionError
from .fitting import fit_rate
from .smoothing import steklov_grid_gradient, steps_per_eps

PATHS = ("general", "bounded_lambda")


def _check_resolution(mesh, eps, min_points):
    if max(mesh.h) > eps / min_points * (1 + 1e-9):
        raise ResolutionError(f"mesh step {max(mesh.h):.3g} does not resolve eps = {eps}")


def _norm_f(F):
    return norms(F)["l2"]


def solve_eps(mesh, symbol, field, lattice, eps, F, C_hat=None, tol=1e-10, preconditioner="fast",
              min_points=16):
    """Solve b(D)^* g^eps b(D) u = F with u = 0 on the boundary.

    When ``C_hat`` is given the energy inequality ``||u||_{H1} <= C_hat ||F||``
    is asserted. Returns (u_eps, SolveInfo).
    """
    _check_resolution(mesh, eps, min_points)
    op = Q1Operator.oscillating(mesh, symbol, field, lattice, eps)
    u = _dirichlet_solve(op, F, tol, preconditioner)
    if C_hat is not None:
        _assert_energy(u[0], F, C_hat, "eps-problem")
    return GridFunction(mesh, u[0], "u_eps", eps), u[1]


def _dirichlet_solve(op, F, tol, preconditioner):
    rhs = op._mask * mass_apply(op.mesh, F.values)
    return solve_spd(op, rhs, tol=tol, preconditioner=preconditioner)


def _assert_energy(values, F, C_hat, what):
    mesh = F.mesh
    h1 = norms(GridFunction(mesh, values))["h1"]
    fl2 = _norm_f(F)
    if h1 > C_hat * fl2 * (1 + 1e-10) + 1e-14:
        raise DiscretizationError(f"{what}: energy inequality violated ({h1:.6g} > {C_hat:.6g} * {fl2:.6g})")


def second_difference_norm(u):
    """L2 norm of the centred second differences of nodal data (interior nodes)."""
    mesh = u.mesh
    v = u.values
    total = 0.0
    inner = (slice(None),) + (slice(1, -1),) * mesh.dim
    for a in range(mesh.dim):
        for b in range(mesh.dim):
            w = np.gradient(np.gradient(v, mesh.h[a], axis=a + 1), mesh.h[b], axis=b + 1)
            total += float(np.sum(np.abs(w[inner]) ** 2))
    return math.sqrt(total * mesh.cell_volume)


def solve_homogenized(mesh, symbol, g_eff, F, C_hat=None, tol=1e-10, preconditioner="fast"):
    """Constant-coefficient Dirichlet solve with the effective matrix.

    Returns (u0, info, extras) where ``extras`` holds the empirical H2 over L2
    ratio used as an estimate of the regularity constant.
    """
    op = Q1Operator.constant(mesh, symbol, g_eff)
    x, info = _dirichlet_solve(op, F, tol, preconditioner)
    if C_hat is not None:
        _assert_energy(x, F, C_hat, "homogenized problem")
    u0 = GridFunction(mesh, x, "u0")
    fl2 = _norm_f(F)
    extras = {"h2_over_f": second_difference_norm(u0) / fl2 if fl2 > 0 else 0.0}
    return u0, info, extras


def corrector_at_nodes(cell, lattice, mesh, eps):
    y = lattice.to_fractional(mesh.node_coords() / eps)
    return cell.evaluate(y)  # (n, m, *nodes)


def symbol_gradient_nodal(u0, symbol):
    """B u0 at nodes from averaged element gradients, shape (m, *nodes)."""
    return apply_symbol(symbol, nodal_gradient(u0.mesh, u0.values))


def smoothed_extension_gradient(u0, symbol, eps, margin=0.25):
    """Steklov average of B applied to the extension of u0, at the nodes of u0's mesh."""
    mesh = u0.mesh
    p = steps_per_eps(mesh, eps)
    ext, nm = extend(u0, margin)
    if any(m < p // 2 for m in nm):
        raise ConfigurationError(f"extension margin {margin} is too small for eps = {eps}")
    grads = steklov_grid_gradient(ext.mesh, ext.values, eps)  # reduced by p/2 on each side
    idx = (slice(None), slice(None)) + tuple(slice(m - p // 2, m - p // 2 + s)
                                             for m, s in zip(nm, mesh.node_shape))
    return apply_symbol(symbol, grads[idx])


def corrector_kd0(u0, cell, lattice, symbol, eps, lambda_bounded):
    """u0 + eps X^eps B u0 (no smoothing, no extension); needs the bounded-corrector assertion."""
    if not lambda_bounded:
        raise ConfigurationError("the unsmoothed corrector needs the bounded-corrector assertion")
    W = symbol_gradient_nodal(u0, symbol)
    X = corrector_at_nodes(cell, lattice, u0.mesh, eps)
    return GridFunction(u0.mesh, u0.values + eps * np.einsum("nm...,m...->n...", X, W), "v_check", eps), W


def corrector_kd(u0, cell, lattice, symbol, eps, margin=0.25):
    """u0 + eps X^eps (S_eps B ext(u0)) restricted to the domain."""
    W = smoothed_extension_gradient(u0, symbol, eps, margin)
    X = corrector_at_nodes(cell, lattice, u0.mesh, eps)
    return GridFunction(u0.mesh, u0.values + eps * np.einsum("nm...,m...->n...", X, W), "v_eps", eps), W


def _path_field(u0, cell, lattice, symbol, eps, path, lambda_bounded, margin):
    if path == "general":
        return corrector_kd(u0, cell, lattice, symbol, eps, margin)
    if path == "bounded_lambda":
        return corrector_kd0(u0, cell, lattice, symbol, eps, lambda_bounded)
    raise ConfigurationError(f"unknown path {path!r}")


def flux_compare(u_eps, u0, cell, lattice, symbol, field, eps, path, W=None, F=None):
    """L2 distance between g^eps B u_eps and g~^eps W at Gauss points.

    ``W`` defaults to the path's smoothed gradient; for the bounded path, and
    whenever the corrector vanishes identically, the target uses B u0 at the
    Gauss points directly.
    """
    mesh = u_eps.mesh
    mats, ids = element_coefficients(mesh, field, lattice, eps)
    G = mats[ids]  # (*elements, m, m)
    bu = apply_symbol(symbol, qp_gradients(mesh, u_eps.values))  # (m, nq, *el)
    p_eps = np.einsum("...ij,jq...->iq...", G, bu)
    # a vanishing corrector is bounded, so the unsmoothed target applies
    if path == "bounded_lambda" or not np.any(cell.chi):
        Wq = apply_symbol(symbol, qp_gradients(mesh, u0.values))
    else:
        if W is None:
            W = smoothed_extension_gradient(u0, symbol, eps)
        Wq = qp_values(mesh, W)
    y = lattice.to_fractional(mesh.qp_points() / eps)  # (nq, *el, d)
    gt = cell.g_tilde_at(y)  # (m, m, nq, *el)
    target = np.einsum("ij...,j...->i...", gt, Wq)
    err = qp_l2(mesh, p_eps - target)
    scale = _norm_f(F) if F is not None else 1.0
    return {"p_eps": p_eps, "target": target, "l2_err": err / scale if scale > 0 else err}


def discrepancy_diagnostics(u0, cell, lattice, symbol, field, eps, path, gamma0, W=None, F=None,
                            tol=1e-10, preconditioner="fast", lambda_bounded=True, margin=0.25):
    """phi = eps theta_eps X^eps W and the A_eps-harmonic w with w = phi on the boundary."""
    mesh = u0.mesh
    if W is None:
        _, W = _path_field(u0, cell, lattice, symbol, eps, path, lambda_bounded, margin)
    theta = cutoff(mesh, eps).values[0]
    X = corrector_at_nodes(cell, lattice, mesh, eps)
    phi = eps * theta[None] * np.einsum("nm...,m...->n...", X, W)
    op = Q1Operator.oscillating(mesh, symbol, field, lattice, eps)
    rhs = -op._mask * op.apply_raw(phi)
    z, info = solve_spd(op, rhs, tol=tol, preconditioner=preconditioner)
    w = phi + z
    phi_n = norms(GridFunction(mesh, phi))["h1"]
    w_n = norms(GridFunction(mesh, w))["h1"]
    fl2 = _norm_f(F) if F is not None else 1.0
    return {
        "phi": GridFunction(mesh, phi, "phi_eps", eps),
        "w": GridFunction(mesh, w, "w_eps", eps),
        "phi_h1": phi_n,
        "w_h1": w_n,
        "phi_h1_over_sqrt_eps": phi_n / (math.sqrt(eps) * fl2) if fl2 > 0 else 0.0,
        "gamma0_slack": gamma0 * phi_n - w_n,
        "gamma0_slack_rel": (gamma0 * phi_n - w_n) / fl2 if fl2 > 0 else 0.0,
        "gamma0_ok": w_n <= gamma0 * phi_n + 1e-8,
        "iterations": info.iterations,
    }


def flux_identity_residual(u0, cell, lattice, symbol, field, eps, W):
    """Product-rule check of the flux decomposition at Gauss points.

    Compares ``g^eps B(eps X^eps W)`` computed from the nodal interpolant
    with ``g^eps (B X)^eps W + eps g^eps sum_l b_l X^eps d_l W``; the
    difference is a pure discretization error. Also returns the size of
    ``g^eps (B u0 - W)``, the term by which the smoothed and raw gradients differ.
    """
    mesh = u0.mesh
    mats, ids = element_coefficients(mesh, field, lattice, eps)
    G = mats[ids]
    X = corrector_at_nodes(cell, lattice, mesh, eps)
    corr = eps * np.einsum("nm...,m...->n...", X, W)
    lhs = apply_symbol(symbol, qp_gradients(mesh, corr))
    y = lattice.to_fractional(mesh.qp_points() / eps)
    Xq, dXq = cell.evaluate(y, derivative=True)  # (n, m, nq, *el), (n, m, d, nq, *el)
    Wq = qp_values(mesh, W)
    dWq = qp_gradients(mesh, W)  # (m, d, nq, *el)
    bdx = np.einsum("lin,nml...->im...", symbol.b_matrices, dXq)
    term1 = np.einsum("im...,m...->i...", bdx, Wq)
    term2 = eps * np.einsum("lin,nm...,ml...->i...", symbol.b_matrices, Xq, dWq)
    res = np.einsum("...ij,jq...->iq...", G, lhs - term1 - term2)
    gap = np.einsum("...ij,jq...->iq...", G, apply_symbol(symbol, qp_gradients(mesh, u0.values)) - Wq)
    return {"residual_l2": qp_l2(mesh, res), "smoothing_gap_l2": qp_l2(mesh, gap),
            "scale_l2": qp_l2(mesh, np.einsum("...ij,jq...->iq...", G, lhs))}


# ---------------------------------------------------------------- sweeps

def unit_box(d, eps, points_per_eps, extent=1.0):
    cells = extent / eps
    if abs(cells - round(cells)) > 1e-9:
        raise ConfigurationError("the domain extent must hold a whole number of eps-cells")
    return Mesh.rectangle((extent,) * d, (int(round(cells)) * points_per_eps,) * d)


def constant_rhs(n):
    def F(x):
        return np.ones(x.shape[:-1] + (n,))
    return F


def default_rhs(n, d, extent=1.0):
    """d pi^2 prod_k sin(pi x_k / extent); component c uses frequency c + 1 along x_1.

    The homogenized solution is then smooth up to the corners of the box,
    unlike for F = 1.
    """
    def F(x):
        comps = []
        for c in range(n):
            v = d * np.pi ** 2 * np.sin((c + 1) * np.pi * x[..., 0] / extent)
            for k in range(1, d):
                v = v * np.sin(np.pi * x[..., k] / extent)
            comps.append(v)
        return np.stack(comps, axis=-1)
    return F


@dataclass
class DirichletRun:
    problem: object
    eps_list: tuple
    path: str = "general"
    points_per_eps: int = 16
    rhs: object = None
    extent: float = 1.0
    margin: float = 0.25
    tol: float = 1e-10
    reference: bool = True
    richardson: bool = True
    preconditioner: str = "fast"
    fields: dict = field(default_factory=dict)
    keep_fields: bool = False


def _coarsen(values, factor):
    return values[(slice(None),) + (slice(None, None, factor),) * (values.ndim - 1)]


def _single_eps(run, eps, cell, ledger):
    pr = run.problem
    lat, sym, fld = pr.lattice, pr.symbol, pr.field
    p = run.points_per_eps
    F_func = run.rhs or default_rhs(sym.n, lat.dim, run.extent)
    mesh = unit_box(lat.dim, eps, p, run.extent)
    F = interpolate(mesh, F_func, "rhs")
    fl2 = _norm_f(F)
    u_eps, info = solve_eps(mesh, sym, fld, lat, eps, F, ledger.C_hat, run.tol, run.preconditioner)
    u0, _, extra = solve_homogenized(mesh, sym, cell.g_eff, F, ledger.C_hat, run.tol, run.preconditioner)
    v, W = _path_field(u0, cell, lat, sym, eps, run.path, pr.lambda_bounded, run.margin)
    diff_v = norms(u_eps.with_values(u_eps.values - v.values))
    diff_0 = norms(u_eps.with_values(u_eps.values - u0.values))
    flux = flux_compare(u_eps, u0, cell, lat, sym, fld, eps, run.path, W=W, F=F)
    disc = discrepancy_diagnostics(u0, cell, lat, sym, fld, eps, run.path, ledger.gamma0, W=W, F=F,
                                   tol=run.tol, preconditioner=run.preconditioner,
                                   lambda_bounded=pr.lambda_bounded, margin=run.margin)
    row = {
        "eps": eps,
        "h1_corr_err": diff_v["h1"] / fl2,
        "l2_err": diff_0["l2"] / fl2,
        "flux_err": flux["l2_err"],
        "phi_h1_over_sqrt_eps": disc["phi_h1_over_sqrt_eps"],
        "w_h1": disc["w_h1"] / fl2,
        "gamma0_slack": disc["gamma0_slack_rel"],
        "gamma0_ok": disc["gamma0_ok"],
        "phi_h1": disc["phi_h1"] / fl2,
        "h1_plain_err": diff_0["h1"] / fl2,
        "cg_iters": info.iterations,
        "resolution": mesh.resolution[0],
        "h2_over_f": extra["h2_over_f"],
        "trace_identity_err": float(np.abs(((v.values - u0.values) - eps * np.einsum(
            "nm...,m...->n...", corrector_at_nodes(cell, lat, mesh, eps), W))[:, mesh.boundary_mask()]).max()),
    }
    if run.reference:
        mesh2 = unit_box(lat.dim, eps, 2 * p, run.extent)
        u2, _ = solve_eps(mesh2, sym, fld, lat, eps, interpolate(mesh2, F_func, "rhs"), None, run.tol,
                          run.preconditioner)
        gap = norms(u_eps.with_values(u_eps.values - _coarsen(u2.values, 2)))
        row["ref_resolution"] = mesh2.resolution[0]
        row["ref_gap_l2"] = gap["l2"] / fl2
        row["ref_gap_h1"] = gap["h1"] / fl2
        if run.richardson and p % 2 == 0 and p >= 4:
            mc = unit_box(lat.dim, eps, p // 2, run.extent)
            uc, _ = solve_eps(mc, sym, fld, lat, eps, interpolate(mc, F_func, "rhs"), None, run.tol,
                              run.preconditioner, min_points=p // 2)
            a = norms(GridFunction(mc, uc.values - _coarsen(u_eps.values, 2)))["l2"]
            b = norms(GridFunction(mc, _coarsen(u_eps.values, 2) - _coarsen(u2.values, 4)))["l2"]
            row["richardson_order"] = math.log2(a / b) if a > 0 and b > 0 else float("nan")
    if run.keep_fields:
        run.fields[eps] = {"u_eps": u_eps, "u0": u0, "v": v, "phi": disc["phi"], "w": disc["w"]}
    return row


THRESHOLDS = {"h1_corr_err": 0.4, "l2_err": 0.5, "flux_err": 0.4}
RICHARDSON_MIN = 1.8


def _vertex_singular(field):
    """True for coefficients whose interfaces meet at points (solutions lose H2 there)."""
    pattern = field.params.get("pattern") if field.family == "elasticity" else field.family
    return pattern in ("checkerboard", "raster")


def dirichlet_rate_sweep(run, jobs=1, floor=1e-8):
    """Per-eps errors, discrepancy diagnostics and slopes on the box.

    Passes when the corrected H1 slope and the flux slope are at least 0.4,
    the plain L2 slope at least 0.5, the slope of ||phi||_{H1} lies in
    [0.35, 0.65], and the gamma0 bound holds on every row. A self-convergence
    order below 1.8 rejects the run unless the coefficient has interface
    vertices, where it is only reported. Constant
    coefficients pass when all errors sit below ``floor``.
    """
    pr = run.problem
    ledger = pr.constants(domain_diameter=math.sqrt(pr.dim) * run.extent)
    cell = solve_cell(pr.lattice, pr.symbol, pr.field, max(run.points_per_eps, 8))
    eps_list = [float(e) for e in run.eps_list]
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(lambda e: _single_eps(run, e, cell, ledger), eps_list))
    else:
        rows = [_single_eps(run, e, cell, ledger) for e in eps_list]
    rows.sort(key=lambda r: -r["eps"])
    slopes, checks, warnings = {}, {}, []
    for key, thr in THRESHOLDS.items():
        vals = [r[key] for r in rows]
        if max(vals) <= floor:
            slopes[key] = None
            checks[key] = True
            continue
        if any(b > a for a, b in zip(vals, vals[1:])):
            warnings.append(f"{key} is not monotone in eps")
        fit = fit_rate([(r["eps"], r[key]) for r in rows], floor=0.0)
        slopes[key] = fit.to_dict()
        checks[key] = fit.slope is not None and fit.slope >= thr
    phis = [r["phi_h1"] for r in rows]
    if max(phis) <= floor:
        slopes["phi_h1"] = None
        checks["phi_h1"] = True
    else:
        fit = fit_rate([(r["eps"], r["phi_h1"]) for r in rows], floor=0.0)
        slopes["phi_h1"] = fit.to_dict()
        checks["phi_h1"] = fit.slope is not None and abs(fit.slope - 0.5) <= 0.15
    checks["gamma0"] = all(r["gamma0_ok"] for r in rows)
    orders = [r["richardson_order"] for r in rows if "richardson_order" in r]
    low = [o for o in orders if o < RICHARDSON_MIN]
    if low:
        if _vertex_singular(pr.field):
            warnings.append(f"Richardson order {min(low):.3g} below {RICHARDSON_MIN}; "
                            "expected near coefficient vertices, reported only")
        else:
            checks["richardson"] = False
    elif orders:
        checks["richardson"] = True
    small = rows[-1]
    if small["h1_corr_err"] > small["h1_plain_err"] and max(phis) > floor:
        warnings.append("corrected H1 error exceeds the plain H1 error at the smallest eps")
    return {"rows": rows, "slopes": slopes, "checks": checks, "pass": all(checks.values()),
            "warnings": warnings, "path": run.path, "cell_g_eff": cell.g_eff.tolist(),
            "constants": ledger.to_dict(), "points_per_eps": run.points_per_eps}
