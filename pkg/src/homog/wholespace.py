"""Resolvent problems on a periodic torus standing in for the whole space.

The torus holds ``L`` lattice periods per axis and is meshed with ``p`` Q1
elements per eps-cell. The cell problem is solved with the same ``p``
elements per cell, so the corrector and the effective matrix are those of the
discrete problem being compared against.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.fft as sfft

from .cell import solve_cell
from .discretize import (GridFunction, Mesh, Q1Operator, interpolate, mass_apply, nodal_gradient, norms,
                         solve_spd)
from .errors import ConfigurationError, ResolutionError
from .fitting import fit_rate
from .smoothing import (SmoothingOp, _frequency_grid, fourier_project, spectral_gradient,
                        steklov_grid_gradient)

VARIANTS = ("fourier", "steklov", "no_smoothing")


def _check_resolution(mesh, eps, min_points):
    if max(mesh.h) > eps / min_points * (1 + 1e-9):
        raise ResolutionError(f"mesh step {max(mesh.h):.3g} does not resolve eps = {eps} "
                              f"with {min_points} points per period")


def torus_mesh(lattice, L, eps, points_per_eps):
    a = lattice.basis
    if not np.allclose(a, np.diag(np.diag(a))):
        raise ConfigurationError("the torus surrogate needs an axis-aligned lattice basis")
    cells = L / eps
    if abs(cells - round(cells)) > 1e-9:
        raise ConfigurationError("L / eps must be an integer")
    ext = tuple(L * a[k, k] for k in range(lattice.dim))
    return Mesh.torus(ext, (int(round(cells)) * points_per_eps,) * lattice.dim)


def default_rhs(L, n, d):
    """sin(2 pi x1 / L) (times cos(2 pi x2 / L) in 2D); components are phase shifted."""
    def F(x):
        comps = []
        for c in range(n):
            v = np.sin(2 * np.pi * (x[..., 0] + 0.25 * c) / L)
            for k in range(1, d):
                v = v * np.cos(2 * np.pi * x[..., k] / L)
            comps.append(v)
        return np.stack(comps, axis=-1)
    return F


def resolvent_solve(mesh, symbol, field, lattice, eps, F, tol=1e-10, preconditioner="fast", min_points=16):
    """Solve (A_eps + 1) u = F on the torus; returns (u_eps, SolveInfo)."""
    _check_resolution(mesh, eps, min_points)
    op = Q1Operator.oscillating(mesh, symbol, field, lattice, eps, mass=1.0)
    x, info = solve_spd(op, mass_apply(mesh, F.values), tol=tol, preconditioner=preconditioner)
    return GridFunction(mesh, x, "u_eps", eps), info


def homogenized_solve(mesh, symbol, g_eff, F, tol=1e-10, preconditioner="fast"):
    """Solve (A0 + 1) u0 = F with the constant effective matrix."""
    op = Q1Operator.constant(mesh, symbol, g_eff, mass=1.0)
    x, info = solve_spd(op, mass_apply(mesh, F.values), tol=tol, preconditioner=preconditioner)
    return GridFunction(mesh, x, "u0"), info


def corrector_field(cell, lattice, mesh, eps):
    """X(x / eps) at the mesh nodes, shape (n, m, *nodes)."""
    y = lattice.to_fractional(mesh.node_coords() / eps)
    return cell.evaluate(y)


def smoothed_symbol_gradient(u0, symbol, lattice, eps, variant):
    """Sigma_eps B u0 at the nodes, shape (m, *nodes)."""
    mesh = u0.mesh
    if variant == "fourier":
        grads = spectral_gradient(u0)
        bu = np.einsum("lmn,nl...->m...", symbol.b_matrices, grads)
        bu = fourier_project(SmoothingOp("fourier_projection", eps, lattice), GridFunction(mesh, bu)).values
    elif variant == "steklov":
        grads = steklov_grid_gradient(mesh, u0.values, eps)
        bu = np.einsum("lmn,nl...->m...", symbol.b_matrices, grads)
    elif variant == "no_smoothing":
        bu = np.einsum("lmn,nl...->m...", symbol.b_matrices, nodal_gradient(mesh, u0.values))
    else:
        raise ConfigurationError(f"unknown corrector variant {variant!r}")
    return np.real(bu) if not np.iscomplexobj(symbol.b_matrices) else bu


def corrected_approximation(u0, cell, lattice, symbol, eps, variant, lambda_bounded=False):
    """u0 + eps X^eps Sigma_eps B u0 on the torus (Sigma = projection, Steklov or identity)."""
    if variant == "no_smoothing" and not lambda_bounded:
        raise ConfigurationError("the unsmoothed corrector needs the bounded-corrector assertion")
    w = smoothed_symbol_gradient(u0, symbol, lattice, eps, variant)
    X = corrector_field(cell, lattice, u0.mesh, eps)
    v = u0.values + eps * np.einsum("nm...,m...->n...", X, w)
    return GridFunction(u0.mesh, v, "v_check" if variant == "no_smoothing" else "v_eps", eps)


def homogenized_h2_check(mesh, symbol, g_eff, F, c0):
    """Spectral H2 norm of (A0 + 1)^{-1} F for the trigonometric interpolant of F."""
    axes = tuple(range(1, mesh.dim + 1))
    Fh = sfft.fftn(F.values, axes=axes) / mesh.n_nodes
    xi = _frequency_grid(mesh)
    bxi = np.einsum("...l,lmn->...mn", xi, symbol.b_matrices)
    sym = np.einsum("...mi,mk,...kj->...ij", bxi.conj(), g_eff, bxi) + np.eye(symbol.n)
    uh = np.linalg.solve(sym, np.moveaxis(Fh, 0, -1)[..., None])[..., 0]
    w = (1.0 + np.sum(xi ** 2, axis=-1)) ** 2
    h2 = math.sqrt(mesh.volume * float(np.sum(w[..., None] * np.abs(uh) ** 2)))
    fl2 = math.sqrt(mesh.volume * float(np.sum(np.abs(Fh) ** 2)))
    bound = (1.0 + 1.0 / c0) * fl2
    return {"h2": h2, "bound": bound, "ok": h2 <= bound * (1 + 1e-12)}


# ---------------------------------------------------------------- sweeps

@dataclass
class ResolventRun:
    problem: object
    eps_list: tuple
    variants: tuple = ("steklov",)
    L: int = 4
    points_per_eps: int = 16
    rhs: object = None
    tol: float = 1e-10
    reference: bool = True
    richardson: bool = True
    preconditioner: str = "fast"
    results: dict = field(default_factory=dict)


def _coarsen(values, factor):
    idx = (slice(None),) + (slice(None, None, factor),) * (values.ndim - 1)
    return values[idx]


def _single_eps(run, eps, cells):
    pr = run.problem
    lat, sym, fld = pr.lattice, pr.symbol, pr.field
    p = run.points_per_eps
    F_func = run.rhs or default_rhs(run.L, sym.n, lat.dim)
    cell = cells[p]
    mesh = torus_mesh(lat, run.L, eps, p)
    F = interpolate(mesh, F_func, "rhs")
    fnorm = norms(F)["l2"]
    u_eps, info = resolvent_solve(mesh, sym, fld, lat, eps, F, run.tol, run.preconditioner)
    u0, _ = homogenized_solve(mesh, sym, cell.g_eff, F, run.tol, run.preconditioner)
    row = {
        "eps": eps,
        "l2_err": norms(u_eps.with_values(u_eps.values - u0.values))["l2"] / fnorm,
        "h1_plain_err": norms(u_eps.with_values(u_eps.values - u0.values))["h1"] / fnorm,
        "cg_iters": info.iterations,
        "ref_resolution": mesh.resolution[0],
    }
    vs = {}
    for variant in run.variants:
        v = corrected_approximation(u0, cell, lat, sym, eps, variant, pr.lambda_bounded)
        vs[variant] = v
        row[f"h1_corr_err_{variant}"] = norms(u_eps.with_values(u_eps.values - v.values))["h1"] / fnorm
    if "fourier" in vs and "steklov" in vs:
        row["variant_gap_h1"] = norms(vs["fourier"].with_values(vs["fourier"].values - vs["steklov"].values))["h1"] / fnorm
    if run.reference:
        mesh2 = torus_mesh(lat, run.L, eps, 2 * p)
        u2, _ = resolvent_solve(mesh2, sym, fld, lat, eps, interpolate(mesh2, F_func, "rhs"), run.tol,
                                run.preconditioner)
        gap = norms(u_eps.with_values(u_eps.values - _coarsen(u2.values, 2)))
        row["ref_resolution"] = mesh2.resolution[0]
        row["ref_gap_l2"] = gap["l2"] / fnorm
        row["ref_gap_h1"] = gap["h1"] / fnorm
        if run.richardson and p % 2 == 0 and p >= 4:
            mesh_c = torus_mesh(lat, run.L, eps, p // 2)
            uc, _ = resolvent_solve(mesh_c, sym, fld, lat, eps, interpolate(mesh_c, F_func, "rhs"), run.tol,
                                    run.preconditioner, min_points=p // 2)
            gc = GridFunction(mesh_c, uc.values - _coarsen(u_eps.values, 2))
            gf = GridFunction(mesh_c, _coarsen(u_eps.values, 2) - _coarsen(u2.values, 4))
            a, b = norms(gc)["l2"], norms(gf)["l2"]
            row["richardson_order"] = math.log2(a / b) if a > 0 and b > 0 else float("nan")
    return row


def rate_sweep(run, jobs=1, floor=1e-8):
    """Per-eps errors and fitted slopes for the torus surrogate.

    Errors are relative to ``||F||_{L2}``: ``l2_err = ||u_eps - u0||``,
    ``h1_corr_err_<variant> = ||u_eps - v_eps||_{H1}``. A configuration passes
    when every fitted slope is at least 0.9, or when all errors sit below
    ``floor`` (constant coefficients).
    """
    eps_list = [float(e) for e in run.eps_list]
    pr = run.problem
    cells = {run.points_per_eps: solve_cell(pr.lattice, pr.symbol, pr.field, max(run.points_per_eps, 8))}
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(lambda e: _single_eps(run, e, cells), eps_list))
    else:
        rows = [_single_eps(run, e, cells) for e in eps_list]
    rows.sort(key=lambda r: -r["eps"])
    warnings = []
    slopes = {}
    keys = ["l2_err"] + [f"h1_corr_err_{v}" for v in run.variants]
    passed = True
    for key in keys:
        vals = [r[key] for r in rows]
        if max(vals) <= floor:
            slopes[key] = None
            continue
        if any(b > a for a, b in zip(vals, vals[1:])):
            warnings.append(f"{key} is not monotone in eps")
        fit = fit_rate([(r["eps"], r[key]) for r in rows], floor=0.0)
        slopes[key] = fit.to_dict()
        if fit.slope is None or fit.slope < 0.9:
            passed = False
    return {"rows": rows, "slopes": slopes, "pass": passed, "warnings": warnings,
            "cell_g_eff": cells[run.points_per_eps].g_eff.tolist(), "L": run.L,
            "points_per_eps": run.points_per_eps}
