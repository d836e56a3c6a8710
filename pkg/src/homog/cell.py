"""Periodic cell problem, effective matrix and the cell-level diagnostics.

Sign convention. With ``D = -i grad`` the symbol operator is
``b(D) = -i B`` where ``B = sum_l b_l d_l``. Writing the cell solution as
``Lambda = i X`` turns the cell problem into the real problem
``B^* g (B X + 1) = 0`` with ``b(D) Lambda = B X``, and the corrector term
``eps Lambda^eps b(D) u0`` into ``eps X^eps B u0``. ``CellSolution.chi`` holds
``X``; ``CellSolution.lambda_values`` returns ``i X``.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .discretize import (Mesh, Q1Operator, apply_symbol, element_coefficients, load_from_flux,
                         mass_apply, qp_gradients, qp_values, solve_spd)
from .errors import ConfigurationError, DiscretizationError, SolverError
from .model import LatticeSpec, OperatorSymbol


def cell_symbol(lattice, symbol):
    """Symbol acting on cell coordinates tau, where x = tau @ basis."""
    ainv = np.linalg.inv(lattice.basis)
    b = np.einsum("lj,lmn->jmn", ainv, symbol.b_matrices)
    if np.allclose(b, symbol.b_matrices, rtol=0, atol=1e-15):
        return symbol
    return OperatorSymbol(b)


@dataclass(frozen=True)
class CellSolution:
    """Discrete periodic solution of the cell problem on an N^d grid of the unit cell."""

    chi: np.ndarray          # (m, n, *N^d) real corrector X, column j first
    g_eff: np.ndarray        # (m, m)
    g_tilde: np.ndarray      # (m, m, nq, *N^d) at Gauss points
    coef_mats: np.ndarray    # (K, m, m) element samples
    coef_ids: np.ndarray     # (*N^d) element material ids
    resolution: int
    lattice: object
    symbol: OperatorSymbol
    lambda_l2: float
    dlambda_l2: float
    lambda_max_est: float
    iterations: tuple
    g_eff_raw: np.ndarray = None

    @property
    def dim(self):
        return self.lattice.dim

    @property
    def mesh(self):
        return Mesh.torus((1.0,) * self.dim, (self.resolution,) * self.dim)

    @property
    def lambda_values(self):
        """Lambda = i X as an array (m, n, *N^d)."""
        return 1j * self.chi

    def mean_chi(self):
        return self.chi.reshape(self.chi.shape[0], self.chi.shape[1], -1).mean(axis=2)

    def lambda_raster(self):
        """X arranged as (*N^d, n, m) for raster output."""
        return np.moveaxis(self.chi, (0, 1), (-1, -2))

    def evaluate(self, y, derivative=False):
        """X at cell coordinates ``y`` (..., d) by exact Q1 evaluation.

        Returns X of shape (n, m, ...) and, when ``derivative`` is set, the
        physical gradient of shape (n, m, d, ...).
        """
        d, N = self.dim, self.resolution
        y = np.mod(np.asarray(y, dtype=float), 1.0)
        t = y * N
        i0 = np.minimum(np.floor(t).astype(int), N - 1)
        f = t - i0
        chi = np.moveaxis(self.chi, 0, 1)  # (n, m, *nodes)
        val = 0.0
        grad = [0.0] * d
        for corner in np.ndindex(*(2,) * d):
            w = 1.0
            dw = [1.0] * d
            idx = []
            for k in range(d):
                fk = f[..., k] if corner[k] else 1.0 - f[..., k]
                w = w * fk
                for a in range(d):
                    dw[a] = dw[a] * ((1.0 if corner[k] else -1.0) * N if a == k else fk)
                idx.append((i0[..., k] + corner[k]) % N)
            c = chi[(slice(None), slice(None)) + tuple(idx)]
            val = val + w * c
            if derivative:
                for a in range(d):
                    grad[a] = grad[a] + dw[a] * c
        if not derivative:
            return val
        g_tau = np.stack(grad, axis=2)
        ainv = np.linalg.inv(self.lattice.basis)
        return val, np.einsum("la,nma...->nml...", ainv, g_tau)

    def element_index(self, y):
        y = np.mod(np.asarray(y, dtype=float), 1.0)
        return tuple(np.minimum(np.floor(y[..., k] * self.resolution).astype(int), self.resolution - 1)
                     for k in range(self.dim))

    def g_tilde_at(self, y):
        """g (B X + 1) at cell points ``y`` using the element coefficient samples; (m, m, ...)."""
        _, grad = self.evaluate(y, derivative=True)
        bx = np.einsum("lin,nml...->im...", self.symbol.b_matrices, grad)
        if not np.iscomplexobj(self.symbol.b_matrices):
            bx = np.real(bx)
        m = self.g_eff.shape[0]
        bx = bx + np.eye(m).reshape((m, m) + (1,) * (bx.ndim - 2))
        G = self.coef_mats[self.coef_ids[self.element_index(y)]]  # (..., m, m)
        return np.einsum("...ij,jk...->ik...", G, bx)


def _solve_column(op, mesh, csym, G, j, tol, preconditioner):
    m = G.shape[-1]
    nq = 2 ** mesh.dim
    e = np.zeros(m)
    e[j] = 1.0
    f = np.einsum("...ij,j->i...", G, e)  # (m, *elements)
    flux = np.broadcast_to(f[:, None], (m, nq) + f.shape[1:])
    rhs = -load_from_flux(mesh, csym, flux)
    x, info = solve_spd(op, rhs, tol=tol, preconditioner=preconditioner)
    x = x - x.reshape(x.shape[0], -1).mean(axis=1).reshape((-1,) + (1,) * mesh.dim)
    return x, info.iterations


def solve_cell(lattice, symbol, field, resolution, tol=1e-11, preconditioner="fast", jobs=1):
    """Solve the periodic cell problem for every column of the identity.

    Parameters
    ----------
    resolution : int
        Elements per axis of the unit cell (at least 8).
    jobs : int
        Worker threads for the independent right-hand sides; results do not
        depend on it.
    """
    N = int(resolution)
    if N < 8:
        raise ConfigurationError("cell resolution must be at least 8")
    d, m = lattice.dim, symbol.m
    mesh = Mesh.torus((1.0,) * d, (N,) * d)
    csym = cell_symbol(lattice, symbol)
    mats, ids = element_coefficients(mesh, field, LatticeSpec.cubic(d), 1.0)
    op = Q1Operator(mesh, csym, mats, ids)
    Gel = mats[ids]  # (*elements, m, m)
    G = np.moveaxis(Gel, (-2, -1), (0, 1))  # (m, m, *elements)

    def work(j):
        try:
            return _solve_column(op, mesh, csym, Gel, j, tol, preconditioner)
        except SolverError as exc:
            raise SolverError(f"cell column {j}: {exc}", exc.residual, exc.iterations) from exc

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(work, range(m)))
    else:
        results = [work(j) for j in range(m)]
    chi = np.stack([r[0] for r in results])  # (m, n, *nodes)
    iters = tuple(r[1] for r in results)

    # B X_j at Gauss points -> (m_row, m_col, nq, *elements)
    bx = np.stack([apply_symbol(csym, qp_gradients(mesh, chi[j])) for j in range(m)], axis=1)
    ident = np.eye(m).reshape((m, m) + (1,) * (bx.ndim - 2))
    g_tilde = np.einsum("ij...,jk...->ik...", G[:, :, None], bx + ident)
    g_raw = g_tilde.reshape(m, m, -1).mean(axis=2)
    g_eff = effective_matrix_from_raw(g_raw, field.g_inf_norm)

    # norms of X on the physical cell
    vol = lattice.cell_volume
    l2sq = sum(float(np.real(np.vdot(chi[j], mass_apply(mesh, chi[j])))) for j in range(m))
    grads = np.stack([qp_gradients(mesh, chi[j]) for j in range(m)], axis=1)  # (n, m, d, nq, ...)
    ainv = np.linalg.inv(lattice.basis)
    gphys = np.einsum("la,nma...->nml...", ainv, grads)
    dl2sq = float(np.sum(np.abs(gphys) ** 2)) * mesh.qp_weight
    vals = np.stack([qp_values(mesh, chi[j]) for j in range(m)], axis=1)  # (n, m, nq, ...)
    mats_qp = np.moveaxis(vals.reshape(vals.shape[0], m, -1), -1, 0)
    lam_max = float(np.max(np.linalg.norm(mats_qp, ord=2, axis=(1, 2)))) if mats_qp.size else 0.0
    return CellSolution(
        chi=chi, g_eff=g_eff, g_tilde=g_tilde, coef_mats=mats, coef_ids=ids, resolution=N,
        lattice=lattice, symbol=csym, lambda_l2=math.sqrt(vol * l2sq), dlambda_l2=math.sqrt(vol * dl2sq),
        lambda_max_est=lam_max, iterations=iters, g_eff_raw=g_raw,
    )


def effective_matrix_from_raw(g_raw, scale=1.0, skew_tol=1e-10):
    skew = float(np.abs(g_raw - g_raw.conj().T).max())
    if skew > skew_tol * max(1.0, scale):
        raise DiscretizationError(f"effective matrix has a skew part of size {skew:.3e}")
    g = 0.5 * (g_raw + g_raw.conj().T)
    return np.real(g) if np.abs(np.imag(g)).max() == 0 else g


def effective_matrix(sol, field=None):
    """g0 = mean of g (b(D) Lambda + 1) over the cell, Hermitised after a skew check."""
    scale = field.g_inf_norm if field is not None else float(np.abs(sol.g_eff).max())
    return effective_matrix_from_raw(sol.g_tilde.reshape(sol.g_eff.shape + (-1,)).mean(axis=2), scale)


def cell_means(sol):
    """Arithmetic and harmonic means of the sampled coefficient."""
    counts = np.bincount(sol.coef_ids.reshape(-1), minlength=len(sol.coef_mats)).astype(float)
    w = counts / counts.sum()
    gbar = np.einsum("k,kij->ij", w, sol.coef_mats)
    ginv = np.einsum("k,kij->ij", w, np.linalg.inv(sol.coef_mats))
    return gbar, np.linalg.inv(ginv)


def _lmin(a):
    return float(np.linalg.eigvalsh(0.5 * (a + a.conj().T))[0])


def voigt_reuss_check(sol, field, tol=None):
    """Loewner margins of the effective matrix between the harmonic and arithmetic means."""
    gbar, gunder = cell_means(sol)
    g0 = sol.g_eff
    if tol is None:
        tol = 1e-8 * field.g_inf_norm
    m, n = sol.symbol.m, sol.symbol.n
    norm_g0 = float(np.linalg.norm(g0, 2))
    norm_g0inv = float(np.linalg.norm(np.linalg.inv(g0), 2))
    return {
        "gbar": gbar,
        "gunder": gunder,
        "loewner_margins": {"lower": _lmin(g0 - gunder), "upper": _lmin(gbar - g0)},
        "case_flags": {
            "g0_equals_gbar": bool(sol.lambda_l2 <= 1e-10 or np.abs(g0 - gbar).max() <= tol),
            "g0_equals_gunder": bool(m == n or np.abs(g0 - gunder).max() <= tol),
        },
        "g0_minus_gunder": float(np.abs(g0 - gunder).max()),
        "norm_bounds": {
            "g0": norm_g0, "g_inf": field.g_inf_norm, "slack": field.g_inf_norm - norm_g0,
            "g0_inv": norm_g0inv, "g_inv_inf": field.g_inv_inf_norm,
            "inv_slack": field.g_inv_inf_norm - norm_g0inv,
        },
        "lambda_min_g0": _lmin(g0),
        "tol": tol,
    }


# ---------------------------------------------------------------- diagnostics

@dataclass(frozen=True)
class TestFunction:
    """Smooth scalar test function given by its value and gradient callables."""

    value: object
    grad: object
    support: tuple  # (lower corner, upper corner) of a box containing the support
    name: str = "u"


def bump(center, radius, name="bump"):
    """C-infinity bump exp(-1 / (1 - r^2)) of the given radius."""
    c = np.asarray(center, dtype=float)

    def value(x):
        r2 = np.sum((x - c) ** 2, axis=-1) / radius ** 2
        inside = r2 < 1.0
        out = np.zeros(r2.shape)
        out[inside] = np.exp(-1.0 / (1.0 - r2[inside]))
        return out

    def grad(x):
        r2 = np.sum((x - c) ** 2, axis=-1) / radius ** 2
        inside = r2 < 1.0
        s = np.zeros(r2.shape)
        s[inside] = np.exp(-1.0 / (1.0 - r2[inside])) * (-1.0 / (1.0 - r2[inside]) ** 2) * 2 / radius ** 2
        return s[..., None] * (x - c)

    return TestFunction(value, grad, (c - radius, c + radius), name)


def _inequality_terms(sol, u, eps, refine):
    d = sol.dim
    N = sol.resolution
    lo, hi = np.asarray(u.support[0], float), np.asarray(u.support[1], float)
    # mesh aligned with the scaled cell grid so each element lies in one cell element
    h = eps / (N * refine)
    lo = np.floor(lo / h) * h
    cells = np.ceil((hi - lo) / h).astype(int)
    mesh = Mesh.rectangle(tuple(cells * h), tuple(cells), tuple(lo))
    x = mesh.qp_points()  # (nq, *el, d)
    y = sol.lattice.to_fractional(x / eps)
    val, grad = sol.evaluate(y, derivative=True)
    uv = u.value(x)
    ug = u.grad(x)
    w = mesh.qp_weight
    lhs = float(np.sum(np.sum(np.abs(grad) ** 2, axis=(0, 1, 2)) * uv ** 2)) * w
    u2 = float(np.sum(uv ** 2)) * w
    lam_du = float(np.sum(np.sum(np.abs(val) ** 2, axis=(0, 1)) * np.sum(ug ** 2, axis=-1))) * w
    return lhs, u2, lam_du


def lambda_diagnostics(sol, ledger, test_functions=(), eps_grid=(1 / 4, 1 / 8), refine=1):
    """Check the L2 bounds on Lambda and D Lambda and the scaled weighted inequality.

    For each test function and scale: ``int |(D Lambda)^eps|^2 |u|^2`` against
    ``beta1 ||u||^2 + beta2 eps^2 int |Lambda^eps|^2 |D u|^2``. A violation
    triggers one retry on a twice finer quadrature mesh before it is reported.
    Matrix norms are Frobenius (sum over the columns of Lambda).
    """
    report = {
        "lambda_l2": sol.lambda_l2,
        "lambda_l2_bound": ledger.lambda_l2_bound,
        "lambda_l2_ok": sol.lambda_l2 <= ledger.lambda_l2_bound,
        "dlambda_l2": sol.dlambda_l2,
        "dlambda_l2_bound": ledger.dlambda_l2_bound,
        "dlambda_l2_ok": sol.dlambda_l2 <= ledger.dlambda_l2_bound,
        "weighted": [],
    }
    for u in test_functions:
        for eps in eps_grid:
            attempts = 0
            while True:
                lhs, u2, lam_du = _inequality_terms(sol, u, eps, refine * 2 ** attempts)
                rhs = ledger.beta1 * u2 + ledger.beta2 * eps ** 2 * lam_du
                ok = lhs <= rhs * (1 + 1e-12) + 1e-14
                if ok or attempts == 1:
                    break
                attempts += 1
            report["weighted"].append({
                "test": u.name, "eps": eps, "lhs": lhs, "rhs": rhs,
                "slack_ratio": lhs / rhs if rhs > 0 else 0.0, "ok": bool(ok), "retried": attempts > 0,
            })
    report["violations"] = sum(not r["ok"] for r in report["weighted"])
    report["ok"] = bool(report["lambda_l2_ok"] and report["dlambda_l2_ok"] and report["violations"] == 0)
    return report
