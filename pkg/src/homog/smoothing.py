"""Fourier projection onto the scaled Brillouin zone and Steklov averaging.

The Steklov average uses the centred cell ``{tau @ basis : |tau_j| < 1/2}``:
``(S u)(x) = mean over z in that cell of u(x - eps z)``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
import scipy.fft as sfft
from scipy.optimize import linprog

from .discretize import GridFunction, Mesh
from .errors import ConfigurationError, DomainError, ResolutionError


@dataclass(frozen=True)
class SmoothingOp:
    kind: str
    epsilon: float
    lattice: object
    quadrature_order: int = 8

    def __post_init__(self):
        if self.kind not in ("fourier_projection", "steklov"):
            raise ConfigurationError(f"unknown smoothing kind {self.kind!r}")
        if not self.epsilon > 0:
            raise ConfigurationError("epsilon must be positive")


# ---------------------------------------------------------------- Fourier side

def torus_frequencies(mesh):
    """Angular frequencies per axis of the discrete Fourier modes of a torus mesh."""
    return [2 * np.pi * sfft.fftfreq(N, d=L / N) for N, L in zip(mesh.resolution, mesh.extents)]


def _frequency_grid(mesh):
    return np.stack(np.meshgrid(*torus_frequencies(mesh), indexing="ij"), axis=-1)


def zone_indicator(lattice, xi):
    """True where ``xi`` lies strictly inside the Brillouin zone (Voronoi test)."""
    b = lattice.dual_window(2)
    proj = np.asarray(xi) @ b.T
    return np.all(2.0 * proj < np.sum(b * b, axis=1) - 1e-12 * np.sum(b * b, axis=1), axis=-1)


def zone_halfwidths(lattice):
    """Largest |xi_j| over the Brillouin zone, per axis (linear programme)."""
    b = lattice.dual_window(2)
    rhs = 0.5 * np.sum(b * b, axis=1)
    out = []
    for j in range(lattice.dim):
        c = np.zeros(lattice.dim)
        c[j] = -1.0
        res = linprog(c, A_ub=b, b_ub=rhs, bounds=[(None, None)] * lattice.dim, method="highs")
        out.append(-res.fun)
    return np.array(out)


def _check_torus(mesh):
    if not mesh.periodic:
        raise ConfigurationError("spectral smoothing needs a torus mesh")


def fourier_project(op, u):
    """Zero every Fourier mode outside the open zone scaled by 1/eps."""
    mesh = u.mesh
    _check_torus(mesh)
    nyq = np.array([np.pi / h for h in mesh.h])
    if np.any(zone_halfwidths(op.lattice) / op.epsilon >= nyq):
        raise ResolutionError(f"cutoff for eps = {op.epsilon} is not below the grid Nyquist frequency")
    keep = zone_indicator(op.lattice, op.epsilon * _frequency_grid(mesh))
    return _apply_multiplier(u, keep.astype(float))


def steklov_multiplier(lattice, eps, xi):
    """Fourier symbol of the centred Steklov average: prod_j sinc(eps <xi, a_j> / 2)."""
    t = 0.5 * eps * (np.asarray(xi) @ lattice.basis.T)
    return np.prod(np.sinc(t / np.pi), axis=-1)


def steklov_torus(op, u):
    """Steklov average of the trigonometric interpolant of torus data."""
    _check_torus(u.mesh)
    return _apply_multiplier(u, steklov_multiplier(op.lattice, op.epsilon, _frequency_grid(u.mesh)))


def _apply_multiplier(u, mult):
    axes = tuple(range(1, u.mesh.dim + 1))
    out = sfft.ifftn(sfft.fftn(u.values, axes=axes) * mult, axes=axes)
    if not np.iscomplexobj(u.values):
        out = out.real
    return u.with_values(out)


def spectral_gradient(u):
    """Exact gradient of the trigonometric interpolant, shape (n, d, *nodes)."""
    _check_torus(u.mesh)
    axes = tuple(range(1, u.mesh.dim + 1))
    uh = sfft.fftn(u.values, axes=axes)
    xi = _frequency_grid(u.mesh)
    # drop the unpaired Nyquist mode so real data stay real
    for ax, N in enumerate(u.mesh.resolution):
        if N % 2 == 0:
            sl = [slice(None)] * u.mesh.dim
            sl[ax] = N // 2
            xi[tuple(sl) + (slice(None),)] = 0.0
    out = np.stack([sfft.ifftn(1j * xi[..., ax] * uh, axes=axes) for ax in range(u.mesh.dim)], axis=1)
    return out.real if not np.iscomplexobj(u.values) else out


def spectral_norms(u):
    """L2 norm and L2 norm of the gradient of the trigonometric interpolant."""
    axes = tuple(range(1, u.mesh.dim + 1))
    n = u.mesh.n_nodes
    uh = sfft.fftn(u.values, axes=axes) / n
    xi2 = np.sum(_frequency_grid(u.mesh) ** 2, axis=-1)
    vol = u.mesh.volume
    l2 = math.sqrt(vol * float(np.sum(np.abs(uh) ** 2)))
    dl2 = math.sqrt(vol * float(np.sum(xi2 * np.abs(uh) ** 2)))
    return l2, dl2


def random_bandlimited(mesh, kmax, rng, components=1, role="test"):
    """Real trigonometric polynomial with integer wave numbers |k_j| <= kmax per axis."""
    _check_torus(mesh)
    shape = (components,) + mesh.resolution
    coef = np.zeros(shape, dtype=complex)
    k = [np.rint(sfft.fftfreq(N, 1.0 / N)).astype(int) for N in mesh.resolution]
    kk = np.meshgrid(*k, indexing="ij")
    band = np.all([np.abs(a) <= kmax for a in kk], axis=0)
    for ax, N in enumerate(mesh.resolution):
        if 2 * kmax >= N:
            raise ResolutionError("band limit does not fit the grid")
    coef[:, band] = rng.standard_normal((components, int(band.sum()))) + 1j * rng.standard_normal(
        (components, int(band.sum())))
    vals = sfft.ifftn(coef, axes=tuple(range(1, mesh.dim + 1))).real
    vals /= max(float(np.abs(vals).max()), 1e-300)
    return GridFunction(mesh, vals, role)


# ---------------------------------------------------------------- pointwise Steklov

def fe_evaluator(u):
    """Callable evaluating the Q1 interpolant of ``u`` at points (..., d) -> (n, ...).

    On a rectangle, points outside the box raise ``DomainError``.
    """
    mesh = u.mesh
    vals = u.values
    h = np.array(mesh.h)
    org = np.array(mesh.origin)

    def ev(x):
        x = np.asarray(x, dtype=float)
        t = (x - org) / h
        if mesh.periodic:
            t = np.mod(t, np.array(mesh.resolution))
        else:
            tol = 1e-9
            bad = np.any((t < -tol) | (t > np.array(mesh.resolution) + tol), axis=-1)
            if np.any(bad):
                where = x[bad][0]
                raise DomainError(f"point {where.tolist()} lies outside the extension support")
            t = np.clip(t, 0.0, np.array(mesh.resolution))
        i0 = np.minimum(np.floor(t).astype(int), np.array(mesh.resolution) - 1)
        f = t - i0
        out = 0.0
        for corner in itertools.product((0, 1), repeat=mesh.dim):
            w = 1.0
            idx = []
            for k in range(mesh.dim):
                w = w * (f[..., k] if corner[k] else 1.0 - f[..., k])
                idx.append((i0[..., k] + corner[k]) % mesh.node_shape[k])
            out = out + w * vals[(slice(None),) + tuple(idx)]
        return out

    return ev


def steklov_apply(op, u, x_points):
    """Tensor Gauss-Legendre approximation of the centred Steklov average.

    ``u`` is a callable on points (..., d) (a ``GridFunction`` is wrapped by
    :func:`fe_evaluator`); the result has the shape of ``u(x_points)``.
    """
    if isinstance(u, GridFunction):
        u = fe_evaluator(u)
    x = np.asarray(x_points, dtype=float)
    d = op.lattice.dim
    nodes, weights = np.polynomial.legendre.leggauss(op.quadrature_order)
    nodes, weights = 0.5 * nodes, 0.5 * weights
    total = 0.0
    for combo in itertools.product(range(op.quadrature_order), repeat=d):
        tau = nodes[list(combo)]
        w = float(np.prod(weights[list(combo)]))
        z = tau @ op.lattice.basis
        total = total + w * np.asarray(u(x - op.epsilon * z))
    return total


# ---------------------------------------------------------------- exact Steklov on aligned grids

def _trapezoid_along(v, axis, p, periodic):
    # mean over p+1 consecutive nodes centred at each node (weights 1/2, 1, ..., 1, 1/2)
    half = p // 2
    if periodic:
        acc = 0.5 * (np.roll(v, half, axis=axis) + np.roll(v, -half, axis=axis))
        for s in range(-half + 1, half):
            acc = acc + np.roll(v, -s, axis=axis)
        return acc / p
    n = v.shape[axis]
    take = lambda s: np.take(v, np.arange(half + s, n - half + s), axis=axis)
    acc = 0.5 * (take(-half) + take(half))
    for s in range(-half + 1, half):
        acc = acc + take(s)
    return acc / p


def _difference_along(v, axis, p, h, periodic):
    half = p // 2
    if periodic:
        return (np.roll(v, -half, axis=axis) - np.roll(v, half, axis=axis)) / (p * h)
    n = v.shape[axis]
    hi = np.take(v, np.arange(p, n), axis=axis)
    lo = np.take(v, np.arange(0, n - p), axis=axis)
    return (hi - lo) / (p * h)


def steps_per_eps(mesh, eps):
    """Integer number of mesh steps per eps along every axis, even; else ResolutionError."""
    ps = [eps / h for h in mesh.h]
    p = int(round(ps[0]))
    if any(abs(x - p) > 1e-9 * max(1.0, p) for x in ps) or p % 2:
        raise ResolutionError(f"eps = {eps} is not an even multiple of the mesh step")
    return p


def steklov_grid(mesh, values, eps, derivative_axis=None):
    """Exact Steklov average (cubic lattice) of a Q1 function or one of its partial derivatives.

    At every node where the averaging box fits: on a torus all nodes, on a
    rectangle the nodes at least ``eps/2`` from the boundary (the output
    loses ``eps/(2h)`` nodes on each side). For a Q1 function the average of
    ``d_l u`` is a difference quotient across the box along ``l`` and a
    trapezoid mean along the other axes.
    """
    p = steps_per_eps(mesh, eps)
    v = np.asarray(values)
    for ax in range(mesh.dim):
        if derivative_axis is not None and ax == derivative_axis:
            v = _difference_along(v, ax + 1, p, mesh.h[ax], mesh.periodic)
        else:
            v = _trapezoid_along(v, ax + 1, p, mesh.periodic)
    return v


def steklov_grid_gradient(mesh, values, eps):
    """Steklov-averaged gradient, shape (n, d, *nodes or reduced nodes)."""
    return np.stack([steklov_grid(mesh, values, eps, ax) for ax in range(mesh.dim)], axis=1)


# ---------------------------------------------------------------- property suite

def _fine_product_norm(u, f, eps, q):
    """Exact L2 norm of f(x/eps) * u for a trigonometric u and the degree-q/2 interpolant of f."""
    mesh = u.mesh
    cells = [L / eps for L in mesh.extents]
    if any(abs(c - round(c)) > 1e-9 for c in cells):
        raise ConfigurationError("the torus must hold a whole number of eps-cells")
    # grid fine enough for the square of the product to be resolved
    M = []
    for N, c in zip(mesh.resolution, cells):
        need = int(round(c)) * (2 * q + 4)
        M.append(max(need, 2 * N))
    axes = tuple(range(1, mesh.dim + 1))
    uh = sfft.fftn(u.values, axes=axes)
    big = np.zeros((u.values.shape[0],) + tuple(M), dtype=complex)
    src = [slice(None)]
    for N, Mk in zip(mesh.resolution, M):
        src.append(np.r_[0:(N + 1) // 2, Mk - N // 2:Mk])
    big[np.ix_(*[np.arange(big.shape[0])] + src[1:])] = uh
    # an even-grid Nyquist coefficient lands on the negative frequency; norms are unaffected
    ufine = sfft.ifftn(big, axes=axes) * (np.prod(M) / mesh.n_nodes)
    # f through its q-point-per-cell trig interpolant
    y = np.stack(np.meshgrid(*[np.arange(q) / q for _ in range(mesh.dim)], indexing="ij"), axis=-1)
    fs = np.asarray(f(y), dtype=complex)
    fh = sfft.fftn(fs)
    fine_per_cell = [Mk // int(round(c)) for Mk, c in zip(M, cells)]
    fbig = np.zeros(tuple(fine_per_cell), dtype=complex)
    fbig[np.ix_(*[np.r_[0:(q + 1) // 2, m - q // 2:m] for m in fine_per_cell])] = fh
    ffine_cell = sfft.ifftn(fbig) * (np.prod(fine_per_cell) / q ** mesh.dim)
    ffine = np.tile(ffine_cell, [int(round(c)) for c in cells])
    prod = ffine[None] * ufine
    norm = math.sqrt(mesh.volume * float(np.mean(np.sum(np.abs(prod) ** 2, axis=0))))
    fl2 = math.sqrt(float(np.mean(np.abs(fs) ** 2)))  # ||f||_{L2(cell)} / |cell|^{1/2}
    return norm, fl2


def smoothing_property_suite(op, samples, f=None, q=16, qtol=1e-10):
    """Check the approximation and multiplier inequalities on torus samples.

    For every sample ``u``:
      ``||P u - u|| <= eps ||D u|| / r0`` (projection) or ``<= eps r1 ||D u||`` (Steklov),
      ``||f^eps P u|| <= |cell|^{-1/2} ||f||_{L2(cell)} ||u||``,
    with norms of the trigonometric interpolants evaluated exactly.
    """
    if f is None:
        def f(y):
            return np.ones(y.shape[:-1])
    eps = op.epsilon
    lat = op.lattice
    rows = []
    for u in samples:
        pu = fourier_project(op, u) if op.kind == "fourier_projection" else steklov_torus(op, u)
        l2, dl2 = spectral_norms(u)
        diff, _ = spectral_norms(u.with_values(pu.values - u.values))
        const = 1.0 / lat.r0 if op.kind == "fourier_projection" else lat.r1
        approx_rhs = eps * const * dl2
        prod, fl2 = _fine_product_norm(pu, f, eps, q)
        mult_rhs = fl2 * l2
        rows.append({
            "approx_lhs": diff, "approx_rhs": approx_rhs,
            "approx_ok": diff <= approx_rhs + qtol * max(l2, 1.0),
            "approx_ratio": diff / approx_rhs if approx_rhs > 0 else 0.0,
            "mult_lhs": prod, "mult_rhs": mult_rhs,
            "mult_ok": prod <= mult_rhs + qtol * max(mult_rhs, 1.0),
            "mult_ratio": prod / mult_rhs if mult_rhs > 0 else 0.0,
            "norm_ratio": (spectral_norms(pu)[0] / l2) if l2 > 0 else 0.0,
        })
    return {
        "kind": op.kind,
        "eps": eps,
        "rows": rows,
        "worst_approx_ratio": max((r["approx_ratio"] for r in rows), default=0.0),
        "worst_mult_ratio": max((r["mult_ratio"] for r in rows), default=0.0),
        "max_norm_ratio": max((r["norm_ratio"] for r in rows), default=0.0),
        "ok": all(r["approx_ok"] and r["mult_ok"] for r in rows),
    }
