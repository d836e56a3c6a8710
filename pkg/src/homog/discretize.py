"""Uniform Q1 meshes, matrix-free operators, PCG, norms and geometric helpers.

Nodal data are stored as arrays of shape ``(n, *node_shape)``. On a torus the
node grid has as many points per axis as elements; on a rectangle it has one
more and the boundary layer of nodes carries the Dirichlet values.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field as dc_field

import numpy as np
import scipy.fft as sfft
import scipy.sparse as sp

from . import kernels
from .errors import ConfigurationError, ResolutionError, SolverError
from .kernels import GAUSS2

ROLES = ("u_eps", "u0", "u0_ext", "v_eps", "v_check", "w_eps", "phi_eps", "flux", "rhs", "test",
         "lambda", "coefficient")


# ---------------------------------------------------------------- mesh

@dataclass(frozen=True)
class Mesh:
    """Uniform tensor grid on a torus or an axis-aligned box."""

    kind: str
    extents: tuple
    resolution: tuple
    origin: tuple = None

    def __post_init__(self):
        if self.kind not in ("torus", "rectangle"):
            raise ConfigurationError(f"unknown mesh kind {self.kind!r}")
        ext = tuple(float(e) for e in self.extents)
        res = tuple(int(r) for r in self.resolution)
        if len(ext) != len(res) or min(res) < 1 or min(ext) <= 0:
            raise ConfigurationError("extents and resolution must be positive and of equal length")
        object.__setattr__(self, "extents", ext)
        object.__setattr__(self, "resolution", res)
        org = (0.0,) * len(ext) if self.origin is None else tuple(float(o) for o in self.origin)
        object.__setattr__(self, "origin", org)

    @classmethod
    def torus(cls, extents, resolution):
        return cls("torus", tuple(extents), tuple(resolution))

    @classmethod
    def rectangle(cls, extents, resolution, origin=None):
        return cls("rectangle", tuple(extents), tuple(resolution), origin)

    @property
    def dim(self):
        return len(self.extents)

    @property
    def periodic(self):
        return self.kind == "torus"

    @property
    def h(self):
        return tuple(e / r for e, r in zip(self.extents, self.resolution))

    @property
    def cell_volume(self):
        return float(np.prod(self.h))

    @property
    def volume(self):
        return float(np.prod(self.extents))

    @property
    def node_shape(self):
        return self.resolution if self.periodic else tuple(r + 1 for r in self.resolution)

    @property
    def n_nodes(self):
        return int(np.prod(self.node_shape))

    @property
    def diameter(self):
        return float(np.linalg.norm(self.extents))

    def axis_nodes(self, axis):
        return self.origin[axis] + self.h[axis] * np.arange(self.node_shape[axis])

    def node_coords(self):
        """Array of shape (*node_shape, d)."""
        axes = [self.axis_nodes(k) for k in range(self.dim)]
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)

    def element_midpoints(self):
        axes = [self.origin[k] + self.h[k] * (np.arange(self.resolution[k]) + 0.5) for k in range(self.dim)]
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)

    def qp_points(self):
        """Gauss points, shape (nq, *elements, d); the last axis of ``d`` varies fastest in q."""
        pts = []
        for q in kernels.gauss_points(self.dim):
            axes = [self.origin[k] + self.h[k] * (np.arange(self.resolution[k]) + q[k])
                    for k in range(self.dim)]
            pts.append(np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1))
        return np.stack(pts)

    @property
    def qp_weight(self):
        return self.cell_volume / 2 ** self.dim

    def boundary_mask(self):
        """Boolean array over nodes, True on the boundary (always False on a torus)."""
        mask = np.zeros(self.node_shape, dtype=bool)
        if self.periodic:
            return mask
        for ax in range(self.dim):
            idx = [slice(None)] * self.dim
            idx[ax] = 0
            mask[tuple(idx)] = True
            idx[ax] = -1
            mask[tuple(idx)] = True
        return mask

    def refined(self, factor):
        return Mesh(self.kind, self.extents, tuple(r * factor for r in self.resolution), self.origin)


@dataclass
class GridFunction:
    """Nodal coefficients of a Q1 function, tagged with its role."""

    mesh: Mesh
    values: np.ndarray
    role: str = "test"
    eps: float | None = None

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.shape == self.mesh.node_shape:
            v = v[None]
        if v.shape[1:] != self.mesh.node_shape:
            raise ConfigurationError(f"values of shape {v.shape} do not fit nodes {self.mesh.node_shape}")
        if self.role not in ROLES:
            raise ConfigurationError(f"unknown role {self.role!r}")
        self.values = v

    @property
    def components(self):
        return self.values.shape[0]

    @property
    def vector(self):
        return self.values.reshape(-1)

    def with_values(self, values, role=None):
        return GridFunction(self.mesh, values, role or self.role, self.eps)


def interpolate(mesh, func, role="test", eps=None):
    """Nodal interpolant of ``func(x)`` with x of shape (..., d); returns (..., n) or (...)."""
    vals = np.asarray(func(mesh.node_coords()))
    if vals.shape == mesh.node_shape:
        vals = vals[None]
    else:
        vals = np.moveaxis(vals, -1, 0)
    return GridFunction(mesh, vals, role, eps)


# ---------------------------------------------------------------- coefficients

def coupling_table(symbol, mats):
    """Blocks ``b_l^H G_k b_l'`` of shape (K, d, d, n, n)."""
    b = symbol.b_matrices
    ctab = np.einsum("lia,kij,mjb->klmab", b.conj(), np.asarray(mats), b)
    if not np.iscomplexobj(ctab) or np.abs(ctab.imag).max() == 0.0:
        ctab = np.real(ctab)
    return ctab


def element_coefficients(mesh, field, lattice, eps):
    """Midpoint samples of g(x / eps) per element as (unique matrices, element ids).

    When the mesh period in element counts is an integer along every axis only
    one period block is evaluated and tiled.
    """
    d = mesh.dim
    period = None
    a = lattice.basis
    if np.allclose(a, np.diag(np.diag(a))):
        p = [eps * a[k, k] / mesh.h[k] for k in range(d)]
        if all(abs(x - round(x)) < 1e-9 and round(x) >= 1 for x in p):
            period = [int(round(x)) for x in p]
    if period is not None:
        axes = [mesh.origin[k] + mesh.h[k] * (np.arange(period[k]) + 0.5)
                for k in range(d)]
        mid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
        mats, block = field.table(lattice.to_fractional(mid / eps))
        idx = np.ix_(*[np.arange(mesh.resolution[k]) % period[k] for k in range(d)])
        return mats, block[idx].astype(np.intc)
    mats, ids = field.table(lattice.to_fractional(mesh.element_midpoints() / eps))
    return mats, ids.astype(np.intc)


def constant_coefficients(mesh, matrix):
    return np.asarray(matrix)[None], np.zeros(mesh.resolution, dtype=np.intc)


# ---------------------------------------------------------------- 1D tensor pieces

def _shift(u, axis, k, periodic):
    # u[i + k] with zero padding on a rectangle
    if periodic:
        return np.roll(u, -k, axis=axis)
    out = np.zeros_like(u)
    src = [slice(None)] * u.ndim
    dst = [slice(None)] * u.ndim
    if k > 0:
        src[axis], dst[axis] = slice(k, None), slice(None, -k)
    else:
        src[axis], dst[axis] = slice(None, k), slice(-k, None)
    out[tuple(dst)] = u[tuple(src)]
    return out


def _end_mask(shape, axis):
    e = np.zeros(shape[axis])
    e[0] = e[-1] = 1.0
    view = [1] * len(shape)
    view[axis] = shape[axis]
    return e.reshape(view)


def apply_1d(u, axis, kind, h, periodic):
    """Q1 mass (``kind='M'``) or stiffness (``'K'``) along one axis of ``u``."""
    up, dn = _shift(u, axis, 1, periodic), _shift(u, axis, -1, periodic)
    if kind == "M":
        out = (h / 6.0) * (4.0 * u + up + dn)
        if not periodic:
            out -= (h / 6.0) * 2.0 * u * _end_mask(u.shape, axis)
        return out
    out = (2.0 * u - up - dn) / h
    if not periodic:
        out -= u * _end_mask(u.shape, axis) / h
    return out


def mass_apply(mesh, u):
    """Consistent Q1 mass matrix applied to nodal data of shape (n, *nodes)."""
    out = u
    for ax in range(mesh.dim):
        out = apply_1d(out, ax + 1, "M", mesh.h[ax], mesh.periodic)
    return out


def laplace_apply(mesh, u):
    """Q1 stiffness of -Laplace (no boundary conditions) per component."""
    total = 0.0
    for ax in range(mesh.dim):
        t = u
        for bx in range(mesh.dim):
            t = apply_1d(t, bx + 1, "K" if bx == ax else "M", mesh.h[bx], mesh.periodic)
        total = total + t
    return total


# ---------------------------------------------------------------- operator

class Q1Operator:
    """Matrix-free Q1 form ``int (b(D)v)^* G b(D)u + mass * v^* u``.

    With ``dirichlet=True`` on a rectangle the boundary rows and columns are
    replaced by the identity.
    """

    def __init__(self, mesh, symbol, mats, elem_id, mass=0.0, dirichlet=None, backend=None):
        self.mesh = mesh
        self.symbol = symbol
        self.n = symbol.n
        self.mass = float(mass)
        self.ctab = coupling_table(symbol, mats)
        self.elem_id = np.ascontiguousarray(elem_id, dtype=np.intc)
        if self.elem_id.shape != mesh.resolution:
            raise ConfigurationError("element id array does not match the mesh")
        self.ke = kernels.element_matrices(self.ctab, mesh.h, self.mass)
        self.dirichlet = (not mesh.periodic) if dirichlet is None else bool(dirichlet)
        self.backend = backend
        self._mask = None
        if self.dirichlet:
            self._mask = (~mesh.boundary_mask()).astype(float)[None]

    @classmethod
    def oscillating(cls, mesh, symbol, field, lattice, eps, **kw):
        mats, ids = element_coefficients(mesh, field, lattice, eps)
        return cls(mesh, symbol, mats, ids, **kw)

    @classmethod
    def constant(cls, mesh, symbol, matrix, **kw):
        mats, ids = constant_coefficients(mesh, matrix)
        return cls(mesh, symbol, mats, ids, **kw)

    @property
    def shape(self):
        return (self.n,) + self.mesh.node_shape

    @property
    def dof(self):
        return int(np.prod(self.shape))

    @property
    def singular(self):
        return self.mesh.periodic and self.mass == 0.0

    def apply_raw(self, u):
        """The form without boundary elimination."""
        return kernels.apply_elements(u.reshape(self.shape), self.ke, self.elem_id, self.backend)

    def matvec(self, u):
        u = u.reshape(self.shape)
        if self._mask is None:
            return self.apply_raw(u)
        return self._mask * self.apply_raw(self._mask * u) + (1.0 - self._mask) * u

    def diagonal(self):
        nl = 2 ** self.mesh.dim
        dk = np.diagonal(self.ke, axis1=1, axis2=2).reshape(-1, nl, self.n)[self.elem_id]
        diag = np.zeros(self.shape, dtype=dk.dtype)
        ex = self.mesh.resolution
        for r, corner in enumerate(kernels.local_nodes(self.mesh.dim)):
            idx = tuple(np.ix_(*[(np.arange(ex[k]) + corner[k]) % self.mesh.node_shape[k]
                                 for k in range(self.mesh.dim)]))
            for c in range(self.n):
                np.add.at(diag[c], idx, dk[..., r, c])
        diag = np.real(diag)
        if self._mask is not None:
            diag = self._mask * diag + (1.0 - self._mask)
        return diag

    def to_sparse(self, eliminate=True):
        """Assembled matrix (for small meshes and tests)."""
        mesh, n = self.mesh, self.n
        nl = 2 ** mesh.dim
        ex = mesh.resolution
        nodes = np.arange(mesh.n_nodes).reshape(mesh.node_shape)
        loc = []
        for corner in kernels.local_nodes(mesh.dim):
            idx = np.ix_(*[(np.arange(ex[k]) + corner[k]) % mesh.node_shape[k] for k in range(mesh.dim)])
            loc.append(nodes[idx].reshape(-1))
        loc = np.stack(loc, axis=1)  # (E, nl)
        dofs = (loc[:, :, None] + mesh.n_nodes * np.arange(n)[None, None, :]).reshape(-1, nl * n)
        vals = self.ke[self.elem_id.reshape(-1)]
        rows = np.repeat(dofs, nl * n, axis=1).reshape(-1)
        cols = np.tile(dofs, (1, nl * n)).reshape(-1)
        mat = sp.coo_matrix((vals.reshape(-1), (rows, cols)), shape=(self.dof, self.dof)).tocsr()
        mat.sum_duplicates()
        if eliminate and self._mask is not None:
            keep = np.broadcast_to(self._mask, self.shape).reshape(-1)
            dm = sp.diags(keep)
            mat = (dm @ mat @ dm + sp.diags(1.0 - keep)).tocsr()
        return mat


@dataclass
class AssembledSystem:
    stiffness: sp.csr_matrix
    mass: sp.csr_matrix
    operator: Q1Operator


def assemble(mesh, symbol, field=None, lattice=None, eps=1.0, matrix=None, mass=0.0, dirichlet=None):
    """Sparse stiffness (with the optional mass shift) and mass matrices.

    Pass either ``field`` and ``lattice`` (oscillating coefficient at scale
    ``eps``) or a constant ``matrix``.
    """
    if matrix is not None:
        op = Q1Operator.constant(mesh, symbol, matrix, mass=mass, dirichlet=dirichlet)
    else:
        op = Q1Operator.oscillating(mesh, symbol, field, lattice, eps, mass=mass, dirichlet=dirichlet)
    zero = np.zeros((1,) + (symbol.m, symbol.m))
    mop = Q1Operator(mesh, symbol, zero, np.zeros(mesh.resolution, np.intc), mass=1.0, dirichlet=False)
    return AssembledSystem(op.to_sparse(), mop.to_sparse(), op)


# ---------------------------------------------------------------- preconditioners

class JacobiPreconditioner:
    def __init__(self, op):
        self.inv = (1.0 / op.diagonal()).reshape(-1)

    def __call__(self, r):
        return self.inv * r


class FastPreconditioner:
    """Constant-coefficient Laplace-type operator inverted by sine or Fourier transforms.

    Per component ``c`` it uses ``sum_l s_lc K_l (x) M_rest + mass M`` with
    ``s_lc`` the element mean of the diagonal coupling coefficients.
    """

    def __init__(self, op):
        mesh = op.mesh
        self.mesh, self.n, self.periodic = mesh, op.n, mesh.periodic
        diag = np.real(np.einsum("kllcc->klc", op.ctab))
        counts = np.bincount(op.elem_id.reshape(-1), minlength=diag.shape[0])
        s = np.einsum("k,klc->lc", counts, diag) / counts.sum()
        lam_k, lam_m = [], []
        for ax in range(mesh.dim):
            N, h = mesh.resolution[ax], mesh.h[ax]
            th = 2 * np.pi * np.arange(N) / N if self.periodic else np.pi * np.arange(1, N) / N
            lam_k.append((2.0 / h) * (1.0 - np.cos(th)))
            lam_m.append((h / 3.0) * (2.0 + np.cos(th)))
        grids_k = np.meshgrid(*lam_k, indexing="ij")
        grids_m = np.meshgrid(*lam_m, indexing="ij")
        mprod = np.prod(grids_m, axis=0)
        eig = []
        for c in range(self.n):
            e = op.mass * mprod
            for ax in range(mesh.dim):
                e = e + s[ax, c] * grids_k[ax] * mprod / grids_m[ax]
            eig.append(e)
        eig = np.stack(eig)
        with np.errstate(divide="ignore"):
            inv = np.where(eig > 1e-14 * eig.max(), 1.0 / eig, 0.0)
        self.inv = inv
        self.axes = tuple(range(1, mesh.dim + 1))

    def __call__(self, r):
        r = r.reshape((self.n,) + self.mesh.node_shape)
        if self.periodic:
            z = sfft.ifftn(sfft.fftn(r, axes=self.axes) * self.inv, axes=self.axes)
            return z.real if not np.iscomplexobj(r) else z
        inner = tuple([slice(None)] + [slice(1, -1)] * self.mesh.dim)
        z = r.copy()
        t = sfft.dstn(r[inner], type=1, axes=self.axes, norm="ortho")
        z[inner] = sfft.idstn(t * self.inv, type=1, axes=self.axes, norm="ortho")
        return z


def make_preconditioner(op, kind):
    if kind in (None, "none"):
        return lambda r: r
    if kind == "jacobi":
        return JacobiPreconditioner(op)
    if kind == "fast":
        return FastPreconditioner(op)
    raise ConfigurationError(f"unknown preconditioner {kind!r}")


# ---------------------------------------------------------------- PCG

@dataclass
class SolveInfo:
    iterations: int
    residual: float
    converged: bool = True


def _project_means(x, n):
    x = x.reshape(n, -1)
    return (x - x.mean(axis=1, keepdims=True)).reshape(-1)


def solve_spd(op, rhs, tol=1e-10, preconditioner="jacobi", maxiter=None, x0=None):
    """Preconditioned conjugate gradients for a Hermitian positive (semi)definite operator.

    ``op`` is a ``Q1Operator`` or any object with ``matvec``, ``shape`` and
    optionally ``singular``. On a singular periodic operator the right-hand
    side and every iterate are projected onto zero-mean vectors per component.

    Returns
    -------
    (x, SolveInfo) with ``x`` shaped like ``op.shape``.

    Raises
    ------
    SolverError
        When the relative residual is above ``tol`` after ``maxiter`` steps
        (default ``20 * sqrt(dof)``).
    """
    shape = op.shape
    b = np.asarray(rhs).reshape(-1)
    dof = b.size
    singular = getattr(op, "singular", False)
    ncomp = shape[0]
    if singular:
        b = _project_means(b, ncomp)
    if maxiter is None:
        maxiter = max(10, int(20 * math.sqrt(dof)))
    bnorm = float(np.linalg.norm(b))
    dtype = np.result_type(b, getattr(op, "ctab", np.float64))
    if bnorm == 0.0:
        return np.zeros(shape, dtype=dtype), SolveInfo(0, 0.0)
    M = preconditioner if callable(preconditioner) else make_preconditioner(op, preconditioner)

    def A(v):
        return op.matvec(v.reshape(shape)).reshape(-1)

    if x0 is None:
        x = np.zeros(dof, dtype=dtype)
        r = b.astype(dtype, copy=True)
    else:
        x = np.asarray(x0, dtype=dtype).reshape(-1).copy()
        r = b - A(x)
    z = np.asarray(M(r)).reshape(-1)
    if singular:
        z = _project_means(z, ncomp)
    p = z.copy()
    rz = np.vdot(r, z)
    res = float(np.linalg.norm(r)) / bnorm
    it = 0
    while res > tol and it < maxiter:
        Ap = A(p)
        alpha = rz / np.vdot(p, Ap)
        x += alpha * p
        r -= alpha * Ap
        if singular:
            x = _project_means(x, ncomp)
            r = _project_means(r, ncomp)
        res = float(np.linalg.norm(r)) / bnorm
        it += 1
        if res <= tol:
            break
        z = np.asarray(M(r)).reshape(-1)
        if singular:
            z = _project_means(z, ncomp)
        rz_new = np.vdot(r, z)
        p = z + (rz_new / rz) * p
        rz = rz_new
    if res > tol:
        raise SolverError(f"PCG stopped after {it} iterations with relative residual {res:.3e}",
                          residual=res, iterations=it)
    if np.isrealobj(b) and np.iscomplexobj(x) and np.abs(x.imag).max() == 0:
        x = x.real
    return x.reshape(shape), SolveInfo(it, res)


# ---------------------------------------------------------------- norms

def norms(u):
    """L2, H1-seminorm and H1 norm of a grid function (consistent Q1 forms)."""
    mesh = u.mesh
    v = u.values
    l2 = math.sqrt(max(float(np.real(np.vdot(v, mass_apply(mesh, v)))), 0.0))
    semi = math.sqrt(max(float(np.real(np.vdot(v, laplace_apply(mesh, v)))), 0.0))
    return {"l2": l2, "h1_semi": semi, "h1": math.hypot(l2, semi)}


def l2_norm(u):
    return norms(u)["l2"]


def h1_norm(u):
    return norms(u)["h1"]


# ---------------------------------------------------------------- derivatives at quadrature points

def _corners(mesh, v):
    """Corner values per element, list ordered like ``kernels.local_nodes``."""
    if mesh.periodic:
        for ax in range(mesh.dim):
            v = np.concatenate([v, np.take(v, [0], axis=ax + 1)], axis=ax + 1)
    ex = mesh.resolution
    out = []
    for corner in kernels.local_nodes(mesh.dim):
        idx = (slice(None),) + tuple(slice(corner[k], corner[k] + ex[k]) for k in range(mesh.dim))
        out.append(v[idx])
    return out


def qp_values(mesh, v):
    """Values at Gauss points, shape (n, nq, *elements)."""
    cs = _corners(mesh, np.asarray(v))
    res = []
    for q in kernels.gauss_points(mesh.dim):
        vals, _ = kernels.shape_data(q, mesh.h)
        res.append(sum(w * c for w, c in zip(vals, cs)))
    return np.stack(res, axis=1)


def qp_gradients(mesh, v):
    """Partial derivatives at Gauss points, shape (n, d, nq, *elements)."""
    cs = _corners(mesh, np.asarray(v))
    res = []
    for q in kernels.gauss_points(mesh.dim):
        _, grads = kernels.shape_data(q, mesh.h)
        res.append(np.stack([sum(grads[r, ax] * c for r, c in enumerate(cs)) for ax in range(mesh.dim)],
                            axis=1))
    return np.stack(res, axis=2)


def element_gradients(mesh, v):
    """Element-mean gradient (exact midpoint value for Q1), shape (n, d, *elements)."""
    cs = _corners(mesh, np.asarray(v))
    mid = (0.5,) * mesh.dim
    _, grads = kernels.shape_data(mid, mesh.h)
    return np.stack([sum(grads[r, ax] * c for r, c in enumerate(cs)) for ax in range(mesh.dim)], axis=1)


def nodal_gradient(mesh, v):
    """Average of the adjacent element gradients at every node, shape (n, d, *nodes)."""
    eg = element_gradients(mesh, v)
    n, d = eg.shape[:2]
    acc = np.zeros((n, d) + mesh.node_shape, dtype=eg.dtype)
    cnt = np.zeros(mesh.node_shape)
    ex = mesh.resolution
    for corner in kernels.local_nodes(mesh.dim):
        idx = np.ix_(*[(np.arange(ex[k]) + corner[k]) % mesh.node_shape[k] for k in range(mesh.dim)])
        acc[(slice(None), slice(None)) + idx] += eg
        cnt[idx] += 1.0
    return acc / cnt


def apply_symbol(symbol, grads):
    """``sum_l b_l d_l u`` for gradients of shape (n, d, ...): returns (m, ...)."""
    out = np.einsum("lmn,nl...->m...", symbol.b_matrices, grads)
    return np.real(out) if not np.iscomplexobj(grads) and not np.iscomplexobj(symbol.b_matrices) else out


def qp_l2(mesh, values):
    """L2 norm of data given at Gauss points with shape (k, nq, *elements)."""
    return math.sqrt(float(np.sum(np.abs(values) ** 2)) * mesh.qp_weight)


# ---------------------------------------------------------------- periodic interpolation

def periodic_interpolate(values, y):
    """Multilinear interpolation of periodic nodal data on the unit cell.

    ``values`` has shape (k, N_1, ..., N_d) with nodes at ``i / N``; ``y``
    has shape (..., d). Returns (k, ...).
    """
    values = np.asarray(values)
    d = values.ndim - 1
    dims = np.array(values.shape[1:])
    t = np.mod(np.asarray(y, dtype=float), 1.0) * dims
    i0 = np.floor(t).astype(int)
    f = t - i0
    i0 %= dims
    out = 0.0
    for corner in itertools.product((0, 1), repeat=d):
        w = 1.0
        idx = []
        for k in range(d):
            w = w * (f[..., k] if corner[k] else 1.0 - f[..., k])
            idx.append((i0[..., k] + corner[k]) % dims[k])
        out = out + w * values[(slice(None),) + tuple(idx)]
    return out


# ---------------------------------------------------------------- extension and cut-offs

def smoothstep(t):
    """Quintic step: 1 at t <= 0, 0 at t >= 1, C2 in between."""
    t = np.clip(t, 0.0, 1.0)
    return 1.0 - t ** 3 * (10.0 - 15.0 * t + 6.0 * t * t)


def smoothstep_slope_max():
    return 15.0 / 8.0


def _reflect_axis(v, axis, nm):
    """Hestenes reflection of order 2 across both ends of ``axis`` by ``nm`` nodes."""
    N = v.shape[axis] - 1
    if 2 * nm > N:
        raise ConfigurationError(f"extension margin of {nm} nodes needs at least {2 * nm} interior steps")
    k = np.arange(1, nm + 1)
    take = lambda i: np.take(v, i, axis=axis)
    left = 3.0 * take(k) - 2.0 * take(2 * k)
    right = 3.0 * take(N - k) - 2.0 * take(N - 2 * k)
    return np.concatenate([np.flip(left, axis=axis), v, right], axis=axis)


def extension_box(mesh, margin):
    """The enlarged rectangle used by ``extend`` (same step, ``margin`` added on every side)."""
    nm = [int(round(margin / h)) for h in mesh.h]
    for k in range(mesh.dim):
        if abs(nm[k] * mesh.h[k] - margin) > 1e-9 * margin:
            raise ConfigurationError("extension margin must be a multiple of the mesh step")
    return Mesh.rectangle(tuple(e + 2 * margin for e in mesh.extents),
                          tuple(r + 2 * m for r, m in zip(mesh.resolution, nm)),
                          tuple(o - margin for o in mesh.origin)), nm


def extend(u0, margin=0.25):
    """Extend a rectangle function to a box by reflection and a fixed smooth cut-off.

    Across each face ``u(-t) = 3 u(t) - 2 u(2 t)`` in the normal coordinate;
    corners are covered by applying the reflection axis after axis. The
    result is multiplied by a product cut-off equal to 1 within ``margin/2``
    of the rectangle and 0 at distance ``margin``.
    """
    mesh = u0.mesh
    if mesh.periodic:
        raise ConfigurationError("extension is defined for rectangle meshes")
    box, nm = extension_box(mesh, margin)
    v = u0.values
    for ax in range(mesh.dim):
        v = _reflect_axis(v, ax + 1, nm[ax])
    chi = np.ones(box.node_shape)
    for ax in range(mesh.dim):
        x = box.axis_nodes(ax)
        lo, hi = mesh.origin[ax], mesh.origin[ax] + mesh.extents[ax]
        dist = np.maximum(np.maximum(lo - x, x - hi), 0.0)
        c = smoothstep((dist - 0.5 * margin) / (0.5 * margin))
        shape = [1] * mesh.dim
        shape[ax] = -1
        chi = chi * c.reshape(shape)
    return GridFunction(box, v * chi[None], "u0_ext", u0.eps), tuple(nm)


def restrict(ext, mesh, nm):
    """Nodal values of a box function on the original rectangle."""
    idx = (slice(None),) + tuple(slice(nm[k], nm[k] + mesh.node_shape[k]) for k in range(mesh.dim))
    return ext[idx]


def boundary_distance(mesh, points):
    """Distance to the boundary of the rectangle for points inside it."""
    pts = np.asarray(points)
    dist = np.full(pts.shape[:-1], np.inf)
    for ax in range(mesh.dim):
        lo, hi = mesh.origin[ax], mesh.origin[ax] + mesh.extents[ax]
        dist = np.minimum(dist, np.minimum(pts[..., ax] - lo, hi - pts[..., ax]))
    return np.maximum(dist, 0.0)


def cutoff(mesh, eps):
    """theta_eps = psi(dist(x, boundary) / eps) at the nodes of a rectangle mesh."""
    if mesh.periodic:
        raise ConfigurationError("cut-off needs a rectangle mesh")
    if eps > 0.5 * min(mesh.extents):
        raise ConfigurationError("eps must not exceed half the smallest extent")
    theta = smoothstep(boundary_distance(mesh, mesh.node_coords()) / eps)
    return GridFunction(mesh, theta, "test", eps)


def strip_integral(u, eps, side="inner", subdivisions=4):
    """Integral of |u|^2 over the eps-strip along the boundary of a rectangle.

    Only the inner strip is defined here; the two-sided strip needs ``u`` on an
    enlarged box, see :func:`strip_integral_box`. Elements cut by the strip are weighted by ``subdivisions**d`` point sampling.
    """
    mesh = u.mesh
    if eps < 4 * max(mesh.h):
        raise ResolutionError(f"eps = {eps} is below four mesh steps")
    if side != "inner":
        raise ConfigurationError("use strip_integral_box for the two-sided strip")
    return _strip_sum(u, lambda pts: boundary_distance(mesh, pts) < eps, subdivisions)


def strip_integral_box(u_box, domain, eps, subdivisions=4):
    """Two-sided strip: points within ``eps`` of the boundary of ``domain`` (inside or outside)."""
    if eps < 4 * max(u_box.mesh.h):
        raise ResolutionError(f"eps = {eps} is below four mesh steps")

    def inside(pts):
        inner = np.ones(pts.shape[:-1], dtype=bool)
        outer = 0.0
        for ax in range(domain.dim):
            lo, hi = domain.origin[ax], domain.origin[ax] + domain.extents[ax]
            x = pts[..., ax]
            inner &= (x >= lo) & (x <= hi)
            outer = outer + np.maximum(np.maximum(lo - x, x - hi), 0.0) ** 2
        return np.where(inner, boundary_distance(domain, pts) < eps, np.sqrt(outer) < eps)

    return _strip_sum(u_box, inside, subdivisions)


def _strip_sum(u, indicator, subdivisions):
    mesh = u.mesh
    cs = _corners(mesh, u.values)
    sub = (np.arange(subdivisions) + 0.5) / subdivisions
    total = 0.0
    w = mesh.cell_volume / subdivisions ** mesh.dim
    lower = np.stack(np.meshgrid(*[mesh.origin[k] + mesh.h[k] * np.arange(mesh.resolution[k])
                                   for k in range(mesh.dim)], indexing="ij"), axis=-1)
    for q in itertools.product(sub, repeat=mesh.dim):
        vals, _ = kernels.shape_data(q, mesh.h)
        uq = sum(a * c for a, c in zip(vals, cs))
        pts = lower + np.array(q) * np.array(mesh.h)
        mask = indicator(pts)
        total += float(np.sum(np.abs(uq) ** 2 * mask))
    return total * w


def load_from_flux(mesh, symbol, flux):
    """Load vector ``int (b(D) phi_r)^* f`` for flux data at Gauss points.

    ``flux`` has shape (m, nq, *elements); returns nodal data (n, *nodes).
    In terms of ``B = sum_l b_l d_l`` the load is ``int (B phi_r)^H f``.
    """
    d, n = mesh.dim, symbol.n
    bh = symbol.b_matrices.conj()
    # (n, d, nq, *elements): b_l^H f per qp
    bf = np.einsum("lmn,mq...->nlq...", bh, flux)
    w = mesh.qp_weight
    contrib = []
    for r in range(2 ** d):
        acc = 0.0
        for qi, q in enumerate(kernels.gauss_points(d)):
            _, grads = kernels.shape_data(q, mesh.h)
            acc = acc + w * np.einsum("l,nl...->n...", grads[r], bf[:, :, qi])
        contrib.append(acc)
    ex = mesh.resolution
    acc = np.zeros((n,) + tuple(e + 1 for e in ex), dtype=np.result_type(bf, np.float64))
    for r, corner in enumerate(kernels.local_nodes(d)):
        acc[(slice(None),) + tuple(slice(corner[k], corner[k] + ex[k]) for k in range(d))] += contrib[r]
    if mesh.periodic:
        for ax in range(d):
            last = np.take(acc, [-1], axis=ax + 1)
            acc = np.delete(acc, -1, axis=ax + 1)
            sl = [slice(None)] * (d + 1)
            sl[ax + 1] = slice(0, 1)
            acc[tuple(sl)] += last
    return acc
