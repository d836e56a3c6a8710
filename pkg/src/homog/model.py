"""Problem description: lattice, first-order symbol, periodic coefficient, constants.

Coefficient fields are defined in cell (fractional) coordinates ``y`` in
``[0, 1)^d``; the physical point is ``x = y @ basis`` with the lattice vectors
as rows of ``basis``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field as dc_field

import numpy as np
from scipy.optimize import minimize, minimize_scalar

from .errors import ConfigurationError

TWO_PI = 2.0 * np.pi


# ---------------------------------------------------------------- lattice

@dataclass(frozen=True)
class LatticeSpec:
    """Lattice generated by the rows of ``basis`` together with its dual."""

    basis: np.ndarray

    def __post_init__(self):
        a = np.atleast_2d(np.asarray(self.basis, dtype=float))
        if a.shape[0] != a.shape[1]:
            raise ConfigurationError(f"basis must be square, got shape {a.shape}")
        det = np.linalg.det(a)
        if abs(det) < 1e-12 * max(1.0, np.abs(a).max()) ** a.shape[0]:
            raise ConfigurationError("lattice basis vectors are linearly dependent")
        a.setflags(write=False)
        object.__setattr__(self, "basis", a)

    @classmethod
    def cubic(cls, d, scale=1.0):
        return cls(scale * np.eye(d))

    @property
    def dim(self):
        return self.basis.shape[0]

    @property
    def dual_basis(self):
        """Rows b_i with <b_i, a_j> = 2 pi delta_ij."""
        return TWO_PI * np.linalg.inv(self.basis).T

    @property
    def cell_volume(self):
        return abs(float(np.linalg.det(self.basis)))

    def _window(self, vectors, radius=2):
        ks = np.array(list(itertools.product(range(-radius, radius + 1), repeat=self.dim)))
        ks = ks[np.any(ks != 0, axis=1)]
        return ks @ vectors

    @property
    def r0(self):
        """Radius of the ball inscribed in the Brillouin zone."""
        return 0.5 * float(np.min(np.linalg.norm(self._window(self.dual_basis), axis=1)))

    @property
    def diameter(self):
        corners = np.array(list(itertools.product((-1, 0, 1), repeat=self.dim))) @ self.basis
        return float(np.max(np.linalg.norm(corners, axis=1)))

    @property
    def r1(self):
        return 0.5 * self.diameter

    def dual_window(self, radius=2):
        """Nonzero dual lattice points with integer coordinates up to ``radius``."""
        return self._window(self.dual_basis, radius)

    def to_fractional(self, x):
        return np.asarray(x, dtype=float) @ np.linalg.inv(self.basis)

    def to_dict(self):
        return {"basis": self.basis.tolist()}

    @classmethod
    def from_dict(cls, data):
        if "basis" in data:
            return cls(np.array(data["basis"], dtype=float))
        return cls.cubic(int(data.get("dim", 1)), float(data.get("scale", 1.0)))


# ---------------------------------------------------------------- symbol

def _symbol_at(b, theta):
    return np.tensordot(theta, b, axes=(0, 0))


def _eig_extremes(b, theta):
    s = _symbol_at(b, theta)
    ev = np.linalg.eigvalsh(s.conj().T @ s)
    return ev[0], ev[-1]


def _sphere_points(d, count):
    if d == 1:
        return np.array([[1.0], [-1.0]])
    if d == 2:
        t = np.linspace(0.0, TWO_PI, count, endpoint=False)
        return np.stack([np.cos(t), np.sin(t)], axis=1)
    # Fibonacci sphere for d = 3
    i = np.arange(count) + 0.5
    phi = np.arccos(1 - 2 * i / count)
    th = np.pi * (1 + 5 ** 0.5) * i
    return np.stack([np.cos(th) * np.sin(phi), np.sin(th) * np.sin(phi), np.cos(phi)], axis=1)


def ellipticity_bounds(b_matrices, samples=4096, rotation=0.0):
    """Extremal eigenvalues of b(theta)^* b(theta) over the unit sphere.

    Dense sampling followed by bounded scalar refinement (d = 2) or a local
    simplex search in spherical angles (d = 3). ``rotation`` offsets the
    angular grid; the result must not depend on it.

    Returns
    -------
    (alpha0, alpha1)
    """
    b = np.asarray(b_matrices)
    d, m, n = b.shape
    if m < n:
        raise ConfigurationError(f"symbol needs m >= n, got m={m}, n={n}")
    if d == 1:
        lo, hi = _eig_extremes(b, np.array([1.0]))
        a0, a1 = float(lo), float(hi)
    elif d == 2:
        pts = _sphere_points(2, samples)
        c, s = np.cos(rotation), np.sin(rotation)
        pts = pts @ np.array([[c, s], [-s, c]])
        ext = np.array([_eig_extremes(b, p) for p in pts])
        step = TWO_PI / samples
        base = np.arctan2(pts[:, 1], pts[:, 0])

        def refine(k, which, sign):
            # minimise sign * eigenvalue near the best sample
            def f(t):
                return sign * _eig_extremes(b, np.array([np.cos(t), np.sin(t)]))[which]
            t0 = base[k]
            r = minimize_scalar(f, bounds=(t0 - step, t0 + step), method="bounded",
                                options={"xatol": 1e-12})
            return sign * min(float(r.fun), f(t0))

        a0 = refine(int(np.argmin(ext[:, 0])), 0, 1.0)
        a1 = refine(int(np.argmax(ext[:, 1])), 1, -1.0)
    elif d == 3:
        pts = _sphere_points(3, samples * 4)
        ext = np.array([_eig_extremes(b, p) for p in pts])

        def ang(p):
            return np.array([np.arccos(np.clip(p[2], -1, 1)), np.arctan2(p[1], p[0])])

        def unit(a):
            return np.array([np.sin(a[0]) * np.cos(a[1]), np.sin(a[0]) * np.sin(a[1]), np.cos(a[0])])

        k0, k1 = int(np.argmin(ext[:, 0])), int(np.argmax(ext[:, 1]))
        r0 = minimize(lambda a: _eig_extremes(b, unit(a))[0], ang(pts[k0]), method="Nelder-Mead",
                      options={"xatol": 1e-11, "fatol": 1e-13})
        r1 = minimize(lambda a: -_eig_extremes(b, unit(a))[1], ang(pts[k1]), method="Nelder-Mead",
                      options={"xatol": 1e-11, "fatol": 1e-13})
        a0 = min(float(r0.fun), float(ext[k0, 0]))
        a1 = max(float(-r1.fun), float(ext[k1, 1]))
    else:
        raise ConfigurationError(f"dimension {d} not supported")
    if a0 < 1e-12:
        raise ConfigurationError(f"symbol violates the rank condition (alpha0 = {a0:.3e})")
    return float(a0), float(a1)


@dataclass(frozen=True)
class OperatorSymbol:
    """First-order symbol ``b(xi) = sum_l xi_l b_l`` with ``b_l`` of size m x n."""

    b_matrices: np.ndarray
    alpha0: float = dc_field(init=False)
    alpha1: float = dc_field(init=False)
    preset: str = "custom"

    def __post_init__(self):
        b = np.asarray(self.b_matrices)
        if b.ndim != 3:
            raise ConfigurationError("b_matrices must have shape (d, m, n)")
        if not np.iscomplexobj(b):
            b = b.astype(float)
        b.setflags(write=False)
        object.__setattr__(self, "b_matrices", b)
        a0, a1 = ellipticity_bounds(b)
        object.__setattr__(self, "alpha0", a0)
        object.__setattr__(self, "alpha1", a1)

    @property
    def dim(self):
        return self.b_matrices.shape[0]

    @property
    def m(self):
        return self.b_matrices.shape[1]

    @property
    def n(self):
        return self.b_matrices.shape[2]

    def at(self, xi):
        return _symbol_at(self.b_matrices, np.asarray(xi, dtype=float))

    @classmethod
    def grad(cls, d):
        """b(D) = D acting on scalar functions: m = d, n = 1."""
        return cls(np.eye(d)[:, :, None], preset="grad")

    @classmethod
    def elasticity2d(cls):
        """Symmetric gradient in Voigt-like form with the shear row scaled by 1/sqrt 2."""
        s = 1.0 / np.sqrt(2.0)
        b1 = np.array([[1.0, 0.0], [0.0, 0.0], [0.0, s]])
        b2 = np.array([[0.0, 0.0], [0.0, 1.0], [s, 0.0]])
        return cls(np.stack([b1, b2]), preset="elasticity2d")

    def to_dict(self):
        if self.preset == "grad":
            return {"preset": "grad", "dim": self.dim}
        if self.preset == "elasticity2d":
            return {"preset": "elasticity2d"}
        b = self.b_matrices
        if np.iscomplexobj(b):
            return {"preset": "custom", "b_real": b.real.tolist(), "b_imag": b.imag.tolist()}
        return {"preset": "custom", "b": b.tolist()}

    @classmethod
    def from_dict(cls, data, dim=None):
        preset = data.get("preset", "grad")
        if preset == "grad":
            return cls.grad(int(data.get("dim", dim or 1)))
        if preset == "elasticity2d":
            return cls.elasticity2d()
        if preset == "custom":
            if "b" in data:
                b = np.array(data["b"], dtype=float)
            else:
                b = np.array(data["b_real"], dtype=float) + 1j * np.array(data["b_imag"], dtype=float)
            return cls(b)
        raise ConfigurationError(f"unknown symbol preset {preset!r}")


# ---------------------------------------------------------------- coefficients

FAMILIES = ("constant", "laminate", "checkerboard", "trig", "raster", "elasticity")


def _as_matrix(value, m):
    a = np.asarray(value)
    if a.ndim == 0:
        return float(a) * np.eye(m)
    if a.shape != (m, m):
        raise ConfigurationError(f"phase value must be scalar or {m}x{m}, got {a.shape}")
    return a.astype(complex) if np.iscomplexobj(a) else a.astype(float)


def lame_matrix(lam, mu):
    """Coefficient of the 2D elasticity preset for Lame parameters (lam, mu)."""
    return np.array([[lam + 2 * mu, lam, 0.0], [lam, lam + 2 * mu, 0.0], [0.0, 0.0, 2 * mu]])


def _phase_index(y, family, params):
    """Integer phase label for cell coordinates ``y`` of shape (..., d)."""
    if family == "laminate" or (family == "elasticity" and params.get("pattern") == "laminate"):
        axis = int(params.get("axis", 0))
        fr = np.asarray(params.get("fractions", [0.5, 0.5]), dtype=float)
        edges = np.cumsum(fr)[:-1]
        return np.searchsorted(edges, y[..., axis], side="right")
    if family == "checkerboard" or (family == "elasticity" and params.get("pattern") == "checkerboard"):
        return (np.floor(2.0 * y).astype(int).sum(axis=-1)) % 2
    return np.zeros(y.shape[:-1], dtype=int)


@dataclass(frozen=True)
class CoefficientField:
    """Periodic Hermitian coefficient g(y) of size m x m on the unit cell.

    Families
    --------
    constant      ``value``: scalar or m x m matrix.
    laminate      ``values`` (one per phase), ``fractions``, ``axis``.
    checkerboard  ``a``, ``b``: values on the two colours of a 2 x ... x 2 board.
    trig          ``mean``, ``amplitude``, ``axis``: (mean + amplitude cos 2 pi y_axis) I.
    raster        ``data`` of shape (*dims, m, m), piecewise constant per sub-cell.
    elasticity    ``lam``, ``mu`` (lists over phases), ``pattern`` in
                  {constant, laminate, checkerboard}, plus the pattern parameters.
    """

    family: str
    m: int
    d: int
    params: dict = dc_field(default_factory=dict)
    _phases: tuple = dc_field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigurationError(f"unknown coefficient family {self.family!r}")
        fam, p, m = self.family, self.params, self.m
        if fam == "constant":
            phases = (_as_matrix(p.get("value", 1.0), m),)
        elif fam == "laminate":
            vals = p.get("values", [1.0, 4.0])
            fr = p.get("fractions", [1.0 / len(vals)] * len(vals))
            if len(fr) != len(vals) or abs(sum(fr) - 1.0) > 1e-12 or min(fr) <= 0:
                raise ConfigurationError("laminate fractions must be positive and sum to 1")
            phases = tuple(_as_matrix(v, m) for v in vals)
        elif fam == "checkerboard":
            phases = (_as_matrix(p.get("a", 1.0), m), _as_matrix(p.get("b", 4.0), m))
        elif fam == "trig":
            mean, amp = float(p.get("mean", 2.0)), float(p.get("amplitude", 1.0))
            if mean - abs(amp) <= 0:
                raise ConfigurationError("trig profile is not positive")
            phases = ()
        elif fam == "raster":
            data = np.asarray(p["data"])
            if data.shape[-2:] != (m, m) or data.ndim != self.d + 2:
                raise ConfigurationError(f"raster data must have shape (*dims, {m}, {m})")
            phases = ()
        else:
            if m != 3 or self.d != 2:
                raise ConfigurationError("elasticity family needs d = 2 and m = 3")
            lam = np.atleast_1d(np.asarray(p.get("lam", [1.0]), dtype=float))
            mu = np.atleast_1d(np.asarray(p.get("mu", [1.0]), dtype=float))
            if lam.shape != mu.shape:
                raise ConfigurationError("lam and mu need one entry per phase")
            phases = tuple(lame_matrix(a, b) for a, b in zip(lam, mu))
        object.__setattr__(self, "_phases", phases)
        for g in self._matrices():
            if np.abs(g - g.conj().T).max() > 1e-12 * max(1.0, np.abs(g).max()):
                raise ConfigurationError("coefficient is not Hermitian")
            if np.linalg.eigvalsh(g)[0] <= 0:
                raise ConfigurationError("coefficient is not positive definite")

    # exact list of the matrices the field takes (trig: its extreme values)
    def _matrices(self):
        if self.family == "trig":
            mean, amp = float(self.params.get("mean", 2.0)), float(self.params.get("amplitude", 1.0))
            return [(mean - abs(amp)) * np.eye(self.m), (mean + abs(amp)) * np.eye(self.m)]
        if self.family == "raster":
            data = np.asarray(self.params["data"])
            return list(data.reshape(-1, self.m, self.m))
        return list(self._phases)

    @property
    def hermitian(self):
        return True

    @property
    def is_constant(self):
        if self.family == "constant":
            return True
        if self.family == "trig":
            return float(self.params.get("amplitude", 1.0)) == 0.0
        mats = self._matrices()
        return all(np.array_equal(mats[0], g) for g in mats[1:])

    @property
    def g_inf_norm(self):
        """Exact sup over the cell of the spectral norm |g(y)|."""
        return float(max(np.linalg.eigvalsh(g)[-1] for g in self._matrices()))

    @property
    def g_inv_inf_norm(self):
        """Exact sup over the cell of |g(y)^{-1}|."""
        return float(max(1.0 / np.linalg.eigvalsh(g)[0] for g in self._matrices()))

    @property
    def positivity_margin(self):
        return 1.0 / self.g_inv_inf_norm

    def evaluate(self, y):
        """g at cell coordinates ``y`` of shape (..., d); reduced modulo 1 first."""
        y = np.mod(np.asarray(y, dtype=float), 1.0)
        if y.shape[-1] != self.d:
            raise ConfigurationError(f"points must have trailing dimension {self.d}")
        fam, p, m = self.family, self.params, self.m
        if fam == "trig":
            axis = int(p.get("axis", 0))
            s = float(p.get("mean", 2.0)) + float(p.get("amplitude", 1.0)) * np.cos(TWO_PI * y[..., axis])
            return s[..., None, None] * np.eye(m)
        if fam == "raster":
            data = np.asarray(p["data"])
            dims = np.array(data.shape[:self.d])
            idx = np.minimum(np.floor(y * dims).astype(int), dims - 1)
            return data[tuple(idx[..., k] for k in range(self.d))]
        phases = np.stack(self._phases)
        return phases[_phase_index(y, fam, p)]

    def table(self, points):
        """Unique coefficient matrices at ``points`` and the inverse index.

        Returns ``(mats, ids)`` with ``mats[ids] == evaluate(points)``.
        """
        vals = self.evaluate(points)
        flat = vals.reshape(-1, self.m * self.m)
        mats, ids = np.unique(flat, axis=0, return_inverse=True)
        return mats.reshape(-1, self.m, self.m), ids.reshape(vals.shape[:-2])

    def scaled(self, c):
        """The field c * g (c > 0)."""
        p = dict(self.params)
        fam = self.family
        if fam == "constant":
            p["value"] = (c * np.asarray(p.get("value", 1.0))).tolist()
        elif fam == "laminate":
            p["values"] = [(c * np.asarray(v)).tolist() for v in p.get("values", [1.0, 4.0])]
        elif fam == "checkerboard":
            p["a"] = (c * np.asarray(p.get("a", 1.0))).tolist()
            p["b"] = (c * np.asarray(p.get("b", 4.0))).tolist()
        elif fam == "trig":
            p["mean"] = c * float(p.get("mean", 2.0))
            p["amplitude"] = c * float(p.get("amplitude", 1.0))
        elif fam == "raster":
            p["data"] = c * np.asarray(p["data"])
        else:
            p["lam"] = (c * np.atleast_1d(p.get("lam", [1.0]))).tolist()
            p["mu"] = (c * np.atleast_1d(p.get("mu", [1.0]))).tolist()
        return CoefficientField(fam, self.m, self.d, p)

    def to_dict(self):
        out = {"family": self.family}
        for k, v in self.params.items():
            if k == "data":
                continue
            out[k] = v.tolist() if isinstance(v, np.ndarray) else v
        return out

    @classmethod
    def from_dict(cls, data, m, d):
        p = {k: v for k, v in data.items() if k != "family"}
        return cls(data.get("family", "constant"), m, d, p)


def sample_g(field, y):
    """Pointwise value of the coefficient at cell coordinates ``y``.

    Raises ``ConfigurationError`` when the sample is not positive definite.
    """
    g = field.evaluate(np.atleast_1d(y))
    if np.linalg.eigvalsh(g)[..., 0].min() <= 0:
        raise ConfigurationError(f"coefficient is not positive definite at {y}")
    return g


# ---------------------------------------------------------------- constants

@dataclass(frozen=True)
class ConstantsLedger:
    """Explicit constants derived from the problem data and the domain diameter."""

    c0: float
    c1: float
    C_hat: float
    gamma0: float
    M: float
    beta1: float
    beta2: float
    lambda_l2_bound: float
    dlambda_l2_bound: float
    kappa: float = 15.0 / 8.0
    empirical: dict = dc_field(default_factory=dict, compare=False)

    @classmethod
    def build(cls, lattice, symbol, field, domain_diameter=math.sqrt(2.0)):
        a0, a1 = symbol.alpha0, symbol.alpha1
        gn, gi = field.g_inf_norm, field.g_inv_inf_norm
        d, m = symbol.dim, symbol.m
        c_hat = (1.0 + domain_diameter ** 2) * gi / a0
        root = math.sqrt(m * gn * gi / a0)
        return cls(
            c0=a0 / gi,
            c1=a1 * gn,
            C_hat=c_hat,
            gamma0=1.0 + c_hat * math.sqrt(d) * a1 * gn,
            M=root / (2.0 * lattice.r0),
            beta1=16.0 * m * gi * gn / a0,
            beta2=2.0 * (1.0 + 2.0 * d * a1 / a0 + 20.0 * d * a1 * gi * gn / a0),
            lambda_l2_bound=math.sqrt(lattice.cell_volume) * root / (2.0 * lattice.r0),
            dlambda_l2_bound=math.sqrt(lattice.cell_volume) * root,
        )

    def to_dict(self):
        out = {k: getattr(self, k) for k in ("c0", "c1", "C_hat", "gamma0", "M", "beta1", "beta2",
                                             "lambda_l2_bound", "dlambda_l2_bound", "kappa")}
        if self.empirical:
            out["empirical"] = dict(self.empirical)
        return out


# ---------------------------------------------------------------- problem

@dataclass(frozen=True)
class Problem:
    """Lattice, symbol and coefficient; ``lambda_bounded`` is a user assertion."""

    lattice: LatticeSpec
    symbol: OperatorSymbol
    field: CoefficientField
    lambda_bounded: bool = False

    def __post_init__(self):
        if self.symbol.dim != self.lattice.dim or self.field.d != self.lattice.dim:
            raise ConfigurationError("lattice, symbol and coefficient dimensions differ")
        if self.field.m != self.symbol.m:
            raise ConfigurationError("coefficient size must equal the number of symbol rows")

    @property
    def dim(self):
        return self.lattice.dim

    def constants(self, domain_diameter=math.sqrt(2.0)):
        return ConstantsLedger.build(self.lattice, self.symbol, self.field, domain_diameter)

    def to_dict(self):
        return {
            "lattice": self.lattice.to_dict(),
            "symbol": self.symbol.to_dict(),
            "coefficient": self.field.to_dict(),
            "lambda_bounded": self.lambda_bounded,
        }

    @classmethod
    def from_dict(cls, data):
        lat = LatticeSpec.from_dict(data.get("lattice", {"dim": 1}))
        sym = OperatorSymbol.from_dict(data.get("symbol", {"preset": "grad"}), dim=lat.dim)
        fld = CoefficientField.from_dict(data.get("coefficient", {"family": "constant"}), sym.m, lat.dim)
        return cls(lat, sym, fld, bool(data.get("lambda_bounded", False)))
