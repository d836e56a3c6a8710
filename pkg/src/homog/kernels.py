"""Backend selection for the matrix-free Q1 operator.

The compiled extension is used when it imports and the data are real; the
numpy implementation covers complex data, wide systems, and environments
without a compiler. Setting ``HOMOG_PURE_PYTHON=1`` forces the numpy path.
"""

import itertools
import os

import numpy as np

from . import _q1_numpy

try:
    from . import _q1kernel as _compiled
except ImportError:  # no build available
    _compiled = None

HAVE_COMPILED = _compiled is not None
FORCE_PURE = os.environ.get("HOMOG_PURE_PYTHON", "") not in ("", "0")

_MAXLOC = 32
GAUSS2 = (0.5 - 0.5 / np.sqrt(3.0), 0.5 + 0.5 / np.sqrt(3.0))


def backend_name():
    return "compiled" if (HAVE_COMPILED and not FORCE_PURE) else "numpy"


def local_nodes(d):
    """Reference-element corners, first axis fastest: (0,), (1,) or 00, 10, 01, 11."""
    return [tuple(reversed(c)) for c in itertools.product((0, 1), repeat=d)]


def shape_data(point, spacing):
    """Values and physical gradients of the 2^d bilinear shape functions at ``point``.

    ``point`` is in reference coordinates [0, 1]^d.
    """
    d = len(spacing)
    nodes = local_nodes(d)
    vals = np.empty(len(nodes))
    grads = np.empty((len(nodes), d))
    for r, corner in enumerate(nodes):
        f = [p if c else 1.0 - p for p, c in zip(point, corner)]
        df = [(1.0 if c else -1.0) / h for c, h in zip(corner, spacing)]
        vals[r] = np.prod(f)
        for ax in range(d):
            grads[r, ax] = df[ax] * np.prod([f[b] for b in range(d) if b != ax])
    return vals, grads


def gauss_points(d):
    return list(itertools.product(GAUSS2, repeat=d))


def element_matrices(ctab, spacing, mass=0.0):
    """Dense element matrices for each material block of ``ctab``.

    Two-point Gauss quadrature per axis, exact for Q1 with a constant
    coefficient on the element. Returns an array of shape (K, 2^d n, 2^d n).
    """
    K, d, _, n, _ = ctab.shape
    nl = 2 ** d
    w = float(np.prod(spacing)) / 2 ** d
    dtype = np.result_type(ctab, np.float64)
    ke = np.zeros((K, nl, n, nl, n), dtype=dtype)
    eye = np.eye(n)
    for q in gauss_points(d):
        vals, grads = shape_data(q, spacing)
        ke += w * np.einsum("rl,sm,klmab->krasb", grads, grads, ctab)
        if mass:
            ke += w * mass * np.einsum("r,s,ab->rasb", vals, vals, eye)[None]
    return ke.reshape(K, nl * n, nl * n)


def apply_elements(u, ke, elem_id, backend=None):
    """Add up ``ke[elem_id]`` applied element by element to nodal data ``u``.

    ``u`` has shape (n, *nodes); a node grid with as many points as elements
    along an axis is treated as periodic.
    """
    d = elem_id.ndim
    if backend is None:
        backend = backend_name()
    real = not (np.iscomplexobj(u) or np.iscomplexobj(ke))
    if backend == "compiled" and HAVE_COMPILED and real and ke.shape[1] <= _MAXLOC:
        u = np.ascontiguousarray(u, dtype=np.float64)
        ke = np.ascontiguousarray(ke, dtype=np.float64)
        eid = np.ascontiguousarray(elem_id, dtype=np.intc)
        out = np.zeros_like(u)
        if d == 1:
            _compiled.apply_elem_1d(u, ke, eid, out)
        elif d == 2:
            _compiled.apply_elem_2d(u, ke, eid, out)
        else:
            raise ValueError(f"unsupported dimension {d}")
        return out
    out = np.zeros(u.shape, dtype=np.result_type(u, ke, np.float64))
    if d == 1:
        _q1_numpy.apply_elem_1d(u, ke, elem_id, out)
    elif d == 2:
        _q1_numpy.apply_elem_2d(u, ke, elem_id, out)
    else:
        raise ValueError(f"unsupported dimension {d}")
    return out
