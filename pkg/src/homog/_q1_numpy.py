"""Vectorised numpy versions of the compiled Q1 element loops.

Same signatures and semantics as the routines in ``_q1kernel``: each call adds
the element matrices applied to ``u`` into ``out``. These also accept complex
data.
"""

import numpy as np


def _wrap(u, axes):
    # append the first node layer along each periodic axis
    for ax in axes:
        u = np.concatenate([u, np.take(u, [0], axis=ax)], axis=ax)
    return u


def _fold(ext, axes):
    for ax in axes:
        last = np.take(ext, [-1], axis=ax)
        ext = np.delete(ext, -1, axis=ax)
        idx = [slice(None)] * ext.ndim
        idx[ax] = slice(0, 1)
        ext[tuple(idx)] += last
    return ext


def apply_elem_1d(u, ke, elem_id, out):
    n = u.shape[0]
    ne = elem_id.shape[0]
    periodic = u.shape[1] == ne
    ue = _wrap(u, (1,)) if periodic else u
    loc = np.concatenate([ue[:, :ne], ue[:, 1:ne + 1]], axis=0)  # (2n, ne)
    res = np.einsum("xrs,sx->rx", ke[elem_id], loc)
    acc = np.zeros(ue.shape, dtype=res.dtype)
    acc[:, :ne] += res[:n]
    acc[:, 1:ne + 1] += res[n:]
    if periodic:
        acc = _fold(acc, (1,))
    out += acc


def apply_elem_2d(u, ke, elem_id, out):
    n = u.shape[0]
    ex, ey = elem_id.shape
    periodic = u.shape[1] == ex
    ue = _wrap(u, (1, 2)) if periodic else u
    corners = [(slice(0, ex), slice(0, ey)), (slice(1, ex + 1), slice(0, ey)),
               (slice(0, ex), slice(1, ey + 1)), (slice(1, ex + 1), slice(1, ey + 1))]
    loc = np.concatenate([ue[:, a, b] for a, b in corners], axis=0)  # (4n, ex, ey)
    res = np.einsum("xyrs,sxy->rxy", ke[elem_id], loc)
    acc = np.zeros(ue.shape, dtype=res.dtype)
    for r, (a, b) in enumerate(corners):
        acc[:, a, b] += res[r * n:(r + 1) * n]
    if periodic:
        acc = _fold(acc, (1, 2))
    out += acc
