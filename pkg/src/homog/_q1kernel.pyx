# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled gather/multiply/scatter loops for the matrix-free Q1 operator.

``ke`` holds one dense element matrix per material id, indexed
``[k, local_node * n + c, local_node' * n + c']``; local nodes are ordered
(0, 1) in 1D and (00, 10, 01, 11) in 2D. Both routines add into ``out``.
"""


cdef enum:
    MAXLOC = 32  # 4 nodes x 8 components


def apply_elem_1d(const double[:, ::1] u, const double[:, :, ::1] ke,
                  const int[::1] elem_id, double[:, ::1] out):
    cdef Py_ssize_t n = u.shape[0]
    cdef Py_ssize_t nnodes = u.shape[1]
    cdef Py_ssize_t ne = elem_id.shape[0]
    cdef Py_ssize_t i, c, r, s, k, nl
    cdef Py_ssize_t node[2]
    cdef double loc[MAXLOC]
    cdef double acc
    nl = 2 * n
    if nl > MAXLOC:
        raise ValueError("too many components for the compiled kernel")
    with nogil:
        for i in range(ne):
            node[0] = i
            node[1] = i + 1
            if node[1] == nnodes:
                node[1] = 0
            k = elem_id[i]
            for r in range(2):
                for c in range(n):
                    loc[r * n + c] = u[c, node[r]]
            for r in range(nl):
                acc = 0.0
                for s in range(nl):
                    acc = acc + ke[k, r, s] * loc[s]
                out[r % n, node[r // n]] += acc


def apply_elem_2d(const double[:, :, ::1] u, const double[:, :, ::1] ke,
                  const int[:, ::1] elem_id, double[:, :, ::1] out):
    cdef Py_ssize_t n = u.shape[0]
    cdef Py_ssize_t nx = u.shape[1]
    cdef Py_ssize_t ny = u.shape[2]
    cdef Py_ssize_t ex = elem_id.shape[0]
    cdef Py_ssize_t ey = elem_id.shape[1]
    cdef Py_ssize_t i, j, i1, j1, c, r, s, k, nl
    cdef Py_ssize_t ni[4]
    cdef Py_ssize_t nj[4]
    cdef double loc[MAXLOC]
    cdef double acc
    nl = 4 * n
    if nl > MAXLOC:
        raise ValueError("too many components for the compiled kernel")
    with nogil:
        for i in range(ex):
            i1 = i + 1
            if i1 == nx:
                i1 = 0
            for j in range(ey):
                j1 = j + 1
                if j1 == ny:
                    j1 = 0
                ni[0] = i
                nj[0] = j
                ni[1] = i1
                nj[1] = j
                ni[2] = i
                nj[2] = j1
                ni[3] = i1
                nj[3] = j1
                k = elem_id[i, j]
                for r in range(4):
                    for c in range(n):
                        loc[r * n + c] = u[c, ni[r], nj[r]]
                for r in range(nl):
                    acc = 0.0
                    for s in range(nl):
                        acc = acc + ke[k, r, s] * loc[s]
                    out[r % n, ni[r // n], nj[r // n]] += acc
