# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled scalar-loop kernels.

Mirrors ``_core_py`` operation for operation, including tie-breaking, so the
two backends return identical results.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport fabs, sqrt, INFINITY

cnp.import_array()


def linear_sum_assignment(const double[:, ::1] cost):
    """Shortest-augmenting-path Hungarian method on a square cost matrix.

    Returns ``col`` with ``col[i]`` the column assigned to row ``i``.
    """
    cdef Py_ssize_t n = cost.shape[0]
    if cost.shape[1] != n:
        raise ValueError("cost matrix must be square")
    out = np.empty(n, dtype=np.int64)
    if n == 0:
        return out

    cdef double[::1] u = np.zeros(n + 1)
    cdef double[::1] v = np.zeros(n + 1)
    cdef double[::1] minv = np.empty(n + 1)
    cdef Py_ssize_t[::1] p = np.zeros(n + 1, dtype=np.intp)
    cdef Py_ssize_t[::1] way = np.zeros(n + 1, dtype=np.intp)
    cdef unsigned char[::1] used = np.zeros(n + 1, dtype=np.uint8)
    cdef long long[::1] res = out
    cdef Py_ssize_t i, j, i0, j0, j1
    cdef double delta, cur

    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        for j in range(n + 1):
            minv[j] = INFINITY
            used[j] = 0
        while True:
            used[j0] = 1
            i0 = p[j0]
            delta = INFINITY
            j1 = 0
            for j in range(1, n + 1):
                if not used[j]:
                    cur = cost[i0 - 1, j - 1] - u[i0] - v[j]
                    if cur < minv[j]:
                        minv[j] = cur
                        way[j] = j0
                    if minv[j] < delta:
                        delta = minv[j]
                        j1 = j
            for j in range(n + 1):
                if used[j]:
                    u[p[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while j0 != 0:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1

    for j in range(1, n + 1):
        res[p[j] - 1] = j - 1
    return out


def jacobi_eigh(const double[:, ::1] a, double tol=1e-14, int max_sweeps=100):
    """Cyclic Jacobi eigensolver for a symmetric matrix.

    Returns ``(w, vecs, sweeps)`` with eigenvalues sorted in decreasing order and
    eigenvectors as columns of ``vecs``.
    """
    cdef Py_ssize_t n = a.shape[0]
    if a.shape[1] != n:
        raise ValueError("matrix must be square")
    arr = np.array(a, dtype=np.float64, order="C")
    vecs_arr = np.eye(n)
    cdef double[:, ::1] m = arr
    cdef double[:, ::1] q = vecs_arr
    cdef Py_ssize_t i, j, k
    cdef double off, scale, theta, t, c, s, mik, mjk, qki, qkj, apq
    cdef int sweep = 0

    scale = 0.0
    for i in range(n):
        for j in range(n):
            scale += m[i, j] * m[i, j]
    scale = sqrt(scale)

    while sweep < max_sweeps:
        off = 0.0
        for i in range(n):
            for j in range(i + 1, n):
                off += 2.0 * m[i, j] * m[i, j]
        if sqrt(off) <= tol * scale or scale == 0.0:
            break
        sweep += 1
        for i in range(n - 1):
            for j in range(i + 1, n):
                apq = m[i, j]
                if apq == 0.0:
                    continue
                theta = (m[j, j] - m[i, i]) / (2.0 * apq)
                if theta >= 0:
                    t = 1.0 / (theta + sqrt(1.0 + theta * theta))
                else:
                    t = -1.0 / (-theta + sqrt(1.0 + theta * theta))
                c = 1.0 / sqrt(1.0 + t * t)
                s = t * c
                # rows then columns of the rotation m <- J^T m J
                for k in range(n):
                    mik = m[i, k]
                    mjk = m[j, k]
                    m[i, k] = c * mik - s * mjk
                    m[j, k] = s * mik + c * mjk
                for k in range(n):
                    mik = m[k, i]
                    mjk = m[k, j]
                    m[k, i] = c * mik - s * mjk
                    m[k, j] = s * mik + c * mjk
                for k in range(n):
                    qki = q[k, i]
                    qkj = q[k, j]
                    q[k, i] = c * qki - s * qkj
                    q[k, j] = s * qki + c * qkj

    w = np.array([m[i, i] for i in range(n)])
    order = np.argsort(-w, kind="stable")
    return w[order], vecs_arr[:, order], sweep
