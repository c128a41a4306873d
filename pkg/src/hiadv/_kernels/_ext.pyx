# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels. Results match ``_fallback`` bit for bit: the loops apply
the same float64 operations in the same order, and the build disables
floating-point contraction."""
from libc.math cimport sqrt


def adam_update(double[::1] p, const double[::1] g, double[::1] m, double[::1] v,
                double step_size, double beta1, double beta2, double bc2, double eps):
    cdef Py_ssize_t i, n = p.shape[0]
    cdef double c1 = 1.0 - beta1, c2 = 1.0 - beta2, gi
    if g.shape[0] != n or m.shape[0] != n or v.shape[0] != n:
        raise ValueError("adam_update: buffers differ in size")
    with nogil:
        for i in range(n):
            gi = g[i]
            m[i] = m[i] * beta1 + c1 * gi
            v[i] = v[i] * beta2 + c2 * (gi * gi)
            p[i] = p[i] - (step_size * m[i]) / (sqrt(v[i] / bc2) + eps)


def scatter_add_rows(double[:, ::1] out, const long[::1] idx, const double[:, ::1] rows):
    cdef Py_ssize_t r, j, k, n = idx.shape[0], d = out.shape[1]
    if rows.shape[0] != n or rows.shape[1] != d:
        raise ValueError("scatter_add_rows: rows do not match indices")
    for r in range(n):
        if idx[r] < 0 or idx[r] >= out.shape[0]:
            raise IndexError(f"scatter_add_rows: index {idx[r]} out of range")
    with nogil:
        for r in range(n):
            k = idx[r]
            for j in range(d):
                out[k, j] += rows[r, j]


def tree_distances(const long[::1] parent, const long[::1] depth):
    import numpy as np
    cdef Py_ssize_t n = parent.shape[0], i, j
    cdef long a, b
    out_arr = np.zeros((n, n), dtype=np.int64)
    cdef long[:, ::1] out = out_arr
    with nogil:
        for i in range(n):
            for j in range(i + 1, n):
                a, b = i, j
                while depth[a] > depth[b]:
                    a = parent[a]
                while depth[b] > depth[a]:
                    b = parent[b]
                while a != b:
                    a = parent[a]
                    b = parent[b]
                out[i, j] = depth[i] + depth[j] - 2 * depth[a]
                out[j, i] = out[i, j]
    return out_arr
