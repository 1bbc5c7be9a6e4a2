# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled batch scoring kernel.

Same per-region computation as the numpy backend, written as flat C loops
so large batches avoid per-region Python overhead. The main loop releases
the GIL, so chunked calls from a thread pool run in parallel.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport INFINITY, exp

cnp.import_array()

name = "compiled"


cdef void _level_row(const double[::1] region,
                     const double[:, ::1] texts,
                     const cnp.int64_t[::1] offsets,
                     double temp,
                     double[::1] scratch,
                     double[:, ::1] z_out,
                     Py_ssize_t i,
                     Py_ssize_t n_classes,
                     Py_ssize_t dim) noexcept nogil:
    # Joint softmax over every entry of the level, then per-class max.
    cdef Py_ssize_t n_entries = offsets[n_classes]
    cdef Py_ssize_t e, j, n
    cdef double acc, m, total, best
    m = -INFINITY
    for e in range(n_entries):
        acc = 0.0
        for j in range(dim):
            acc += texts[e, j] * region[j]
        acc *= temp
        scratch[e] = acc
        if acc > m:
            m = acc
    total = 0.0
    for e in range(n_entries):
        acc = exp(scratch[e] - m)
        scratch[e] = acc
        total += acc
    for n in range(n_classes):
        best = 0.0
        for e in range(offsets[n], offsets[n + 1]):
            acc = scratch[e] / total
            if acc > best:
                best = acc
        z_out[i, n] = best


def batch_scores(const double[:, ::1] regions,
                 const double[:, ::1] class_texts,
                 const double[:, ::1] sub_texts,
                 const cnp.int64_t[::1] sub_offsets,
                 const double[:, ::1] sup_texts,
                 const cnp.int64_t[::1] sup_offsets,
                 double class_temp,
                 double hier_temp):
    cdef Py_ssize_t n_regions = regions.shape[0]
    cdef Py_ssize_t dim = regions.shape[1]
    cdef Py_ssize_t n_classes = class_texts.shape[0]
    if (class_texts.shape[1] != dim or sub_texts.shape[1] != dim
            or sup_texts.shape[1] != dim):
        raise ValueError("feature dimensions do not match")
    if sub_offsets.shape[0] != n_classes + 1 or sup_offsets.shape[0] != n_classes + 1:
        raise ValueError("offsets must have length n_classes + 1")
    if sub_offsets[n_classes] != sub_texts.shape[0] or sup_offsets[n_classes] != sup_texts.shape[0]:
        raise ValueError("offsets do not cover the entry features")

    p_arr = np.empty((n_regions, n_classes))
    z_sub_arr = np.empty((n_regions, n_classes))
    z_sup_arr = np.empty((n_regions, n_classes))
    r_sub_arr = np.empty((n_regions, n_classes))
    r_sup_arr = np.empty((n_regions, n_classes))
    r_arr = np.empty((n_regions, n_classes))
    scratch_arr = np.empty(max(sub_texts.shape[0], sup_texts.shape[0], 1))

    cdef double[:, ::1] p = p_arr
    cdef double[:, ::1] z_sub = z_sub_arr
    cdef double[:, ::1] z_sup = z_sup_arr
    cdef double[:, ::1] r_sub = r_sub_arr
    cdef double[:, ::1] r_sup = r_sup_arr
    cdef double[:, ::1] r = r_arr
    cdef double[::1] scratch = scratch_arr

    cdef Py_ssize_t i, j, n
    cdef double acc, m, total, denom_sub, denom_sup

    with nogil:
        for i in range(n_regions):
            m = -INFINITY
            for n in range(n_classes):
                acc = 0.0
                for j in range(dim):
                    acc += class_texts[n, j] * regions[i, j]
                acc *= class_temp
                p[i, n] = acc
                if acc > m:
                    m = acc
            total = 0.0
            for n in range(n_classes):
                acc = exp(p[i, n] - m)
                p[i, n] = acc
                total += acc
            for n in range(n_classes):
                p[i, n] /= total

            _level_row(regions[i], sub_texts, sub_offsets, hier_temp,
                       scratch, z_sub, i, n_classes, dim)
            _level_row(regions[i], sup_texts, sup_offsets, hier_temp,
                       scratch, z_sup, i, n_classes, dim)

            denom_sub = 0.0
            denom_sup = 0.0
            for n in range(n_classes):
                denom_sub += p[i, n] * z_sub[i, n]
                denom_sup += p[i, n] * z_sup[i, n]
            for n in range(n_classes):
                r_sub[i, n] = p[i, n] * z_sub[i, n] / denom_sub
                r_sup[i, n] = p[i, n] * z_sup[i, n] / denom_sup
                r[i, n] = 0.5 * (r_sub[i, n] + r_sup[i, n])

    return {
        "p": p_arr,
        "z_sub": z_sub_arr,
        "z_sup": z_sup_arr,
        "r_sub": r_sub_arr,
        "r_sup": r_sup_arr,
        "r": r_arr,
    }
