# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled segment reductions for the attention layers.

Accumulation runs in element order; together with strict IEEE adds this
keeps results bitwise identical to the numpy fallback.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()


def segment_sum(values, segments, Py_ssize_t num_segments):
    values = np.ascontiguousarray(values, dtype=np.float64)
    seg = np.ascontiguousarray(segments, dtype=np.int64)
    if values.ndim == 1:
        return _segment_sum_1d(values, seg, num_segments)
    return _segment_sum_2d(values, seg, num_segments)


def segment_max(values, segments, Py_ssize_t num_segments, double fill=-np.inf):
    cdef cnp.float64_t[::1] vals = np.ascontiguousarray(values, dtype=np.float64)
    cdef cnp.int64_t[::1] seg = np.ascontiguousarray(segments, dtype=np.int64)
    out_arr = np.full(num_segments, fill, dtype=np.float64)
    cdef cnp.float64_t[::1] out = out_arr
    cdef Py_ssize_t i
    cdef cnp.int64_t s
    for i in range(vals.shape[0]):
        s = seg[i]
        if vals[i] > out[s]:
            out[s] = vals[i]
    return out_arr


cdef _segment_sum_1d(cnp.float64_t[::1] vals, cnp.int64_t[::1] seg,
                     Py_ssize_t num_segments):
    out_arr = np.zeros(num_segments, dtype=np.float64)
    cdef cnp.float64_t[::1] out = out_arr
    cdef Py_ssize_t i
    for i in range(vals.shape[0]):
        out[seg[i]] += vals[i]
    return out_arr


cdef _segment_sum_2d(cnp.float64_t[:, ::1] vals, cnp.int64_t[::1] seg,
                     Py_ssize_t num_segments):
    out_arr = np.zeros((num_segments, vals.shape[1]), dtype=np.float64)
    cdef cnp.float64_t[:, ::1] out = out_arr
    cdef Py_ssize_t i, j
    cdef cnp.int64_t s
    for i in range(vals.shape[0]):
        s = seg[i]
        for j in range(vals.shape[1]):
            out[s, j] += vals[i, j]
    return out_arr
