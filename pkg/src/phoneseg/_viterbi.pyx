# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled forward pass; see ``_viterbi_py`` for the algorithm."""
import numpy as np
cimport numpy as cnp
from libc.math cimport INFINITY

cnp.import_array()


def forward(emit, penalty, n_states):
    cdef const double[:, ::1] em = np.ascontiguousarray(emit, dtype=np.float64)
    cdef const double[::1] pen = np.ascontiguousarray(penalty, dtype=np.float64)
    cdef Py_ssize_t T = em.shape[0]
    cdef Py_ssize_t K = em.shape[1]
    cdef Py_ssize_t N = n_states

    delta_arr = np.full((N, K), -np.inf)
    stay_arr = np.ones((T, N, K), dtype=np.uint8)
    source_arr = np.zeros((T, N, 2), dtype=np.int32)
    cdef double[:, ::1] delta = delta_arr
    cdef unsigned char[:, :, ::1] stay = stay_arr
    cdef int[:, :, ::1] source = source_arr

    cdef Py_ssize_t t, n, k, m
    cdef double best, second, sw, st, v, p
    cdef int best_k, second_k

    for k in range(K):
        delta[0, k] = em[0, k]

    for t in range(1, T):
        m = t + 1 if t + 1 < N else N
        p = pen[t]
        # rows are updated top-down so row n - 1 still holds time t - 1 values
        for n in range(m - 1, 0, -1):
            best = -INFINITY
            best_k = 0
            for k in range(K):
                if delta[n - 1, k] > best:
                    best = delta[n - 1, k]
                    best_k = <int>k
            # first index of the max with best_k masked out, like np.argmax
            second = -INFINITY
            second_k = -1
            for k in range(K):
                if k != best_k and delta[n - 1, k] > second:
                    second = delta[n - 1, k]
                    second_k = <int>k
            if second_k < 0:
                second_k = 0
            source[t, n, 0] = best_k
            source[t, n, 1] = second_k
            for k in range(K):
                if k == best_k:
                    sw = second - p
                else:
                    sw = best - p
                st = delta[n, k]
                if st >= sw:
                    v = st
                    stay[t, n, k] = 1
                else:
                    v = sw
                    stay[t, n, k] = 0
                delta[n, k] = v + em[t, k]
        for k in range(K):
            delta[0, k] = delta[0, k] + em[t, k]
    return delta_arr, stay_arr, source_arr
