# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled per-path kernels; same contract as ``_pykernels``."""
import numpy as np
cimport numpy as cnp

cnp.import_array()


def unit_costs(table, double[:, ::1] xi):
    cdef const long long[::1] nodes = table.nodes
    cdef const double[::1] w = table.weights
    cdef const long long[::1] offs = table.offsets
    cdef const long long[::1] item = table.item
    cdef Py_ssize_t P = table.n_paths, j, k
    cdef double prod, tot
    out = np.zeros(P)
    cdef double[::1] o = out
    for j in range(P):
        prod = 1.0
        tot = 0.0
        for k in range(offs[j], offs[j + 1]):
            prod *= 1.0 - xi[nodes[k], item[j]]
            tot += w[k] * prod
        o[j] = tot
    return out


def surrogate(table, double[::1] rho, double[:, ::1] xi):
    cdef const long long[::1] nodes = table.nodes
    cdef const double[::1] w = table.weights
    cdef const long long[::1] offs = table.offsets
    cdef const long long[::1] item = table.item
    cdef const double[::1] lam = table.rate
    cdef Py_ssize_t P = table.n_paths, j, k
    cdef double acc, tot, total = 0.0
    for j in range(P):
        acc = 1.0 - rho[j]
        tot = 0.0
        for k in range(offs[j], offs[j + 1]):
            acc += xi[nodes[k], item[j]]
            tot += w[k] * (acc if acc < 1.0 else 1.0)
        total += lam[j] * tot
    return total


def sweep(table, double[::1] rho, double[:, ::1] xi, double[::1] mult):
    cdef const long long[::1] nodes = table.nodes
    cdef const double[::1] w = table.weights
    cdef const long long[::1] offs = table.offsets
    cdef const long long[::1] item = table.item
    cdef Py_ssize_t P = table.n_paths, j, k, last, i
    cdef double acc, up, m
    q_arr = np.zeros(P)
    Z_arr = np.zeros((table.n_nodes, table.n_items))
    hops_arr = np.zeros(P, dtype=np.int64)
    cdef double[::1] q = q_arr
    cdef double[:, ::1] Z = Z_arr
    cdef long long[::1] hops = hops_arr
    for j in range(P):
        m = mult[j]
        i = item[j]
        acc = 1.0 - rho[j]
        last = offs[j]
        # forward pass: find the truncated prefix
        for k in range(offs[j], offs[j + 1]):
            acc += xi[nodes[k], i]
            if acc > 1.0:
                break
            last = k + 1
        hops[j] = last - offs[j] - 1 if last == offs[j + 1] else last - offs[j]
        if last == offs[j]:
            hops[j] = 0
            continue
        # backward pass: accumulate response weights
        up = 0.0
        for k in range(last - 1, offs[j] - 1, -1):
            up += w[k]
            Z[nodes[k], i] += m * up
        q[j] = -m * up
    return q_arr, Z_arr, hops_arr
