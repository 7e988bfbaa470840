# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled twins of :mod:`otmesh._kernels._numpy` (same signatures and results)."""
import numpy as np

cimport numpy as cnp
from libc.math cimport cos, sin, sqrt

cnp.import_array()


def scatter_add(dof_map, local, Py_ssize_t n):
    cdef const cnp.int64_t[:, ::1] dm = np.ascontiguousarray(dof_map, dtype=np.int64)
    cdef const double[:, ::1] loc = np.ascontiguousarray(local, dtype=np.float64)
    out = np.zeros(n)
    cdef double[::1] o = out
    cdef Py_ssize_t c, a
    for c in range(dm.shape[0]):
        for a in range(dm.shape[1]):
            o[dm[c, a]] += loc[c, a]
    return out


def gather_eval(coeffs, dof_map, table):
    # node-major copy so the per-cell gather reads contiguous rows
    cdef const double[:, ::1] u = np.ascontiguousarray(np.asarray(coeffs, dtype=np.float64).T)
    cdef const cnp.int64_t[:, ::1] dm = np.ascontiguousarray(dof_map, dtype=np.int64)
    cdef const double[:, ::1] T = np.ascontiguousarray(table, dtype=np.float64)
    cdef Py_ssize_t C = dm.shape[0], nb = dm.shape[1], Q = T.shape[0], K = u.shape[1]
    out = np.zeros((C, Q, K))
    cdef double[:, :, ::1] o = out
    cdef Py_ssize_t c, q, b, k, node
    cdef double t
    for c in range(C):
        for b in range(nb):
            node = dm[c, b]
            for q in range(Q):
                t = T[q, b]
                for k in range(K):
                    o[c, q, k] += t * u[node, k]
    return out


def gather_grad(coeffs, dof_map, dtable, pullback):
    cdef const double[:, ::1] u = np.ascontiguousarray(np.asarray(coeffs, dtype=np.float64).T)
    cdef const cnp.int64_t[:, ::1] dm = np.ascontiguousarray(dof_map, dtype=np.int64)
    cdef const double[:, :, ::1] dT = np.ascontiguousarray(dtable, dtype=np.float64)
    cdef const double[:, :, :, ::1] G = np.ascontiguousarray(pullback, dtype=np.float64)
    cdef Py_ssize_t C = dm.shape[0], nb = dm.shape[1], Q = dT.shape[0], K = u.shape[1], D = G.shape[2]
    out = np.empty((C, Q, K, D))
    cdef double[:, :, :, ::1] o = out
    cdef double[:, :, ::1] ref = np.empty((Q, K, 2))
    cdef Py_ssize_t c, q, b, k, d, node
    cdef double t0, t1, uk
    for c in range(C):
        ref[:, :, :] = 0.0
        for b in range(nb):
            node = dm[c, b]
            for q in range(Q):
                t0 = dT[q, b, 0]
                t1 = dT[q, b, 1]
                for k in range(K):
                    uk = u[node, k]
                    ref[q, k, 0] += t0 * uk
                    ref[q, k, 1] += t1 * uk
        for q in range(Q):
            for k in range(K):
                for d in range(D):
                    o[c, q, k, d] = G[c, q, d, 0] * ref[q, k, 0] + G[c, q, d, 1] * ref[q, k, 1]
    return out


def integrate_test(dof_map, table, weighted, Py_ssize_t n):
    cdef const cnp.int64_t[:, ::1] dm = np.ascontiguousarray(dof_map, dtype=np.int64)
    cdef const double[:, ::1] T = np.ascontiguousarray(table, dtype=np.float64)
    cdef const double[:, :, ::1] w = np.ascontiguousarray(weighted, dtype=np.float64)
    cdef Py_ssize_t C = dm.shape[0], nb = dm.shape[1], Q = T.shape[0], K = w.shape[2]
    acc = np.zeros((n, K))  # node-major accumulator, transposed on return
    cdef double[:, ::1] o = acc
    cdef Py_ssize_t c, q, a, k, node
    cdef double t
    for c in range(C):
        for a in range(nb):
            node = dm[c, a]
            for q in range(Q):
                t = T[q, a]
                for k in range(K):
                    o[node, k] += w[c, q, k] * t
    return np.ascontiguousarray(acc.T)


def integrate_test_grad(dof_map, dtable, pullback, weighted, Py_ssize_t n):
    cdef const cnp.int64_t[:, ::1] dm = np.ascontiguousarray(dof_map, dtype=np.int64)
    cdef const double[:, :, ::1] dT = np.ascontiguousarray(dtable, dtype=np.float64)
    cdef const double[:, :, :, ::1] G = np.ascontiguousarray(pullback, dtype=np.float64)
    cdef const double[:, :, :, ::1] w = np.ascontiguousarray(weighted, dtype=np.float64)
    cdef Py_ssize_t C = dm.shape[0], nb = dm.shape[1], Q = dT.shape[0], K = w.shape[2], D = G.shape[2]
    acc = np.zeros((n, K))
    cdef double[:, ::1] o = acc
    cdef double[:, :, ::1] ref = np.empty((Q, K, 2))
    cdef Py_ssize_t c, q, a, k, d, node
    cdef double r0, r1, t0, t1
    for c in range(C):
        for q in range(Q):
            for k in range(K):
                r0 = 0.0
                r1 = 0.0
                for d in range(D):
                    r0 += G[c, q, d, 0] * w[c, q, k, d]
                    r1 += G[c, q, d, 1] * w[c, q, k, d]
                ref[q, k, 0] = r0
                ref[q, k, 1] = r1
        for a in range(nb):
            node = dm[c, a]
            for q in range(Q):
                t0 = dT[q, a, 0]
                t1 = dT[q, a, 1]
                for k in range(K):
                    o[node, k] += ref[q, k, 0] * t0 + ref[q, k, 1] * t1
    return np.ascontiguousarray(acc.T)


def local_matrices(w, T, U):
    cdef const double[:, ::1] wv = np.ascontiguousarray(w, dtype=np.float64)
    cdef const double[:, :, ::1] Tv = np.ascontiguousarray(T, dtype=np.float64)
    cdef const double[:, :, ::1] Uv = np.ascontiguousarray(U, dtype=np.float64)
    cdef Py_ssize_t C = wv.shape[0], Q = wv.shape[1], na = Tv.shape[2], nb = Uv.shape[2]
    cdef Py_ssize_t tstride = 0 if Tv.shape[0] == 1 else 1
    cdef Py_ssize_t ustride = 0 if Uv.shape[0] == 1 else 1
    out = np.zeros((C, na, nb))
    cdef double[:, :, ::1] o = out
    cdef Py_ssize_t c, q, a, b, ct, cu
    cdef double wt
    for c in range(C):
        ct = c * tstride
        cu = c * ustride
        for q in range(Q):
            for a in range(na):
                wt = wv[c, q] * Tv[ct, q, a]
                for b in range(nb):
                    o[c, a, b] += wt * Uv[cu, q, b]
    return out


def det_adj2(A):
    A = np.asarray(A, dtype=np.float64)
    shape = A.shape
    cdef const double[:, :, ::1] a = np.ascontiguousarray(A.reshape(-1, 2, 2))
    cdef Py_ssize_t n = a.shape[0], i
    det = np.empty(n)
    adj = np.empty((n, 2, 2))
    cdef double[::1] dv = det
    cdef double[:, :, ::1] av = adj
    for i in range(n):
        dv[i] = a[i, 0, 0] * a[i, 1, 1] - a[i, 0, 1] * a[i, 1, 0]
        av[i, 0, 0] = a[i, 1, 1]
        av[i, 1, 1] = a[i, 0, 0]
        av[i, 0, 1] = -a[i, 0, 1]
        av[i, 1, 0] = -a[i, 1, 0]
    return det.reshape(shape[:-2]), adj.reshape(shape)


def det_adj3(A):
    A = np.asarray(A, dtype=np.float64)
    shape = A.shape
    cdef const double[:, :, ::1] a = np.ascontiguousarray(A.reshape(-1, 3, 3))
    cdef Py_ssize_t n = a.shape[0], i
    det = np.empty(n)
    adj = np.empty((n, 3, 3))
    cdef double[::1] dv = det
    cdef double[:, :, ::1] av = adj
    cdef double c00, c01, c02, c10, c11, c12, c20, c21, c22
    for i in range(n):
        c00 = a[i, 1, 1] * a[i, 2, 2] - a[i, 1, 2] * a[i, 2, 1]
        c01 = a[i, 1, 2] * a[i, 2, 0] - a[i, 1, 0] * a[i, 2, 2]
        c02 = a[i, 1, 0] * a[i, 2, 1] - a[i, 1, 1] * a[i, 2, 0]
        c10 = a[i, 0, 2] * a[i, 2, 1] - a[i, 0, 1] * a[i, 2, 2]
        c11 = a[i, 0, 0] * a[i, 2, 2] - a[i, 0, 2] * a[i, 2, 0]
        c12 = a[i, 0, 1] * a[i, 2, 0] - a[i, 0, 0] * a[i, 2, 1]
        c20 = a[i, 0, 1] * a[i, 1, 2] - a[i, 0, 2] * a[i, 1, 1]
        c21 = a[i, 0, 2] * a[i, 1, 0] - a[i, 0, 0] * a[i, 1, 2]
        c22 = a[i, 0, 0] * a[i, 1, 1] - a[i, 0, 1] * a[i, 1, 0]
        dv[i] = a[i, 0, 0] * c00 + a[i, 0, 1] * c01 + a[i, 0, 2] * c02
        av[i, 0, 0] = c00
        av[i, 0, 1] = c10
        av[i, 0, 2] = c20
        av[i, 1, 0] = c01
        av[i, 1, 1] = c11
        av[i, 1, 2] = c21
        av[i, 2, 0] = c02
        av[i, 2, 1] = c12
        av[i, 2, 2] = c22
    return det.reshape(shape[:-2]), adj.reshape(shape)


def expmap_points(xi, g, double R):
    xi = np.asarray(xi, dtype=np.float64)
    shape = xi.shape
    cdef const double[:, ::1] X = np.ascontiguousarray(xi.reshape(-1, 3))
    cdef const double[:, ::1] Gv = np.ascontiguousarray(np.asarray(g, dtype=np.float64).reshape(-1, 3))
    cdef Py_ssize_t n = X.shape[0], p, i, j
    x = np.empty((n, 3))
    D = np.empty((n, 3, 3))
    cdef double[:, ::1] xv = x
    cdef double[:, :, ::1] Dv = D
    cdef double gn, a, a2, sc, c2, ca, R2 = R * R
    for p in range(n):
        gn = sqrt(Gv[p, 0] * Gv[p, 0] + Gv[p, 1] * Gv[p, 1] + Gv[p, 2] * Gv[p, 2])
        a = gn / R
        a2 = a * a
        if a < 1e-4:
            sc = 1.0 - a2 / 6.0 + a2 * a2 / 120.0
            c2 = -1.0 / 3.0 + a2 / 30.0 - a2 * a2 / 840.0
        else:
            sc = sin(a) / a
            c2 = (cos(a) - sin(a) / a) / a2
        ca = cos(a)
        for i in range(3):
            xv[p, i] = ca * X[p, i] + sc * Gv[p, i]
            for j in range(3):
                Dv[p, i, j] = sc * ((1.0 if i == j else 0.0) - X[p, i] * Gv[p, j] / R2) \
                    + c2 / R2 * Gv[p, i] * Gv[p, j]
    return x.reshape(shape), D.reshape(shape[:-1] + (3, 3))


def sphere_det_adj(sigma, x, xi, double R):
    sigma = np.asarray(sigma, dtype=np.float64)
    shape = sigma.shape
    cdef const double[:, :, ::1] S = np.ascontiguousarray(sigma.reshape(-1, 3, 3))
    cdef const double[:, ::1] X = np.ascontiguousarray(np.asarray(x, dtype=np.float64).reshape(-1, 3))
    cdef const double[:, ::1] Xi = np.ascontiguousarray(np.asarray(xi, dtype=np.float64).reshape(-1, 3))
    cdef Py_ssize_t n = S.shape[0], p, i, j
    det = np.empty(n)
    adj = np.empty((n, 3, 3))
    cdef double[::1] dv = det
    cdef double[:, :, ::1] av = adj
    cdef double a[3][3]
    cdef double sx, inv = 1.0 / (R * R)
    cdef double c00, c01, c02, c10, c11, c12, c20, c21, c22
    for p in range(n):
        for i in range(3):
            # (sigma P)_ij = sigma_ij - (sigma xi)_i xi_j / R^2
            sx = S[p, i, 0] * Xi[p, 0] + S[p, i, 1] * Xi[p, 1] + S[p, i, 2] * Xi[p, 2]
            for j in range(3):
                a[i][j] = S[p, i, j] + (X[p, i] - sx) * Xi[p, j] * inv
        c00 = a[1][1] * a[2][2] - a[1][2] * a[2][1]
        c01 = a[1][2] * a[2][0] - a[1][0] * a[2][2]
        c02 = a[1][0] * a[2][1] - a[1][1] * a[2][0]
        c10 = a[0][2] * a[2][1] - a[0][1] * a[2][2]
        c11 = a[0][0] * a[2][2] - a[0][2] * a[2][0]
        c12 = a[0][1] * a[2][0] - a[0][0] * a[2][1]
        c20 = a[0][1] * a[1][2] - a[0][2] * a[1][1]
        c21 = a[0][2] * a[1][0] - a[0][0] * a[1][2]
        c22 = a[0][0] * a[1][1] - a[0][1] * a[1][0]
        dv[p] = a[0][0] * c00 + a[0][1] * c01 + a[0][2] * c02
        av[p, 0, 0] = c00
        av[p, 0, 1] = c10
        av[p, 0, 2] = c20
        av[p, 1, 0] = c01
        av[p, 1, 1] = c11
        av[p, 1, 2] = c21
        av[p, 2, 0] = c02
        av[p, 2, 1] = c12
        av[p, 2, 2] = c22
    return det.reshape(shape[:-2]), adj.reshape(shape)
