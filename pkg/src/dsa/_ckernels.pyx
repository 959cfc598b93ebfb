# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels. Same signatures and results as ``_pykernels``."""
import numpy as np
cimport numpy as cnp
from cython.parallel cimport prange
from libc.math cimport hypot, INFINITY

cnp.import_array()


cdef inline double _givens_add(double[:, ::1] R, double[::1] z, double[::1] row,
                               double y, Py_ssize_t m) noexcept nogil:
    cdef Py_ssize_t i, j
    cdef double ri, rii, r, c, s, a, b, zi
    for i in range(m):
        ri = row[i]
        if ri == 0.0:
            continue
        rii = R[i, i]
        r = hypot(rii, ri)
        c = rii / r
        s = ri / r
        R[i, i] = r
        for j in range(i + 1, m):
            a = R[i, j]
            b = row[j]
            R[i, j] = c * a + s * b
            row[j] = -s * a + c * b
        zi = z[i]
        z[i] = c * zi + s * y
        y = -s * zi + c * y
    return y * y


def segment_dp(x, int k, int d):
    cdef double[::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef Py_ssize_t n = xv.shape[0]
    cdef Py_ssize_t m = d + 1
    cdef double[:, ::1] best = np.full((k, n), np.inf)
    cdef cnp.int64_t[:, ::1] arg = np.full((k, n), -1, dtype=np.int64)
    cdef double[:, ::1] R = np.zeros((m, m))
    cdef double[::1] z = np.zeros(m)
    cdef double[::1] row = np.zeros(m)
    cdef double scale = 1.0 / n
    cdef double ssr, t, p, prev, cand
    cdef Py_ssize_t e, s, j, a, b
    with nogil:
        for e in range(n):
            for a in range(m):
                z[a] = 0.0
                for b in range(m):
                    R[a, b] = 0.0
            ssr = 0.0
            for s in range(e, -1, -1):
                t = (e - s) * scale
                p = 1.0
                for j in range(m):
                    row[j] = p
                    p = p * t
                ssr = ssr + _givens_add(R, z, row, xv[s], m)
                if e - s + 1 < m:
                    continue
                if s == 0:
                    best[0, e] = ssr
                    arg[0, e] = 0
                    continue
                for j in range(1, k):
                    prev = best[j - 1, s - 1]
                    if prev == INFINITY:
                        continue
                    cand = prev + ssr
                    if cand <= best[j, e]:
                        best[j, e] = cand
                        arg[j, e] = s
    cost = best[k - 1, n - 1]
    if cost == np.inf:
        raise ValueError("no feasible partition")
    starts = []
    e = n - 1
    for j in range(k - 1, 0, -1):
        s = arg[j, e]
        starts.append(s)
        e = s - 1
    starts.reverse()
    return np.asarray(starts, dtype=np.int64), float(cost)


def nurbs_eval_grid(pw, uspan, ubasis, vspan, vbasis, int nthreads=1):
    cdef double[:, :, ::1] P = np.ascontiguousarray(pw, dtype=np.float64)
    cdef cnp.int64_t[::1] us = np.ascontiguousarray(uspan, dtype=np.int64)
    cdef cnp.int64_t[::1] vs = np.ascontiguousarray(vspan, dtype=np.int64)
    cdef double[:, ::1] Nu = np.ascontiguousarray(ubasis, dtype=np.float64)
    cdef double[:, ::1] Nv = np.ascontiguousarray(vbasis, dtype=np.float64)
    cdef Py_ssize_t G = us.shape[0], H = vs.shape[0]
    cdef Py_ssize_t p = Nu.shape[1] - 1, q = Nv.shape[1] - 1
    S_arr = np.empty((G, H, 3))
    W_arr = np.empty((G, H))
    cdef double[:, :, ::1] S = S_arr
    cdef double[:, ::1] W = W_arr
    cdef Py_ssize_t g, h, a, b, i, j
    cdef double x, y, zz, w, nab
    for g in prange(G, nogil=True, num_threads=max(1, nthreads), schedule="static"):
        for h in range(H):
            x = 0.0
            y = 0.0
            zz = 0.0
            w = 0.0
            for a in range(p + 1):
                i = us[g] - p + a
                for b in range(q + 1):
                    j = vs[h] - q + b
                    nab = Nu[g, a] * Nv[h, b]
                    x = x + nab * P[i, j, 0]
                    y = y + nab * P[i, j, 1]
                    zz = zz + nab * P[i, j, 2]
                    w = w + nab * P[i, j, 3]
            W[g, h] = w
            S[g, h, 0] = x / w
            S[g, h, 1] = y / w
            S[g, h, 2] = zz / w
    return S_arr, W_arr


def nurbs_backward_grid(ctrl, weights, uspan, ubasis, vspan, vbasis, S, W, upstream):
    cdef double[:, :, ::1] P = np.ascontiguousarray(ctrl, dtype=np.float64)
    cdef double[:, ::1] wt = np.ascontiguousarray(weights, dtype=np.float64)
    cdef cnp.int64_t[::1] us = np.ascontiguousarray(uspan, dtype=np.int64)
    cdef cnp.int64_t[::1] vs = np.ascontiguousarray(vspan, dtype=np.int64)
    cdef double[:, ::1] Nu = np.ascontiguousarray(ubasis, dtype=np.float64)
    cdef double[:, ::1] Nv = np.ascontiguousarray(vbasis, dtype=np.float64)
    cdef double[:, :, ::1] Sv = np.ascontiguousarray(S, dtype=np.float64)
    cdef double[:, ::1] Wv = np.ascontiguousarray(W, dtype=np.float64)
    cdef double[:, :, ::1] up = np.ascontiguousarray(upstream, dtype=np.float64)
    cdef Py_ssize_t G = us.shape[0], H = vs.shape[0]
    cdef Py_ssize_t p = Nu.shape[1] - 1, q = Nv.shape[1] - 1
    cdef Py_ssize_t nu = wt.shape[0], nv = wt.shape[1]
    dc_arr = np.zeros((nu, nv, 3))
    dw_arr = np.zeros((nu, nv))
    du_arr = np.zeros((G, p + 1))
    dv_arr = np.zeros((H, q + 1))
    cdef double[:, :, ::1] dc = dc_arr
    cdef double[:, ::1] dw = dw_arr
    cdef double[:, ::1] du = du_arr
    cdef double[:, ::1] dv = dv_arr
    cdef Py_ssize_t g, h, a, b, i, j
    cdef double g0, g1, g2, inv_w, gs, nab, r, dot, wij
    with nogil:
        for g in range(G):
            for h in range(H):
                inv_w = 1.0 / Wv[g, h]
                g0 = up[g, h, 0] * inv_w
                g1 = up[g, h, 1] * inv_w
                g2 = up[g, h, 2] * inv_w
                gs = g0 * Sv[g, h, 0] + g1 * Sv[g, h, 1] + g2 * Sv[g, h, 2]
                for a in range(p + 1):
                    i = us[g] - p + a
                    for b in range(q + 1):
                        j = vs[h] - q + b
                        wij = wt[i, j]
                        nab = Nu[g, a] * Nv[h, b]
                        r = nab * wij
                        dc[i, j, 0] += r * g0
                        dc[i, j, 1] += r * g1
                        dc[i, j, 2] += r * g2
                        dot = g0 * P[i, j, 0] + g1 * P[i, j, 1] + g2 * P[i, j, 2] - gs
                        dw[i, j] += nab * dot
                        du[g, a] += Nv[h, b] * wij * dot
                        dv[h, b] += Nu[g, a] * wij * dot
    return dc_arr, dw_arr, du_arr, dv_arr


def label_components(binary):
    cdef cnp.int64_t[:, ::1] bv = np.ascontiguousarray(binary, dtype=np.int64)
    cdef Py_ssize_t rows = bv.shape[0], cols = bv.shape[1]
    cdef Py_ssize_t n = rows * cols
    parent_arr = np.arange(n, dtype=np.int64)
    cdef cnp.int64_t[::1] parent = parent_arr
    labels_arr = np.empty(n, dtype=np.int64)
    cdef cnp.int64_t[::1] labels = labels_arr
    cdef Py_ssize_t r, c, idx, count = 0
    with nogil:
        for r in range(rows):
            for c in range(cols):
                idx = r * cols + c
                if c > 0 and bv[r, c - 1] == bv[r, c]:
                    _union(parent, idx, idx - 1)
                if r > 0 and bv[r - 1, c] == bv[r, c]:
                    _union(parent, idx, idx - cols)
        for idx in range(n):
            r = _find(parent, idx)
            if r == idx:
                labels[idx] = count
                count = count + 1
            else:
                labels[idx] = labels[r]
    return labels_arr.reshape(rows, cols), int(count)


cdef inline Py_ssize_t _find(cnp.int64_t[::1] parent, Py_ssize_t a) noexcept nogil:
    cdef Py_ssize_t root = a, nxt
    while parent[root] != root:
        root = parent[root]
    while parent[a] != root:
        nxt = parent[a]
        parent[a] = root
        a = nxt
    return root


cdef inline void _union(cnp.int64_t[::1] parent, Py_ssize_t a, Py_ssize_t b) noexcept nogil:
    cdef Py_ssize_t ra = _find(parent, a), rb = _find(parent, b)
    if ra < rb:
        parent[rb] = ra
    elif rb < ra:
        parent[ra] = rb
