"""Pure-Python / numpy versions of the hot kernels.

Used when the compiled ``_ckernels`` extension is unavailable, or when
``DSA_FORCE_PYTHON=1`` is set. Signatures and results match the compiled
module; the benchmark in ``benchmarks/`` compares the two.
"""
import math

import numpy as np


def _givens_add(R, z, row, y):
    # Rotates one observation into the triangular factor, returns the
    # increment of the residual sum of squares.
    m = R.shape[0]
    for i in range(m):
        ri = row[i]
        if ri == 0.0:
            continue
        rii = R[i, i]
        r = math.hypot(rii, ri)
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


def segment_dp(x, k, d):
    """Exact k-interval segmentation minimizing the total degree-d residual.

    Returns ``(starts, cost)`` where ``starts`` holds the 0-based start index
    of every interval after the first. Intervals shorter than ``d + 1`` are
    never used. Ties go to the smaller start of the last interval.
    """
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    m = d + 1
    inf = math.inf
    best = [[inf] * n for _ in range(k)]
    arg = [[-1] * n for _ in range(k)]
    R = np.zeros((m, m))
    z = np.zeros(m)
    row = np.zeros(m)
    scale = 1.0 / n
    for e in range(n):
        R[:] = 0.0
        z[:] = 0.0
        ssr = 0.0
        for s in range(e, -1, -1):
            t = (e - s) * scale
            p = 1.0
            for j in range(m):
                row[j] = p
                p *= t
            ssr += _givens_add(R, z, row, float(x[s]))
            if e - s + 1 < m:
                continue
            if s == 0:
                best[0][e] = ssr
                arg[0][e] = 0
                continue
            prev_col = s - 1
            for j in range(1, k):
                prev = best[j - 1][prev_col]
                if prev == inf:
                    continue
                cand = prev + ssr
                if cand <= best[j][e]:
                    best[j][e] = cand
                    arg[j][e] = s
    cost = best[k - 1][n - 1]
    if cost == inf:
        raise ValueError("no feasible partition")
    starts = []
    e = n - 1
    for j in range(k - 1, 0, -1):
        s = arg[j][e]
        starts.append(s)
        e = s - 1
    starts.reverse()
    return np.asarray(starts, dtype=np.int64), float(cost)


def nurbs_eval_grid(pw, uspan, ubasis, vspan, vbasis, nthreads=1):
    """Evaluate a rational tensor-product surface on a parameter grid.

    ``pw`` is the homogeneous control net of shape (nu, nv, 4) holding
    (w*x, w*y, w*z, w). Only the (p+1)(q+1) active control points of each
    grid point are touched. Returns ``(S, W)`` with shapes (G, H, 3), (G, H).
    """
    p = ubasis.shape[1] - 1
    q = vbasis.shape[1] - 1
    iu = uspan[:, None] - p + np.arange(p + 1)[None, :]
    iv = vspan[:, None] - q + np.arange(q + 1)[None, :]
    # (G, p+1, H, q+1, 4) gather of the active windows
    win = pw[iu[:, :, None, None], iv[None, None, :, :]]
    sw = np.einsum("ga,gahbc,hb->ghc", ubasis, win, vbasis, optimize=True)
    W = sw[..., 3]
    S = sw[..., :3] / W[..., None]
    return S, W


def nurbs_backward_grid(ctrl, weights, uspan, ubasis, vspan, vbasis, S, W, upstream):
    """Reverse pass of :func:`nurbs_eval_grid`.

    Returns ``(d_ctrl, d_weights, dir_u, dir_v)``. ``dir_u[g, a]`` is the
    upstream-weighted derivative of the surface with respect to the a-th
    active u-basis value at grid row g, summed over the grid columns; the
    knot surrogates are applied on top of it by the caller.
    """
    p = ubasis.shape[1] - 1
    q = vbasis.shape[1] - 1
    nu, nv = weights.shape
    iu = uspan[:, None] - p + np.arange(p + 1)[None, :]
    iv = vspan[:, None] - q + np.arange(q + 1)[None, :]
    P = ctrl[iu[:, :, None, None], iv[None, None, :, :]]  # (G, a, H, b, 3)
    w = weights[iu[:, :, None, None], iv[None, None, :, :]]  # (G, a, H, b)
    g_over_w = upstream / W[..., None]  # (G, H, 3)
    nab = ubasis[:, :, None, None] * vbasis[None, None, :, :]  # (G, a, H, b)
    # <upstream, P - S> / W per active (point, a, b)
    dot = np.einsum("gahbc,ghc->gahb", P, g_over_w) - np.einsum(
        "ghc,ghc->gh", S, g_over_w
    )[:, None, :, None]
    r = nab * w
    dc = r[..., None] * g_over_w[:, None, :, None, :]
    dw = nab * dot
    d_ctrl = np.zeros((nu, nv, 3))
    d_weights = np.zeros((nu, nv))
    G = uspan.shape[0]
    H = vspan.shape[0]
    ii = np.broadcast_to(iu[:, :, None, None], (G, p + 1, H, q + 1)).ravel()
    jj = np.broadcast_to(iv[None, None, :, :], (G, p + 1, H, q + 1)).ravel()
    flat = ii * nv + jj
    for c in range(3):
        d_ctrl[..., c] = np.bincount(
            flat, weights=dc[..., c].ravel(), minlength=nu * nv
        ).reshape(nu, nv)
    d_weights[:] = np.bincount(flat, weights=dw.ravel(), minlength=nu * nv).reshape(nu, nv)
    wdot = w * dot
    dir_u = np.einsum("gahb,hb->ga", wdot, vbasis)
    dir_v = np.einsum("gahb,ga->hb", wdot, ubasis)
    return d_ctrl, d_weights, dir_u, dir_v


def label_components(binary):
    """4-connected labeling of equal-valued regions of an integer grid.

    Union-find over the grid; labels are numbered in row-major order of the
    first pixel of each region. Returns ``(labels, count)``.
    """
    binary = np.asarray(binary)
    rows, cols = binary.shape
    n = rows * cols
    parent = list(range(n))

    def find(a):
        root = a
        while parent[root] != root:
            root = parent[root]
        while parent[a] != root:
            parent[a], a = root, parent[a]
        return root

    def union(a, b):
        ra = find(a)
        rb = find(b)
        if ra != rb:
            if ra < rb:
                parent[rb] = ra
            else:
                parent[ra] = rb

    vals = binary.ravel().tolist()
    for r in range(rows):
        base = r * cols
        for c in range(cols):
            idx = base + c
            v = vals[idx]
            if c > 0 and vals[idx - 1] == v:
                union(idx, idx - 1)
            if r > 0 and vals[idx - cols] == v:
                union(idx, idx - cols)
    labels = np.empty(n, dtype=np.int64)
    remap = {}
    for idx in range(n):
        root = find(idx)
        lab = remap.get(root)
        if lab is None:
            lab = len(remap)
            remap[root] = lab
        labels[idx] = lab
    return labels.reshape(rows, cols), len(remap)
