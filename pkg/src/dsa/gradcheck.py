"""Seeded finite-difference suites for every analytic backward pass.

Each suite returns ``{block name: max relative error}`` where the relative
error of a block is ``max|analytic - fd| / max(max|fd|, tiny)``.
"""
from __future__ import annotations

import numpy as np

from . import fem
from .errors import ConfigurationError
from .fitloop import mse_loss
from .nurbs import backward_surface, eval_surface_grid, random_surface
from .pcw2d import connected_components, pcw2d_forward, pcw2d_vjp
from .piecewise1d import IntervalPartition, fit_partition, jacobian

SUITES = ("nurbs", "fem", "piecewise")
FAIL_THRESHOLD = 1e-4


def block_error(analytic, fd) -> float:
    analytic = np.asarray(analytic, dtype=np.float64)
    fd = np.asarray(fd, dtype=np.float64)
    scale = max(float(np.max(np.abs(fd))) if fd.size else 0.0, 1e-300)
    return float(np.max(np.abs(analytic - fd))) / scale if fd.size else 0.0


def _fd(fun, x, step):
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        xp = x.copy()
        xm = x.copy()
        xp[idx] += step
        xm[idx] -= step
        g[idx] = (fun(xp) - fun(xm)) / (2 * step)
    return g


def nurbs_suite(count: int = 20, seed: int = 0, step: float = 1e-6, grid: int = 9) -> dict:
    """dCtrl and dWeights of an MSE loss on random rational cubic surfaces."""
    rng = np.random.default_rng(seed)
    worst = {"ctrl": 0.0, "weights": 0.0}
    for _ in range(count):
        surf = random_surface(rng, 5, 5, 3, 3, rational=True)
        target = rng.normal(size=(grid, grid, 3))

        def loss(s):
            return mse_loss(eval_surface_grid(s, grid, grid)[0], target)[0]

        S, cache = eval_surface_grid(surf, grid, grid)
        g = backward_surface(surf, cache, mse_loss(S, target)[1])
        fd_c = _fd(lambda c: loss(surf.replace(ctrl=c)), surf.ctrl, step)
        fd_w = _fd(lambda w: loss(surf.replace(weights=w)), surf.weights, step)
        worst["ctrl"] = max(worst["ctrl"], block_error(g.d_ctrl, fd_c))
        worst["weights"] = max(worst["weights"], block_error(g.d_weights, fd_w))
    return worst


def fem_suite(seed: int = 0, step: float = 1e-6, n: int = 4) -> dict:
    """Energy gradient for degrees 1..3 with a random diffusivity."""
    rng = np.random.default_rng(seed)
    out = {}
    for d in (1, 2, 3):
        mesh = fem.StructuredMesh(n, n, d)
        op = fem.EnergyOperator(mesh, fem.DiffusivityParams.sample(rng), fem.manufactured_forcing)
        U = fem.apply_dirichlet(rng.normal(size=mesh.node_shape), 0.0)
        inner = U[1:-1, 1:-1].copy()

        def J(x):
            V = U.copy()
            V[1:-1, 1:-1] = x
            return op.energy(V)

        out[f"energy d={d}"] = block_error(op.gradient(U)[1:-1, 1:-1], _fd(J, inner, step))
    return out


def piecewise_suite(seed: int = 0, step: float = 1e-6, n: int = 24) -> dict:
    """VJPs of the 1D fit at fixed partitions and of the 2D component mean."""
    rng = np.random.default_rng(seed)
    out = {}
    for d in (0, 1, 2):
        part = IntervalPartition(n, (5, 11, 17))
        x = rng.normal(size=n)
        v = rng.normal(size=n)
        jac = jacobian(fit_partition(x, part, d))
        fd = _fd(lambda y: float(v @ fit_partition(y, part, d).fitted), x, step)
        out[f"fit1d d={d}"] = block_error(jac.vjp(v), fd)
    img = rng.uniform(size=(6, 6))
    labels = connected_components(img, 0.5)
    up = rng.normal(size=img.shape)
    fd = _fd(lambda y: float(np.sum(up * pcw2d_forward(y, labels))), img, step)
    out["pcw2d"] = block_error(pcw2d_vjp(labels, up), fd)
    return out


def run_suite(name: str, seed: int = 0) -> dict:
    if name == "nurbs":
        return nurbs_suite(seed=seed)
    if name == "fem":
        return fem_suite(seed=seed)
    if name == "piecewise":
        return piecewise_suite(seed=seed)
    raise ConfigurationError(f"unknown suite {name!r}; choose from {SUITES}")
