"""Gradient-based NURBS surface fitting.

Losses (MSE, Chamfer, control-net Laplacian), Adam / plain gradient descent,
knot reparameterization with a feasibility projection, the Bukin N.6 target,
and a central-difference gradient checker.
"""
from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .errors import ConfigurationError, DimensionError, DivergenceError, DomainError, NumericError
from .nurbs import KNOT_GRAD_MODES, KnotVector, NurbsSurface, backward_surface, eval_surface_grid


@dataclass
class FitConfig:
    lr: float = 1e-2
    lr_knots: float = 1e-3
    iterations: int = 2000
    optimizer: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    reparameterize_knots: bool = False
    sigma: float = 1e-2
    knot_margin: float = 1e-4
    knot_grad: str = "recursive"
    laplacian_weight: float = 0.0
    normalize: bool = True
    seed: int = 0
    threads: int = 1

    def __post_init__(self):
        if not self.lr > 0 or not self.lr_knots > 0:
            raise ConfigurationError("learning rates must be positive")
        if self.iterations < 0:
            raise ConfigurationError("iterations must be non-negative")
        if self.optimizer not in ("adam", "plain-gd"):
            raise ConfigurationError(f"unknown optimizer {self.optimizer!r}")
        if not self.sigma > 0:
            raise ConfigurationError("sigma must be positive")
        if self.knot_margin < 0:
            raise ConfigurationError("knot_margin must be non-negative")
        if self.knot_grad not in KNOT_GRAD_MODES:
            raise ConfigurationError(f"unknown knot gradient mode {self.knot_grad!r}")

    @classmethod
    def from_dict(cls, data: dict) -> "FitConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class FitReport:
    surface: NurbsSurface
    history: list = field(default_factory=list)
    final_mse: float = math.nan
    wall_seconds: float = 0.0

    def to_dict(self, every: int = 1, timing: bool = False) -> dict:
        hist = self.history[::every]
        if (len(self.history) - 1) % every:
            hist.append(self.history[-1])
        out = {
            "surface": self.surface.to_dict(),
            "history": hist,
            "history_every": every,
            "final_mse": self.final_mse,
        }
        if timing:
            out["wall_seconds"] = self.wall_seconds
        return out


def mse_loss(pred, target):
    """Mean over points of the squared Euclidean error, and its gradient."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise DimensionError(f"shape mismatch {pred.shape} vs {target.shape}")
    # Points are indexed by all but the last axis of a point grid; a plain
    # 1D array is treated as N scalar points.
    count = pred.size // pred.shape[-1] if pred.ndim > 1 else pred.size
    diff = pred - target
    return float(np.sum(diff * diff) / count), (2.0 / count) * diff


def chamfer_distance(P, Q, squared: bool = False) -> float:
    """Two-sided Chamfer distance with unsquared nearest-neighbour norms.

    ``squared=True`` switches to the squared-distance convention.
    """
    P = np.atleast_2d(np.asarray(P, dtype=np.float64))
    Q = np.atleast_2d(np.asarray(Q, dtype=np.float64))
    if P.shape[0] == 0 or Q.shape[0] == 0 or P.size == 0 or Q.size == 0:
        raise DomainError("Chamfer distance needs two nonempty point sets")
    if P.shape[1] != Q.shape[1]:
        raise DimensionError("point sets differ in dimension")
    d_pq, _ = cKDTree(Q).query(P)
    d_qp, _ = cKDTree(P).query(Q)
    if squared:
        return float(np.sum(d_pq**2) + np.sum(d_qp**2))
    return float(np.sum(d_pq) + np.sum(d_qp))


def chamfer_report(P, Q) -> float:
    """Chamfer distance scaled by 100, the reporting convention."""
    return 100.0 * chamfer_distance(P, Q)


def laplacian_regularizer(ctrl):
    """Sum of squared 5-point Laplacians over interior control points."""
    ctrl = np.asarray(ctrl, dtype=np.float64)
    if ctrl.ndim == 2:
        ctrl = ctrl[..., None]
    if ctrl.shape[0] < 3 or ctrl.shape[1] < 3:
        raise DimensionError("control grid must be at least 3x3")
    lap = (
        4 * ctrl[1:-1, 1:-1]
        - ctrl[:-2, 1:-1]
        - ctrl[2:, 1:-1]
        - ctrl[1:-1, :-2]
        - ctrl[1:-1, 2:]
    )
    grad = np.zeros_like(ctrl)
    grad[1:-1, 1:-1] += 8 * lap
    grad[:-2, 1:-1] -= 2 * lap
    grad[2:, 1:-1] -= 2 * lap
    grad[1:-1, :-2] -= 2 * lap
    grad[1:-1, 2:] -= 2 * lap
    return float(np.sum(lap * lap)), grad


def bukin6(x, y):
    return 100.0 * np.sqrt(np.abs(y - 0.01 * x**2)) + 0.01 * np.abs(x + 10.0)


def bukin_target(nx: int, ny: int) -> np.ndarray:
    """Bukin N.6 sampled on x in [-15, -5], y in [-3, 3]; shape (nx, ny, 3)."""
    if nx < 2 or ny < 2:
        raise DimensionError("need at least 2 samples per direction")
    X, Y = np.meshgrid(np.linspace(-15.0, -5.0, nx), np.linspace(-3.0, 3.0, ny), indexing="ij")
    return np.stack([X, Y, bukin6(X, Y)], axis=-1)


def init_surface(target, n_u: int = 8, n_v: int = 8, degree: int = 3, seed: int = 0) -> NurbsSurface:
    """Clamped uniform knots and control points drawn uniformly over the
    target's bounding box."""
    pts = np.asarray(target, dtype=np.float64).reshape(-1, 3)
    rng = np.random.default_rng(seed)
    ctrl = rng.uniform(pts.min(axis=0), pts.max(axis=0), size=(n_u, n_v, 3))
    return NurbsSurface(
        ctrl,
        np.ones((n_u, n_v)),
        KnotVector.clamped_uniform(n_u, degree),
        KnotVector.clamped_uniform(n_v, degree),
    )


def project_knots(knots: KnotVector, margin: float = 1e-4) -> KnotVector:
    """Restore a valid clamped knot vector after an unconstrained update.

    Interior knots are clamped into the domain and sorted; pairs closer than
    ``margin`` (including against the fixed end knots) are pushed apart
    symmetrically, with a final sweep that guarantees the gaps.
    """
    return knots.with_knots(_project_array(knots.knots, knots.degree, margin))


def _project_array(k, d, margin):
    k = np.array(k, dtype=np.float64)
    lo, hi = k[d], k[-d - 1]
    inner = np.sort(np.clip(k[d + 1 : -d - 1], lo, hi))
    m = inner.shape[0]
    if m == 0:
        return k
    if (m + 1) * margin > hi - lo:
        raise ConfigurationError("knot_margin too large for the number of interior knots")
    ext = np.concatenate([[lo], inner, [hi]])
    for _ in range(4 * (m + 1)):
        gaps = np.diff(ext)
        bad = np.flatnonzero(gaps < margin)
        if bad.size == 0:
            break
        for i in bad:
            mid = 0.5 * (ext[i] + ext[i + 1])
            left, right = mid - 0.5 * margin, mid + 0.5 * margin
            if i == 0:
                left, right = lo, lo + margin
            elif i + 1 == m + 1:
                left, right = hi - margin, hi
            ext[i], ext[i + 1] = left, right
        ext[0], ext[-1] = lo, hi
        ext[1:-1] = np.sort(np.clip(ext[1:-1], lo, hi))
    for i in range(1, m + 1):
        ext[i] = max(ext[i], ext[i - 1] + margin)
    for i in range(m, 0, -1):
        ext[i] = min(ext[i], ext[i + 1] - margin)
    k[d + 1 : -d - 1] = ext[1:-1]
    return k


class Adam:
    def __init__(self, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = None
        self.v = None
        self.t = 0

    def step(self, param, grad):
        if self.m is None:
            self.m = np.zeros_like(param)
            self.v = np.zeros_like(param)
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad * grad
        m_hat = self.m / (1 - self.beta1**self.t)
        v_hat = self.v / (1 - self.beta2**self.t)
        return param - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


class PlainGD:
    def __init__(self, lr):
        self.lr = lr

    def step(self, param, grad):
        return param - self.lr * grad


def make_optimizer(cfg: FitConfig, lr: float):
    if cfg.optimizer == "adam":
        return Adam(lr, cfg.beta1, cfg.beta2, cfg.eps)
    return PlainGD(lr)


def _normalizer(target):
    pts = target.reshape(-1, 3)
    lo = pts.min(axis=0)
    span = pts.max(axis=0) - lo
    span[span == 0] = 1.0
    return lo, span


def fit_surface(target, init: NurbsSurface, cfg: FitConfig) -> FitReport:
    """Fit control points (and optionally interior knots) to a point grid.

    The surface is evaluated on a uniform parametric grid of the target's
    resolution and compared point-to-point. With ``cfg.normalize`` the
    optimizer works in coordinates where the target's bounding box is the
    unit cube; reported losses are always in target units.
    """
    target = np.asarray(target, dtype=np.float64)
    if target.ndim != 3 or target.shape[2] != 3:
        raise DimensionError("target must be an (n, m, 3) point grid")
    if not np.all(np.isfinite(target)):
        raise NumericError("target contains non-finite values")
    t0 = time.perf_counter()
    n_grid, m_grid = target.shape[:2]
    if cfg.normalize:
        shift, scale = _normalizer(target)
    else:
        shift, scale = np.zeros(3), np.ones(3)
    tgt = (target - shift) / scale
    surf = init.replace(ctrl=(init.ctrl - shift) / scale)
    count = n_grid * m_grid
    sq_scale = scale * scale

    def objective(s):
        S, cache = eval_surface_grid(s, n_grid, m_grid, cfg.threads)
        diff = S - tgt
        mse = float(np.sum(diff * diff * sq_scale) / count)
        upstream = (2.0 / count) * diff * sq_scale
        loss = mse
        lap_grad = None
        if cfg.laplacian_weight:
            lap, lap_grad = laplacian_regularizer(s.ctrl * scale)
            loss += cfg.laplacian_weight * lap
            lap_grad = cfg.laplacian_weight * lap_grad * scale
        return loss, mse, cache, upstream, lap_grad

    opt_ctrl = make_optimizer(cfg, cfg.lr)
    opt_ku = make_optimizer(cfg, cfg.lr_knots)
    opt_kv = make_optimizer(cfg, cfg.lr_knots)
    loss, mse, cache, upstream, lap_grad = objective(surf)
    history = [loss]
    for it in range(1, cfg.iterations + 1):
        grads = backward_surface(surf, cache, upstream, cfg.sigma, cfg.knot_grad)
        g_ctrl = grads.d_ctrl if lap_grad is None else grads.d_ctrl + lap_grad
        ctrl = opt_ctrl.step(surf.ctrl, g_ctrl)
        ku, kv = surf.knots_u, surf.knots_v
        if cfg.reparameterize_knots:
            ku = _knot_step(ku, grads.d_knots_u, opt_ku, cfg.knot_margin)
            kv = _knot_step(kv, grads.d_knots_v, opt_kv, cfg.knot_margin)
        surf = surf.replace(ctrl=ctrl, knots_u=ku, knots_v=kv)
        loss, mse, cache, upstream, lap_grad = objective(surf)
        if not math.isfinite(loss):
            raise DivergenceError(f"loss became non-finite at iteration {it}", it)
        history.append(loss)
    final = surf.replace(ctrl=surf.ctrl * scale + shift)
    return FitReport(final, history, mse, time.perf_counter() - t0)


def _knot_step(knots: KnotVector, grad, opt, margin):
    d = knots.degree
    inner = knots.knots[d + 1 : -d - 1]
    if inner.size == 0:
        return knots
    new = knots.knots.copy()
    new[d + 1 : -d - 1] = opt.step(inner, grad[d + 1 : -d - 1])
    return knots.with_knots(_project_array(new, d, margin))


def gradient_check(fun, params, step: float = 1e-6) -> float:
    """Max over coordinates of ``|a - fd| / max(1, |a|, |fd|)``.

    ``fun(params)`` must return ``(value, gradient)``; the gradient at
    ``params`` is compared with central differences of the value.
    """
    if not step > 0:
        raise ConfigurationError("step must be positive")
    params = np.array(params, dtype=np.float64)
    value, grad = fun(params)
    grad = np.asarray(grad, dtype=np.float64)
    if not np.isfinite(value) or not np.all(np.isfinite(grad)):
        raise NumericError("non-finite value or gradient")
    worst = 0.0
    for idx in np.ndindex(params.shape):
        plus = params.copy()
        minus = params.copy()
        plus[idx] += step
        minus[idx] -= step
        fp, _ = fun(plus)
        fm, _ = fun(minus)
        fd = (fp - fm) / (2 * step)
        if not np.isfinite(fd):
            raise NumericError("non-finite finite difference")
        a = grad[idx]
        worst = max(worst, abs(a - fd) / max(1.0, abs(a), abs(fd)))
    return float(worst)
