"""Differentiable NURBS curves and surfaces.

Evaluation localizes each parameter to its knot span and touches only the
``p + 1`` (resp. ``(p + 1)(q + 1)``) nonzero basis functions. The reverse pass
returns exact gradients for control points and weights. Knot positions get a
smoothed surrogate, since the box-function base case of Cox-de Boor has no
derivative with respect to its knots. Three surrogates are available:

``literal``    active basis value times the knot value of its slot
``gaussian``   active basis value times ``(u - knot) / sigma**2``
``recursive``  Gaussian-smoothed box edges differentiated through the whole
               Cox-de Boor recursion (tracks the true knot derivative as
               ``sigma`` shrinks; touches up to ``2d + 2`` knots per point)
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import ConfigurationError, DimensionError, DomainError

KNOT_GRAD_MODES = ("literal", "gaussian", "recursive")
# Smoothed deltas are cut off beyond this many bandwidths.
GAUSS_CUTOFF = 6.0


@dataclass(frozen=True)
class KnotVector:
    degree: int
    knots: np.ndarray

    def __post_init__(self):
        knots = np.asarray(self.knots, dtype=np.float64)
        object.__setattr__(self, "knots", knots)
        if self.degree < 0:
            raise ConfigurationError("degree must be non-negative")
        if knots.ndim != 1 or knots.shape[0] < 2 * self.degree + 2:
            raise ConfigurationError(
                f"need at least {2 * self.degree + 2} knots for degree {self.degree}"
            )
        if np.any(np.diff(knots) < 0) or not np.all(np.isfinite(knots)):
            raise ConfigurationError("knots must be finite and non-decreasing")
        if not knots[self.degree] < knots[-self.degree - 1]:
            raise ConfigurationError("knot vector has an empty parametric range")

    @property
    def n_ctrl(self) -> int:
        return self.knots.shape[0] - self.degree - 1

    @property
    def domain(self) -> tuple[float, float]:
        return float(self.knots[self.degree]), float(self.knots[-self.degree - 1])

    @property
    def last_span(self) -> int:
        k = self.knots
        i = self.n_ctrl - 1
        while k[i] == k[i + 1]:
            i -= 1
        return i

    def is_clamped(self) -> bool:
        d = self.degree
        k = self.knots
        return bool(np.all(k[: d + 1] == k[0]) and np.all(k[-d - 1 :] == k[-1]))

    def with_knots(self, knots) -> "KnotVector":
        return KnotVector(self.degree, knots)

    @classmethod
    def clamped_uniform(cls, n_ctrl: int, degree: int, lo=0.0, hi=1.0) -> "KnotVector":
        if n_ctrl < degree + 1:
            raise ConfigurationError("need at least degree + 1 control points")
        inner = np.linspace(lo, hi, n_ctrl - degree + 1)
        knots = np.concatenate([np.full(degree, lo), inner, np.full(degree, hi)])
        return cls(degree, knots)


def find_span(u: float, knots: KnotVector) -> int:
    """Index ``i`` with ``u`` in ``[u_i, u_{i+1})``; the right end of the
    domain maps to the last non-degenerate span."""
    return int(find_spans(np.array([u], dtype=np.float64), knots)[0])


def find_spans(us, knots: KnotVector) -> np.ndarray:
    us = np.asarray(us, dtype=np.float64)
    lo, hi = knots.domain
    if np.any(us < lo) or np.any(us > hi) or not np.all(np.isfinite(us)):
        raise DomainError(f"parameter outside [{lo}, {hi}]")
    spans = np.searchsorted(knots.knots, us, side="right") - 1
    return np.clip(spans, knots.degree, knots.last_span).astype(np.int64)


def _basis_many(spans, us, kv: np.ndarray, d: int) -> np.ndarray:
    G = us.shape[0]
    N = np.zeros((G, d + 1))
    N[:, 0] = 1.0
    left = np.zeros((G, d + 1))
    right = np.zeros((G, d + 1))
    for j in range(1, d + 1):
        left[:, j] = us - kv[spans + 1 - j]
        right[:, j] = kv[spans + j] - us
        saved = np.zeros(G)
        for r in range(j):
            den = right[:, r + 1] + left[:, j - r]
            safe = np.where(den != 0.0, den, 1.0)
            temp = np.where(den != 0.0, N[:, r] / safe, 0.0)  # 0/0 -> 0
            N[:, r] = saved + right[:, r + 1] * temp
            saved = left[:, j - r] * temp
        N[:, j] = saved
    return N


def basis_funs(span: int, u: float, knots: KnotVector) -> np.ndarray:
    """Values of ``N_{span-d}, ..., N_span`` at ``u`` (Cox-de Boor)."""
    return _basis_many(np.array([span]), np.array([float(u)]), knots.knots, knots.degree)[0]


def basis_funs_many(spans, us, knots: KnotVector) -> np.ndarray:
    return _basis_many(np.asarray(spans), np.asarray(us, dtype=np.float64), knots.knots, knots.degree)


def _ratio(num, den):
    safe = np.where(den != 0.0, den, 1.0)
    return np.where(den != 0.0, num / safe, 0.0)


def basis_funs_du_many(spans, us, knots: KnotVector) -> np.ndarray:
    spans = np.asarray(spans)
    us = np.asarray(us, dtype=np.float64)
    d = knots.degree
    kv = knots.knots
    out = np.zeros((us.shape[0], d + 1))
    if d == 0:
        return out
    lower = _basis_many(spans, us, kv, d - 1)
    for a in range(d + 1):
        i = spans - d + a
        if a >= 1:
            out[:, a] += d * _ratio(lower[:, a - 1], kv[i + d] - kv[i])
        if a <= d - 1:
            out[:, a] -= d * _ratio(lower[:, a], kv[i + d + 1] - kv[i + 1])
    return out


def basis_funs_du(span: int, u: float, knots: KnotVector) -> np.ndarray:
    """Parametric derivatives ``dN/du`` of the active basis functions."""
    return basis_funs_du_many(np.array([span]), np.array([float(u)]), knots)[0]


def knot_surrogate(basis, knot_values, u=None, sigma=1e-2, mode="literal"):
    """Per-slot smoothed knot derivative factors for one evaluation point.

    ``literal``: basis value times the knot value of the slot.
    ``gaussian``: basis value times ``(u - knot) / sigma**2``.
    """
    if sigma <= 0:
        raise ConfigurationError("sigma must be positive")
    basis = np.asarray(basis, dtype=np.float64)
    knot_values = np.asarray(knot_values, dtype=np.float64)
    if mode == "literal":
        return basis * knot_values
    if mode == "gaussian":
        u = np.asarray(u, dtype=np.float64)
        if u.ndim:
            u = u[..., None]
        return basis * (u - knot_values) / sigma**2
    raise ConfigurationError(f"unknown knot gradient mode {mode!r}")


def _smoothed_delta(x, sigma):
    out = np.exp(-0.5 * (x / sigma) ** 2) / (sigma * math.sqrt(2.0 * math.pi))
    return np.where(np.abs(x) <= GAUSS_CUTOFF * sigma, out, 0.0)


def basis_knot_derivatives(us, knots: KnotVector, sigma: float = 1e-2) -> np.ndarray:
    """Derivatives of every degree-d basis function with respect to every knot.

    The box functions of the base case are written as differences of step
    functions whose edges are smoothed by a Gaussian of bandwidth ``sigma``;
    the resulting base derivatives, together with the exact derivatives of
    the Cox-de Boor ratio coefficients, are carried up the recursion.
    Returns shape (len(us), n_ctrl, len(knots)).
    """
    if sigma <= 0:
        raise ConfigurationError("sigma must be positive")
    us = np.asarray(us, dtype=np.float64)
    k = knots.knots
    d = knots.degree
    L = k.shape[0]
    G = us.shape[0]
    spans = find_spans(us, knots)
    N = np.zeros((G, L - 1))
    N[np.arange(G), spans] = 1.0
    dN = np.zeros((G, L - 1, L))
    for i in range(L - 1):
        if k[i] == k[i + 1]:
            continue
        dN[:, i, i] = -_smoothed_delta(us - k[i], sigma)
        dN[:, i, i + 1] = _smoothed_delta(us - k[i + 1], sigma)
    for p in range(1, d + 1):
        nb = L - 1 - p
        N_next = np.empty((G, nb))
        dN_next = np.empty((G, nb, L))
        for i in range(nb):
            D1 = k[i + p] - k[i]
            D2 = k[i + p + 1] - k[i + 1]
            a = (us - k[i]) / D1 if D1 != 0 else np.zeros(G)
            b = (k[i + p + 1] - us) / D2 if D2 != 0 else np.zeros(G)
            N_next[:, i] = a * N[:, i] + b * N[:, i + 1]
            dN_next[:, i] = a[:, None] * dN[:, i] + b[:, None] * dN[:, i + 1]
            if D1 != 0:
                dN_next[:, i, i] += (us - k[i + p]) / D1**2 * N[:, i]
                dN_next[:, i, i + p] -= (us - k[i]) / D1**2 * N[:, i]
            if D2 != 0:
                dN_next[:, i, i + 1] += (k[i + p + 1] - us) / D2**2 * N[:, i + 1]
                dN_next[:, i, i + p + 1] += (us - k[i + 1]) / D2**2 * N[:, i + 1]
        N, dN = N_next, dN_next
    return dN


@dataclass(frozen=True)
class NurbsCurve:
    ctrl: np.ndarray  # (t + 1, D)
    weights: np.ndarray  # (t + 1,)
    knots: KnotVector

    def __post_init__(self):
        ctrl = np.atleast_2d(np.asarray(self.ctrl, dtype=np.float64))
        weights = np.asarray(self.weights, dtype=np.float64)
        object.__setattr__(self, "ctrl", ctrl)
        object.__setattr__(self, "weights", weights)
        if weights.shape != (ctrl.shape[0],):
            raise DimensionError("one weight per control point is required")
        if ctrl.shape[0] != self.knots.n_ctrl:
            raise DimensionError(
                f"{ctrl.shape[0]} control points but knots imply {self.knots.n_ctrl}"
            )
        if np.any(weights <= 0):
            raise ConfigurationError("weights must be positive")


def eval_curve(curve: NurbsCurve, u):
    """Curve point(s) ``sum N_i w_i P_i / sum N_i w_i`` at scalar or array ``u``."""
    scalar = np.ndim(u) == 0
    us = np.atleast_1d(np.asarray(u, dtype=np.float64))
    kv = curve.knots
    d = kv.degree
    spans = find_spans(us, kv)
    N = basis_funs_many(spans, us, kv)
    idx = spans[:, None] - d + np.arange(d + 1)
    nw = N * curve.weights[idx]
    den = nw.sum(axis=1)
    assert np.all(den > 0)
    pts = np.einsum("ga,gac->gc", nw, curve.ctrl[idx]) / den[:, None]
    return pts[0] if scalar else pts


def eval_curve_polynomial(curve: NurbsCurve, u):
    """Non-rational form ``sum N_i P_i`` (weights ignored)."""
    us = np.atleast_1d(np.asarray(u, dtype=np.float64))
    kv = curve.knots
    spans = find_spans(us, kv)
    N = basis_funs_many(spans, us, kv)
    idx = spans[:, None] - kv.degree + np.arange(kv.degree + 1)
    return np.einsum("ga,gac->gc", N, curve.ctrl[idx])


@dataclass(frozen=True)
class NurbsSurface:
    ctrl: np.ndarray  # (n + 1, m + 1, 3)
    weights: np.ndarray  # (n + 1, m + 1)
    knots_u: KnotVector
    knots_v: KnotVector

    def __post_init__(self):
        ctrl = np.asarray(self.ctrl, dtype=np.float64)
        weights = np.asarray(self.weights, dtype=np.float64)
        object.__setattr__(self, "ctrl", ctrl)
        object.__setattr__(self, "weights", weights)
        if ctrl.ndim != 3 or ctrl.shape[2] != 3:
            raise DimensionError("ctrl must have shape (n+1, m+1, 3)")
        if weights.shape != ctrl.shape[:2]:
            raise DimensionError("weights must match the control grid")
        if ctrl.shape[:2] != (self.knots_u.n_ctrl, self.knots_v.n_ctrl):
            raise DimensionError(
                f"control grid {ctrl.shape[:2]} inconsistent with knots "
                f"({self.knots_u.n_ctrl}, {self.knots_v.n_ctrl})"
            )
        if np.any(weights <= 0):
            raise ConfigurationError("weights must be positive")

    @property
    def degree_u(self) -> int:
        return self.knots_u.degree

    @property
    def degree_v(self) -> int:
        return self.knots_v.degree

    def replace(self, ctrl=None, weights=None, knots_u=None, knots_v=None) -> "NurbsSurface":
        return NurbsSurface(
            self.ctrl if ctrl is None else ctrl,
            self.weights if weights is None else weights,
            self.knots_u if knots_u is None else knots_u,
            self.knots_v if knots_v is None else knots_v,
        )

    def to_dict(self) -> dict:
        return {
            "degreeU": self.degree_u,
            "degreeV": self.degree_v,
            "knotsU": self.knots_u.knots.tolist(),
            "knotsV": self.knots_v.knots.tolist(),
            "ctrl": self.ctrl.tolist(),
            "weights": self.weights.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "NurbsSurface":
        try:
            return cls(
                np.asarray(data["ctrl"], dtype=np.float64),
                np.asarray(data["weights"], dtype=np.float64),
                KnotVector(int(data["degreeU"]), data["knotsU"]),
                KnotVector(int(data["degreeV"]), data["knotsV"]),
            )
        except KeyError as exc:
            raise ConfigurationError(f"surface JSON is missing {exc}") from None

    @classmethod
    def from_json(cls, path) -> "NurbsSurface":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def random_surface(rng, n_u=6, n_v=6, degree_u=3, degree_v=3, rational=True, clamped=True):
    """Seeded random surface with random interior knots, for tests and gradchecks."""

    def knots(n, d):
        if clamped:
            inner = np.sort(rng.uniform(0.05, 0.95, n - d - 1))
            return KnotVector(d, np.concatenate([np.zeros(d + 1), inner, np.ones(d + 1)]))
        return KnotVector(d, np.sort(rng.uniform(0.0, 1.0, n + d + 1)))

    ctrl = rng.normal(size=(n_u, n_v, 3))
    weights = rng.uniform(0.5, 2.0, (n_u, n_v)) if rational else np.ones((n_u, n_v))
    return NurbsSurface(ctrl, weights, knots(n_u, degree_u), knots(n_v, degree_v))


@dataclass(frozen=True)
class EvalCache:
    u: np.ndarray
    v: np.ndarray
    u_span: np.ndarray
    v_span: np.ndarray
    u_basis: np.ndarray  # (G, p + 1)
    v_basis: np.ndarray  # (H, q + 1)
    denom: np.ndarray  # (G, H)
    points: np.ndarray  # (G, H, 3)

    @property
    def shape(self):
        return self.denom.shape


def param_grid(knots: KnotVector, count: int) -> np.ndarray:
    lo, hi = knots.domain
    return np.linspace(lo, hi, count)


def eval_surface_at(surface: NurbsSurface, u, v, threads: int = 1):
    """Evaluate on the tensor grid ``u x v`` of explicit parameter values."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    us = find_spans(u, surface.knots_u)
    vs = find_spans(v, surface.knots_v)
    Nu = basis_funs_many(us, u, surface.knots_u)
    Nv = basis_funs_many(vs, v, surface.knots_v)
    pw = np.concatenate(
        [surface.ctrl * surface.weights[..., None], surface.weights[..., None]], axis=2
    )
    S, W = kernels.nurbs_eval_grid(pw, us, Nu, vs, Nv, threads)
    assert np.all(W > 0)
    return S, EvalCache(u, v, us, vs, Nu, Nv, W, S)


def eval_surface_grid(surface: NurbsSurface, n_grid: int, m_grid: int, threads: int = 1):
    """Evaluate on a uniform ``n_grid x m_grid`` parametric grid.

    Returns ``(points, cache)``; ``points`` has shape (n_grid, m_grid, 3).
    """
    if n_grid < 2 or m_grid < 2:
        raise DimensionError("grid needs at least 2 points per direction")
    return eval_surface_at(
        surface, param_grid(surface.knots_u, n_grid), param_grid(surface.knots_v, m_grid), threads
    )


def _window(surface, cache, index):
    g, h = index
    p, q = surface.degree_u, surface.degree_v
    iu = cache.u_span[g] - p + np.arange(p + 1)
    iv = cache.v_span[h] - q + np.arange(q + 1)
    nab = np.outer(cache.u_basis[g], cache.v_basis[h])
    return iu, iv, nab


def grad_wrt_ctrl(surface: NurbsSurface, cache: EvalCache, index) -> np.ndarray:
    """Rational basis ``dS/dP_ij`` at grid point ``index``, shape (n+1, m+1)."""
    iu, iv, nab = _window(surface, cache, index)
    out = np.zeros(surface.weights.shape)
    out[np.ix_(iu, iv)] = nab * surface.weights[np.ix_(iu, iv)] / cache.denom[index]
    return out


def grad_wrt_weights(surface: NurbsSurface, cache: EvalCache, index) -> np.ndarray:
    """``dS/dw_ij`` at grid point ``index``, shape (n+1, m+1, 3)."""
    iu, iv, nab = _window(surface, cache, index)
    W = cache.denom[index]
    S = cache.points[index]
    out = np.zeros(surface.ctrl.shape)
    P = surface.ctrl[np.ix_(iu, iv)]
    out[np.ix_(iu, iv)] = nab[..., None] * (P - S) / W
    return out


@dataclass(frozen=True)
class NurbsGradients:
    d_ctrl: np.ndarray
    d_weights: np.ndarray
    d_knots_u: np.ndarray
    d_knots_v: np.ndarray


def _check_upstream(cache, upstream):
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != cache.points.shape:
        raise DimensionError(
            f"upstream shape {upstream.shape} != evaluated grid {cache.points.shape}"
        )
    return upstream


def _scatter_knot_grads(knots: KnotVector, params, spans, basis, direction, sigma, mode):
    d = knots.degree
    slots = spans[:, None] + np.arange(d + 1)
    factors = knot_surrogate(basis, knots.knots[slots], params, sigma, mode)
    out = np.zeros(knots.knots.shape[0])
    np.add.at(out, slots.ravel(), (factors * direction).ravel())
    return out


def backward_surface(
    surface: NurbsSurface,
    cache: EvalCache,
    upstream,
    sigma: float = 1e-2,
    knot_mode: str = "literal",
) -> NurbsGradients:
    """Accumulate the VJP of every evaluated point into all parameter blocks.

    In the ``literal`` and ``gaussian`` modes, knot slot ``span + h`` receives
    the surrogate factor of the h-th active basis function times the
    upstream-weighted derivative of the surface with respect to that basis
    value. ``recursive`` uses :func:`basis_knot_derivatives` instead.
    """
    if sigma <= 0:
        raise ConfigurationError("sigma must be positive")
    if knot_mode not in KNOT_GRAD_MODES:
        raise ConfigurationError(f"unknown knot gradient mode {knot_mode!r}")
    upstream = _check_upstream(cache, upstream)
    d_ctrl, d_w, dir_u, dir_v = kernels.nurbs_backward_grid(
        surface.ctrl,
        surface.weights,
        cache.u_span,
        cache.u_basis,
        cache.v_span,
        cache.v_basis,
        cache.points,
        cache.denom,
        upstream,
    )
    if knot_mode == "recursive":
        d_ku, d_kv = _recursive_knot_grads(surface, cache, upstream, sigma)
    else:
        d_ku = _scatter_knot_grads(
            surface.knots_u, cache.u, cache.u_span, cache.u_basis, dir_u, sigma, knot_mode
        )
        d_kv = _scatter_knot_grads(
            surface.knots_v, cache.v, cache.v_span, cache.v_basis, dir_v, sigma, knot_mode
        )
    return NurbsGradients(d_ctrl, d_w, d_ku, d_kv)


def _recursive_knot_grads(surface, cache, upstream, sigma):
    # Directions are needed for every basis index, not only the active window,
    # because smoothed base edges reach just past the support.
    p, q = surface.degree_u, surface.degree_v
    P, w = surface.ctrl, surface.weights
    g_over_w = upstream / cache.denom[..., None]
    gs = np.einsum("ghc,ghc->gh", g_over_w, cache.points)
    iv = cache.v_span[:, None] - q + np.arange(q + 1)  # (H, q+1)
    iu = cache.u_span[:, None] - p + np.arange(p + 1)  # (G, p+1)
    # dir_u[g, i] = sum_h sum_b Nv[h,b] w[i,jb] (<g, P[i,jb]> - <g, S>) / W
    Pv = P[:, iv]  # (n, H, q+1, 3)
    dot_v = np.einsum("ihbc,ghc->gihb", Pv, g_over_w) - gs[:, None, :, None]
    dir_u = np.einsum("gihb,ihb,hb->gi", dot_v, w[:, iv], cache.v_basis)
    Pu = P[iu]  # (G, p+1, m, 3)
    dot_u = np.einsum("gajc,ghc->gajh", Pu, g_over_w) - gs[:, None, None, :]
    dir_v = np.einsum("gajh,gaj,ga->hj", dot_u, w[iu], cache.u_basis)
    d_ku = np.einsum("gi,gik->k", dir_u, basis_knot_derivatives(cache.u, surface.knots_u, sigma))
    d_kv = np.einsum("hj,hjk->k", dir_v, basis_knot_derivatives(cache.v, surface.knots_v, sigma))
    return d_ku, d_kv


def grad_wrt_knots(surface, cache, upstream, sigma=1e-2, mode="literal"):
    grads = backward_surface(surface, cache, upstream, sigma, mode)
    return grads.d_knots_u, grads.d_knots_v
