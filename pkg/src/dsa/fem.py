"""Finite-element Poisson solver on the unit square by energy minimization.

Tensor-product Lagrange elements of degree 1..3 on a structured mesh. The
discrete solution minimizes ``J(U) = 1/2 int nu |grad U|^2 - int f U`` over
the interior nodal coefficients with the boundary ring held at the Dirichlet
value. Node grids are indexed ``[ix, iy]`` with ``x = ix / (nx * d)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.sparse.linalg import LinearOperator, cg

from .errors import ConfigurationError, DimensionError, DivergenceError, DomainError, NumericError

SOLVERS = ("gd", "adam", "cg")


@dataclass(frozen=True)
class StructuredMesh:
    nx: int
    ny: int
    degree: int = 1

    def __post_init__(self):
        if self.nx < 1 or self.ny < 1:
            raise DimensionError("mesh needs at least one element per axis")
        if self.degree not in (1, 2, 3):
            raise ConfigurationError(f"element degree must be 1, 2 or 3, got {self.degree}")

    @property
    def node_shape(self) -> tuple[int, int]:
        return self.nx * self.degree + 1, self.ny * self.degree + 1

    @property
    def h(self) -> tuple[float, float]:
        return 1.0 / self.nx, 1.0 / self.ny

    def node_coords(self):
        Nx, Ny = self.node_shape
        return np.meshgrid(np.linspace(0.0, 1.0, Nx), np.linspace(0.0, 1.0, Ny), indexing="ij")

    def boundary_mask(self) -> np.ndarray:
        mask = np.zeros(self.node_shape, dtype=bool)
        mask[0, :] = mask[-1, :] = mask[:, 0] = mask[:, -1] = True
        return mask

    def quad_coords(self, npts: int):
        """Physical quadrature points, shape ``(nx, ny, npts, npts)`` each."""
        q, _ = gauss_quadrature(npts)
        hx, hy = self.h
        xq = (np.arange(self.nx)[:, None] + 0.5 * (q + 1.0)) * hx
        yq = (np.arange(self.ny)[:, None] + 0.5 * (q + 1.0)) * hy
        X = np.broadcast_to(xq[:, None, :, None], (self.nx, self.ny, npts, npts))
        Y = np.broadcast_to(yq[None, :, None, :], (self.nx, self.ny, npts, npts))
        return X, Y


@dataclass
class ScalarField2D:
    mesh: StructuredMesh
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != self.mesh.node_shape:
            raise DimensionError(f"field shape {self.values.shape} != node grid {self.mesh.node_shape}")

    @classmethod
    def zeros(cls, mesh: StructuredMesh) -> "ScalarField2D":
        return cls(mesh, np.zeros(mesh.node_shape))

    @classmethod
    def interpolate(cls, mesh: StructuredMesh, fn) -> "ScalarField2D":
        X, Y = mesh.node_coords()
        return cls(mesh, np.broadcast_to(fn(X, Y), mesh.node_shape).astype(np.float64))


def lagrange_basis_1d(d: int, xi):
    """Values and derivatives of the degree-``d`` nodal basis on equally spaced
    nodes of [-1, 1]. Scalar ``xi`` gives two ``(d+1,)`` arrays, an array of
    points gives ``(len, d+1)`` arrays."""
    xi_arr = np.asarray(xi, dtype=np.float64)
    if np.any(np.abs(xi_arr) > 1.0 + 1e-14):
        raise DomainError("reference coordinate outside [-1, 1]")
    pts = np.atleast_1d(xi_arr)[:, None]
    nodes = np.linspace(-1.0, 1.0, d + 1)
    vals = np.ones((pts.shape[0], d + 1))
    ders = np.zeros((pts.shape[0], d + 1))
    for j in range(d + 1):
        others = [m for m in range(d + 1) if m != j]
        denom = np.prod([nodes[j] - nodes[m] for m in others])
        for m in others:
            vals[:, j] *= pts[:, 0] - nodes[m]
            # Product rule: drop one factor at a time.
            term = np.ones(pts.shape[0])
            for r in others:
                if r != m:
                    term *= pts[:, 0] - nodes[r]
            ders[:, j] += term
        vals[:, j] /= denom
        ders[:, j] /= denom
    if xi_arr.ndim == 0:
        return vals[0], ders[0]
    return vals, ders


@lru_cache(maxsize=8)
def gauss_quadrature(npts: int):
    """Gauss-Legendre points and weights on [-1, 1], exact to degree 2*npts-1."""
    if not isinstance(npts, (int, np.integer)) or not 1 <= npts <= 5:
        raise ConfigurationError(f"quadrature supports 1..5 points, got {npts!r}")
    pts, wts = np.polynomial.legendre.leggauss(int(npts))
    pts.setflags(write=False)
    wts.setflags(write=False)
    return pts, wts


@lru_cache(maxsize=16)
def _reference(d: int, npts: int):
    q, w = gauss_quadrature(npts)
    B, D = lagrange_basis_1d(d, q)
    return B, D, np.outer(w, w)


def _gather(mesh: StructuredMesh, U):
    """Element-local nodal values, shape ``(nx, ny, d+1, d+1)``."""
    d = mesh.degree
    out = np.empty((mesh.nx, mesh.ny, d + 1, d + 1))
    for a in range(d + 1):
        for b in range(d + 1):
            out[:, :, a, b] = U[a : a + mesh.nx * d : d, b : b + mesh.ny * d : d]
    return out


def _scatter(mesh: StructuredMesh, local):
    # Fixed (a, b) order of strided adds keeps the sum order deterministic.
    d = mesh.degree
    out = np.zeros(mesh.node_shape)
    for a in range(d + 1):
        for b in range(d + 1):
            out[a : a + mesh.nx * d : d, b : b + mesh.ny * d : d] += local[:, :, a, b]
    return out


def _sample(mesh: StructuredMesh, fn, npts: int, name: str):
    """Evaluate a coefficient at quadrature points; numbers and arrays of the
    quadrature shape pass through."""
    shape = (mesh.nx, mesh.ny, npts, npts)
    if callable(fn):
        X, Y = mesh.quad_coords(npts)
        vals = np.broadcast_to(np.asarray(fn(X, Y), dtype=np.float64), shape)
    else:
        vals = np.broadcast_to(np.asarray(fn, dtype=np.float64), shape)
    if not np.all(np.isfinite(vals)):
        raise NumericError(f"{name} is non-finite at a quadrature point")
    return vals


class EnergyOperator:
    """``J``, its gradient and the stiffness action for fixed ``nu`` and ``f``.

    Coefficients are sampled once at the ``(d+1)^2`` tensor Gauss points of
    every element.
    """

    def __init__(self, mesh: StructuredMesh, nu=1.0, f=0.0):
        self.mesh = mesh
        npts = mesh.degree + 1
        self.B, self.D, w2 = _reference(mesh.degree, npts)
        hx, hy = mesh.h
        self.sx, self.sy = 2.0 / hx, 2.0 / hy
        self.wdet = w2 * (0.25 * hx * hy)
        self.nu_w = _sample(mesh, nu, npts, "diffusivity") * self.wdet
        self.f_w = _sample(mesh, f, npts, "forcing") * self.wdet
        self.interior = ~mesh.boundary_mask()
        self._load = None

    def _check(self, U):
        U = U.values if isinstance(U, ScalarField2D) else np.asarray(U, dtype=np.float64)
        if U.shape != self.mesh.node_shape:
            raise DimensionError(f"field shape {U.shape} != node grid {self.mesh.node_shape}")
        return U

    def _grads(self, Ue):
        # Tensor-product contractions as batched matmuls: D @ Ue @ B^T etc.
        gx = (self.D @ Ue @ self.B.T) * self.sx
        gy = (self.B @ Ue @ self.D.T) * self.sy
        return gx, gy

    def energy(self, U) -> float:
        Ue = _gather(self.mesh, self._check(U))
        gx, gy = self._grads(Ue)
        uq = self.B @ Ue @ self.B.T
        return float(0.5 * np.sum(self.nu_w * (gx * gx + gy * gy)) - np.sum(self.f_w * uq))

    def stiffness_action(self, U) -> np.ndarray:
        """``K U`` over all nodes (no boundary masking)."""
        Ue = _gather(self.mesh, self._check(U))
        gx, gy = self._grads(Ue)
        fx, fy = self.nu_w * gx * self.sx, self.nu_w * gy * self.sy
        local = self.D.T @ fx @ self.B + self.B.T @ fy @ self.D
        return _scatter(self.mesh, local)

    def load(self) -> np.ndarray:
        if self._load is None:
            self._load = _scatter(self.mesh, self.B.T @ self.f_w @ self.B)
        return self._load

    def gradient(self, U) -> np.ndarray:
        """``dJ/dU`` on interior nodes; boundary entries are 0."""
        g = self.stiffness_action(U) - self.load()
        g[~self.interior] = 0.0
        return g


def assemble_energy(mesh: StructuredMesh, U, nu=1.0, f=0.0) -> float:
    return EnergyOperator(mesh, nu, f).energy(U)


def energy_gradient(mesh: StructuredMesh, U, nu=1.0, f=0.0) -> np.ndarray:
    return EnergyOperator(mesh, nu, f).gradient(U)


def apply_dirichlet(U, g: float = 0.0):
    """Copy of ``U`` with its boundary ring set to ``g``."""
    if isinstance(U, ScalarField2D):
        return ScalarField2D(U.mesh, apply_dirichlet(U.values, g))
    out = np.array(U, dtype=np.float64)
    out[0, :] = out[-1, :] = g
    out[:, 0] = out[:, -1] = g
    return out


def pad_zero_neumann(interior):
    """Extend an interior node block by one ring that copies its neighbours,
    the discrete zero-normal-derivative condition."""
    interior = np.asarray(interior, dtype=np.float64)
    if interior.ndim != 2 or interior.size == 0:
        raise DimensionError("interior block must be a nonempty 2D grid")
    return np.pad(interior, 1, mode="edge")


@dataclass
class SolveResult:
    field: ScalarField2D
    iterations: int
    grad_norm: float
    history: list = field(default_factory=list)  # (iteration, J, grad max-norm)

    def __iter__(self):
        return iter((self.field, self.iterations, self.grad_norm))


def _max_eig(op: EnergyOperator, iters: int = 200, seed: int = 0) -> float:
    rng = np.random.default_rng(seed)
    v = np.where(op.interior, rng.standard_normal(op.mesh.node_shape), 0.0)
    lam = 0.0
    for _ in range(iters):
        w = np.where(op.interior, op.stiffness_action(v), 0.0)
        norm = np.linalg.norm(w)
        if norm == 0.0:
            return 1.0
        lam_new = float(np.vdot(v, w) / np.vdot(v, v))
        v = w / norm
        if abs(lam_new - lam) <= 1e-6 * abs(lam_new):
            lam = lam_new
            break
        lam = lam_new
    return lam


def _solve_cg(op: EnergyOperator, U, tol, max_iters, record):
    """Matrix-free conjugate gradients on the interior stiffness system.

    The residual 2-norm bound ``tol`` implies the max-norm stopping rule.
    """
    inner = op.interior
    size = int(inner.sum())
    work = np.zeros(op.mesh.node_shape)

    def matvec(x):
        work[inner] = np.ravel(x)
        return op.stiffness_action(work)[inner]

    A = LinearOperator((size, size), matvec=matvec, dtype=np.float64)
    b = op.load()[inner]
    count = 0

    def callback(xk):
        nonlocal count
        count += 1
        U[inner] = xk
        gn = record(count, op.gradient(U))
        if not math.isfinite(gn):
            raise DivergenceError(f"residual became non-finite at iteration {count}", count)

    x, info = cg(A, b, x0=U[inner], rtol=0.0, atol=tol, maxiter=max_iters, callback=callback)
    if info < 0 or not np.all(np.isfinite(x)):
        raise DivergenceError(f"conjugate gradients broke down at iteration {count}", count)
    U[inner] = x
    return U, count


def solve_poisson(
    mesh: StructuredMesh,
    nu=1.0,
    f=0.0,
    method: str = "cg",
    tol: float = 1e-8,
    max_iters: int = 100000,
    lr: float | None = None,
    log_every: int = 0,
) -> SolveResult:
    """Minimize ``J`` over interior coefficients with zero Dirichlet data.

    Stops once the max-norm of the gradient is at most ``tol``. ``gd`` uses
    the step ``1/lambda_max`` from power iteration; ``adam`` uses ``lr``
    (default ``0.1 / sqrt(lambda_max)``) with ``eps = lr * lambda_max``; ``cg`` is scipy conjugate
    gradients on the matrix-free stiffness operator.
    """
    if method not in SOLVERS:
        raise ConfigurationError(f"unknown method {method!r}; choose from {SOLVERS}")
    if not tol > 0:
        raise ConfigurationError("tol must be positive")
    if max_iters < 0:
        raise ConfigurationError("max_iters must be non-negative")
    op = EnergyOperator(mesh, nu, f)
    U = np.zeros(mesh.node_shape)
    history = []

    def record(it, g):
        gn = float(np.max(np.abs(g))) if g.size else 0.0
        if log_every and (it % log_every == 0):
            J = op.energy(U)
            if not math.isfinite(J):
                raise DivergenceError(f"energy became non-finite at iteration {it}", it)
            history.append((it, J, gn))
        return gn

    g = op.gradient(U)
    gn = record(0, g)
    it = 0
    if method == "cg":
        if gn > tol and max_iters > 0:
            U, it = _solve_cg(op, U, tol, max_iters, record)
        g = op.gradient(U)
        gn = float(np.max(np.abs(g)))
    else:
        lam = _max_eig(op)
        if method == "gd":
            step = 1.0 / lam if lr is None else lr
            while gn > tol and it < max_iters:
                U -= step * g
                it += 1
                g = op.gradient(U)
                gn = record(it, g)
                if not math.isfinite(gn):
                    raise DivergenceError(f"gradient became non-finite at iteration {it}", it)
        else:
            step = (0.1 / math.sqrt(lam)) if lr is None else lr
            # eps = step * lambda_max caps the per-coordinate step at 1/lambda_max,
            # so late iterations reduce to stable gradient descent instead of
            # hovering at the lr scale.
            b1, b2, eps = 0.9, 0.999, step * lam
            m = np.zeros_like(U)
            v = np.zeros_like(U)
            while gn > tol and it < max_iters:
                it += 1
                m = b1 * m + (1 - b1) * g
                v = b2 * v + (1 - b2) * g * g
                mhat = m / (1 - b1**it)
                vhat = v / (1 - b2**it)
                U -= step * mhat / (np.sqrt(vhat) + eps)
                g = op.gradient(U)
                gn = record(it, g)
                if not math.isfinite(gn):
                    raise DivergenceError(f"gradient became non-finite at iteration {it}", it)
    U[~op.interior] = 0.0
    return SolveResult(ScalarField2D(mesh, U), it, gn, history)


def exact_solution_and_forcing(x, y):
    """``u = sin(pi x) sin(pi y)`` and ``f = -lap u = 2 pi^2 u``."""
    u = np.sin(np.pi * np.asarray(x, dtype=np.float64)) * np.sin(np.pi * np.asarray(y, dtype=np.float64))
    return u, 2.0 * np.pi**2 * u


def exact_solution(x, y):
    return exact_solution_and_forcing(x, y)[0]


def manufactured_forcing(x, y):
    return exact_solution_and_forcing(x, y)[1]


def l2_error(U: ScalarField2D, reference, npts: int | None = None) -> float:
    """``||U - reference||_L2`` by element-wise Gauss quadrature.

    ``reference`` is a callable ``(x, y)`` or a constant. The default rule
    uses ``min(d + 3, 5)`` points per axis.
    """
    mesh = U.mesh
    npts = min(mesh.degree + 3, 5) if npts is None else npts
    q, _ = gauss_quadrature(npts)
    B, _ = lagrange_basis_1d(mesh.degree, q)
    _, _, w2 = _reference(mesh.degree, npts)
    hx, hy = mesh.h
    uq = B @ _gather(mesh, U.values) @ B.T
    ref = _sample(mesh, reference, npts, "reference")
    return float(math.sqrt(np.sum((uq - ref) ** 2 * w2) * 0.25 * hx * hy))


_A = np.array([1.72, 4.05, 6.85, 9.82])
_LAMBDA = 1.0 / (1.0 + 0.25 * _A**2)


@dataclass(frozen=True)
class DiffusivityParams:
    omega: tuple = (0.0, 0.0, 0.0, 0.0)

    def __post_init__(self):
        om = tuple(float(w) for w in self.omega)
        object.__setattr__(self, "omega", om)
        if len(om) != 4:
            raise DimensionError("omega needs exactly 4 components")
        if not all(-3.0 <= w <= 3.0 for w in om):
            raise DomainError("omega components must lie in [-3, 3]")

    a = _A
    lam = _LAMBDA

    @classmethod
    def sample(cls, seed=None) -> "DiffusivityParams":
        """Uniform draw from the box [-3, 3]^4."""
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        return cls(tuple(rng.uniform(-3.0, 3.0, size=4)))

    def __call__(self, x, y):
        return diffusivity_field(self, x, y)


def _xi(x):
    x = np.asarray(x, dtype=np.float64)[..., None]
    return 0.5 * _A * np.cos(_A * x) + np.sin(_A * x)


def diffusivity_field(params: DiffusivityParams, x, y):
    """``exp(sum_i omega_i lambda_i xi_i(x) xi_i(y))``."""
    om = np.asarray(params.omega)
    return np.exp(np.sum(om * _LAMBDA * _xi(x) * _xi(y), axis=-1))
