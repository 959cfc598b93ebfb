"""Exact k-piecewise polynomial regression and its block-diagonal weak Jacobian.

The forward pass projects a signal onto the set of k-piece, degree-d
piecewise polynomials (breakpoints included in the optimization) with an
exact dynamic program. The backward pass treats the partition as fixed: the
Jacobian is block diagonal with one least-squares hat matrix per interval.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from . import kernels
from .errors import DimensionError, InfeasibleArgumentsError


@dataclass(frozen=True)
class IntervalPartition:
    """Partition of ``n`` indices into contiguous intervals.

    ``breaks[i]`` is the 0-based index where interval ``i + 1`` starts, which
    equals the 1-based position of the cut after interval ``i``.
    """

    n: int
    breaks: tuple[int, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "breaks", tuple(int(b) for b in self.breaks))
        if self.n < 1:
            raise DimensionError("partition needs n >= 1")
        prev = 0
        for b in self.breaks:
            if not prev < b < self.n:
                raise DimensionError(f"invalid breaks {self.breaks} for n={self.n}")
            prev = b

    @property
    def k(self) -> int:
        return len(self.breaks) + 1

    @property
    def bounds(self) -> list[tuple[int, int]]:
        """Half-open ``(start, stop)`` pairs, one per interval."""
        edges = (0, *self.breaks, self.n)
        return list(zip(edges[:-1], edges[1:]))

    @property
    def sizes(self) -> np.ndarray:
        return np.diff(np.array((0, *self.breaks, self.n)))

    def labels(self) -> np.ndarray:
        """Interval id of every index."""
        return np.repeat(np.arange(self.k), self.sizes)


def local_coords(size: int) -> np.ndarray:
    """Interval indices mapped affinely onto [-1, 1]; a single index maps to 0."""
    if size == 1:
        return np.zeros(1)
    return np.linspace(-1.0, 1.0, size)


@lru_cache(maxsize=256)
def _factors(size: int, d: int) -> tuple[np.ndarray, np.ndarray]:
    # Depends on the interval size only, so it is shared by equal-size intervals.
    V = np.vander(local_coords(size), d + 1, increasing=True)
    M = np.linalg.solve(V.T @ V, V.T)
    V.setflags(write=False)
    M.setflags(write=False)
    return V, M


def polyfit_interval(x, interval=None, d: int = 0) -> np.ndarray:
    """Least-squares polynomial coefficients on one interval.

    ``interval`` is a half-open ``(start, stop)`` index pair into ``x``; the
    whole sequence is used when omitted. Coefficients are in the monomial
    basis of the local coordinate from :func:`local_coords`.
    """
    x = np.asarray(x, dtype=np.float64)
    start, stop = (0, x.shape[0]) if interval is None else interval
    size = stop - start
    if size < d + 1:
        raise InfeasibleArgumentsError(
            f"interval of size {size} cannot determine a degree-{d} polynomial"
        )
    _, M = _factors(size, d)
    return M @ x[start:stop]


@dataclass(frozen=True)
class PiecewiseFit:
    partition: IntervalPartition
    degree: int
    coeffs: np.ndarray  # (k, d + 1)
    fitted: np.ndarray
    cost: float

    def to_dict(self) -> dict:
        return {
            "n": self.partition.n,
            "k": self.partition.k,
            "d": self.degree,
            "breaks": list(self.partition.breaks),
            "coeffs": self.coeffs.tolist(),
            "cost": self.cost,
        }


def fit_partition(x, partition: IntervalPartition, d: int) -> PiecewiseFit:
    """Per-interval least-squares fit with the partition held fixed."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (partition.n,):
        raise DimensionError(f"expected {partition.n} samples, got {x.shape}")
    coeffs = np.empty((partition.k, d + 1))
    fitted = np.empty_like(x)
    for i, (start, stop) in enumerate(partition.bounds):
        V, M = _factors(stop - start, d)
        coeffs[i] = M @ x[start:stop]
        fitted[start:stop] = V @ coeffs[i]
    cost = float(np.sum((x - fitted) ** 2))
    return PiecewiseFit(partition, d, coeffs, fitted, cost)


def fit_kpiecewise(x, k: int, d: int = 0) -> PiecewiseFit:
    """Best k-piece, degree-d approximation of ``x`` in the l2 sense.

    The dynamic program is exact and runs in O(n^2 (k + d^2)); every interval
    has at least ``d + 1`` samples.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] == 0:
        raise DimensionError("x must be a nonempty 1D sequence")
    n = x.shape[0]
    if k < 1 or d < 0:
        raise InfeasibleArgumentsError("need k >= 1 and d >= 0")
    if k > n or k * (d + 1) > n:
        raise InfeasibleArgumentsError(
            f"cannot split n={n} samples into k={k} intervals of size >= {d + 1}"
        )
    if not np.all(np.isfinite(x)):
        raise DimensionError("x contains non-finite values")
    starts, _ = kernels.segment_dp(x, k, d)
    return fit_partition(x, IntervalPartition(n, tuple(starts)), d)


@dataclass(frozen=True)
class BlockSparseJacobian:
    """Block-diagonal weak Jacobian of a piecewise fit, kept in factored form.

    For ``d >= 1`` block ``I`` equals ``V_I @ M_I`` with
    ``M_I = (V_I^T V_I)^{-1} V_I^T``; for ``d == 0`` every entry of block ``I``
    is ``1 / |I|`` and only the sizes are needed.
    """

    partition: IntervalPartition
    degree: int
    factors: tuple = field(default=(), repr=False)

    @property
    def n(self) -> int:
        return self.partition.n

    def block(self, i: int) -> np.ndarray:
        start, stop = self.partition.bounds[i]
        size = stop - start
        if self.degree == 0:
            return np.full((size, size), 1.0 / size)
        V, M = self.factors[i]
        return V @ M

    def todense(self) -> np.ndarray:
        J = np.zeros((self.n, self.n))
        for i, (start, stop) in enumerate(self.partition.bounds):
            J[start:stop, start:stop] = self.block(i)
        return J

    def vjp(self, v) -> np.ndarray:
        return vjp(self, v)

    def jvp(self, v) -> np.ndarray:
        v = _check_vector(v, self.n)
        out = np.empty_like(v)
        for i, (start, stop) in enumerate(self.partition.bounds):
            if self.degree == 0:
                out[start:stop] = v[start:stop].mean()
            else:
                V, M = self.factors[i]
                out[start:stop] = V @ (M @ v[start:stop])
        return out


def jacobian(fit: PiecewiseFit) -> BlockSparseJacobian:
    part = fit.partition
    if fit.degree == 0:
        return BlockSparseJacobian(part, 0)
    factors = tuple(_factors(stop - start, fit.degree) for start, stop in part.bounds)
    return BlockSparseJacobian(part, fit.degree, factors)


def _check_vector(v, n):
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (n,):
        raise DimensionError(f"expected vector of length {n}, got shape {v.shape}")
    return v


def vjp(jac: BlockSparseJacobian, v) -> np.ndarray:
    """``J^T v`` from the factors, O(n (d + 1)) work."""
    v = _check_vector(v, jac.n)
    if jac.degree == 0:
        part = jac.partition
        sums = np.add.reduceat(v, np.array((0, *part.breaks)))
        return np.repeat(sums / part.sizes, part.sizes)
    out = np.empty_like(v)
    for (start, stop), (V, M) in zip(jac.partition.bounds, jac.factors):
        out[start:stop] = M.T @ (V.T @ v[start:stop])
    return out
