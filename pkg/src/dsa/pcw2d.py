"""2D piecewise-constant layer over connected components of a thresholded image.

Forward: every pixel takes the mean of its component. Backward: the Jacobian
has entries ``1 / |I|`` for pixel pairs inside the same component ``I``, so the
VJP is a per-component average of the upstream gradient.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import DimensionError


@dataclass(frozen=True)
class LabelGrid:
    labels: np.ndarray  # (rows, cols) int64, ids 0..k-1
    sizes: np.ndarray  # (k,)

    @property
    def shape(self):
        return self.labels.shape

    @property
    def k(self) -> int:
        return int(self.sizes.shape[0])

    @classmethod
    def from_labels(cls, labels) -> "LabelGrid":
        labels = np.asarray(labels, dtype=np.int64)
        if labels.ndim != 2 or labels.size == 0:
            raise DimensionError("labels must be a nonempty 2D grid")
        sizes = np.bincount(labels.ravel())
        if np.any(sizes == 0):
            raise DimensionError("label ids must be contiguous 0..k-1")
        return cls(labels, sizes)


def connected_components(image, threshold: float) -> LabelGrid:
    """Label 4-connected regions of the image binarized at ``threshold``.

    Pixels ``>= threshold`` form the foreground; background regions are
    labeled too. Ids follow the row-major order of each region's first pixel.
    """
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2 or image.size == 0:
        raise DimensionError("image must be a nonempty 2D grid")
    binary = (image >= threshold).astype(np.int64)
    labels, k = kernels.label_components(binary)
    return LabelGrid(labels, np.bincount(labels.ravel(), minlength=k))


def _component_mean(values, labels: LabelGrid):
    values = np.asarray(values, dtype=np.float64)
    if values.shape != labels.shape:
        raise DimensionError(f"grid shape {values.shape} != label shape {labels.shape}")
    flat = labels.labels.ravel()
    vals = values.ravel()
    sums = np.bincount(flat, weights=vals, minlength=labels.k)
    means = sums / labels.sizes
    # Already-constant components keep their value bit-for-bit (exact idempotence).
    lo = np.full(labels.k, np.inf)
    hi = np.full(labels.k, -np.inf)
    np.minimum.at(lo, flat, vals)
    np.maximum.at(hi, flat, vals)
    flat_comp = lo == hi
    means[flat_comp] = lo[flat_comp]
    return means[flat].reshape(labels.shape)


def pcw2d_forward(image, labels: LabelGrid) -> np.ndarray:
    return _component_mean(image, labels)


def pcw2d_vjp(labels: LabelGrid, upstream) -> np.ndarray:
    # The Jacobian is symmetric, so J^T g is the same per-component mean.
    return _component_mean(upstream, labels)


def dense_jacobian(labels: LabelGrid) -> np.ndarray:
    """Materialized (n, n) Jacobian; for testing small grids only."""
    flat = labels.labels.ravel()
    same = flat[:, None] == flat[None, :]
    return same / labels.sizes[flat][:, None]
