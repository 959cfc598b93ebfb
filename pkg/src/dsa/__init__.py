"""Differentiable spline approximation kernels."""
