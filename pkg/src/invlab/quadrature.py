"""Quadrature rules on simplices and tensor cells."""

from __future__ import annotations

from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi


@lru_cache(maxsize=None)
def simplex_rule(dim: int, degree: int) -> tuple[np.ndarray, np.ndarray]:
    """Collapsed-coordinate Gauss-Jacobi rule on the reference ``dim``-simplex.

    Returns barycentric points ``(q, dim+1)`` and weights summing to one, exact
    for polynomials of total degree ``<= degree``.
    """
    if dim == 0:
        return np.ones((1, 1)), np.ones(1)
    q = max(1, (degree + 2) // 2)
    nodes, weights = [], []
    for i in range(dim):
        alpha = dim - 1 - i
        x, w = roots_jacobi(q, alpha, 0)
        nodes.append((x + 1.0) / 2.0)
        weights.append(w / 2.0 ** (alpha + 1))
    grids = np.meshgrid(*nodes, indexing="ij")
    wgrid = np.meshgrid(*weights, indexing="ij")
    t = np.stack([g.ravel() for g in grids], axis=1)
    w = np.prod(np.stack([g.ravel() for g in wgrid], axis=1), axis=1)
    # Duffy map from the unit cube onto {x >= 0, sum x <= 1}
    x = np.empty_like(t)
    rest = np.ones(len(t))
    for i in range(dim):
        x[:, i] = rest * t[:, i]
        rest = rest * (1.0 - t[:, i])
    bary = np.column_stack([1.0 - x.sum(axis=1), x])
    w = w / w.sum()
    return bary, w


def gauss_legendre_01(q: int) -> tuple[np.ndarray, np.ndarray]:
    x, w = np.polynomial.legendre.leggauss(q)
    return (x + 1.0) / 2.0, w / 2.0
