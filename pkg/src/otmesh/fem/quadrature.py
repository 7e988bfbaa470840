"""Quadrature rules on the reference quadrilateral and triangle.

The reference quadrilateral is the unit square ``[0, 1]^2`` and the
reference triangle has vertices ``(0, 0)``, ``(1, 0)``, ``(0, 1)``.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi


@dataclass(frozen=True)
class QuadratureRule:
    points: np.ndarray  # (nq, 2) reference coordinates
    weights: np.ndarray  # (nq,)
    degree: int
    cell_shape: str

    @property
    def n_points(self) -> int:
        return len(self.weights)


def _gauss_unit(k: int) -> tuple[np.ndarray, np.ndarray]:
    x, w = np.polynomial.legendre.leggauss(k)
    return 0.5 * (x + 1.0), 0.5 * w


@lru_cache(maxsize=None)
def quad_rule(degree: int) -> QuadratureRule:
    """Tensor Gauss-Legendre rule exact for Q_degree on the unit square."""
    k = max(1, (degree + 2) // 2)
    x, w = _gauss_unit(k)
    X, Y = np.meshgrid(x, x, indexing="ij")
    W = np.outer(w, w)
    pts = np.column_stack([X.ravel(), Y.ravel()])
    return QuadratureRule(pts, W.ravel(), degree, "quad")


@lru_cache(maxsize=None)
def triangle_rule(degree: int) -> QuadratureRule:
    """Collapsed (Stroud conical product) rule exact for P_degree.

    Uses Gauss-Jacobi(1, 0) points in the collapsed direction so the
    Duffy Jacobian is absorbed into the weight.
    """
    k = max(1, (degree + 2) // 2)
    xj, wj = roots_jacobi(k, 1.0, 0.0)
    u = 0.5 * (xj + 1.0)
    wu = 0.25 * wj
    v, wv = _gauss_unit(k)
    U, V = np.meshgrid(u, v, indexing="ij")
    pts = np.column_stack([U.ravel(), (V * (1.0 - U)).ravel()])
    W = np.outer(wu, wv).ravel()
    return QuadratureRule(pts, W, degree, "triangle")


def rule_for(cell_shape: str, degree: int = 8) -> QuadratureRule:
    if cell_shape == "quad":
        return quad_rule(degree)
    if cell_shape == "triangle":
        return triangle_rule(degree)
    raise ValueError(f"unknown cell shape {cell_shape!r}")
