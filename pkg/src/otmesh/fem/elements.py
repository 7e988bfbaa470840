"""Lagrange reference elements (Q1/Q2 on quadrilaterals, P1/P2 on triangles).

Local node ordering: vertices counterclockwise, then edge midpoints in
local edge order, then (Q2 only) the cell centre. Local edges are
``(v0, v1), (v1, v2), (v2, v3), (v3, v0)`` on quads and
``(v0, v1), (v1, v2), (v2, v0)`` on triangles.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

QUAD_EDGES = ((0, 1), (1, 2), (2, 3), (3, 0))
TRIANGLE_EDGES = ((0, 1), (1, 2), (2, 0))

# (i, j) lattice index of each Q2 node on the 3x3 tensor grid
_Q2_LATTICE = ((0, 0), (2, 0), (2, 2), (0, 2), (1, 0), (2, 1), (1, 2), (0, 1), (1, 1))


def _lagrange1d_q2(t):
    t = np.asarray(t, dtype=float)
    vals = np.stack([(1 - t) * (1 - 2 * t), 4 * t * (1 - t), t * (2 * t - 1)], axis=-1)
    ders = np.stack([4 * t - 3, 4 - 8 * t, 4 * t - 1], axis=-1)
    return vals, ders


@dataclass(frozen=True)
class ReferenceElement:
    cell_shape: str  # "quad" | "triangle"
    degree: int

    @property
    def n_vertices(self) -> int:
        return 4 if self.cell_shape == "quad" else 3

    @property
    def edges(self):
        return QUAD_EDGES if self.cell_shape == "quad" else TRIANGLE_EDGES

    @property
    def n_basis(self) -> int:
        if self.cell_shape == "quad":
            return 4 if self.degree == 1 else 9
        return 3 if self.degree == 1 else 6

    @property
    def nodes(self) -> np.ndarray:
        if self.cell_shape == "quad":
            verts = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
        else:
            verts = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
        if self.degree == 1:
            return verts
        mids = np.array([0.5 * (verts[a] + verts[b]) for a, b in self.edges])
        if self.cell_shape == "quad":
            return np.vstack([verts, mids, [[0.5, 0.5]]])
        return np.vstack([verts, mids])

    def tabulate(self, points) -> tuple[np.ndarray, np.ndarray]:
        """Basis values ``(np, nb)`` and reference gradients ``(np, nb, 2)``."""
        p = np.atleast_2d(np.asarray(points, dtype=float))
        x, y = p[:, 0], p[:, 1]
        if self.cell_shape == "quad":
            return self._tab_quad(x, y)
        return self._tab_triangle(x, y)

    def _tab_quad(self, x, y):
        if self.degree == 1:
            vals = np.stack([(1 - x) * (1 - y), x * (1 - y), x * y, (1 - x) * y], axis=-1)
            dx = np.stack([-(1 - y), (1 - y), y, -y], axis=-1)
            dy = np.stack([-(1 - x), -x, x, (1 - x)], axis=-1)
            return vals, np.stack([dx, dy], axis=-1)
        lx, dlx = _lagrange1d_q2(x)
        ly, dly = _lagrange1d_q2(y)
        vals = np.empty((len(x), 9))
        grads = np.empty((len(x), 9, 2))
        for a, (i, j) in enumerate(_Q2_LATTICE):
            vals[:, a] = lx[:, i] * ly[:, j]
            grads[:, a, 0] = dlx[:, i] * ly[:, j]
            grads[:, a, 1] = lx[:, i] * dly[:, j]
        return vals, grads

    def _tab_triangle(self, x, y):
        l0 = 1 - x - y
        lam = (l0, x, y)
        dlam = (np.array([-1.0, -1.0]), np.array([1.0, 0.0]), np.array([0.0, 1.0]))
        n = len(x)
        if self.degree == 1:
            vals = np.stack(lam, axis=-1)
            grads = np.broadcast_to(np.stack(dlam), (n, 3, 2)).copy()
            return vals, grads
        vals = np.empty((n, 6))
        grads = np.empty((n, 6, 2))
        for a in range(3):
            vals[:, a] = lam[a] * (2 * lam[a] - 1)
            grads[:, a, :] = (4 * lam[a] - 1)[:, None] * dlam[a]
        for e, (a, b) in enumerate(TRIANGLE_EDGES):
            vals[:, 3 + e] = 4 * lam[a] * lam[b]
            grads[:, 3 + e, :] = 4 * (lam[a][:, None] * dlam[b] + lam[b][:, None] * dlam[a])
        return vals, grads


@lru_cache(maxsize=None)
def element(cell_shape: str, degree: int) -> ReferenceElement:
    if degree not in (1, 2):
        raise ValueError(f"unsupported degree {degree}")
    return ReferenceElement(cell_shape, degree)
