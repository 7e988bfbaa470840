"""Per-quadrature-point geometry of the coordinate map on flat and immersed cells."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import DegenerateGeometryError
from ..mesh import MeshData
from .elements import element
from .quadrature import QuadratureRule, rule_for


@dataclass
class CellGeometry:
    """Geometry of one cell at the quadrature points of a rule."""

    jacobian: np.ndarray  # (nq, gdim, 2)
    pullback: np.ndarray  # (nq, gdim, 2): J (J^T J)^{-1}, maps reference to surface gradients
    scale: np.ndarray  # (nq,)
    points: np.ndarray  # (nq, gdim)
    normal: np.ndarray | None  # (nq, 3) unit outward normal x/R, sphere only


@dataclass
class Geometry:
    """All-cells geometry; arrays are indexed ``[cell, qp, ...]``."""

    rule: QuadratureRule
    jacobian: np.ndarray
    pullback: np.ndarray
    scale: np.ndarray
    points: np.ndarray
    dx: np.ndarray  # quadrature weight times scale
    normal: np.ndarray | None

    def cell(self, c: int) -> CellGeometry:
        return CellGeometry(
            self.jacobian[c],
            self.pullback[c],
            self.scale[c],
            self.points[c],
            None if self.normal is None else self.normal[c],
        )


def compute_geometry(mesh: MeshData, rule: QuadratureRule) -> Geometry:
    coord_el = element(mesh.cell_shape, mesh.coord_degree)
    vals, dref = coord_el.tabulate(rule.points)
    X = mesh.cell_coords()
    x = np.einsum("qn,cnd->cqd", vals, X)
    J = np.einsum("qnk,cnd->cqdk", dref, X)
    JtJ = np.einsum("cqdk,cqdl->cqkl", J, J)
    detm = JtJ[..., 0, 0] * JtJ[..., 1, 1] - JtJ[..., 0, 1] * JtJ[..., 1, 0]
    if mesh.is_sphere:
        if np.any(detm <= 0.0):
            bad = int(np.argwhere(detm <= 0.0)[0, 0])
            raise DegenerateGeometryError(f"singular metric in cell {bad}")
        scale = np.sqrt(detm)
    else:
        scale = J[..., 0, 0] * J[..., 1, 1] - J[..., 0, 1] * J[..., 1, 0]
        if np.any(scale <= 0.0):
            bad = int(np.argwhere(scale <= 0.0)[0, 0])
            raise DegenerateGeometryError(f"non-positive Jacobian determinant in cell {bad}")
    inv = np.empty_like(JtJ)
    inv[..., 0, 0] = JtJ[..., 1, 1]
    inv[..., 1, 1] = JtJ[..., 0, 0]
    inv[..., 0, 1] = -JtJ[..., 0, 1]
    inv[..., 1, 0] = -JtJ[..., 1, 0]
    inv /= detm[..., None, None]
    G = np.einsum("cqdk,cqkl->cqdl", J, inv)
    normal = x / mesh.radius if mesh.is_sphere else None
    return Geometry(rule, J, G, scale, x, scale * rule.weights[None, :], normal)


def geometry(mesh: MeshData, degree: int = 8) -> Geometry:
    key = ("geometry", degree)
    if key not in mesh._cache:
        mesh._cache[key] = compute_geometry(mesh, rule_for(mesh.cell_shape, degree))
    return mesh._cache[key]


def tabulate_geometry(mesh: MeshData, rule: QuadratureRule, cell: int) -> CellGeometry:
    if not 0 <= cell < mesh.n_cells:
        raise IndexError(f"cell {cell} out of range for mesh with {mesh.n_cells} cells")
    if rule.degree is not None and ("geometry", rule.degree) in mesh._cache:
        return mesh._cache[("geometry", rule.degree)].cell(cell)
    sub = _single_cell(mesh, cell)
    return compute_geometry(sub, rule).cell(0)


def _single_cell(mesh: MeshData, cell: int) -> MeshData:
    from dataclasses import replace

    shifts = None if mesh.shifts is None else mesh.shifts[cell : cell + 1]
    return replace(mesh, cells=mesh.cells[cell : cell + 1], shifts=shifts, _cache={})
