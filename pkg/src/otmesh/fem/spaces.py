"""Continuous Lagrange function spaces and fields over a :class:`~otmesh.mesh.MeshData`."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ShapeMismatchError
from ..mesh import MeshData, degree2_layout
from .elements import ReferenceElement, element


@dataclass(eq=False)
class FunctionSpace:
    """Scalar, vector or tensor C0 Lagrange space.

    Multi-component coefficient vectors are stored as consecutive component
    blocks of length ``n_dofs`` (row-major over the value shape).
    """

    mesh: MeshData
    element: ReferenceElement
    dof_map: np.ndarray
    n_dofs: int
    value_shape: tuple = ()

    @property
    def ncomp(self) -> int:
        return int(np.prod(self.value_shape)) if self.value_shape else 1

    @property
    def degree(self) -> int:
        return self.element.degree

    @property
    def size(self) -> int:
        return self.n_dofs * self.ncomp

    def with_shape(self, value_shape) -> "FunctionSpace":
        return FunctionSpace(self.mesh, self.element, self.dof_map, self.n_dofs, tuple(value_shape))

    def node_coords(self) -> np.ndarray:
        """Physical position of each scalar DOF (plane positions wrapped into [0, 1))."""
        key = ("node_coords", self.degree)
        cache = self.mesh._cache
        if key not in cache:
            coord_el = element(self.mesh.cell_shape, self.mesh.coord_degree)
            vals, _ = coord_el.tabulate(self.element.nodes)
            X = np.einsum("an,cnd->cad", vals, self.mesh.cell_coords())
            out = np.empty((self.n_dofs, self.mesh.gdim))
            out[self.dof_map.ravel()] = X.reshape(-1, self.mesh.gdim)
            if not self.mesh.is_sphere:
                out = np.mod(out, 1.0)
                out[np.isclose(out, 1.0, atol=1e-14)] = 0.0
            cache[key] = out
        return cache[key]

    def interpolate(self, f) -> np.ndarray:
        """Nodal interpolant of ``f(points) -> values`` as a coefficient vector."""
        vals = np.asarray(f(self.node_coords()), dtype=float)
        if vals.ndim == 1:
            return vals
        return vals.reshape(self.n_dofs, -1).T.ravel()


def scalar_space(mesh: MeshData, degree: int = 2) -> FunctionSpace:
    key = ("space", degree)
    if key not in mesh._cache:
        el = element(mesh.cell_shape, degree)
        if degree == 1:
            dof_map, n = mesh.vertex_cells.astype(np.int64), mesh.n_vertices
        else:
            dof_map, n = degree2_layout(mesh)
        mesh._cache[key] = FunctionSpace(mesh, el, dof_map, n)
    return mesh._cache[key]


def tensor_space(mesh: MeshData, degree: int = 2) -> FunctionSpace:
    d = mesh.gdim
    return scalar_space(mesh, degree).with_shape((d, d))


def vector_space(mesh: MeshData, degree: int = 1) -> FunctionSpace:
    return scalar_space(mesh, degree).with_shape((mesh.gdim,))


def coordinate_space(mesh: MeshData) -> FunctionSpace:
    """Vector space matching the mesh coordinate field."""
    return vector_space(mesh, mesh.coord_degree)


@dataclass(eq=False)
class Field:
    space: FunctionSpace
    coefficients: np.ndarray

    def __post_init__(self):
        self.coefficients = np.asarray(self.coefficients, dtype=float)
        if self.coefficients.shape != (self.space.size,):
            raise ShapeMismatchError(
                f"field has {self.coefficients.shape} coefficients, space needs {self.space.size}"
            )

    def components(self) -> np.ndarray:
        return self.coefficients.reshape(self.space.ncomp, self.space.n_dofs)
