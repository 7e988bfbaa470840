"""Computational mesh families: periodic unit square, cubed sphere, icosahedral sphere."""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from .errors import InvalidResolutionError, ShapeMismatchError
from .fem.elements import QUAD_EDGES, TRIANGLE_EDGES


class MeshKind(str, Enum):
    PERIODIC_PLANE = "PeriodicPlane"
    CUBED_SPHERE = "CubedSphere"
    ICOSAHEDRAL = "Icosahedral"


@dataclass(frozen=True, eq=False)
class MeshData:
    """Topology plus coordinate field of a plane or sphere mesh.

    ``cells`` holds the coordinate-node connectivity (vertices first, then
    edge nodes, then the cell node for degree-2 quads). ``cell_edges``
    gives global edge ids per cell in local edge order. For the periodic
    plane, ``shifts`` holds integer lattice offsets that unwrap each cell's
    nodes across the seam.
    """

    kind: MeshKind
    cells: np.ndarray
    coords: np.ndarray
    coord_degree: int
    radius: float
    n_vertices: int
    cell_edges: np.ndarray
    n_edges: int
    shifts: np.ndarray | None = None
    resolution: int = 0
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def cell_shape(self) -> str:
        return "triangle" if self.kind is MeshKind.ICOSAHEDRAL else "quad"

    @property
    def n_cells(self) -> int:
        return len(self.cells)

    @property
    def n_nodes(self) -> int:
        return len(self.coords)

    @property
    def gdim(self) -> int:
        return self.coords.shape[1]

    @property
    def is_sphere(self) -> bool:
        return self.kind is not MeshKind.PERIODIC_PLANE

    @property
    def nv_per_cell(self) -> int:
        return 3 if self.cell_shape == "triangle" else 4

    @property
    def vertex_cells(self) -> np.ndarray:
        return self.cells[:, : self.nv_per_cell]

    @property
    def vertex_coords(self) -> np.ndarray:
        return self.coords[: self.n_vertices]

    def cell_coords(self) -> np.ndarray:
        """Node coordinates per cell, ``(n_cells, nodes_per_cell, gdim)``, unwrapped."""
        X = self.coords[self.cells]
        if self.shifts is not None:
            X = X + self.shifts
        return X

    def topology_key(self) -> str:
        """Digest identifying topology and computational geometry family."""
        h = hashlib.sha256()
        h.update(self.kind.value.encode())
        h.update(np.ascontiguousarray(self.cells).tobytes())
        h.update(f"{self.coord_degree}:{self.radius!r}:{self.resolution}".encode())
        return h.hexdigest()[:16]


def _degree2_cells(vertex_cells, cell_edges, n_vertices, n_edges, with_centre):
    parts = [vertex_cells, n_vertices + cell_edges]
    if with_centre:
        parts.append((n_vertices + n_edges + np.arange(len(vertex_cells)))[:, None])
    return np.hstack(parts).astype(np.int64)


def _edges_from_pairs(vertex_cells, local_edges):
    pairs = np.stack([vertex_cells[:, list(e)] for e in local_edges], axis=1)
    keys = np.sort(pairs, axis=2).reshape(-1, 2)
    uniq, inverse = np.unique(keys, axis=0, return_inverse=True)
    return inverse.reshape(len(vertex_cells), len(local_edges)), uniq


def build_periodic_plane(n: int) -> MeshData:
    """``n x n`` quadrilaterals on the doubly periodic unit square."""
    if int(n) != n or n < 2:
        raise InvalidResolutionError(f"periodic plane needs n >= 2, got {n}")
    n = int(n)
    i, j = np.meshgrid(np.arange(n), np.arange(n), indexing="xy")
    i, j = i.ravel(), j.ravel()  # cell (i, j) -> index j*n + i

    def vid(a, b):
        return (b % n) * n + (a % n)

    cells = np.stack([vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1)], axis=1)
    coords = np.column_stack([np.tile(np.arange(n), n), np.repeat(np.arange(n), n)]) / n
    off = np.array([[0, 0], [1, 0], [1, 1], [0, 1]])
    lattice = np.stack([i, j], axis=1)[:, None, :] + off[None]
    shifts = (lattice >= n).astype(float)

    # horizontal edge h(i, j): (i, j)-(i+1, j); vertical edge v(i, j): (i, j)-(i, j+1)
    def hid(a, b):
        return vid(a, b)

    def vtid(a, b):
        return n * n + vid(a, b)

    cell_edges = np.stack([hid(i, j), vtid(i + 1, j), hid(i, j + 1), vtid(i, j)], axis=1)
    return MeshData(
        kind=MeshKind.PERIODIC_PLANE,
        cells=cells.astype(np.int64),
        coords=coords,
        coord_degree=1,
        radius=1.0,
        n_vertices=n * n,
        cell_edges=cell_edges.astype(np.int64),
        n_edges=2 * n * n,
        shifts=shifts,
        resolution=n,
    )


# cube faces: (fixed axis, sign); u, v axes chosen so e_u x e_v points outward
_CUBE_FACES = ((0, 1), (0, -1), (1, 1), (1, -1), (2, 1), (2, -1))


def _face_axes(axis, sign):
    u, v = [a for a in range(3) if a != axis]
    normal = np.zeros(3)
    normal[axis] = sign
    eu, ev = np.eye(3)[u], np.eye(3)[v]
    if np.dot(np.cross(eu, ev), normal) < 0:
        u, v = v, u
    return u, v


def build_cubed_sphere(n: int, coord_degree: int = 1, radius: float = 1.0) -> MeshData:
    """Equiangular cubed sphere with ``6 n^2`` quadrilaterals projected onto radius ``radius``."""
    if int(n) != n or n < 1:
        raise InvalidResolutionError(f"cubed sphere needs n >= 1, got {n}")
    if coord_degree not in (1, 2):
        raise InvalidResolutionError(f"coordinate degree must be 1 or 2, got {coord_degree}")
    n = int(n)
    m = 2 * n  # doubled lattice: vertices at even indices, midpoints at odd

    cell_keys = []
    for axis, sign in _CUBE_FACES:
        u, v = _face_axes(axis, sign)
        a, b = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
        a, b = a.ravel(), b.ravel()
        corners = []
        for da, db in ((0, 0), (1, 0), (1, 1), (0, 1)):
            key = np.zeros((len(a), 3), dtype=np.int64)
            key[:, axis] = m if sign > 0 else 0
            key[:, u] = 2 * (a + da)
            key[:, v] = 2 * (b + db)
            corners.append(key)
        cell_keys.append(np.stack(corners, axis=1))
    cell_keys = np.concatenate(cell_keys)  # (6n^2, 4, 3)

    vkeys, vinv = np.unique(cell_keys.reshape(-1, 3), axis=0, return_inverse=True)
    vertex_cells = vinv.reshape(-1, 4).astype(np.int64)
    cell_edges, edge_pairs = _edges_from_pairs(vertex_cells, QUAD_EDGES)

    def project(keys):
        g = np.tan(0.25 * np.pi * (keys - n) / n)
        g[keys == 0] = -1.0
        g[keys == m] = 1.0
        return radius * g / np.linalg.norm(g, axis=1, keepdims=True)

    coords = [project(vkeys)]
    cells = vertex_cells
    if coord_degree == 2:
        ekeys = (vkeys[edge_pairs[:, 0]] + vkeys[edge_pairs[:, 1]]) // 2
        ckeys = cell_keys.sum(axis=1) // 4
        coords += [project(ekeys), project(ckeys)]
        cells = _degree2_cells(vertex_cells, cell_edges, len(vkeys), len(edge_pairs), True)
    return MeshData(
        kind=MeshKind.CUBED_SPHERE,
        cells=cells,
        coords=np.vstack(coords),
        coord_degree=coord_degree,
        radius=float(radius),
        n_vertices=len(vkeys),
        cell_edges=cell_edges,
        n_edges=len(edge_pairs),
        resolution=n,
    )


def _icosahedron():
    p = (1.0 + np.sqrt(5.0)) / 2.0
    verts = np.array(
        [
            [-1, p, 0], [1, p, 0], [-1, -p, 0], [1, -p, 0],
            [0, -1, p], [0, 1, p], [0, -1, -p], [0, 1, -p],
            [p, 0, -1], [p, 0, 1], [-p, 0, -1], [-p, 0, 1],
        ],
        dtype=float,
    )
    faces = np.array(
        [
            [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
            [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
            [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
            [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
        ]
    )
    verts /= np.linalg.norm(verts, axis=1, keepdims=True)
    a, b, c = verts[faces[:, 0]], verts[faces[:, 1]], verts[faces[:, 2]]
    flip = np.einsum("ij,ij->i", np.cross(b - a, c - a), a) < 0
    faces[flip] = faces[flip][:, [0, 2, 1]]
    return verts, faces


def _midpoints(verts, faces):
    """Split each triangle into four; returns new vertex array and faces."""
    cell_edges, pairs = _edges_from_pairs(faces, TRIANGLE_EDGES)
    mids = verts[pairs[:, 0]] + verts[pairs[:, 1]]
    mids /= np.linalg.norm(mids, axis=1, keepdims=True)
    nv = len(verts)
    e01, e12, e20 = (nv + cell_edges[:, k] for k in range(3))
    v0, v1, v2 = faces[:, 0], faces[:, 1], faces[:, 2]
    children = np.concatenate(
        [
            np.stack([v0, e01, e20], axis=1),
            np.stack([e01, v1, e12], axis=1),
            np.stack([e20, e12, v2], axis=1),
            np.stack([e01, e12, e20], axis=1),
        ]
    )
    return np.vstack([verts, mids]), children


def build_icosahedral(refinements: int, coord_degree: int = 1, radius: float = 1.0) -> MeshData:
    """Regular icosahedron refined ``refinements`` times by edge bisection."""
    if int(refinements) != refinements or refinements < 0:
        raise InvalidResolutionError(f"refinements must be >= 0, got {refinements}")
    if coord_degree not in (1, 2):
        raise InvalidResolutionError(f"coordinate degree must be 1 or 2, got {coord_degree}")
    verts, faces = _icosahedron()
    for _ in range(int(refinements)):
        verts, faces = _midpoints(verts, faces)
    faces = faces.astype(np.int64)
    cell_edges, pairs = _edges_from_pairs(faces, TRIANGLE_EDGES)
    coords = verts
    cells = faces
    if coord_degree == 2:
        mids = verts[pairs[:, 0]] + verts[pairs[:, 1]]
        mids /= np.linalg.norm(mids, axis=1, keepdims=True)
        coords = np.vstack([verts, mids])
        cells = _degree2_cells(faces, cell_edges, len(verts), len(pairs), False)
    return MeshData(
        kind=MeshKind.ICOSAHEDRAL,
        cells=cells,
        coords=radius * coords,
        coord_degree=coord_degree,
        radius=float(radius),
        n_vertices=len(verts),
        cell_edges=cell_edges,
        n_edges=len(pairs),
        resolution=int(refinements),
    )


def copy_with_coords(mesh: MeshData, new_coords) -> MeshData:
    """Same topology, new geometry (e.g. the physical mesh from the computational one)."""
    new_coords = np.asarray(new_coords, dtype=float)
    if new_coords.shape != mesh.coords.shape:
        raise ShapeMismatchError(
            f"coordinate array has shape {new_coords.shape}, expected {mesh.coords.shape}"
        )
    return replace(mesh, coords=new_coords.copy(), _cache={})


def degree2_layout(mesh: MeshData) -> tuple[np.ndarray, int]:
    """Global node map of the degree-2 Lagrange space on ``mesh`` and its size."""
    with_centre = mesh.cell_shape == "quad"
    cells = _degree2_cells(mesh.vertex_cells, mesh.cell_edges, mesh.n_vertices, mesh.n_edges, with_centre)
    size = mesh.n_vertices + mesh.n_edges + (mesh.n_cells if with_centre else 0)
    return cells, size
