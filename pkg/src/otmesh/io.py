"""File formats: legacy ASCII VTK meshes, diagnostics CSV and solver checkpoints."""
from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .diagnostics import CSV_FIELDS
from .errors import ShapeMismatchError
from .fem.spaces import Field
from .mesh import MeshData
from .solver import SolverState

CHECKPOINT_VERSION = 1

# sub-cells of degree-2 cells, in local node numbering
_QUAD9_SPLIT = ((0, 4, 8, 7), (4, 1, 5, 8), (8, 5, 2, 6), (7, 8, 6, 3))
_TRI6_SPLIT = ((0, 3, 5), (3, 1, 4), (5, 4, 2), (3, 4, 5))
_VTK_QUAD, _VTK_TRIANGLE = 9, 5


def _linear_cells(mesh: MeshData):
    """Linear VTK cells over mesh nodes, splitting degree-2 cells into four."""
    if mesh.coord_degree == 1:
        return mesh.vertex_cells, None
    split = np.array(_QUAD9_SPLIT if mesh.cell_shape == "quad" else _TRI6_SPLIT)
    cells = mesh.cells[:, split].reshape(-1, split.shape[1])
    return cells, split


def vtk_geometry(mesh: MeshData, coords=None):
    """Points, linear cells and the node index of each point.

    On the periodic plane each (node, periodic shift) pair becomes its own
    point, so cells straddling the seam are drawn unwrapped.
    """
    coords = mesh.coords if coords is None else np.asarray(coords, float)
    if coords.shape != mesh.coords.shape:
        raise ShapeMismatchError(f"coordinates {coords.shape} do not match mesh nodes {mesh.coords.shape}")
    cells, split = _linear_cells(mesh)
    if mesh.shifts is None:
        return coords, cells, np.arange(len(coords))
    nv = mesh.nv_per_cell
    shifts = mesh.shifts  # (C, nv, 2) for vertex nodes
    if split is not None:
        raise ValueError("periodic plane meshes are degree 1")
    keys = np.concatenate([cells[..., None], np.rint(shifts).astype(np.int64)], axis=-1).reshape(-1, 3)
    uniq, inv = np.unique(keys, axis=0, return_inverse=True)
    node = uniq[:, 0]
    points = coords[node] + uniq[:, 1:]
    return points, inv.reshape(-1, nv), node


def write_vtk(path, mesh: MeshData, coords=None, point_data: dict | None = None, title="otmesh"):
    """Legacy ASCII unstructured grid; ``point_data`` arrays are per mesh node."""
    points, cells, node = vtk_geometry(mesh, coords)
    if points.shape[1] == 2:
        points = np.column_stack([points, np.zeros(len(points))])
    ctype = _VTK_QUAD if cells.shape[1] == 4 else _VTK_TRIANGLE
    with open(path, "w") as fh:
        fh.write(f"# vtk DataFile Version 3.0\n{title}\nASCII\nDATASET UNSTRUCTURED_GRID\n")
        fh.write(f"POINTS {len(points)} double\n")
        np.savetxt(fh, points, fmt="%.17g")
        fh.write(f"CELLS {len(cells)} {cells.size + len(cells)}\n")
        np.savetxt(fh, np.column_stack([np.full(len(cells), cells.shape[1]), cells]), fmt="%d")
        fh.write(f"CELL_TYPES {len(cells)}\n")
        np.savetxt(fh, np.full(len(cells), ctype), fmt="%d")
        if point_data:
            fh.write(f"POINT_DATA {len(points)}\n")
            for name, values in point_data.items():
                values = np.asarray(values, float)
                if len(values) < node.max() + 1:
                    # vertex-only data on a higher-order mesh: not representable per point
                    raise ShapeMismatchError(f"point data {name!r} has {len(values)} values, "
                                             f"needs one per mesh node")
                fh.write(f"SCALARS {name} double 1\nLOOKUP_TABLE default\n")
                np.savetxt(fh, values[node], fmt="%.17g")


def read_vtk(path) -> dict:
    """Minimal legacy ASCII unstructured-grid reader (points, cells, types, point data)."""
    lines = Path(path).read_text().split("\n")
    if not lines[0].startswith("# vtk DataFile") or lines[2].strip() != "ASCII":
        raise ValueError(f"{path}: not a legacy ASCII VTK file")
    out = {"point_data": {}}
    body = " ".join(lines[4:]).split()
    npts = 0
    pos = 0

    def take(n):
        nonlocal pos
        chunk = body[pos : pos + n]
        pos += n
        return chunk

    while pos < len(body):
        key = take(1)[0]
        if key == "POINTS":
            n, _ = take(2)
            out["points"] = np.array(take(3 * int(n)), float).reshape(-1, 3)
        elif key == "CELLS":
            n, size = map(int, take(2))
            flat = np.array(take(size), int)
            cells, k = [], 0
            for _ in range(n):
                cells.append(flat[k + 1 : k + 1 + flat[k]])
                k += flat[k] + 1
            out["cells"] = np.array(cells)
        elif key == "CELL_TYPES":
            n = int(take(1)[0])
            out["cell_types"] = np.array(take(n), int)
        elif key == "POINT_DATA":
            npts = int(take(1)[0])
        elif key == "SCALARS":
            name, _, _ = take(3)
            take(2)  # LOOKUP_TABLE default
            out["point_data"][name] = np.array(take(npts), float)
        else:
            raise ValueError(f"unexpected VTK keyword {key!r}")
    return out


def write_history(path, records) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_FIELDS)
        for rec in records:
            w.writerow(rec.csv_row())


def read_history(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def save_checkpoint(path, state: SolverState, mesh: MeshData) -> None:
    with open(path, "wb") as fh:
        np.savez(
            fh,
            version=CHECKPOINT_VERSION,
            kind=mesh.kind.value,
            topology=mesh.topology_key(),
            phi=state.phi.coefficients,
            sigma=state.sigma.coefficients,
            theta=state.theta,
            iteration=state.iteration,
        )


def load_checkpoint(path, problem) -> SolverState:
    with np.load(path, allow_pickle=False) as data:
        if int(data["version"]) != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {int(data['version'])}")
        if str(data["topology"]) != problem.mesh.topology_key():
            raise ShapeMismatchError("checkpoint was written for a different mesh")
        phi = Field(problem.V, data["phi"])
        sigma = Field(problem.S, data["sigma"])
        return SolverState(phi, sigma, float(data["theta"]), int(data["iteration"]))
