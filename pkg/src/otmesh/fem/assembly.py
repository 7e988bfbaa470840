"""Assembly of bilinear forms, test-function integrals and L2 projections.

Global matrices are built from cell matrices through a cached sparsity
pattern: the (row, col) keys of every local entry are sorted once per pair of
DOF maps, and subsequent assemblies reduce to a single ``bincount``. This keeps
accumulation order fixed, so results are bitwise reproducible.
"""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .. import _kernels as K
from ..errors import NumericFailureError
from ..mesh import MeshData
from .geometry import Geometry, geometry
from .spaces import Field, FunctionSpace

_CHUNK_ENTRIES = 3_000_000


def check_finite(values, what="integrand"):
    """Raise :class:`NumericFailureError` naming the first cell with NaN/Inf."""
    values = np.asarray(values)
    if values.size and not np.all(np.isfinite(values)):
        flat = ~np.isfinite(values.reshape(values.shape[0], -1))
        cell = int(np.argmax(flat.any(axis=1)))
        raise NumericFailureError(f"non-finite {what} in cell {cell}", cell=cell)


class _Pattern:
    def __init__(self, test_map, trial_map, n_rows, n_cols):
        rows = np.repeat(test_map, trial_map.shape[1], axis=1).ravel()
        cols = np.tile(trial_map, (1, test_map.shape[1])).ravel()
        keys = rows.astype(np.int64) * n_cols + cols
        uniq, self.perm = np.unique(keys, return_inverse=True)
        self.perm = self.perm.ravel()
        self.indices = (uniq % n_cols).astype(np.int32)
        urows = uniq // n_cols
        self.indptr = np.searchsorted(urows, np.arange(n_rows + 1)).astype(np.int32)
        self.shape = (n_rows, n_cols)
        self.nnz = len(uniq)

    def build(self, local):
        data = np.bincount(self.perm, weights=local.ravel(), minlength=self.nnz)
        return sp.csr_matrix((data, self.indices, self.indptr), shape=self.shape)


class Assembler:
    """Quadrature-level evaluation and assembly for one mesh and rule degree."""

    def __init__(self, mesh: MeshData, degree: int = 8):
        self.mesh = mesh
        self.degree = degree
        self.geo: Geometry = geometry(mesh, degree)
        self.rule = self.geo.rule
        self._patterns = {}
        self._tables = {}
        self._solvers = {}

    @property
    def dx(self):
        return self.geo.dx

    @property
    def points(self):
        return self.geo.points

    @property
    def n_cells(self):
        return self.mesh.n_cells

    def tables(self, space: FunctionSpace):
        key = (space.element.cell_shape, space.degree)
        if key not in self._tables:
            self._tables[key] = space.element.tabulate(self.rule.points)
        return self._tables[key]

    # -- field evaluation -------------------------------------------------
    def values(self, space: FunctionSpace, coeffs) -> np.ndarray:
        """Field values at quadrature points: (C, Q) or (C, Q, *value_shape)."""
        vals, _ = self.tables(space)
        c = np.asarray(coeffs, dtype=float).reshape(space.ncomp, space.n_dofs)
        out = K.gather_eval(c, space.dof_map, vals)
        return out[..., 0] if not space.value_shape else out.reshape(out.shape[:2] + space.value_shape)

    def grads(self, space: FunctionSpace, coeffs) -> np.ndarray:
        """(Surface) gradients at quadrature points: (C, Q, gdim) or (C, Q, *value_shape, gdim)."""
        _, dref = self.tables(space)
        c = np.asarray(coeffs, dtype=float).reshape(space.ncomp, space.n_dofs)
        out = K.gather_grad(c, space.dof_map, dref, self.geo.pullback)
        if not space.value_shape:
            return out[:, :, 0]
        return out.reshape(out.shape[:2] + space.value_shape + (out.shape[-1],))

    # -- integration ------------------------------------------------------
    def integrate(self, values, what="integrand") -> float:
        """Integral of quadrature-point values ``(C, Q)`` over the mesh."""
        values = np.asarray(values, dtype=float)
        check_finite(values, what)
        return float(np.sum(np.sum(values * self.dx, axis=1)))

    def integrate_test(self, space: FunctionSpace, values, what="integrand") -> np.ndarray:
        """``int values . v`` for every basis function ``v`` of ``space`` (flat vector)."""
        values = np.asarray(values, dtype=float)
        check_finite(values, what)
        C, Q = values.shape[:2]
        w = values.reshape(C, Q, space.ncomp) * self.dx[:, :, None]
        vals, _ = self.tables(space)
        return K.integrate_test(space.dof_map, vals, w, space.n_dofs).ravel()

    def integrate_test_grad(self, space: FunctionSpace, values, what="integrand") -> np.ndarray:
        """``int values : grad v`` for every basis function; values (C, Q, [ncomp,] gdim)."""
        values = np.asarray(values, dtype=float)
        check_finite(values, what)
        C, Q = values.shape[:2]
        gdim = values.shape[-1]
        w = values.reshape(C, Q, space.ncomp, gdim) * self.dx[:, :, None, None]
        _, dref = self.tables(space)
        return K.integrate_test_grad(space.dof_map, dref, self.geo.pullback, w, space.n_dofs).ravel()

    def test_grad_operators(self, space: FunctionSpace) -> list[sp.csr_matrix]:
        """Sparse maps ``G_d`` from quadrature values to ``int f (grad N_a)_d``.

        ``G_d`` has shape ``(n_dofs, C * Q)`` with the quadrature weights
        folded in, so repeated integrals against basis gradients reduce to
        sparse matrix products.
        """
        key = ("test_grad_operators", space.degree)
        if key not in self._tables:
            C, Q = self.dx.shape
            nb = space.element.n_basis
            rows = np.broadcast_to(space.dof_map[:, None, :], (C, Q, nb)).ravel()
            cols = np.broadcast_to(np.arange(C * Q).reshape(C, Q, 1), (C, Q, nb)).ravel()
            P = self.phys_grads(space, slice(None)) * self.dx[:, :, None, None]
            self._tables[key] = [
                sp.csr_matrix((P[..., d].ravel(), (rows, cols)), shape=(space.n_dofs, C * Q))
                for d in range(P.shape[-1])
            ]
        return self._tables[key]

    # -- bilinear forms ---------------------------------------------------
    def _pattern(self, test: FunctionSpace, trial: FunctionSpace):
        key = (test.degree, trial.degree)
        if key not in self._patterns:
            self._patterns[key] = _Pattern(test.dof_map, trial.dof_map, test.n_dofs, trial.n_dofs)
        return self._patterns[key]

    def _chunks(self, na, nb):
        C, Q = self.dx.shape
        step = max(1, _CHUNK_ENTRIES // (Q * na * nb))
        for start in range(0, C, step):
            yield slice(start, min(C, start + step))

    def phys_grads(self, space: FunctionSpace, cells: slice) -> np.ndarray:
        """Physical basis gradients ``(c, Q, nb, gdim)`` on a range of cells."""
        _, dref = self.tables(space)
        return np.einsum("cqdr,qbr->cqbd", self.geo.pullback[cells], dref, optimize=True)

    def assemble(self, test: FunctionSpace, trial: FunctionSpace, local_fn) -> sp.csr_matrix:
        """Assemble a scalar-space matrix from ``local_fn(cells) -> (c, na, nb)``."""
        na, nb = test.element.n_basis, trial.element.n_basis
        local = np.empty((self.n_cells, na, nb))
        for cells in self._chunks(na, nb):
            local[cells] = local_fn(cells)
        check_finite(local, "cell matrix")
        return self._pattern(test, trial).build(local)

    def mass(self, test: FunctionSpace, trial: FunctionSpace | None = None, coeff=None):
        """``int c N_a N_b``; ``coeff`` is ``None`` or quadrature values (C, Q)."""
        trial = trial or test
        va = self.tables(test)[0][None]
        vb = self.tables(trial)[0][None]

        def local(cells):
            w = self.dx[cells] if coeff is None else self.dx[cells] * coeff[cells]
            return K.local_matrices(w, va, vb)

        key = ("mass", test.degree, trial.degree)
        if coeff is None:
            if key not in self._solvers:
                self._solvers[key] = self.assemble(test, trial, local)
            return self._solvers[key]
        return self.assemble(test, trial, local)

    def stiffness(self, space: FunctionSpace, coeff=None):
        """``int c grad N_a . grad N_b``."""

        def local(cells):
            P = self.phys_grads(space, cells)
            w = self.dx[cells] if coeff is None else self.dx[cells] * coeff[cells]
            return sum(K.local_matrices(w, P[..., d], P[..., d]) for d in range(P.shape[-1]))

        key = ("stiffness", space.degree)
        if coeff is None:
            if key not in self._solvers:
                self._solvers[key] = self.assemble(space, space, local)
            return self._solvers[key]
        return self.assemble(space, space, local)

    def grad_grad(self, test: FunctionSpace, trial: FunctionSpace, j: int, i: int, coeff=None):
        """``int c (grad N_a)_j (grad N_b)_i``."""

        def local(cells):
            w = self.dx[cells] if coeff is None else self.dx[cells] * coeff[cells]
            Pa = self.phys_grads(test, cells)
            Pb = Pa if trial is test else self.phys_grads(trial, cells)
            return K.local_matrices(w, Pa[..., j], Pb[..., i])

        return self.assemble(test, trial, local)

    def grad_grad_blocks(self, test: FunctionSpace, trial: FunctionSpace, coeff=None):
        """All ``(j, i)`` blocks of :meth:`grad_grad` with a shared gradient evaluation.

        ``coeff`` may be ``None``, quadrature values (C, Q), or a tensor
        ``(C, Q, gdim, gdim)`` contracted with the trial gradient:
        ``int (grad N_a)_j (coeff grad N_b)_i``.
        """
        gdim = self.mesh.gdim
        na, nb = test.element.n_basis, trial.element.n_basis
        locals_ = np.empty((gdim, gdim, self.n_cells, na, nb))
        for cells in self._chunks(na, nb):
            Pa = self.phys_grads(test, cells)
            Pb = Pa if trial is test else self.phys_grads(trial, cells)
            w = self.dx[cells]
            if coeff is not None and np.ndim(coeff) == 4:
                Pb = np.einsum("cqik,cqbk->cqbi", coeff[cells], Pb, optimize=True)
            elif coeff is not None:
                w = w * coeff[cells]
            for j in range(gdim):
                for i in range(gdim):
                    locals_[j, i, cells] = K.local_matrices(w, Pa[..., j], Pb[..., i])
        check_finite(locals_, "cell matrix")
        pat = self._pattern(test, trial)
        return [[pat.build(locals_[j, i]) for i in range(gdim)] for j in range(gdim)]

    def value_grad(self, test: FunctionSpace, trial: FunctionSpace, vec):
        """``int N_a (vec . grad N_b)`` with ``vec`` of shape (C, Q, gdim)."""
        va = self.tables(test)[0][None]

        def local(cells):
            Pb = self.phys_grads(trial, cells)
            U = np.einsum("cqbd,cqd->cqb", Pb, vec[cells], optimize=True)
            return K.local_matrices(self.dx[cells], va, U)

        return self.assemble(test, trial, local)

    # -- solves -----------------------------------------------------------
    def mass_solver(self, space: FunctionSpace):
        from ..linalg import DirectSolver

        key = ("mass_solver", space.degree)
        if key not in self._solvers:
            scalar = space.with_shape(())
            self._solvers[key] = DirectSolver(self.mass(scalar))
        return self._solvers[key]

    def mass_jacobi_bounds(self, space: FunctionSpace) -> tuple[float, float]:
        """Bounds on the spectrum of ``diag(M)^{-1} M`` for the scalar mass matrix.

        Taken from the cell matrices: with ``M = sum_e M_e`` and
        ``diag(M) = sum_e diag(M_e)``, every Rayleigh quotient of the assembled
        pair lies between the extreme generalised eigenvalues of the cell pairs.
        """
        key = ("mass_bounds", space.degree)
        if key not in self._tables:
            vals = self.tables(space)[0][None]
            lo, hi = np.inf, -np.inf
            for cells in self._chunks(vals.shape[-1], vals.shape[-1]):
                Me = K.local_matrices(self.dx[cells], vals, vals)
                d = 1.0 / np.sqrt(np.einsum("cii->ci", Me))
                ev = np.linalg.eigvalsh(Me * d[:, :, None] * d[:, None, :])
                lo, hi = min(lo, float(ev.min())), max(hi, float(ev.max()))
            self._tables[key] = (lo, hi)
        return self._tables[key]

    def solve_mass(self, space: FunctionSpace, rhs) -> np.ndarray:
        """Solve ``M x = rhs`` component-wise for a flat multi-component vector."""
        rhs = np.asarray(rhs, dtype=float).reshape(space.ncomp, space.n_dofs)
        x = self.mass_solver(space).solve(rhs.T)
        return np.asarray(x).reshape(space.n_dofs, space.ncomp).T.ravel()

    def project_l2(self, source, target: FunctionSpace) -> Field:
        """Galerkin L2 projection of quadrature values or ``f(points)`` into ``target``."""
        vals = source(self.points) if callable(source) else source
        vals = np.asarray(vals, dtype=float)
        return Field(target, self.solve_mass(target, self.integrate_test(target, vals, "projection source")))


def assembler_for(mesh: MeshData, degree: int = 8) -> Assembler:
    key = ("assembler", degree)
    if key not in mesh._cache:
        mesh._cache[key] = Assembler(mesh, degree)
    return mesh._cache[key]


def assemble_mass(space: FunctionSpace):
    return assembler_for(space.mesh).mass(space.with_shape(()))


def assemble_stiffness(space: FunctionSpace):
    return assembler_for(space.mesh).stiffness(space)


def assemble_mixed_divergence(tensor_space: FunctionSpace, scalar_space: FunctionSpace):
    """Blocks ``B[i][j]`` with ``(B phi)_tau = int (div tau) . grad phi``, row-wise divergence.

    For the tensor component ``tau_ij`` the divergence row ``i`` picks up
    ``d_j tau_ij``, so block (i, j) is ``int (grad N_a)_j (grad N_b)_i``.
    Returned as a list of ``gdim * gdim`` matrices in component order.
    """
    asm = assembler_for(tensor_space.mesh)
    blocks = asm.grad_grad_blocks(tensor_space.with_shape(()), scalar_space)
    d = tensor_space.mesh.gdim
    return [blocks[j][i] for i in range(d) for j in range(d)]


def assemble_functional(mesh: MeshData, integrand, space: FunctionSpace | None = None):
    """Integrate ``integrand(assembler) -> (C, Q[, ncomp])`` against 1 or test functions."""
    asm = assembler_for(mesh)
    vals = integrand(asm)
    if space is None:
        return asm.integrate(vals)
    return asm.integrate_test(space, vals)
