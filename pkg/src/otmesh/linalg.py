"""Sparse operators, Krylov solvers, nullspace projection and block preconditioning.

Sparse matrices are :class:`scipy.sparse.csr_matrix` instances with sorted,
unique column indices. The Krylov solvers are implemented here because they
must project the constant-potential nullspace out of every iterate and report
GMRES stagnation as a distinct failure.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.io
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.sparse.csgraph import reverse_cuthill_mckee

from .errors import NonconvergenceError, StagnationError

log = logging.getLogger(__name__)

SparseMatrix = sp.csr_matrix


def as_csr(A) -> sp.csr_matrix:
    A = sp.csr_matrix(A)
    A.sum_duplicates()
    A.sort_indices()
    return A


def dump_matrix_market(path, A) -> None:
    """Write ``A`` in Matrix Market coordinate format (debugging aid)."""
    scipy.io.mmwrite(str(path), sp.coo_matrix(A))


@dataclass
class KrylovConfig:
    method: str = "gmres"
    rtol: float = 1e-5
    max_iter: int = 1000
    restart: int = 30
    preconditioner: str = "riesz"

    def __post_init__(self):
        if not 0.0 < self.rtol < 1.0:
            raise ValueError(f"tolerance must lie in (0, 1), got {self.rtol}")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")


@dataclass
class SolveStats:
    iterations: int = 0
    residuals: list = field(default_factory=list)
    converged: bool = False
    # CG only: A-norm error decrements alpha_k <r_k, z_k>, all nonnegative
    energy_decrements: list = field(default_factory=list)


class ConstantNullspace:
    """Constant vector on the index range ``subrange`` of a (block) vector.

    Projection subtracts the ``weights``-weighted mean over the range, which
    makes it idempotent and self-adjoint in the lumped-mass inner product.
    """

    def __init__(self, weights, subrange: slice | None = None):
        self.weights = np.asarray(weights, dtype=float)
        if np.any(self.weights <= 0):
            raise ValueError("nullspace weights must be positive")
        self.subrange = subrange if subrange is not None else slice(0, len(self.weights))
        self._wsum = self.weights.sum()

    def project(self, v):
        return project_out_constants(v, self.subrange, self.weights, self._wsum)


def project_out_constants(v, subrange, weights, wsum=None):
    v = np.array(v, dtype=float, copy=True)
    seg = v[subrange]
    if wsum is None:
        wsum = np.sum(weights)
    seg -= np.dot(weights, seg) / wsum
    v[subrange] = seg
    return v


def _matvec(A):
    if hasattr(A, "matvec"):
        return A.matvec
    return lambda x: A @ x


def cg_solve(A, b, config: KrylovConfig | None = None, nullspace: ConstantNullspace | None = None,
             preconditioner=None, x0=None):
    """Preconditioned conjugate gradients.

    With ``nullspace`` the right-hand side is made orthogonal to constants and
    the returned solution has zero weighted mean.
    """
    config = config or KrylovConfig(method="cg", rtol=1e-10)
    mv = _matvec(A)
    b = np.asarray(b, dtype=float)
    if nullspace is not None:
        b = b - np.mean(b[nullspace.subrange]) * _indicator(len(b), nullspace.subrange)
    bnorm = np.linalg.norm(b)
    stats = SolveStats()
    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=float)
    if bnorm == 0.0:
        stats.converged = True
        stats.residuals.append(0.0)
        return x * 0.0, stats
    r = b - mv(x)
    z = preconditioner(r) if preconditioner is not None else r.copy()
    if nullspace is not None:
        z = nullspace.project(z)
    p = z.copy()
    rz = np.dot(r, z)
    stats.residuals.append(np.linalg.norm(r) / bnorm)
    for k in range(config.max_iter):
        if stats.residuals[-1] <= config.rtol:
            stats.converged = True
            break
        Ap = mv(p)
        pAp = np.dot(p, Ap)
        if pAp <= 0.0:
            raise NonconvergenceError("CG breakdown: operator not positive definite",
                                      residual=stats.residuals[-1], iterations=k)
        alpha = rz / pAp
        x += alpha * p
        r -= alpha * Ap
        stats.energy_decrements.append(alpha * rz)
        z = preconditioner(r) if preconditioner is not None else r.copy()
        if nullspace is not None:
            z = nullspace.project(z)
        rz_new = np.dot(r, z)
        p = z + (rz_new / rz) * p
        rz = rz_new
        stats.iterations = k + 1
        stats.residuals.append(np.linalg.norm(r) / bnorm)
    else:
        if stats.residuals[-1] > config.rtol:
            raise NonconvergenceError(
                f"CG did not converge in {config.max_iter} iterations",
                residual=stats.residuals[-1], iterations=config.max_iter)
    stats.converged = True
    if nullspace is not None:
        x = nullspace.project(x)
    return x, stats


def _indicator(n, subrange):
    e = np.zeros(n)
    e[subrange] = 1.0
    return e


def gmres_solve(A, b, config: KrylovConfig | None = None, preconditioner=None,
                nullspace: ConstantNullspace | None = None, x0=None):
    """Left-preconditioned restarted GMRES (classical Gram-Schmidt applied twice, Givens rotations).

    Convergence is measured on the preconditioned residual relative to the
    preconditioned right-hand side. With ``nullspace``, every preconditioned
    vector is projected, so iterates never acquire a constant potential.

    Raises :class:`StagnationError` if a whole restart cycle fails to reduce the
    residual and :class:`NonconvergenceError` on hitting ``max_iter``.
    """
    config = config or KrylovConfig()
    mv = _matvec(A)

    def prec(v):
        z = preconditioner(v) if preconditioner is not None else np.array(v, dtype=float)
        return nullspace.project(z) if nullspace is not None else z

    b = np.asarray(b, dtype=float)
    n = len(b)
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    stats = SolveStats()
    ref = np.linalg.norm(prec(b))
    if ref == 0.0:
        stats.converged = True
        stats.residuals.append(0.0)
        return np.zeros(n), stats
    m = config.restart
    total = 0
    r = prec(b - mv(x)) if x0 is not None else prec(b)
    beta = np.linalg.norm(r)
    stats.residuals.append(beta / ref)
    while True:
        if beta <= config.rtol * ref:
            stats.converged = True
            break
        cycle_start = beta
        V = np.empty((m + 1, n))
        H = np.zeros((m + 1, m))
        cs = np.zeros(m)
        sn = np.zeros(m)
        g = np.zeros(m + 1)
        g[0] = beta
        V[0] = r / beta
        j_done = 0
        for j in range(m):
            w = prec(mv(V[j]))
            # classical Gram-Schmidt, applied twice for stability
            Vj = V[: j + 1]
            h = Vj @ w
            w -= h @ Vj
            h2 = Vj @ w
            w -= h2 @ Vj
            H[: j + 1, j] = h + h2
            H[j + 1, j] = np.linalg.norm(w)
            for i in range(j):
                tmp = cs[i] * H[i, j] + sn[i] * H[i + 1, j]
                H[i + 1, j] = -sn[i] * H[i, j] + cs[i] * H[i + 1, j]
                H[i, j] = tmp
            denom = np.hypot(H[j, j], H[j + 1, j])
            if denom == 0.0:
                cs[j], sn[j] = 1.0, 0.0
            else:
                cs[j], sn[j] = H[j, j] / denom, H[j + 1, j] / denom
            H[j, j] = denom
            g[j + 1] = -sn[j] * g[j]
            g[j] = cs[j] * g[j]
            total += 1
            j_done = j + 1
            res = abs(g[j + 1])
            stats.residuals.append(res / ref)
            if res <= config.rtol * ref or total >= config.max_iter:
                break
            if H[j + 1, j] <= 1e-14 * denom:
                break  # happy breakdown
            V[j + 1] = w / H[j + 1, j]
        y = np.linalg.solve(np.triu(H[:j_done, :j_done]) + 0.0, g[:j_done]) if j_done else np.zeros(0)
        x += V[:j_done].T @ y
        r = prec(b - mv(x))
        beta = np.linalg.norm(r)
        stats.iterations = total
        if beta <= config.rtol * ref:
            stats.converged = True
            break
        if total >= config.max_iter:
            raise NonconvergenceError(
                f"GMRES did not converge in {config.max_iter} iterations",
                residual=beta / ref, iterations=total)
        if j_done == m and beta >= (1.0 - 1e-3) * cycle_start:
            raise StagnationError(
                f"GMRES stagnated: residual {beta / ref:.3e} after a full restart cycle",
                residual=beta / ref, iterations=total)
    stats.iterations = total
    if nullspace is not None:
        x = nullspace.project(x)
    return x, stats


class BlockOperator:
    """2x2 block operator; ``None`` blocks are zero.

    ``sizes`` are the lengths of the two subvectors.
    """

    def __init__(self, blocks, sizes, nullspace: ConstantNullspace | None = None):
        self.blocks = blocks
        self.sizes = tuple(int(s) for s in sizes)
        self.nullspace = nullspace
        for i in range(2):
            for j in range(2):
                B = blocks[i][j]
                if B is not None and B.shape != (self.sizes[i], self.sizes[j]):
                    raise ValueError(f"block ({i},{j}) has shape {B.shape}, expected "
                                     f"{(self.sizes[i], self.sizes[j])}")

    @property
    def shape(self):
        n = sum(self.sizes)
        return (n, n)

    def split(self, v):
        return v[: self.sizes[0]], v[self.sizes[0]:]

    def matvec(self, v):
        v0, v1 = self.split(v)
        out = np.zeros(sum(self.sizes))
        o0, o1 = out[: self.sizes[0]], out[self.sizes[0]:]
        for i, oi in ((0, o0), (1, o1)):
            for j, vj in ((0, v0), (1, v1)):
                B = self.blocks[i][j]
                if B is not None:
                    oi += B @ vj
        return out

    def __matmul__(self, v):
        return self.matvec(v)

    def to_sparse(self):
        return as_csr(sp.bmat(self.blocks, format="csr"))


class DirectSolver:
    """Cached sparse LU factorisation; falls back to Jacobi-CG if factorisation fails.

    The matrix is first permuted by reverse Cuthill-McKee. SuperLU's minimum
    degree ordering breaks ties by the incoming numbering, and a bandwidth-
    reducing start keeps fill and factorisation time close to the structured
    case on unstructured sphere meshes.
    """

    def __init__(self, A, rtol=1e-12):
        self.A = as_csr(A)
        self.rtol = rtol
        self._perm = reverse_cuthill_mckee(self.A, symmetric_mode=True)
        try:
            Ap = self.A[self._perm][:, self._perm]
            self._lu = spla.splu(sp.csc_matrix(Ap), permc_spec="MMD_AT_PLUS_A")
        except (RuntimeError, MemoryError) as exc:
            log.warning("sparse factorisation failed (%s); using inner CG", exc)
            self._lu = None
            self._diag = self.A.diagonal()

    @property
    def factorised(self) -> bool:
        return self._lu is not None

    def solve(self, b):
        b = np.asarray(b, dtype=float)
        if self._lu is not None:
            x = np.empty_like(b)
            x[self._perm] = self._lu.solve(np.ascontiguousarray(b[self._perm]))
            return x
        cfg = KrylovConfig(method="cg", rtol=self.rtol, max_iter=10 * self.A.shape[0])
        if b.ndim == 1:
            return cg_solve(self.A, b, cfg, preconditioner=lambda r: r / self._diag)[0]
        return np.column_stack([self.solve(b[:, k]) for k in range(b.shape[1])])

    __call__ = solve


class PinnedSolver:
    """Solver for a symmetric operator with a constant nullspace.

    Factorises the matrix with the first row and column removed. For a
    right-hand side orthogonal to constants this yields an exact solution,
    which is then shifted to zero weighted mean.
    """

    def __init__(self, A, weights):
        A = as_csr(A)
        self.n = A.shape[0]
        self.inner = DirectSolver(A[1:, 1:])
        self.nullspace = ConstantNullspace(weights)

    def solve(self, b):
        x = np.zeros(self.n)
        x[1:] = self.inner.solve(np.asarray(b)[1:] - np.mean(b))
        return self.nullspace.project(x)

    __call__ = solve


class ChebyshevInverse:
    """Fixed-step Jacobi-Chebyshev approximation of ``A^{-1}`` for SPD ``A``.

    ``bounds`` must enclose the spectrum of ``diag(A)^{-1} A``. With a fixed
    number of steps and a zero start the map ``b -> x`` is linear, so it can
    sit inside a non-flexible Krylov preconditioner. The relative error after
    ``k`` steps is at most ``2 rho^k`` with ``rho = (sqrt(kappa) - 1) / (sqrt(kappa) + 1)``.
    """

    def __init__(self, A, bounds, steps=4):
        self.A = as_csr(A)
        self.dinv = 1.0 / self.A.diagonal()
        lo, hi = bounds
        if not 0.0 < lo < hi:
            raise ValueError(f"invalid spectral bounds {bounds}")
        self.theta, self.delta = 0.5 * (hi + lo), 0.5 * (hi - lo)
        self.steps = int(steps)

    def solve(self, b):
        b = np.asarray(b, dtype=float)
        dinv = self.dinv if b.ndim == 1 else self.dinv[:, None]
        sigma1 = self.theta / self.delta
        rho = 1.0 / sigma1
        r = b
        d = dinv * r / self.theta
        x = np.zeros_like(b)
        for k in range(self.steps):
            x += d
            if k == self.steps - 1:
                break
            r = r - self.A @ d
            rho_new = 1.0 / (2.0 * sigma1 - rho)
            d = (rho_new * rho) * d + (2.0 * rho_new / self.delta) * (dinv * r)
            rho = rho_new
        return x

    __call__ = solve


class RieszPreconditioner:
    """Block Gauss-Seidel with Riesz-map diagonal blocks (potential first, then tensor).

    The potential block ``(1/H^2) M + K`` is factorised. The tensor block is
    the component-wise scalar mass matrix, inverted exactly or, when
    ``mass_bounds`` is given, approximated by a few Jacobi-Chebyshev steps
    (the mass matrix is uniformly well conditioned, so this is spectrally
    equivalent at a cost linear in the mesh size). The lower coupling block
    (tensor rows, potential columns) is taken from the operator being
    preconditioned.
    """

    def __init__(self, mass_phi, stiff_phi, mass_sigma_scalar, ncomp, H=1.0, mass_bounds=None,
                 mass_steps=4):
        self.n_phi = mass_phi.shape[0]
        self.n_sig = mass_sigma_scalar.shape[0]
        self.ncomp = ncomp
        self.H = H
        self.phi_block = DirectSolver(mass_phi / H**2 + stiff_phi)
        if mass_bounds is None:
            self.sig_block = DirectSolver(mass_sigma_scalar)
        else:
            self.sig_block = ChebyshevInverse(mass_sigma_scalar, mass_bounds, mass_steps)
        self.coupling = None

    def with_coupling(self, lower):
        p = object.__new__(RieszPreconditioner)
        p.__dict__.update(self.__dict__)
        p.coupling = lower
        return p

    def apply(self, r):
        r = np.asarray(r, dtype=float)
        r0, r1 = r[: self.n_phi], r[self.n_phi:]
        y0 = self.phi_block.solve(r0)
        rhs = r1 - self.coupling @ y0 if self.coupling is not None else r1
        y1 = self.sig_block.solve(rhs.reshape(self.ncomp, self.n_sig).T).T.ravel()
        return np.concatenate([y0, y1])

    __call__ = apply


def make_riesz_preconditioner(phi_space, sigma_space, H: float = 1.0, assembler=None, mass_steps=None):
    """Build the block preconditioner for the mixed (potential, tensor) system.

    ``mass_steps=None`` inverts the tensor mass block exactly.
    """
    from .fem.assembly import assembler_for

    asm = assembler or assembler_for(phi_space.mesh)
    M = asm.mass(phi_space)
    K = asm.stiffness(phi_space)
    scalar = sigma_space.with_shape(())
    Ms = asm.mass(scalar)
    bounds = None if mass_steps is None else asm.mass_jacobi_bounds(scalar)
    return RieszPreconditioner(M, K, Ms, sigma_space.ncomp, H, bounds, mass_steps or 0)
